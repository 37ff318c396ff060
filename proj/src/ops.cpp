#include "medvt/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "medvt/threads.hpp"

namespace medvt::ops {

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  check(a.dtype() == b.dtype(),
        std::string(op) + ": dtype mismatch " + dtype_name(a.dtype()) + " vs " + dtype_name(b.dtype()));
  check(a.shape() == b.shape(),
        std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

int norm_axis(int axis, int rank) {
  if (axis < 0) axis += rank;
  check(axis >= 0 && axis < rank, "axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
  return axis;
}

struct AxisSplit {
  int64_t outer, n, inner;
};

AxisSplit split_axis(const Shape& s, int axis) {
  AxisSplit r{1, s[static_cast<size_t>(axis)], 1};
  for (int i = 0; i < axis; ++i) r.outer *= s[static_cast<size_t>(i)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

template <class T, class F>
Tensor unary(const Tensor& x, F&& f) {
  Tensor out(x.shape(), x.dtype());
  const T* px = x.data<T>();
  T* po = out.data<T>();
  for (int64_t i = 0; i < x.numel(); ++i) po[i] = f(px[i]);
  return out;
}

template <class F>
Tensor unary_dispatch(const Tensor& x, F&& f) {
  return dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    return unary<T>(x, [&](T v) { return static_cast<T>(f(static_cast<double>(v))); });
  });
}

template <class F>
Tensor binary_dispatch(const Tensor& a, const Tensor& b, const char* name, F&& f) {
  check_same_shape(a, b, name);
  return dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    Tensor out(a.shape(), a.dtype());
    const T* pa = a.data<T>();
    const T* pb = b.data<T>();
    T* po = out.data<T>();
    for (int64_t i = 0; i < a.numel(); ++i) po[i] = static_cast<T>(f(pa[i], pb[i]));
    return out;
  });
}

// Output extent and leading pad for one dimension.
void conv_extent(int64_t in, int64_t k, int64_t stride, Pad pad, int64_t* out, int64_t* pad_lo) {
  if (pad == Pad::valid) {
    check(in >= k, "conv: kernel extent " + std::to_string(k) + " larger than input extent " + std::to_string(in) +
                       " (valid padding)");
    *out = (in - k) / stride + 1;
    *pad_lo = 0;
  } else {
    *out = (in + stride - 1) / stride;
    int64_t total = std::max<int64_t>((*out - 1) * stride + k - in, 0);
    *pad_lo = total / 2;
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  check(a.rank() == 2 && b.rank() == 2, "matmul: expects rank-2 operands, got " + shape_str(a.shape()) + " and " +
                                            shape_str(b.shape()));
  check(a.dtype() == b.dtype(), "matmul: dtype mismatch");
  check(a.dim(1) == b.dim(0),
        "matmul: inner extents differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  return dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    Tensor out({m, n}, a.dtype());
    const T* pa = a.data<T>();
    const T* pb = b.data<T>();
    T* po = out.data<T>();
    // Summation over k is ascending for every output element.
    parallel_for(m, [&](int64_t i) {
      T* row = po + i * n;
      for (int64_t j = 0; j < n; ++j) row[j] = T(0);
      const T* arow = pa + i * k;
      for (int64_t kk = 0; kk < k; ++kk) {
        const T av = arow[kk];
        const T* brow = pb + kk * n;
        for (int64_t j = 0; j < n; ++j) row[j] += av * brow[j];
      }
    });
    return out;
  });
}

Tensor softmax(const Tensor& x, int axis) {
  axis = norm_axis(axis, x.rank());
  const AxisSplit ax = split_axis(x.shape(), axis);
  return dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    Tensor out(x.shape(), x.dtype());
    const T* px = x.data<T>();
    T* po = out.data<T>();
    for (int64_t o = 0; o < ax.outer; ++o) {
      for (int64_t in = 0; in < ax.inner; ++in) {
        const int64_t base = o * ax.n * ax.inner + in;
        double mx = -std::numeric_limits<double>::infinity();
        for (int64_t i = 0; i < ax.n; ++i) {
          const double v = static_cast<double>(px[base + i * ax.inner]);
          check(!(std::isnan(v) || v == std::numeric_limits<double>::infinity()),
                "softmax: input must be finite or -inf");
          mx = std::max(mx, v);
        }
        check(mx != -std::numeric_limits<double>::infinity(), "softmax: degenerate row (all entries are -inf)");
        T sum = T(0);
        for (int64_t i = 0; i < ax.n; ++i) {
          const double v = static_cast<double>(px[base + i * ax.inner]);
          const T e = static_cast<T>(std::exp(v - mx));  // exp(-inf) == 0 exactly
          po[base + i * ax.inner] = e;
          sum += e;
        }
        for (int64_t i = 0; i < ax.n; ++i) po[base + i * ax.inner] /= sum;
      }
    }
    return out;
  });
}

Tensor log_softmax(const Tensor& x, int axis) {
  axis = norm_axis(axis, x.rank());
  const AxisSplit ax = split_axis(x.shape(), axis);
  return dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    Tensor out(x.shape(), x.dtype());
    const T* px = x.data<T>();
    T* po = out.data<T>();
    for (int64_t o = 0; o < ax.outer; ++o) {
      for (int64_t in = 0; in < ax.inner; ++in) {
        const int64_t base = o * ax.n * ax.inner + in;
        double mx = -std::numeric_limits<double>::infinity();
        for (int64_t i = 0; i < ax.n; ++i)
          mx = std::max(mx, static_cast<double>(px[base + i * ax.inner]));
        check(std::isfinite(mx), "log_softmax: degenerate or non-finite row");
        T sum = T(0);
        for (int64_t i = 0; i < ax.n; ++i)
          sum += static_cast<T>(std::exp(static_cast<double>(px[base + i * ax.inner]) - mx));
        const T lse = static_cast<T>(std::log(static_cast<double>(sum))) + static_cast<T>(mx);
        for (int64_t i = 0; i < ax.n; ++i) po[base + i * ax.inner] = px[base + i * ax.inner] - lse;
      }
    }
    return out;
  });
}

Tensor conv2d(const Tensor& x, const Tensor& k, int stride, Pad pad) {
  check(x.rank() == 4, "conv2d: input must be [T,H,W,Cin], got " + shape_str(x.shape()));
  check(k.rank() == 4, "conv2d: kernel must be [kh,kw,Cin,Cout], got " + shape_str(k.shape()));
  check(stride >= 1, "conv2d: stride must be >= 1");
  check(x.dtype() == k.dtype(), "conv2d: dtype mismatch");
  const int64_t T_ = x.dim(0), H = x.dim(1), W = x.dim(2), Cin = x.dim(3);
  const int64_t kh = k.dim(0), kw = k.dim(1), Cout = k.dim(3);
  check(k.dim(2) == Cin, "conv2d: kernel Cin " + std::to_string(k.dim(2)) + " vs input Cin " + std::to_string(Cin));
  int64_t Ho, Wo, ph, pw;
  conv_extent(H, kh, stride, pad, &Ho, &ph);
  conv_extent(W, kw, stride, pad, &Wo, &pw);
  return dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    Tensor out({T_, Ho, Wo, Cout}, x.dtype());
    const T* px = x.data<T>();
    const T* pk = k.data<T>();
    T* po = out.data<T>();
    parallel_for(T_ * Ho, [&](int64_t job) {
      const int64_t t = job / Ho, oy = job % Ho;
      for (int64_t ox = 0; ox < Wo; ++ox) {
        T* acc = po + ((t * Ho + oy) * Wo + ox) * Cout;
        for (int64_t c = 0; c < Cout; ++c) acc[c] = T(0);
        for (int64_t dy = 0; dy < kh; ++dy) {
          const int64_t iy = oy * stride - ph + dy;
          if (iy < 0 || iy >= H) continue;
          for (int64_t dx = 0; dx < kw; ++dx) {
            const int64_t ix = ox * stride - pw + dx;
            if (ix < 0 || ix >= W) continue;
            const T* xi = px + ((t * H + iy) * W + ix) * Cin;
            const T* kr = pk + (dy * kw + dx) * Cin * Cout;
            for (int64_t ci = 0; ci < Cin; ++ci) {
              const T xv = xi[ci];
              const T* kc = kr + ci * Cout;
              for (int64_t c = 0; c < Cout; ++c) acc[c] += xv * kc[c];
            }
          }
        }
      }
    });
    return out;
  });
}

Tensor conv2d_grad_input(const Tensor& gout, const Tensor& k, const Shape& xshape, int stride, Pad pad) {
  const int64_t T_ = xshape[0], H = xshape[1], W = xshape[2], Cin = xshape[3];
  const int64_t kh = k.dim(0), kw = k.dim(1), Cout = k.dim(3);
  int64_t Ho, Wo, ph, pw;
  conv_extent(H, kh, stride, pad, &Ho, &ph);
  conv_extent(W, kw, stride, pad, &Wo, &pw);
  check(gout.shape() == Shape({T_, Ho, Wo, Cout}), "conv2d_grad_input: gout shape mismatch");
  return dispatch(gout.dtype(), [&](auto tag) {
    using T = decltype(tag);
    Tensor gx(xshape, gout.dtype());
    const T* pg = gout.data<T>();
    const T* pk = k.data<T>();
    T* px = gx.data<T>();
    parallel_for(T_ * H, [&](int64_t job) {
      const int64_t t = job / H, iy = job % H;
      for (int64_t ix = 0; ix < W; ++ix) {
        T* acc = px + ((t * H + iy) * W + ix) * Cin;
        for (int64_t dy = 0; dy < kh; ++dy) {
          const int64_t num_y = iy + ph - dy;
          if (num_y < 0 || num_y % stride) continue;
          const int64_t oy = num_y / stride;
          if (oy >= Ho) continue;
          for (int64_t dx = 0; dx < kw; ++dx) {
            const int64_t num_x = ix + pw - dx;
            if (num_x < 0 || num_x % stride) continue;
            const int64_t ox = num_x / stride;
            if (ox >= Wo) continue;
            const T* gr = pg + ((t * Ho + oy) * Wo + ox) * Cout;
            const T* kr = pk + (dy * kw + dx) * Cin * Cout;
            for (int64_t ci = 0; ci < Cin; ++ci) {
              T s = T(0);
              const T* kc = kr + ci * Cout;
              for (int64_t c = 0; c < Cout; ++c) s += gr[c] * kc[c];
              acc[ci] += s;
            }
          }
        }
      }
    });
    return gx;
  });
}

Tensor conv2d_grad_kernel(const Tensor& gout, const Tensor& x, const Shape& kshape, int stride, Pad pad) {
  const int64_t T_ = x.dim(0), H = x.dim(1), W = x.dim(2), Cin = x.dim(3);
  const int64_t kh = kshape[0], kw = kshape[1], Cout = kshape[3];
  int64_t Ho, Wo, ph, pw;
  conv_extent(H, kh, stride, pad, &Ho, &ph);
  conv_extent(W, kw, stride, pad, &Wo, &pw);
  check(gout.shape() == Shape({T_, Ho, Wo, Cout}), "conv2d_grad_kernel: gout shape mismatch");
  return dispatch(gout.dtype(), [&](auto tag) {
    using T = decltype(tag);
    Tensor gk(kshape, gout.dtype());
    const T* pg = gout.data<T>();
    const T* px = x.data<T>();
    T* pk = gk.data<T>();
    parallel_for(kh * kw, [&](int64_t job) {
      const int64_t dy = job / kw, dx = job % kw;
      T* kr = pk + (dy * kw + dx) * Cin * Cout;
      for (int64_t t = 0; t < T_; ++t)
        for (int64_t oy = 0; oy < Ho; ++oy) {
          const int64_t iy = oy * stride - ph + dy;
          if (iy < 0 || iy >= H) continue;
          for (int64_t ox = 0; ox < Wo; ++ox) {
            const int64_t ix = ox * stride - pw + dx;
            if (ix < 0 || ix >= W) continue;
            const T* xi = px + ((t * H + iy) * W + ix) * Cin;
            const T* gr = pg + ((t * Ho + oy) * Wo + ox) * Cout;
            for (int64_t ci = 0; ci < Cin; ++ci) {
              const T xv = xi[ci];
              T* kc = kr + ci * Cout;
              for (int64_t c = 0; c < Cout; ++c) kc[c] += xv * gr[c];
            }
          }
        }
    });
    return gk;
  });
}

Tensor conv3d(const Tensor& x, const Tensor& k, int stride, Pad pad) {
  check(x.rank() == 4, "conv3d: input must be [T,H,W,Cin], got " + shape_str(x.shape()));
  check(k.rank() == 5, "conv3d: kernel must be [kt,kh,kw,Cin,Cout], got " + shape_str(k.shape()));
  check(stride >= 1, "conv3d: stride must be >= 1");
  const int64_t T_ = x.dim(0), H = x.dim(1), W = x.dim(2), Cin = x.dim(3);
  const int64_t kt = k.dim(0), kh = k.dim(1), kw = k.dim(2), Cout = k.dim(4);
  check(k.dim(3) == Cin, "conv3d: kernel Cin mismatch");
  int64_t To, Ho, Wo, pt, ph, pw;
  conv_extent(T_, kt, 1, pad, &To, &pt);
  conv_extent(H, kh, stride, pad, &Ho, &ph);
  conv_extent(W, kw, stride, pad, &Wo, &pw);
  return dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    Tensor out({To, Ho, Wo, Cout}, x.dtype());
    const T* px = x.data<T>();
    const T* pk = k.data<T>();
    T* po = out.data<T>();
    parallel_for(To * Ho, [&](int64_t job) {
      const int64_t ot = job / Ho, oy = job % Ho;
      for (int64_t ox = 0; ox < Wo; ++ox) {
        T* acc = po + ((ot * Ho + oy) * Wo + ox) * Cout;
        for (int64_t c = 0; c < Cout; ++c) acc[c] = T(0);
        for (int64_t dt = 0; dt < kt; ++dt) {
          const int64_t it = ot - pt + dt;
          if (it < 0 || it >= T_) continue;
          for (int64_t dy = 0; dy < kh; ++dy) {
            const int64_t iy = oy * stride - ph + dy;
            if (iy < 0 || iy >= H) continue;
            for (int64_t dx = 0; dx < kw; ++dx) {
              const int64_t ix = ox * stride - pw + dx;
              if (ix < 0 || ix >= W) continue;
              const T* xi = px + ((it * H + iy) * W + ix) * Cin;
              const T* kr = pk + ((dt * kh + dy) * kw + dx) * Cin * Cout;
              for (int64_t ci = 0; ci < Cin; ++ci) {
                const T xv = xi[ci];
                const T* kc = kr + ci * Cout;
                for (int64_t c = 0; c < Cout; ++c) acc[c] += xv * kc[c];
              }
            }
          }
        }
      }
    });
    return out;
  });
}

Tensor conv3d_grad_input(const Tensor& gout, const Tensor& k, const Shape& xshape, int stride, Pad pad) {
  const int64_t T_ = xshape[0], H = xshape[1], W = xshape[2], Cin = xshape[3];
  const int64_t kt = k.dim(0), kh = k.dim(1), kw = k.dim(2), Cout = k.dim(4);
  int64_t To, Ho, Wo, pt, ph, pw;
  conv_extent(T_, kt, 1, pad, &To, &pt);
  conv_extent(H, kh, stride, pad, &Ho, &ph);
  conv_extent(W, kw, stride, pad, &Wo, &pw);
  check(gout.shape() == Shape({To, Ho, Wo, Cout}), "conv3d_grad_input: gout shape mismatch");
  return dispatch(gout.dtype(), [&](auto tag) {
    using T = decltype(tag);
    Tensor gx(xshape, gout.dtype());
    const T* pg = gout.data<T>();
    const T* pk = k.data<T>();
    T* px = gx.data<T>();
    parallel_for(T_ * H, [&](int64_t job) {
      const int64_t it = job / H, iy = job % H;
      for (int64_t ix = 0; ix < W; ++ix) {
        T* acc = px + ((it * H + iy) * W + ix) * Cin;
        for (int64_t dt = 0; dt < kt; ++dt) {
          const int64_t ot = it + pt - dt;
          if (ot < 0 || ot >= To) continue;
          for (int64_t dy = 0; dy < kh; ++dy) {
            const int64_t num_y = iy + ph - dy;
            if (num_y < 0 || num_y % stride) continue;
            const int64_t oy = num_y / stride;
            if (oy >= Ho) continue;
            for (int64_t dx = 0; dx < kw; ++dx) {
              const int64_t num_x = ix + pw - dx;
              if (num_x < 0 || num_x % stride) continue;
              const int64_t ox = num_x / stride;
              if (ox >= Wo) continue;
              const T* gr = pg + ((ot * Ho + oy) * Wo + ox) * Cout;
              const T* kr = pk + ((dt * kh + dy) * kw + dx) * Cin * Cout;
              for (int64_t ci = 0; ci < Cin; ++ci) {
                T s = T(0);
                const T* kc = kr + ci * Cout;
                for (int64_t c = 0; c < Cout; ++c) s += gr[c] * kc[c];
                acc[ci] += s;
              }
            }
          }
        }
      }
    });
    return gx;
  });
}

Tensor conv3d_grad_kernel(const Tensor& gout, const Tensor& x, const Shape& kshape, int stride, Pad pad) {
  const int64_t T_ = x.dim(0), H = x.dim(1), W = x.dim(2), Cin = x.dim(3);
  const int64_t kt = kshape[0], kh = kshape[1], kw = kshape[2], Cout = kshape[4];
  int64_t To, Ho, Wo, pt, ph, pw;
  conv_extent(T_, kt, 1, pad, &To, &pt);
  conv_extent(H, kh, stride, pad, &Ho, &ph);
  conv_extent(W, kw, stride, pad, &Wo, &pw);
  check(gout.shape() == Shape({To, Ho, Wo, Cout}), "conv3d_grad_kernel: gout shape mismatch");
  return dispatch(gout.dtype(), [&](auto tag) {
    using T = decltype(tag);
    Tensor gk(kshape, gout.dtype());
    const T* pg = gout.data<T>();
    const T* px = x.data<T>();
    T* pk = gk.data<T>();
    parallel_for(kt * kh * kw, [&](int64_t job) {
      const int64_t dt = job / (kh * kw), dy = (job / kw) % kh, dx = job % kw;
      T* kr = pk + ((dt * kh + dy) * kw + dx) * Cin * Cout;
      for (int64_t ot = 0; ot < To; ++ot) {
        const int64_t it = ot - pt + dt;
        if (it < 0 || it >= T_) continue;
        for (int64_t oy = 0; oy < Ho; ++oy) {
          const int64_t iy = oy * stride - ph + dy;
          if (iy < 0 || iy >= H) continue;
          for (int64_t ox = 0; ox < Wo; ++ox) {
            const int64_t ix = ox * stride - pw + dx;
            if (ix < 0 || ix >= W) continue;
            const T* xi = px + ((it * H + iy) * W + ix) * Cin;
            const T* gr = pg + ((ot * Ho + oy) * Wo + ox) * Cout;
            for (int64_t ci = 0; ci < Cin; ++ci) {
              const T xv = xi[ci];
              T* kc = kr + ci * Cout;
              for (int64_t c = 0; c < Cout; ++c) kc[c] += xv * gr[c];
            }
          }
        }
      }
    });
    return gk;
  });
}

namespace {

// Shared bilinear sampler. align-corners=false: src = (dst+0.5)*scale - 0.5.
Tensor bilinear_impl(const Tensor& x, int64_t h2, int64_t w2) {
  check(x.rank() == 4, "bilinear: input must be [T,H,W,C], got " + shape_str(x.shape()));
  check(h2 > 0 && w2 > 0, "bilinear: target extents must be positive, got " + std::to_string(h2) + "x" +
                              std::to_string(w2));
  const int64_t T_ = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  return dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    Tensor out({T_, h2, w2, C}, x.dtype());
    const T* px = x.data<T>();
    T* po = out.data<T>();
    const double sy = static_cast<double>(H) / static_cast<double>(h2);
    const double sx = static_cast<double>(W) / static_cast<double>(w2);
    parallel_for(T_ * h2, [&](int64_t job) {
      const int64_t t = job / h2, oy = job % h2;
      const double fy = std::clamp((static_cast<double>(oy) + 0.5) * sy - 0.5, 0.0, static_cast<double>(H - 1));
      const int64_t y0 = static_cast<int64_t>(std::floor(fy));
      const int64_t y1 = std::min(y0 + 1, H - 1);
      const T wy1 = static_cast<T>(fy - static_cast<double>(y0));
      const T wy0 = T(1) - wy1;
      for (int64_t ox = 0; ox < w2; ++ox) {
        const double fx = std::clamp((static_cast<double>(ox) + 0.5) * sx - 0.5, 0.0, static_cast<double>(W - 1));
        const int64_t x0 = static_cast<int64_t>(std::floor(fx));
        const int64_t x1 = std::min(x0 + 1, W - 1);
        const T wx1 = static_cast<T>(fx - static_cast<double>(x0));
        const T wx0 = T(1) - wx1;
        const T* p00 = px + ((t * H + y0) * W + x0) * C;
        const T* p01 = px + ((t * H + y0) * W + x1) * C;
        const T* p10 = px + ((t * H + y1) * W + x0) * C;
        const T* p11 = px + ((t * H + y1) * W + x1) * C;
        T* dst = po + ((t * h2 + oy) * w2 + ox) * C;
        for (int64_t c = 0; c < C; ++c)
          dst[c] = wy0 * (wx0 * p00[c] + wx1 * p01[c]) + wy1 * (wx0 * p10[c] + wx1 * p11[c]);
      }
    });
    return out;
  });
}

}  // namespace

Tensor bilinear_upsample(const Tensor& x, int64_t h2, int64_t w2) {
  check(x.rank() == 4, "bilinear_upsample: input must be [T,H,W,C]");
  check(h2 >= x.dim(1) && w2 >= x.dim(2),
        "bilinear_upsample: target " + std::to_string(h2) + "x" + std::to_string(w2) + " smaller than input " +
            std::to_string(x.dim(1)) + "x" + std::to_string(x.dim(2)));
  return bilinear_impl(x, h2, w2);
}

Tensor bilinear_resize(const Tensor& x, int64_t h2, int64_t w2) { return bilinear_impl(x, h2, w2); }

Tensor bilinear_resize_grad_input(const Tensor& gout, const Shape& xshape) {
  check(gout.rank() == 4 && xshape.size() == 4, "bilinear grad: rank mismatch");
  const int64_t T_ = xshape[0], H = xshape[1], W = xshape[2], C = xshape[3];
  const int64_t h2 = gout.dim(1), w2 = gout.dim(2);
  return dispatch(gout.dtype(), [&](auto tag) {
    using T = decltype(tag);
    Tensor gx(xshape, gout.dtype());
    const T* pg = gout.data<T>();
    T* px = gx.data<T>();
    const double sy = static_cast<double>(H) / static_cast<double>(h2);
    const double sx = static_cast<double>(W) / static_cast<double>(w2);
    // Scatter transpose of the sampler; serial over output pixels (writers collide).
    for (int64_t t = 0; t < T_; ++t)
      for (int64_t oy = 0; oy < h2; ++oy) {
        const double fy = std::clamp((static_cast<double>(oy) + 0.5) * sy - 0.5, 0.0, static_cast<double>(H - 1));
        const int64_t y0 = static_cast<int64_t>(std::floor(fy));
        const int64_t y1 = std::min(y0 + 1, H - 1);
        const T wy1 = static_cast<T>(fy - static_cast<double>(y0));
        const T wy0 = T(1) - wy1;
        for (int64_t ox = 0; ox < w2; ++ox) {
          const double fx = std::clamp((static_cast<double>(ox) + 0.5) * sx - 0.5, 0.0, static_cast<double>(W - 1));
          const int64_t x0 = static_cast<int64_t>(std::floor(fx));
          const int64_t x1 = std::min(x0 + 1, W - 1);
          const T wx1 = static_cast<T>(fx - static_cast<double>(x0));
          const T wx0 = T(1) - wx1;
          const T* g = pg + ((t * h2 + oy) * w2 + ox) * C;
          T* p00 = px + ((t * H + y0) * W + x0) * C;
          T* p01 = px + ((t * H + y0) * W + x1) * C;
          T* p10 = px + ((t * H + y1) * W + x0) * C;
          T* p11 = px + ((t * H + y1) * W + x1) * C;
          for (int64_t c = 0; c < C; ++c) {
            p00[c] += wy0 * wx0 * g[c];
            p01[c] += wy0 * wx1 * g[c];
            p10[c] += wy1 * wx0 * g[c];
            p11[c] += wy1 * wx1 * g[c];
          }
        }
      }
    return gx;
  });
}

Tensor group_norm(const Tensor& x, int groups, double eps, const Tensor& gain, const Tensor& bias) {
  check(x.rank() == 4, "group_norm: input must be [T,H,W,C], got " + shape_str(x.shape()));
  const int64_t T_ = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  check(groups >= 1 && C % groups == 0,
        "group_norm: channels " + std::to_string(C) + " not divisible by groups " + std::to_string(groups));
  check(gain.numel() == C && bias.numel() == C, "group_norm: gain/bias must have C entries");
  const int64_t cg = C / groups;
  return dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    Tensor out(x.shape(), x.dtype());
    const T* px = x.data<T>();
    const T* pgain = gain.data<T>();
    const T* pbias = bias.data<T>();
    T* po = out.data<T>();
    const int64_t hw = H * W;
    for (int64_t t = 0; t < T_; ++t) {
      for (int64_t g = 0; g < groups; ++g) {
        T sum = T(0), sumsq = T(0);
        for (int64_t p = 0; p < hw; ++p)
          for (int64_t c = g * cg; c < (g + 1) * cg; ++c) {
            const T v = px[(t * hw + p) * C + c];
            sum += v;
            sumsq += v * v;
          }
        const T n = static_cast<T>(hw * cg);
        const T mean = sum / n;
        const T var = sumsq / n - mean * mean;
        const T inv = T(1) / static_cast<T>(std::sqrt(static_cast<double>(var) + eps));
        for (int64_t p = 0; p < hw; ++p)
          for (int64_t c = g * cg; c < (g + 1) * cg; ++c) {
            const int64_t i = (t * hw + p) * C + c;
            po[i] = (px[i] - mean) * inv * pgain[c] + pbias[c];
          }
      }
    }
    return out;
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_dispatch(a, b, "add", [](auto x, auto y) { return x + y; });
}
Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_dispatch(a, b, "sub", [](auto x, auto y) { return x - y; });
}
Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_dispatch(a, b, "mul", [](auto x, auto y) { return x * y; });
}
Tensor div(const Tensor& a, const Tensor& b) {
  return binary_dispatch(a, b, "div", [](auto x, auto y) { return x / y; });
}
Tensor relu(const Tensor& x) {
  return dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    return unary<T>(x, [](T v) { return v > T(0) ? v : T(0); });
  });
}
Tensor exp(const Tensor& x) {
  return unary_dispatch(x, [](double v) { return std::exp(v); });
}
Tensor log(const Tensor& x) {
  return unary_dispatch(x, [](double v) { return std::log(v); });
}
Tensor sqrt(const Tensor& x) {
  return unary_dispatch(x, [](double v) { return std::sqrt(v); });
}
Tensor neg(const Tensor& x) {
  return dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    return unary<T>(x, [](T v) { return -v; });
  });
}
Tensor scale(const Tensor& x, double c) {
  return dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T cc = static_cast<T>(c);
    return unary<T>(x, [cc](T v) { return v * cc; });
  });
}
Tensor add_scalar(const Tensor& x, double c) {
  return dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T cc = static_cast<T>(c);
    return unary<T>(x, [cc](T v) { return v + cc; });
  });
}
Tensor pow_scalar(const Tensor& x, double p) {
  return unary_dispatch(x, [p](double v) { return std::pow(v, p); });
}

Tensor concat(const std::vector<Tensor>& xs, int axis) {
  check(!xs.empty(), "concat: empty input list");
  const int rank = xs[0].rank();
  axis = norm_axis(axis, rank);
  Shape out_shape = xs[0].shape();
  int64_t total = 0;
  for (const Tensor& t : xs) {
    check(t.rank() == rank && t.dtype() == xs[0].dtype(), "concat: rank/dtype mismatch");
    for (int i = 0; i < rank; ++i)
      if (i != axis)
        check(t.dim(i) == out_shape[static_cast<size_t>(i)],
              "concat: non-axis extent mismatch " + shape_str(t.shape()) + " vs " + shape_str(xs[0].shape()));
    total += t.dim(axis);
  }
  out_shape[static_cast<size_t>(axis)] = total;
  return dispatch(xs[0].dtype(), [&](auto tag) {
    using T = decltype(tag);
    Tensor out(out_shape, xs[0].dtype());
    const AxisSplit ax = split_axis(out_shape, axis);
    T* po = out.data<T>();
    int64_t offset = 0;
    for (const Tensor& t : xs) {
      const int64_t n_t = t.dim(axis);
      const T* pt = t.data<T>();
      for (int64_t o = 0; o < ax.outer; ++o) {
        T* dst = po + (o * ax.n + offset) * ax.inner;
        const T* src = pt + o * n_t * ax.inner;
        std::copy(src, src + n_t * ax.inner, dst);
      }
      offset += n_t;
    }
    return out;
  });
}

Tensor slice(const Tensor& x, int axis, int64_t begin, int64_t end) {
  axis = norm_axis(axis, x.rank());
  const int64_t n = x.dim(axis);
  check(begin >= 0 && end <= n && begin < end,
        "slice: range [" + std::to_string(begin) + "," + std::to_string(end) + ") invalid for extent " +
            std::to_string(n));
  Shape out_shape = x.shape();
  out_shape[static_cast<size_t>(axis)] = end - begin;
  const AxisSplit ax = split_axis(x.shape(), axis);
  return dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    Tensor out(out_shape, x.dtype());
    const T* px = x.data<T>();
    T* po = out.data<T>();
    const int64_t m = end - begin;
    for (int64_t o = 0; o < ax.outer; ++o) {
      const T* src = px + (o * ax.n + begin) * ax.inner;
      std::copy(src, src + m * ax.inner, po + o * m * ax.inner);
    }
    return out;
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  check(shape_numel(shape) == x.numel(),
        "reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  return dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    Tensor r(shape, x.dtype());
    std::copy(x.data<T>(), x.data<T>() + x.numel(), r.data<T>());
    return r;
  });
}

Tensor transpose(const Tensor& x, const std::vector<int>& perm) {
  const int rank = x.rank();
  check(static_cast<int>(perm.size()) == rank, "transpose: perm size must equal rank");
  std::vector<bool> seen(static_cast<size_t>(rank), false);
  Shape out_shape(static_cast<size_t>(rank));
  for (int i = 0; i < rank; ++i) {
    const int p = perm[static_cast<size_t>(i)];
    check(p >= 0 && p < rank && !seen[static_cast<size_t>(p)], "transpose: invalid permutation");
    seen[static_cast<size_t>(p)] = true;
    out_shape[static_cast<size_t>(i)] = x.dim(p);
  }
  std::vector<int64_t> in_strides(static_cast<size_t>(rank), 1);
  for (int i = rank - 2; i >= 0; --i)
    in_strides[static_cast<size_t>(i)] = in_strides[static_cast<size_t>(i + 1)] * x.dim(i + 1);
  return dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    Tensor out(out_shape, x.dtype());
    const T* px = x.data<T>();
    T* po = out.data<T>();
    std::vector<int64_t> idx(static_cast<size_t>(rank), 0);
    for (int64_t flat = 0; flat < out.numel(); ++flat) {
      int64_t src = 0;
      for (int i = 0; i < rank; ++i) src += idx[static_cast<size_t>(i)] * in_strides[static_cast<size_t>(perm[static_cast<size_t>(i)])];
      po[flat] = px[src];
      for (int i = rank - 1; i >= 0; --i) {
        if (++idx[static_cast<size_t>(i)] < out_shape[static_cast<size_t>(i)]) break;
        idx[static_cast<size_t>(i)] = 0;
      }
    }
    return out;
  });
}

Tensor transpose2d(const Tensor& x) {
  check(x.rank() == 2, "transpose2d: expects rank-2, got " + shape_str(x.shape()));
  return transpose(x, {1, 0});
}

Tensor tile(const Tensor& x, const std::vector<int64_t>& reps) {
  const int rank = x.rank();
  check(static_cast<int>(reps.size()) == rank, "tile: reps size must equal rank");
  Shape out_shape(static_cast<size_t>(rank));
  for (int i = 0; i < rank; ++i) {
    check(reps[static_cast<size_t>(i)] >= 1, "tile: reps must be >= 1");
    out_shape[static_cast<size_t>(i)] = x.dim(i) * reps[static_cast<size_t>(i)];
  }
  return dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    Tensor out(out_shape, x.dtype());
    const T* px = x.data<T>();
    T* po = out.data<T>();
    std::vector<int64_t> in_strides(static_cast<size_t>(rank), 1);
    for (int i = rank - 2; i >= 0; --i)
      in_strides[static_cast<size_t>(i)] = in_strides[static_cast<size_t>(i + 1)] * x.dim(i + 1);
    std::vector<int64_t> idx(static_cast<size_t>(rank), 0);
    for (int64_t flat = 0; flat < out.numel(); ++flat) {
      int64_t src = 0;
      for (int i = 0; i < rank; ++i) src += (idx[static_cast<size_t>(i)] % x.dim(i)) * in_strides[static_cast<size_t>(i)];
      po[flat] = px[src];
      for (int i = rank - 1; i >= 0; --i) {
        if (++idx[static_cast<size_t>(i)] < out_shape[static_cast<size_t>(i)]) break;
        idx[static_cast<size_t>(i)] = 0;
      }
    }
    return out;
  });
}

Tensor sum_axis(const Tensor& x, int axis) {
  axis = norm_axis(axis, x.rank());
  const AxisSplit ax = split_axis(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[static_cast<size_t>(axis)] = 1;
  return dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    Tensor out(out_shape, x.dtype());
    const T* px = x.data<T>();
    T* po = out.data<T>();
    for (int64_t o = 0; o < ax.outer; ++o)
      for (int64_t in = 0; in < ax.inner; ++in) {
        T s = T(0);
        for (int64_t i = 0; i < ax.n; ++i) s += px[(o * ax.n + i) * ax.inner + in];
        po[o * ax.inner + in] = s;
      }
    return out;
  });
}

Tensor mean_axis(const Tensor& x, int axis) {
  Tensor s = sum_axis(x, axis);
  return scale(s, 1.0 / static_cast<double>(x.dim(norm_axis(axis, x.rank()))));
}

Tensor sum_all(const Tensor& x) {
  return dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* px = x.data<T>();
    T s = T(0);
    for (int64_t i = 0; i < x.numel(); ++i) s += px[i];
    Tensor out({1}, x.dtype());
    out.data<T>()[0] = s;
    return out;
  });
}

Tensor mean_all(const Tensor& x) { return scale(sum_all(x), 1.0 / static_cast<double>(x.numel())); }

Tensor max_axis(const Tensor& x, int axis) {
  axis = norm_axis(axis, x.rank());
  const AxisSplit ax = split_axis(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[static_cast<size_t>(axis)] = 1;
  return dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    Tensor out(out_shape, x.dtype());
    const T* px = x.data<T>();
    T* po = out.data<T>();
    for (int64_t o = 0; o < ax.outer; ++o)
      for (int64_t in = 0; in < ax.inner; ++in) {
        T m = px[o * ax.n * ax.inner + in];
        for (int64_t i = 1; i < ax.n; ++i) m = std::max(m, px[(o * ax.n + i) * ax.inner + in]);
        po[o * ax.inner + in] = m;
      }
    return out;
  });
}

Tensor argmax_last(const Tensor& x) {
  check(x.rank() >= 1, "argmax_last: needs rank >= 1");
  const int64_t n = x.dim(x.rank() - 1);
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  if (out_shape.empty()) out_shape = {1};
  Tensor out(out_shape, Dtype::f64);
  const int64_t rows = x.numel() / n;
  for (int64_t r = 0; r < rows; ++r) {
    int64_t best = 0;
    double bv = x.get(r * n);
    for (int64_t i = 1; i < n; ++i) {
      const double v = x.get(r * n + i);
      if (v > bv) {
        bv = v;
        best = i;
      }
    }
    out.set(r, static_cast<double>(best));
  }
  return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  check(a.shape() == b.shape(), "max_abs_diff: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  double m = 0;
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.get(i) - b.get(i)));
  return m;
}

}  // namespace medvt::ops
