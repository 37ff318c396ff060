#include "medvt/attention.hpp"

#include <cmath>

namespace medvt::attn {

std::vector<std::pair<int64_t, int64_t>> MaskRule::allowed_frame_ranges(int64_t t) const {
  const int64_t T_ = frame_index.frames;
  switch (kind) {
    case MaskKind::none:
      return {{0, T_}};
    case MaskKind::mtom: {
      std::vector<std::pair<int64_t, int64_t>> r;
      if (t > 0) r.emplace_back(0, t);
      if (t + 1 < T_) r.emplace_back(t + 1, T_);
      return r;
    }
    case MaskKind::mto1: {
      if (t > 0) return {{0, t}};
      return {};
    }
  }
  return {};
}

MaskRule mask_rule_none(FrameIndex tau) { return MaskRule{MaskKind::none, tau}; }
MaskRule mask_rule_mtom(FrameIndex tau) { return MaskRule{MaskKind::mtom, tau}; }
MaskRule mask_rule_mto1(FrameIndex tau) { return MaskRule{MaskKind::mto1, tau}; }

namespace {

struct MhaDims {
  int64_t d_attn, d_head, dv, dv_head, n_heads;
  double scale;
};

MhaDims check_weights(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& wq, const Tensor& wk,
                      const Tensor& wv, const Tensor& wo, int n_heads, bool scale_by_head_dim) {
  check(n_heads >= 1, "mha: n_heads must be >= 1");
  check(q.rank() == 2 && k.rank() == 2 && v.rank() == 2, "mha: q/k/v must be rank-2 token matrices");
  check(k.dim(0) == v.dim(0), "mha: key and value row counts differ: " + shape_str(k.shape()) + " vs " +
                                  shape_str(v.shape()));
  check(wq.dim(0) == q.dim(1), "mha: wq input dim " + std::to_string(wq.dim(0)) + " vs q dim " +
                                   std::to_string(q.dim(1)));
  check(wk.dim(0) == k.dim(1), "mha: wk input dim mismatch");
  check(wv.dim(0) == v.dim(1), "mha: wv input dim mismatch");
  check(wq.dim(1) == wk.dim(1), "mha: wq/wk projected dims differ");
  MhaDims d{};
  d.n_heads = n_heads;
  d.d_attn = wq.dim(1);
  check(d.d_attn % n_heads == 0, "mha: projected dim " + std::to_string(d.d_attn) + " not divisible by " +
                                     std::to_string(n_heads) + " heads");
  d.d_head = d.d_attn / n_heads;
  d.dv = wv.dim(1);
  check(d.dv % n_heads == 0, "mha: value dim not divisible by heads");
  d.dv_head = d.dv / n_heads;
  check(wo.dim(0) == d.dv, "mha: wo input dim " + std::to_string(wo.dim(0)) + " vs concat dim " +
                               std::to_string(d.dv));
  d.scale = 1.0 / std::sqrt(static_cast<double>(scale_by_head_dim ? d.d_head : q.dim(1)));
  return d;
}

}  // namespace

Var mha(Var q, Var k, Var v, const MhaWeights& w) {
  const MhaDims dims =
      check_weights(q.val(), k.val(), v.val(), w.wq.val(), w.wk.val(), w.wv.val(), w.wo.val(), w.n_heads,
                    w.scale_by_head_dim);
  Var qp = ad::matmul(q, w.wq);
  Var kp = ad::matmul(k, w.wk);
  Var vp = ad::matmul(v, w.wv);
  std::vector<Var> heads;
  heads.reserve(static_cast<size_t>(dims.n_heads));
  for (int64_t h = 0; h < dims.n_heads; ++h) {
    Var qh = ad::slice(qp, 1, h * dims.d_head, (h + 1) * dims.d_head);
    Var kh = ad::slice(kp, 1, h * dims.d_head, (h + 1) * dims.d_head);
    Var vh = ad::slice(vp, 1, h * dims.dv_head, (h + 1) * dims.dv_head);
    Var scores = ad::scale(ad::matmul(qh, ad::transpose2d(kh)), dims.scale);
    Var attnw = ad::softmax(scores, 1);
    heads.push_back(ad::matmul(attnw, vh));
  }
  Var cat = dims.n_heads == 1 ? heads[0] : ad::concat(heads, 1);
  return ad::matmul(cat, w.wo);
}

Var masked_mha(Var q, Var k, Var v, const MhaWeights& w, const MaskRule& rule) {
  const MhaDims dims =
      check_weights(q.val(), k.val(), v.val(), w.wq.val(), w.wk.val(), w.wv.val(), w.wo.val(), w.n_heads,
                    w.scale_by_head_dim);
  const FrameIndex& fi = rule.frame_index;
  check(fi.frames >= 1 && fi.hw >= 1, "masked_mha: invalid frame index");
  check(q.dim(0) == fi.tokens() && k.dim(0) == fi.tokens(),
        "masked_mha: token count " + std::to_string(q.dim(0)) + " does not match frame index " +
            std::to_string(fi.tokens()));
  Var qp = ad::matmul(q, w.wq);
  Var kp = ad::matmul(k, w.wk);
  Var vp = ad::matmul(v, w.wv);
  std::vector<Var> out_blocks;  // per query frame, [HW, dv]
  out_blocks.reserve(static_cast<size_t>(fi.frames));
  for (int64_t t = 0; t < fi.frames; ++t) {
    const auto ranges = rule.allowed_frame_ranges(t);
    check(!ranges.empty(), "masked_mha: degenerate row, every key masked for frame " + std::to_string(t) +
                               (rule.kind == MaskKind::mtom ? " (MtoM requires T >= 2)" : " (Mto1 frame 0)"));
    Var qt = ad::slice(qp, 0, t * fi.hw, (t + 1) * fi.hw);
    auto gather = [&](Var m) {
      std::vector<Var> parts;
      for (const auto& [b, e] : ranges) parts.push_back(ad::slice(m, 0, b * fi.hw, e * fi.hw));
      return parts.size() == 1 ? parts[0] : ad::concat(parts, 0);
    };
    Var kt = gather(kp);
    Var vt = gather(vp);
    std::vector<Var> heads;
    for (int64_t h = 0; h < dims.n_heads; ++h) {
      Var qh = ad::slice(qt, 1, h * dims.d_head, (h + 1) * dims.d_head);
      Var kh = ad::slice(kt, 1, h * dims.d_head, (h + 1) * dims.d_head);
      Var vh = ad::slice(vt, 1, h * dims.dv_head, (h + 1) * dims.dv_head);
      Var scores = ad::scale(ad::matmul(qh, ad::transpose2d(kh)), dims.scale);
      Var attnw = ad::softmax(scores, 1);
      heads.push_back(ad::matmul(attnw, vh));
    }
    out_blocks.push_back(dims.n_heads == 1 ? heads[0] : ad::concat(heads, 1));
  }
  Var cat = out_blocks.size() == 1 ? out_blocks[0] : ad::concat(out_blocks, 0);
  return ad::matmul(cat, w.wo);
}

Var attention_affinity(Var q, Var k, Var wq, Var wk, int n_heads, bool scale_by_head_dim) {
  check(n_heads >= 1, "attention_affinity: n_heads must be >= 1");
  const int64_t d_attn = wq.val().dim(1);
  check(wq.val().dim(0) == q.dim(1) && wk.val().dim(0) == k.dim(1), "attention_affinity: projection dim mismatch");
  check(d_attn == wk.val().dim(1) && d_attn % n_heads == 0, "attention_affinity: head split invalid");
  const int64_t d_head = d_attn / n_heads;
  const double scl = 1.0 / std::sqrt(static_cast<double>(scale_by_head_dim ? d_head : q.dim(1)));
  Var qp = ad::matmul(q, wq);
  Var kp = ad::matmul(k, wk);
  std::vector<Var> maps;
  for (int64_t h = 0; h < n_heads; ++h) {
    Var qh = ad::slice(qp, 1, h * d_head, (h + 1) * d_head);
    Var kh = ad::slice(kp, 1, h * d_head, (h + 1) * d_head);
    Var a = ad::softmax(ad::scale(ad::matmul(qh, ad::transpose2d(kh)), scl), 1);  // [Nq,Nk]
    maps.push_back(ad::reshape(a, {q.dim(0), k.dim(0), 1}));
  }
  return maps.size() == 1 ? maps[0] : ad::concat(maps, 2);
}

std::vector<Tensor> masked_attention_scores(const Tensor& q, const Tensor& k, const Tensor& wq, const Tensor& wk,
                                            int n_heads, bool scale_by_head_dim) {
  const int64_t d_attn = wq.dim(1);
  check(d_attn % n_heads == 0, "masked_attention_scores: head split invalid");
  const int64_t d_head = d_attn / n_heads;
  const double scl = 1.0 / std::sqrt(static_cast<double>(scale_by_head_dim ? d_head : q.dim(1)));
  Tensor qp = ops::matmul(q, wq);
  Tensor kp = ops::matmul(k, wk);
  std::vector<Tensor> out;
  for (int64_t h = 0; h < n_heads; ++h) {
    Tensor qh = ops::slice(qp, 1, h * d_head, (h + 1) * d_head);
    Tensor kh = ops::slice(kp, 1, h * d_head, (h + 1) * d_head);
    out.push_back(ops::scale(ops::matmul(qh, ops::transpose2d(kh)), scl));
  }
  return out;
}

Tensor masked_softmax_rows(const Tensor& scores, const MaskRule& rule, std::vector<int64_t>* degenerate_rows) {
  check(scores.rank() == 2 && scores.dim(0) == scores.dim(1), "masked_softmax_rows: scores must be square");
  const FrameIndex& fi = rule.frame_index;
  check(scores.dim(0) == fi.tokens(), "masked_softmax_rows: size does not match frame index");
  Tensor out = Tensor::zeros(scores.shape(), scores.dtype());
  const int64_t n = scores.dim(0);
  for (int64_t i = 0; i < n; ++i) {
    const int64_t t = fi.tau(i);
    const auto ranges = rule.allowed_frame_ranges(t);
    if (ranges.empty()) {
      if (degenerate_rows) degenerate_rows->push_back(i);
      continue;
    }
    // Same max-subtracted normalization as the softmax kernel, over the
    // permitted entries in ascending column order.
    double mx = -std::numeric_limits<double>::infinity();
    for (const auto& [b, e] : ranges)
      for (int64_t j = b * fi.hw; j < e * fi.hw; ++j) mx = std::max(mx, scores.get(i * n + j));
    dispatch(scores.dtype(), [&](auto tag) {
      using T = decltype(tag);
      const T* ps = scores.data<T>();
      T* po = out.data<T>();
      T sum = T(0);
      for (const auto& [b, e] : ranges)
        for (int64_t j = b * fi.hw; j < e * fi.hw; ++j) {
          const T v = static_cast<T>(std::exp(static_cast<double>(ps[i * n + j]) - mx));
          po[i * n + j] = v;
          sum += v;
        }
      for (const auto& [b, e] : ranges)
        for (int64_t j = b * fi.hw; j < e * fi.hw; ++j) po[i * n + j] /= sum;
    });
  }
  return out;
}

Tensor sinusoidal_pe(int64_t t, int64_t h, int64_t w, int64_t d) {
  check(d % 3 == 0, "sinusoidal_pe: d=" + std::to_string(d) + " not divisible into three axis blocks");
  const int64_t db = d / 3;
  check(db % 2 == 0, "sinusoidal_pe: per-axis block " + std::to_string(db) + " must be even");
  Tensor out({t * h * w, d}, Dtype::f64);
  const int64_t half = db / 2;
  std::vector<double> freq(static_cast<size_t>(half));
  for (int64_t j = 0; j < half; ++j)
    freq[static_cast<size_t>(j)] = std::pow(10000.0, -2.0 * static_cast<double>(j) / static_cast<double>(db));
  int64_t row = 0;
  for (int64_t ti = 0; ti < t; ++ti)
    for (int64_t yi = 0; yi < h; ++yi)
      for (int64_t xi = 0; xi < w; ++xi, ++row) {
        const int64_t pos[3] = {ti, yi, xi};
        for (int axis = 0; axis < 3; ++axis)
          for (int64_t j = 0; j < half; ++j) {
            const double a = static_cast<double>(pos[axis]) * freq[static_cast<size_t>(j)];
            out.set(row * d + axis * db + 2 * j, std::sin(a));
            out.set(row * d + axis * db + 2 * j + 1, std::cos(a));
          }
      }
  return out;
}

Tensor sinusoidal_pe_1d(int64_t n, int64_t d) {
  check(d % 2 == 0, "sinusoidal_pe_1d: d must be even");
  Tensor out({n, d}, Dtype::f64);
  const int64_t half = d / 2;
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < half; ++j) {
      const double a = static_cast<double>(i) * std::pow(10000.0, -2.0 * static_cast<double>(j) / static_cast<double>(d));
      out.set(i * d + 2 * j, std::sin(a));
      out.set(i * d + 2 * j + 1, std::cos(a));
    }
  return out;
}

}  // namespace medvt::attn
