#include "medvt/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "medvt/io.hpp"
#include "medvt/threads.hpp"

namespace medvt::pipe {

namespace fs = std::filesystem;

int64_t round32(double v) {
  const auto r = static_cast<int64_t>(std::floor(v / 32.0 + 0.5)) * 32;
  check(r >= 32, "scaled extent " + std::to_string(v) + " rounds below 32");
  return r;
}

namespace {

Tensor gather_frames(const Tensor& frames, const std::vector<int64_t>& idx) {
  const int64_t h = frames.dim(1), w = frames.dim(2), c = frames.dim(3);
  Tensor out({static_cast<int64_t>(idx.size()), h, w, c}, frames.dtype());
  const int64_t fsz = h * w * c;
  for (size_t k = 0; k < idx.size(); ++k)
    for (int64_t i = 0; i < fsz; ++i) out.set(static_cast<int64_t>(k) * fsz + i, frames.get(idx[k] * fsz + i));
  return out;
}

}  // namespace

Tensor infer_video_logits(const ParamStore& ps, const model::ModelConfig& cfg, const Tensor& frames,
                          const InferOptions& opts) {
  check(frames.rank() == 4 && frames.dim(3) == 3, "infer: frames must be [N,H,W,3]");
  const int64_t n = frames.dim(0), h = frames.dim(1), w = frames.dim(2);
  check(n >= 1, "infer: empty video");
  const int64_t window = opts.window > 0 ? opts.window : cfg.T;
  check(cfg.query_mode != dec::QueryMode::per_frame || window == cfg.T,
        "infer: per-frame queries tie the window length to the trained T=" + std::to_string(cfg.T));
  const int64_t stride = std::max<int64_t>(1, opts.stride);
  const int64_t centre = (window + 1) / 2 - 1;  // ceil(T/2) - 1

  // The model runs at the nearest multiple-of-32 size; logits come back
  // upsampled to the input size.
  const int64_t mh = round32(static_cast<double>(h));
  const int64_t mw = round32(static_cast<double>(w));
  model::ModelConfig run_cfg = cfg;
  run_cfg.T = window;
  run_cfg.H = mh;
  run_cfg.W = mw;
  const bool with_lp = cfg.labelprop && opts.use_labelprop && window >= 2;

  // Window anchors every `stride` frames; each frame reads its logits from
  // the nearest anchor's window.
  std::vector<int64_t> anchors;
  for (int64_t a = 0; a < n; a += stride) anchors.push_back(a);
  const int64_t fsz_out = h * w * cfg.num_classes;
  Tensor out({n, h, w, static_cast<int64_t>(cfg.num_classes)}, Dtype::f64);

  std::vector<Tensor> window_logits(anchors.size());
  parallel_for(static_cast<int64_t>(anchors.size()), [&](int64_t ai) {
    const int64_t a = anchors[static_cast<size_t>(ai)];
    std::vector<int64_t> idx(static_cast<size_t>(window));
    for (int64_t k = 0; k < window; ++k)
      idx[static_cast<size_t>(k)] = std::clamp<int64_t>(a - centre + k, 0, n - 1);
    Tensor clip = gather_frames(frames, idx);
    if (mh != h || mw != w) clip = ops::bilinear_resize(clip, mh, mw);
    ad::Graph g;
    model::Forward f = model::forward(g, ps, run_cfg, clip, with_lp);
    Tensor logits = f.final_logits().val();  // [T, H1, W1, C]
    logits = ops::bilinear_resize(logits, h, w).astype(Dtype::f64);
    window_logits[static_cast<size_t>(ai)] = logits;
    if (!opts.dump_attention_dir.empty()) {
      fs::create_directories(opts.dump_attention_dir);
      char name[32];
      std::snprintf(name, sizeof(name), "attn_%05lld.mvt1", static_cast<long long>(a));
      io::write_mvt1((fs::path(opts.dump_attention_dir) / name).string(), f.attention_map.val());
    }
  });

  for (int64_t f = 0; f < n; ++f) {
    // Nearest anchor (ties toward the earlier one), then the frame's own
    // offset inside that window.
    int64_t best = 0;
    for (size_t ai = 1; ai < anchors.size(); ++ai)
      if (std::abs(anchors[ai] - f) < std::abs(anchors[static_cast<size_t>(best)] - f)) best = static_cast<int64_t>(ai);
    const int64_t a = anchors[static_cast<size_t>(best)];
    const int64_t k = std::clamp<int64_t>(f - (a - centre), 0, window - 1);
    const Tensor& wl = window_logits[static_cast<size_t>(best)];
    for (int64_t i = 0; i < fsz_out; ++i) out.set(f * fsz_out + i, wl.get(k * fsz_out + i));
  }
  return out;
}

Tensor infer_video(const ParamStore& ps, const model::ModelConfig& cfg, const Tensor& frames,
                   const InferOptions& opts) {
  return ops::argmax_last(infer_video_logits(ps, cfg, frames, opts));
}

Tensor multiscale_infer(const ParamStore& ps, const model::ModelConfig& cfg, const Tensor& frames,
                        const std::vector<double>& scales, const InferOptions& opts) {
  check(!scales.empty(), "multiscale_infer: no scales given");
  const int64_t h = frames.dim(1), w = frames.dim(2);
  Tensor acc;
  for (double m : scales) {
    check(m > 0, "multiscale_infer: scale multipliers must be positive");
    const int64_t sh = round32(static_cast<double>(h) * m);
    const int64_t sw = round32(static_cast<double>(w) * m);
    Tensor scaled = (sh == h && sw == w) ? frames : ops::bilinear_resize(frames, sh, sw);
    Tensor logits = infer_video_logits(ps, cfg, scaled, opts);  // [N,sh,sw,C]
    if (sh != h || sw != w) logits = ops::bilinear_resize(logits, h, w);
    acc = acc.defined() ? ops::add(acc, logits) : logits;
  }
  acc = ops::scale(acc, 1.0 / static_cast<double>(scales.size()));
  return ops::argmax_last(acc);
}

}  // namespace medvt::pipe
