#include "medvt/labelprop.hpp"

#include <cmath>

namespace medvt::lp {

Var encode_labels(Graph& g, const ParamStore& ps, const LabelPropConfig& cfg, Var y_initial) {
  const Shape& s = y_initial.val().shape();
  check(s.size() == 4, "encode_labels: input must be [T,H,W,C_cls], got " + shape_str(s));
  Var h = ad::relu(nn::conv2d_layer(g, ps, "lp.enc.conv1", y_initial));
  Var e = nn::conv2d_layer(g, ps, "lp.enc.conv2", h);
  return ad::reshape(e, {s[0] * s[1] * s[2], static_cast<int64_t>(cfg.label_dim)});
}

Var propagate(Graph& g, const ParamStore& ps, const LabelPropConfig& cfg, Var decoded_features, Var encoded_labels,
              const attn::MaskRule& rule) {
  check(decoded_features.dim(0) == encoded_labels.dim(0),
        "propagate: feature rows " + std::to_string(decoded_features.dim(0)) + " vs label rows " +
            std::to_string(encoded_labels.dim(0)));
  const attn::FrameIndex& fi = rule.frame_index;
  if (rule.kind == attn::MaskKind::mtom)
    check(fi.frames >= 2, "propagate: MtoM needs T >= 2 (every key masked at T = 1)");
  auto weights = nn::mha_weights(g, ps, "lp.attn", cfg.n_heads, cfg.scale_by_head_dim);
  if (rule.kind != attn::MaskKind::mto1)
    return attn::masked_mha(decoded_features, decoded_features, encoded_labels, weights, rule);
  // Mto1: frame 0 has no permitted sources. Evaluate frames 1..T-1 against
  // their prefixes and keep zeros for frame 0.
  check(fi.frames >= 2, "propagate: Mto1 needs T >= 2");
  Var zeros = g.leaf(Tensor::zeros({fi.hw, static_cast<int64_t>(cfg.label_dim)}, decoded_features.val().dtype()));
  std::vector<Var> blocks{zeros};
  Var qp = ad::matmul(decoded_features, weights.wq);
  Var kp = ad::matmul(decoded_features, weights.wk);
  Var vp = ad::matmul(encoded_labels, weights.wv);
  const int64_t d_attn = weights.wq.val().dim(1);
  const int64_t d_head = d_attn / cfg.n_heads;
  const int64_t dv_head = weights.wv.val().dim(1) / cfg.n_heads;
  const double scl =
      1.0 / std::sqrt(static_cast<double>(cfg.scale_by_head_dim ? d_head : decoded_features.dim(1)));
  for (int64_t t = 1; t < fi.frames; ++t) {
    Var qt = ad::slice(qp, 0, t * fi.hw, (t + 1) * fi.hw);
    Var kt = ad::slice(kp, 0, 0, t * fi.hw);
    Var vt = ad::slice(vp, 0, 0, t * fi.hw);
    std::vector<Var> heads;
    for (int h = 0; h < cfg.n_heads; ++h) {
      Var qh = ad::slice(qt, 1, h * d_head, (h + 1) * d_head);
      Var kh = ad::slice(kt, 1, h * d_head, (h + 1) * d_head);
      Var vh = ad::slice(vt, 1, h * dv_head, (h + 1) * dv_head);
      Var a = ad::softmax(ad::scale(ad::matmul(qh, ad::transpose2d(kh)), scl), 1);
      heads.push_back(ad::matmul(a, vh));
    }
    Var cat = heads.size() == 1 ? heads[0] : ad::concat(heads, 1);
    blocks.push_back(ad::matmul(cat, weights.wo));
  }
  return ad::concat(blocks, 0);
}

Var decode_and_combine(Graph& g, const ParamStore& ps, const LabelPropConfig& cfg, Var propagated, Var y_initial,
                       const attn::MaskRule& rule, const ScaleInfo& fine_info) {
  const Shape& ys = y_initial.val().shape();
  check(ys.size() == 4, "decode_and_combine: Y' must be [T,H,W,C_cls]");
  check(propagated.dim(0) == fine_info.tokens(),
        "decode_and_combine: propagated rows " + std::to_string(propagated.dim(0)) + " vs expected " +
            std::to_string(fine_info.tokens()));
  Var img = ad::reshape(propagated, {fine_info.t, fine_info.h, fine_info.w, static_cast<int64_t>(cfg.label_dim)});
  Var h1 = ad::relu(nn::conv2d_layer(g, ps, "lp.dec.conv1", img));
  Var h2 = ad::relu(nn::conv2d_layer(g, ps, "lp.dec.conv2", h1));
  Var decoded = nn::conv2d_layer(g, ps, "lp.dec.conv3", h2);  // [T,H,W,C_cls]

  Var combined;
  if (cfg.combine == CombineSpace::logits) {
    combined = ad::scale(ad::add(decoded, y_initial), 0.5);
  } else {
    // Probability-space mean, returned as log-probabilities.
    Var p = ad::scale(ad::add(ad::softmax(decoded, 3), ad::softmax(y_initial, 3)), 0.5);
    combined = ad::log(ad::add_scalar(p, 1e-12));
  }
  if (rule.kind == attn::MaskKind::mto1) {
    // Frame 0 is degenerate under Mto1: pass Y' through unchanged.
    Var rest = ad::slice(combined, 0, 1, fine_info.t);
    Var first = ad::slice(y_initial, 0, 0, 1);
    combined = ad::concat({first, rest}, 0);
  }
  return combined;
}

Var refine(Graph& g, const ParamStore& ps, const LabelPropConfig& cfg, Var decoded_features_flat, Var y_initial,
           const ScaleInfo& fine_info) {
  const attn::MaskRule rule{cfg.rule, fine_info.frame_index()};
  Var encoded = encode_labels(g, ps, cfg, y_initial);
  Var propagated = propagate(g, ps, cfg, decoded_features_flat, encoded, rule);
  return decode_and_combine(g, ps, cfg, propagated, y_initial, rule, fine_info);
}

std::vector<Tensor> propagation_attention_matrices(const ParamStore& ps, const LabelPropConfig& cfg,
                                                   const Tensor& decoded_features_flat, const attn::MaskRule& rule) {
  std::vector<Tensor> scores =
      attn::masked_attention_scores(decoded_features_flat, decoded_features_flat, ps.value("lp.attn.wq"),
                                    ps.value("lp.attn.wk"), cfg.n_heads, cfg.scale_by_head_dim);
  std::vector<Tensor> out;
  out.reserve(scores.size());
  for (const Tensor& s : scores) out.push_back(attn::masked_softmax_rows(s, rule));
  return out;
}

SpectralReport spectral_oracle(const Tensor& scores, const attn::MaskRule& rule, double tol) {
  check(scores.all_finite(), "spectral_oracle: scores must be finite");
  const int64_t n = scores.dim(0);
  check(scores.rank() == 2 && scores.dim(1) == n, "spectral_oracle: scores must be square");
  std::vector<int64_t> degenerate;
  const Tensor production = attn::masked_softmax_rows(scores, rule, &degenerate);
  // Random-walk normalization D^{-1} W with W = exp(score) on permitted
  // pairs, computed without the softmax shift.
  SpectralReport rep;
  rep.degenerate_rows = static_cast<int64_t>(degenerate.size());
  for (int64_t i = 0; i < n; ++i) {
    double degree = 0;
    for (int64_t j = 0; j < n; ++j)
      if (!rule.masked(i, j)) degree += std::exp(scores.get(i * n + j));
    if (degree == 0) continue;  // degenerate row, reported above
    for (int64_t j = 0; j < n; ++j) {
      const double w = rule.masked(i, j) ? 0.0 : std::exp(scores.get(i * n + j));
      rep.max_abs_diff = std::max(rep.max_abs_diff, std::abs(w / degree - production.get(i * n + j)));
    }
  }
  (void)tol;
  return rep;
}

void init_labelprop_params(ParamStore& ps, Rng& rng, const LabelPropConfig& cfg, int64_t feature_dim, Dtype dt) {
  check(feature_dim % cfg.n_heads == 0, "labelprop: feature dim " + std::to_string(feature_dim) +
                                            " not divisible by " + std::to_string(cfg.n_heads) + " heads");
  check(cfg.label_dim % cfg.n_heads == 0, "labelprop: label dim must be divisible by heads");
  Rng r = rng.fork(0x4c50);  // "LP"
  const int64_t D = cfg.label_dim, C = cfg.num_classes;
  nn::init_conv(ps, r, "lp.enc.conv1", {3, 3, C, D}, dt);
  nn::init_conv(ps, r, "lp.enc.conv2", {3, 3, D, D}, dt);
  nn::init_mha(ps, r, "lp.attn", feature_dim, feature_dim, D, D, D, dt);
  nn::init_conv(ps, r, "lp.dec.conv1", {3, 3, D, D}, dt);
  nn::init_conv(ps, r, "lp.dec.conv2", {3, 3, D, D}, dt);
  nn::init_conv(ps, r, "lp.dec.conv3", {3, 3, D, C}, dt);
}

}  // namespace medvt::lp
