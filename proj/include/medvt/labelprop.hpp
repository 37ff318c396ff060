#pragma once

#include <vector>

#include "medvt/encoder.hpp"

namespace medvt::lp {

using ad::Graph;
using ad::ParamStore;
using ad::Var;
using enc::ScaleInfo;

enum class CombineSpace { logits, probabilities };

struct LabelPropConfig {
  int label_dim = 16;  // D, the label embedding dim
  int n_heads = 4;
  attn::MaskKind rule = attn::MaskKind::mtom;
  CombineSpace combine = CombineSpace::logits;
  bool scale_by_head_dim = false;
  int num_classes = 2;
};

// E_L: two 3x3 convs with a relu between them, then flatten in tau order:
// [T,H1,W1,C_cls] logits -> [T*H1*W1, D].
Var encode_labels(Graph& g, const ParamStore& ps, const LabelPropConfig& cfg, Var y_initial);

// Eq.-9 propagation: masked attention with queries = keys = flattened
// decoded features and values = encoded labels. Under Mto1 frame 0 has no
// permitted sources; its rows are returned as zeros and bypassed downstream.
Var propagate(Graph& g, const ParamStore& ps, const LabelPropConfig& cfg, Var decoded_features, Var encoded_labels,
              const attn::MaskRule& rule);

// D_L (three 3x3 conv layers) on the unflattened propagation output, then
// the final combination 0.5 * (D_L(Y~) + Y'). In probability space the mean
// is taken over softmaxed maps and returned as log-probabilities.
Var decode_and_combine(Graph& g, const ParamStore& ps, const LabelPropConfig& cfg, Var propagated, Var y_initial,
                       const attn::MaskRule& rule, const ScaleInfo& fine_info);

// Full label propagator: Y' -> Y^ for a given decoded-feature map.
Var refine(Graph& g, const ParamStore& ps, const LabelPropConfig& cfg, Var decoded_features_flat, Var y_initial,
           const ScaleInfo& fine_info);

// The propagator's per-head attention matrices as dense tensors (exact zeros
// at masked pairs); plain-tensor inspection path for the oracle checks.
std::vector<Tensor> propagation_attention_matrices(const ParamStore& ps, const LabelPropConfig& cfg,
                                                   const Tensor& decoded_features_flat, const attn::MaskRule& rule);

// Spectral-clustering oracle: W_ij = exp(score_ij) on permitted pairs,
// degree matrix D, checks the production attention rows against D^{-1} W.
struct SpectralReport {
  double max_abs_diff = 0;
  int64_t degenerate_rows = 0;
  bool ok(double tol = 1e-10) const { return max_abs_diff < tol; }
};
SpectralReport spectral_oracle(const Tensor& scores, const attn::MaskRule& rule, double tol = 1e-10);

void init_labelprop_params(ParamStore& ps, Rng& rng, const LabelPropConfig& cfg, int64_t feature_dim, Dtype dt);

}  // namespace medvt::lp
