#pragma once

#include <vector>

#include "medvt/autodiff.hpp"
#include "medvt/tensor.hpp"

namespace medvt::attn {

using ad::Var;

// Maps a flattened token position to its frame: tau(i) = i / HW for the
// (t, y, x) row-major flattening used everywhere in this codebase.
struct FrameIndex {
  int64_t frames = 0;  // T
  int64_t hw = 0;      // H*W tokens per frame
  int64_t tokens() const { return frames * hw; }
  int64_t tau(int64_t i) const { return i / hw; }
};

enum class MaskKind { none, mtom, mto1 };

// Propagation masks are never materialized at THW x THW; attention is
// evaluated block-wise over the frames this rule permits.
struct MaskRule {
  MaskKind kind = MaskKind::none;
  FrameIndex frame_index;

  bool masked(int64_t i, int64_t j) const {
    const int64_t ti = frame_index.tau(i), tj = frame_index.tau(j);
    switch (kind) {
      case MaskKind::none: return false;
      case MaskKind::mtom: return ti == tj;
      case MaskKind::mto1: return tj >= ti;  // propagate only from strictly earlier frames
    }
    return false;
  }
  // Contiguous [begin, end) frame ranges a query in frame t may attend to.
  std::vector<std::pair<int64_t, int64_t>> allowed_frame_ranges(int64_t t) const;
};

MaskRule mask_rule_none(FrameIndex tau);
MaskRule mask_rule_mtom(FrameIndex tau);
MaskRule mask_rule_mto1(FrameIndex tau);

// Per-head projection matrices stored stacked: wq/wk [d_in, Nh*d_head],
// wv [dv_in, Nh*dv_head], wo [Nh*dv_head, d_out]. Head h owns columns
// [h*d_head, (h+1)*d_head).
struct MhaWeights {
  Var wq, wk, wv, wo;
  int n_heads = 1;
  // Scores use 1/sqrt(d) with d the query/key model dim; the alternative
  // 1/sqrt(d_head) sits behind this flag.
  bool scale_by_head_dim = false;
};

// Multihead attention: per-head softmax(scale * (q Wq)(k Wk)^T) (v Wv),
// heads concatenated then projected by Wo.
Var mha(Var q, Var k, Var v, const MhaWeights& w);

// Masked variant; pairs excluded by the rule receive exactly zero weight.
// A query row whose keys are all masked raises a degenerate-row error
// (MtoM with T=1; Mto1 at frame 0).
Var masked_mha(Var q, Var k, Var v, const MhaWeights& w, const MaskRule& rule);

// Eq.-style two-argument affinity: per-head softmax score matrices stacked
// as channels, [Nq, Nk, Nh]. No value/output projection.
Var attention_affinity(Var q, Var k, Var wq, Var wk, int n_heads, bool scale_by_head_dim = false);

// --- plain-tensor inspection path (propcheck / spectral oracle) ---

// Per-head raw score matrices (1/sqrt(d) applied, no mask), dense [N, N].
std::vector<Tensor> masked_attention_scores(const Tensor& q, const Tensor& k, const Tensor& wq, const Tensor& wk,
                                            int n_heads, bool scale_by_head_dim = false);

// The production normalization: block-wise softmax over permitted entries,
// scattered into a dense matrix with exact zeros at masked pairs. Rows with
// no permitted entry are zero and reported via *degenerate_rows.
Tensor masked_softmax_rows(const Tensor& scores, const MaskRule& rule, std::vector<int64_t>* degenerate_rows = nullptr);

// --- positional and scale encodings ---

enum class PeKind { sinusoidal3d, learnable };

// 3-D sinusoidal encoding [T*H*W, d]: d split into three equal blocks for
// (t, y, x), each an interleaved sin/cos frequency ladder with base 10000.
// Requires d divisible by 3 and the per-axis block even.
Tensor sinusoidal_pe(int64_t t, int64_t h, int64_t w, int64_t d);

// 1-D ladder over row index, [n, d] with d even. Used for the static
// sinusoidal query-embedding variant.
Tensor sinusoidal_pe_1d(int64_t n, int64_t d);

}  // namespace medvt::attn
