#pragma once

#include <vector>

#include "medvt/encoder.hpp"

namespace medvt::dec {

using ad::Graph;
using ad::ParamStore;
using ad::Var;
using enc::ScaleInfo;

enum class QueryMode { per_frame, per_clip };     // N_q = T or N_q = 1
enum class QueryMapMode { frame_sliced, query_mean };

struct DecoderConfig {
  std::vector<int> decoder_scales;  // scale ids, ordered coarse -> fine
  int n_iterations = 3;             // N_d
  int n_heads = 4;
  int d = 36;                       // fpn channel dim
  QueryMode query_mode = QueryMode::per_frame;
  attn::PeKind query_pe = attn::PeKind::learnable;
  QueryMapMode qmap = QueryMapMode::frame_sliced;
  bool scale_by_head_dim = false;
  int ffn_mult = 4;

  int64_t num_queries(int64_t t) const { return query_mode == QueryMode::per_frame ? t : 1; }
  void validate(int num_scales) const;
};

// FPN over 4 scales: the coarse scales come from the encoder (flattened
// [tokens,d], unflattened here), the fine scales directly from the backbone.
// Per scale: 1x1 projection to d; coarse-to-fine relu + bilinear upsample +
// pointwise add. Output keeps each scale's spatial extents, channel dim d.
std::vector<Var> pixel_decode(Graph& g, const ParamStore& ps, const DecoderConfig& cfg,
                              const std::vector<Var>& encoded, const std::vector<int>& encoder_scales,
                              const std::vector<Var>& raw_pyramid, const std::vector<ScaleInfo>& infos);

// One query-learning block: self attention, cross attention into the scale's
// pixel-decoded features (with feature positional embedding and scale
// embedding), then feedforward; all pre-norm with residuals.
Var decoder_block(Graph& g, const ParamStore& ps, const DecoderConfig& cfg, int iteration, int scale_id, Var q,
                  Var qpe, Var feats, Var pe, Var scale_emb);

struct LearnedQueries {
  Var q;                                       // final adaptive queries [N_q, d]
  std::vector<std::pair<int, int>> trace;      // (iteration, scale) application order
};

// Runs N_d iterations over decoder_scales coarse -> fine, starting from the
// stored query init.
LearnedQueries learn_queries(Graph& g, const ParamStore& ps, const DecoderConfig& cfg,
                             const std::vector<Var>& pixel_scales, const std::vector<Var>& pes,
                             const std::vector<ScaleInfo>& infos);

struct ObjectAttention {
  Var raw;   // [N_q, T*H1*W1, N_h], per-head row-stochastic affinities
  Var map;   // [T, H1, W1, N_h] per-pixel attention channels
};

// Two-argument affinity between the final queries and the finest decoded
// scale (fresh wq/wk, no value path).
ObjectAttention object_attention(Graph& g, const ParamStore& ps, const DecoderConfig& cfg, Var queries, Var f_fine,
                                 const ScaleInfo& fine_info);

// F^D: channel-wise concatenation, attention channels first:
// [T,H1,W1,N_h + d].
Var decoder_output(Var attention_map, Var f_fine_image);

void init_decoder_params(ParamStore& ps, Rng& rng, const DecoderConfig& cfg, const std::vector<int>& encoder_scales,
                         const std::vector<ScaleInfo>& infos, Dtype dt);

}  // namespace medvt::dec
