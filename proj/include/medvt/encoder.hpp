#pragma once

#include <map>
#include <vector>

#include "medvt/nn.hpp"

namespace medvt::enc {

using ad::Graph;
using ad::ParamStore;
using ad::Var;

// Per-scale geometry of a feature pyramid entry [T,H,W,C]. Scale ids are
// 0-based, 0 = finest, num_scales-1 = coarsest.
struct ScaleInfo {
  int64_t t = 0, h = 0, w = 0, c = 0;
  int64_t tokens() const { return t * h * w; }
  attn::FrameIndex frame_index() const { return attn::FrameIndex{t, h * w}; }
};

struct EncoderConfig {
  int d = 36;
  int n_heads = 4;
  attn::PeKind pe = attn::PeKind::sinusoidal3d;
  std::vector<int> encoded_scales;      // contiguous run ending at the coarsest scale
  std::map<int, int> blocks_per_scale;  // >= 1 for every encoded scale
  bool between_scale_ffn = true;        // between-scale block gets its own feedforward sublayer
  bool scale_by_head_dim = false;
  int ffn_mult = 4;

  void validate(int num_scales) const;
};

// phi: 1x1 conv + flatten, [T,H,W,C] -> [T*H*W, d] in (t,y,x) row-major
// order, consistent with FrameIndex.
Var down_project(Graph& g, const ParamStore& ps, int scale_id, Var f, int d);

// Positional encoding for one scale, as a graph Var (leaf for sinusoidal,
// param for learnable).
Var positional_encoding(Graph& g, const ParamStore& ps, const EncoderConfig& cfg, int scale_id,
                        const ScaleInfo& info);

// `layers` pre-norm transformer blocks of Eq.-2 style attention
// (Q = K = x + pe, V = x) with residuals and feedforward.
Var within_scale(Graph& g, const ParamStore& ps, const EncoderConfig& cfg, int scale_id, Var f, Var pe, int layers);

// Cross-scale attention: queries from the finer scale, keys/values from the
// adjacent coarser scale. Non-adjacent pairs are an error.
Var between_scale(Graph& g, const ParamStore& ps, const EncoderConfig& cfg, int finer_id, int coarser_id, Var f_fine,
                  Var pe_fine, Var f_coarse, Var pe_coarse);

struct EncodeResult {
  std::vector<Var> scales;  // one [tokens, d] per scale, fine -> coarse
  std::vector<Var> pes;     // positional encodings per scale
};

// Full encoder: down-project every scale, run within-scale stacks on the
// encoded scales, then the between-scale pass coarse -> fine. Scales outside
// encoded_scales pass through down-projection only.
EncodeResult encode(Graph& g, const ParamStore& ps, const EncoderConfig& cfg, const std::vector<Var>& pyramid,
                    const std::vector<ScaleInfo>& infos);

void init_encoder_params(ParamStore& ps, Rng& rng, const EncoderConfig& cfg, const std::vector<ScaleInfo>& infos,
                         Dtype dt);

}  // namespace medvt::enc
