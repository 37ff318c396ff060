#pragma once

#include <string>
#include <vector>

#include "medvt/model.hpp"

namespace medvt::pipe {

using ad::ParamStore;

// Nearest multiple of 32, ties rounding up; errors below 32.
int64_t round32(double v);

struct InferOptions {
  int64_t window = 0;   // T; 0 = take from the model config
  int64_t stride = 1;   // window spacing; frames read their logits from the nearest window
  bool use_labelprop = true;
  std::string dump_attention_dir;  // when set, writes F^A per window as MVT1
};

// Sliding-window inference. Each window of `window` frames is centred
// (offset ceil(T/2)-1) on its target frame with edge-replicated indices at
// the video boundaries; logits are bilinearly upsampled to the input size.
// Returns per-frame class logits [N,H,W,C].
Tensor infer_video_logits(const ParamStore& ps, const model::ModelConfig& cfg, const Tensor& frames,
                          const InferOptions& opts = {});

// argmax over infer_video_logits -> [N,H,W] class indices.
Tensor infer_video(const ParamStore& ps, const model::ModelConfig& cfg, const Tensor& frames,
                   const InferOptions& opts = {});

// Multiscale inference: per scale multiplier the frames are resized to the
// nearest multiple of 32, logits are brought back to the original size,
// arithmetically averaged, then argmaxed. scales = {1.0} matches
// infer_video bit-identically.
Tensor multiscale_infer(const ParamStore& ps, const model::ModelConfig& cfg, const Tensor& frames,
                        const std::vector<double>& scales, const InferOptions& opts = {});

}  // namespace medvt::pipe
