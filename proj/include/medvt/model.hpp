#pragma once

#include <optional>
#include <string>
#include <vector>

#include "medvt/decoder.hpp"
#include "medvt/encoder.hpp"
#include "medvt/labelprop.hpp"

namespace medvt::model {

using ad::Graph;
using ad::ParamStore;
using ad::Var;
using enc::ScaleInfo;

struct LossConfig {
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  double dice_eps = 1.0;
  double lambda_focal = 1.0;
  double lambda_dice = 1.0;
};

struct ModelConfig {
  // Clip geometry (training contract; inference may resize).
  int64_t T = 6, H = 64, W = 64;
  int num_classes = 2;

  // Dimensions. d must be divisible by n_heads, and by 6 when the
  // sinusoidal-3d feature encoding is used.
  int d = 36;
  int n_heads = 4;
  int n_dec_iterations = 3;  // N_d
  int label_dim = 16;        // D

  // Structure.
  std::vector<int64_t> bb_widths = {16, 32, 64, 64};  // per-scale channels, strides 4/8/16/32
  int head_width = 32;
  int gn_groups = 4;
  int num_encoded_scales = 2;            // counted from the coarsest scale
  std::vector<int> enc_blocks = {2, 1};  // per encoded scale, coarsest first
  int num_decoder_scales = 3;            // coarsest FPN levels fed to query learning
  attn::PeKind pe = attn::PeKind::sinusoidal3d;
  attn::PeKind query_pe = attn::PeKind::learnable;
  dec::QueryMode query_mode = dec::QueryMode::per_frame;
  dec::QueryMapMode qmap = dec::QueryMapMode::frame_sliced;
  bool labelprop = true;
  attn::MaskKind prop_rule = attn::MaskKind::mtom;
  lp::CombineSpace combine_space = lp::CombineSpace::logits;
  bool between_scale_ffn = true;
  bool scale_by_head_dim = false;

  LossConfig loss;

  // Optimization.
  double lr = 1e-3;
  double weight_decay = 1e-4;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  int64_t stage1_iters = 350, stage2_iters = 150;
  int64_t batch_size = 0;  // 0 = full dataset per iteration
  uint64_t seed = 7;
  Dtype dtype = Dtype::f32;
  bool augment_hflip = false;

  int num_scales() const { return 4; }
  void validate() const;
  enc::EncoderConfig encoder_config() const;
  dec::DecoderConfig decoder_config() const;
  lp::LabelPropConfig labelprop_config() const;

  // Paper-scale dims (d=384, N_h=8, blocks 6+1, T=6, N_q=6); shape tests only.
  static ModelConfig paper_dims();
};

// Seeded initialization of every parameter; names are stable across runs.
ParamStore init_params(const ModelConfig& cfg, uint64_t seed);

struct Pyramid {
  std::vector<Var> scales;      // [T,H_s,W_s,C_s] images, fine -> coarse
  std::vector<ScaleInfo> infos;
};

// 4-scale strided convnet at strides 4/8/16/32 (tiled 2x2 stride-2 convs,
// group norm, relu). Requires H and W divisible by 32; the error message
// names the padding needed.
Pyramid toy_backbone(Graph& g, const ParamStore& ps, const ModelConfig& cfg, Var clip);

// 3-layer 3D conv head (temporal kernel 3) with group norm and relu, final
// 1x1x1 linear layer to num_classes.
Var task_head(Graph& g, const ParamStore& ps, const ModelConfig& cfg, Var decoder_out);

struct Forward {
  Var y_prime;                 // initial logits [T,H1,W1,C], stride-4 grid
  Var y_hat;                   // refined logits; undefined when labelprop is off
  Var attention_map;           // F^A per-pixel channels [T,H1,W1,N_h]
  Var queries;                 // adaptive queries Q^o
  Var decoder_features;        // F^D [T,H1,W1,d+N_h]
  std::vector<std::pair<int, int>> decoder_trace;
  ScaleInfo fine_info;
  Var final_logits() const { return y_hat.defined() ? y_hat : y_prime; }
};

Forward forward(Graph& g, const ParamStore& ps, const ModelConfig& cfg, const Tensor& clip, bool with_labelprop);

// --- losses ---
// targets are one-hot with the class axis last, same shape as logits/probs.
Var focal_loss(Var logits, const Tensor& targets_onehot, double alpha, double gamma);
Var dice_loss(Var probs, const Tensor& targets_onehot, double eps);
Var combined_loss(Var logits, const Tensor& targets_onehot, const LossConfig& cfg);

// [*,] class-index tensor -> one-hot with C channels appended.
Tensor one_hot(const Tensor& class_indices, int num_classes, Dtype dt);

// Upsampled-to-target loss: logits [T,H1,W1,C] are bilinearly upsampled to
// the mask's extents before the combined loss.
Var clip_loss(Graph& g, Var logits, const Tensor& mask_thw, int num_classes, const LossConfig& cfg);

// --- training ---
struct ClipSample {
  Tensor clip;  // [T,H,W,3] in [0,1]
  Tensor mask;  // [T,H,W] class indices
};

struct TrainOptions {
  std::string out_dir;          // checkpoints + loss curve, empty = no files
  bool verbose = false;
  int64_t log_every = 25;
};

struct TrainResult {
  struct Point {
    int64_t iter;
    int stage;
    double loss;
  };
  std::vector<Point> curve;
  bool nan_abort = false;
  int64_t iterations_run = 0;
};

// Two-stage schedule: stage 1 trains everything except the label propagator
// with the loss on Y'; stage 2 freezes all prior weights and trains only the
// propagator with the loss on Y^. Deterministic given cfg.seed.
TrainResult train(ParamStore& ps, const ModelConfig& cfg, const std::vector<ClipSample>& data,
                  const TrainOptions& opts = {});

std::string loss_curve_csv(const TrainResult& r);

}  // namespace medvt::model
