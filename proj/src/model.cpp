#include "medvt/model.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <sstream>

#include "medvt/io.hpp"
#include "medvt/threads.hpp"

namespace medvt::model {

namespace fs = std::filesystem;

void ModelConfig::validate() const {
  check(T >= 1, "config: T must be >= 1");
  check(num_classes >= 2, "config: num_classes must be >= 2");
  check(d >= 1 && n_heads >= 1 && d % n_heads == 0, "config: d must be a positive multiple of N_h");
  if (pe == attn::PeKind::sinusoidal3d)
    check(d % 6 == 0, "config: sinusoidal3d feature encoding needs d divisible by 6, got d=" + std::to_string(d));
  check((d + n_heads) % n_heads == 0, "config: d+N_h must be divisible by N_h");
  check(label_dim % n_heads == 0, "config: D must be divisible by N_h");
  check(bb_widths.size() == 4, "config: backbone needs 4 scale widths");
  for (int64_t w : bb_widths) check(w % gn_groups == 0, "config: backbone widths must divide into gn_groups");
  check(head_width % gn_groups == 0, "config: head_width must divide into gn_groups");
  check(num_encoded_scales >= 0 && num_encoded_scales <= 4, "config: num_encoded_scales in [0,4]");
  check(static_cast<int>(enc_blocks.size()) >= num_encoded_scales, "config: enc_blocks shorter than encoded scales");
  check(num_decoder_scales >= 1 && num_decoder_scales <= 4, "config: num_decoder_scales in [1,4]");
  check(n_dec_iterations >= 1, "config: N_d must be >= 1");
  check(loss.lambda_focal > 0 || loss.lambda_dice > 0, "config: loss weights must not both be zero");
  check(loss.focal_alpha >= 0 && loss.focal_gamma >= 0 && loss.dice_eps >= 0, "config: loss constants must be >= 0");
}

enc::EncoderConfig ModelConfig::encoder_config() const {
  enc::EncoderConfig e;
  e.d = d;
  e.n_heads = n_heads;
  e.pe = pe;
  e.between_scale_ffn = between_scale_ffn;
  e.scale_by_head_dim = scale_by_head_dim;
  for (int i = 0; i < num_encoded_scales; ++i) {
    const int sid = num_scales() - 1 - i;  // coarsest first
    e.encoded_scales.push_back(sid);
    e.blocks_per_scale[sid] = enc_blocks[static_cast<size_t>(i)];
  }
  return e;
}

dec::DecoderConfig ModelConfig::decoder_config() const {
  dec::DecoderConfig c;
  c.d = d;
  c.n_heads = n_heads;
  c.n_iterations = n_dec_iterations;
  c.query_mode = query_mode;
  c.query_pe = query_pe;
  c.qmap = qmap;
  c.scale_by_head_dim = scale_by_head_dim;
  for (int i = 0; i < num_decoder_scales; ++i) c.decoder_scales.push_back(num_scales() - 1 - i);  // coarse -> fine
  return c;
}

lp::LabelPropConfig ModelConfig::labelprop_config() const {
  lp::LabelPropConfig c;
  c.label_dim = label_dim;
  c.n_heads = n_heads;
  c.rule = prop_rule;
  c.combine = combine_space;
  c.scale_by_head_dim = scale_by_head_dim;
  c.num_classes = num_classes;
  return c;
}

ModelConfig ModelConfig::paper_dims() {
  ModelConfig c;
  c.d = 384;
  c.n_heads = 8;
  c.enc_blocks = {6, 1};
  c.T = 6;
  c.label_dim = 16;
  c.bb_widths = {16, 32, 64, 64};
  return c;
}

namespace {

std::vector<ScaleInfo> pyramid_infos(const ModelConfig& cfg, int64_t h, int64_t w) {
  std::vector<ScaleInfo> infos;
  for (int s = 0; s < 4; ++s) {
    const int64_t stride = 4LL << s;
    infos.push_back(ScaleInfo{cfg.T, h / stride, w / stride, cfg.bb_widths[static_cast<size_t>(s)]});
  }
  return infos;
}

Var conv_gn_relu(Graph& g, const ParamStore& ps, const ModelConfig& cfg, const std::string& conv,
                 const std::string& gn, Var x, int stride, ops::Pad pad) {
  Var y = nn::conv2d_layer(g, ps, conv, x, stride, pad);
  y = ad::group_norm(y, cfg.gn_groups, 1e-5, g.param(ps, gn + ".gain"), g.param(ps, gn + ".bias"));
  return ad::relu(y);
}

}  // namespace

Pyramid toy_backbone(Graph& g, const ParamStore& ps, const ModelConfig& cfg, Var clip) {
  const Shape& s = clip.val().shape();
  check(s.size() == 4 && s[3] == 3, "toy_backbone: clip must be [T,H,W,3], got " + shape_str(s));
  const int64_t h = s[1], w = s[2];
  if (h % 32 != 0 || w % 32 != 0) {
    const int64_t ph = (32 - h % 32) % 32, pw = (32 - w % 32) % 32;
    throw ShapeError("toy_backbone: H,W must be divisible by 32, got " + std::to_string(h) + "x" +
                     std::to_string(w) + "; pad by " + std::to_string(ph) + "x" + std::to_string(pw));
  }
  // Tiled 2x2 stride-2 convs: no padding, so constant inputs stay spatially
  // constant at every scale.
  Pyramid p;
  Var x = conv_gn_relu(g, ps, cfg, "bb.conv1", "bb.gn1", clip, 2, ops::Pad::valid);
  x = conv_gn_relu(g, ps, cfg, "bb.conv2", "bb.gn2", x, 2, ops::Pad::valid);
  p.scales.push_back(x);  // stride 4
  x = conv_gn_relu(g, ps, cfg, "bb.conv3", "bb.gn3", x, 2, ops::Pad::valid);
  p.scales.push_back(x);  // stride 8
  x = conv_gn_relu(g, ps, cfg, "bb.conv4", "bb.gn4", x, 2, ops::Pad::valid);
  p.scales.push_back(x);  // stride 16
  x = conv_gn_relu(g, ps, cfg, "bb.conv5", "bb.gn5", x, 2, ops::Pad::valid);
  p.scales.push_back(x);  // stride 32
  p.infos = pyramid_infos(cfg, h, w);
  for (size_t i = 0; i < p.scales.size(); ++i)
    check(p.scales[i].val().dim(1) == p.infos[i].h && p.scales[i].val().dim(3) == p.infos[i].c,
          "toy_backbone: stride contract violated");
  return p;
}

Var task_head(Graph& g, const ParamStore& ps, const ModelConfig& cfg, Var decoder_out) {
  Var x = nn::conv3d_layer(g, ps, "head.conv1", decoder_out);
  x = ad::group_norm(x, cfg.gn_groups, 1e-5, g.param(ps, "head.gn1.gain"), g.param(ps, "head.gn1.bias"));
  x = ad::relu(x);
  x = nn::conv3d_layer(g, ps, "head.conv2", x);
  x = ad::group_norm(x, cfg.gn_groups, 1e-5, g.param(ps, "head.gn2.gain"), g.param(ps, "head.gn2.bias"));
  x = ad::relu(x);
  return nn::conv3d_layer(g, ps, "head.conv3", x);  // linear, 1x1x1
}

ParamStore init_params(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  ParamStore ps;
  Rng rng(seed);
  Rng rb = rng.fork(0x4242);  // backbone
  const int64_t w0 = cfg.bb_widths[0], w1 = cfg.bb_widths[1], w2 = cfg.bb_widths[2], w3 = cfg.bb_widths[3];
  auto bb_layer = [&](const std::string& idx, int64_t cin, int64_t cout) {
    nn::init_conv(ps, rb, "bb.conv" + idx, {2, 2, cin, cout}, cfg.dtype);
    nn::init_layer_norm(ps, "bb.gn" + idx, cout, cfg.dtype);
  };
  bb_layer("1", 3, w0);
  bb_layer("2", w0, w0);
  bb_layer("3", w0, w1);
  bb_layer("4", w1, w2);
  bb_layer("5", w2, w3);

  const std::vector<ScaleInfo> infos = pyramid_infos(cfg, cfg.H, cfg.W);
  enc::init_encoder_params(ps, rng, cfg.encoder_config(), infos, cfg.dtype);
  dec::init_decoder_params(ps, rng, cfg.decoder_config(), cfg.encoder_config().encoded_scales, infos, cfg.dtype);

  Rng rh = rng.fork(0x4845);  // head
  nn::init_conv(ps, rh, "head.conv1", {3, 3, 3, static_cast<int64_t>(cfg.d + cfg.n_heads), static_cast<int64_t>(cfg.head_width)},
                cfg.dtype);
  nn::init_layer_norm(ps, "head.gn1", cfg.head_width, cfg.dtype);
  nn::init_conv(ps, rh, "head.conv2", {3, 3, 3, static_cast<int64_t>(cfg.head_width), static_cast<int64_t>(cfg.head_width)},
                cfg.dtype);
  nn::init_layer_norm(ps, "head.gn2", cfg.head_width, cfg.dtype);
  nn::init_conv(ps, rh, "head.conv3", {1, 1, 1, static_cast<int64_t>(cfg.head_width), static_cast<int64_t>(cfg.num_classes)},
                cfg.dtype);

  lp::init_labelprop_params(ps, rng, cfg.labelprop_config(), cfg.d + cfg.n_heads, cfg.dtype);
  return ps;
}

Forward forward(Graph& g, const ParamStore& ps, const ModelConfig& cfg, const Tensor& clip, bool with_labelprop) {
  check(clip.rank() == 4 && clip.dim(3) == 3, "forward: clip must be [T,H,W,3]");
  check(clip.dim(0) == cfg.T, "forward: clip has " + std::to_string(clip.dim(0)) + " frames, config expects " +
                                  std::to_string(cfg.T));
  Forward out;
  Var input = g.leaf(clip.astype(ps.value("bb.conv1.w").dtype()));
  Pyramid pyr = toy_backbone(g, ps, cfg, input);

  const enc::EncoderConfig ecfg = cfg.encoder_config();
  enc::EncodeResult encd = enc::encode(g, ps, ecfg, pyr.scales, pyr.infos);

  const dec::DecoderConfig dcfg = cfg.decoder_config();
  std::vector<Var> pix = dec::pixel_decode(g, ps, dcfg, encd.scales, ecfg.encoded_scales, pyr.scales, pyr.infos);

  // Pixel-decoded scales have channel dim d; their positional encodings are
  // the encoder's per-scale encodings.
  std::vector<ScaleInfo> pix_infos = pyr.infos;
  for (auto& in : pix_infos) in.c = cfg.d;
  dec::LearnedQueries lq = dec::learn_queries(g, ps, dcfg, pix, encd.pes, pix_infos);
  out.queries = lq.q;
  out.decoder_trace = lq.trace;

  const ScaleInfo fine = pix_infos[0];
  out.fine_info = fine;
  Var fine_flat = ad::reshape(pix[0], {fine.tokens(), static_cast<int64_t>(cfg.d)});
  dec::ObjectAttention oa = dec::object_attention(g, ps, dcfg, lq.q, fine_flat, fine);
  out.attention_map = oa.map;
  out.decoder_features = dec::decoder_output(oa.map, pix[0]);

  out.y_prime = task_head(g, ps, cfg, out.decoder_features);

  if (with_labelprop) {
    const lp::LabelPropConfig lcfg = cfg.labelprop_config();
    Var feat_flat =
        ad::reshape(out.decoder_features, {fine.tokens(), static_cast<int64_t>(cfg.d + cfg.n_heads)});
    out.y_hat = lp::refine(g, ps, lcfg, feat_flat, out.y_prime, fine);
  }
  return out;
}

// ------------------------------------------------------------------- losses

Tensor one_hot(const Tensor& class_indices, int num_classes, Dtype dt) {
  check(class_indices.defined(), "one_hot: empty target");
  Shape shape = class_indices.shape();
  shape.push_back(num_classes);
  Tensor out = Tensor::zeros(shape, dt);
  for (int64_t i = 0; i < class_indices.numel(); ++i) {
    const auto c = static_cast<int64_t>(class_indices.get(i));
    check(c >= 0 && c < num_classes, "one_hot: class index " + std::to_string(c) + " out of range");
    out.set(i * num_classes + c, 1.0);
  }
  return out;
}

Var focal_loss(Var logits, const Tensor& targets_onehot, double alpha, double gamma) {
  check(targets_onehot.defined(), "focal_loss: empty target");
  check(targets_onehot.shape() == logits.val().shape(),
        "focal_loss: target shape " + shape_str(targets_onehot.shape()) + " vs logits " +
            shape_str(logits.val().shape()));
  Graph& g = *logits.g;
  const int ax = logits.val().rank() - 1;
  Var lsm = ad::log_softmax(logits, ax);
  Var onehot = g.leaf(targets_onehot.astype(logits.val().dtype()));
  Var lt = ad::sum_axis(ad::mul(lsm, onehot), ax);  // log p_t, [.., 1]
  Var pt = ad::exp(lt);
  Var weight = ad::pow_scalar(ad::neg(ad::add_scalar(pt, -1.0)), gamma);  // (1 - p_t)^gamma
  Var per_pixel = ad::mul(weight, ad::neg(lt));
  return ad::scale(ad::mean_all(per_pixel), alpha);
}

Var dice_loss(Var probs, const Tensor& targets_onehot, double eps) {
  check(targets_onehot.defined(), "dice_loss: empty target");
  check(targets_onehot.shape() == probs.val().shape(), "dice_loss: target/probs shape mismatch");
  Graph& g = *probs.g;
  const int ax = probs.val().rank() - 1;
  const int64_t classes = probs.val().dim(ax);
  Var onehot = g.leaf(targets_onehot.astype(probs.val().dtype()));
  Var total;
  for (int64_t c = 0; c < classes; ++c) {
    Var pc = ad::slice(probs, ax, c, c + 1);
    Var qc = ad::slice(onehot, ax, c, c + 1);
    Var inter = ad::sum_all(ad::mul(pc, qc));
    Var denom = ad::add(ad::sum_all(pc), ad::sum_all(qc));
    Var dice = ad::div(ad::add_scalar(ad::scale(inter, 2.0), eps), ad::add_scalar(denom, eps));
    Var one_minus = ad::neg(ad::add_scalar(dice, -1.0));
    total = total.defined() ? ad::add(total, one_minus) : one_minus;
  }
  return ad::scale(total, 1.0 / static_cast<double>(classes));
}

Var combined_loss(Var logits, const Tensor& targets_onehot, const LossConfig& cfg) {
  Var focal = focal_loss(logits, targets_onehot, cfg.focal_alpha, cfg.focal_gamma);
  Var dice = dice_loss(ad::softmax(logits, logits.val().rank() - 1), targets_onehot, cfg.dice_eps);
  return ad::add(ad::scale(focal, cfg.lambda_focal), ad::scale(dice, cfg.lambda_dice));
}

Var clip_loss(Graph& g, Var logits, const Tensor& mask_thw, int num_classes, const LossConfig& cfg) {
  check(mask_thw.rank() == 3, "clip_loss: mask must be [T,H,W]");
  Var up = ad::bilinear_upsample(logits, mask_thw.dim(1), mask_thw.dim(2));
  const Tensor onehot = one_hot(mask_thw, num_classes, logits.val().dtype());
  (void)g;
  return combined_loss(up, onehot, cfg);
}

// ----------------------------------------------------------------- training

namespace {

Tensor flip_w(const Tensor& x) {
  // Reverse the W axis of [T,H,W,*].
  const int64_t t = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int64_t c = x.rank() == 4 ? x.dim(3) : 1;
  Tensor out(x.shape(), x.dtype());
  for (int64_t i = 0; i < t * h; ++i)
    for (int64_t x2 = 0; x2 < w; ++x2)
      for (int64_t ch = 0; ch < c; ++ch) out.set((i * w + x2) * c + ch, x.get((i * w + (w - 1 - x2)) * c + ch));
  return out;
}

struct StageOutcome {
  bool nan = false;
};

StageOutcome run_stage(ParamStore& ps, const ModelConfig& cfg, const std::vector<ClipSample>& data, int stage,
                       int64_t iters, int64_t iter_base, ad::AdamW& opt, TrainResult& result,
                       const TrainOptions& opts) {
  const bool with_lp = stage == 2;
  const int64_t n = static_cast<int64_t>(data.size());
  const int64_t batch = cfg.batch_size <= 0 ? n : std::min<int64_t>(cfg.batch_size, n);
  Rng aug_rng = Rng(cfg.seed).fork(0x41554700 + static_cast<uint64_t>(stage));
  ParamStore last_good = ps;

  for (int64_t it = 0; it < iters; ++it) {
    std::vector<int64_t> idx(static_cast<size_t>(batch));
    for (int64_t b = 0; b < batch; ++b) idx[static_cast<size_t>(b)] = (it * batch + b) % n;
    std::vector<bool> flip(static_cast<size_t>(batch), false);
    if (cfg.augment_hflip)
      for (int64_t b = 0; b < batch; ++b) flip[static_cast<size_t>(b)] = aug_rng.uniform() < 0.5;

    std::vector<ad::GradMap> grads(static_cast<size_t>(batch));
    std::vector<double> losses(static_cast<size_t>(batch), 0.0);
    parallel_for(batch, [&](int64_t b) {
      const ClipSample& s = data[static_cast<size_t>(idx[static_cast<size_t>(b)])];
      const Tensor clip = flip[static_cast<size_t>(b)] ? flip_w(s.clip) : s.clip;
      const Tensor mask = flip[static_cast<size_t>(b)] ? flip_w(s.mask) : s.mask;
      Graph g;
      Forward f = forward(g, ps, cfg, clip, with_lp);
      Var target_logits = with_lp ? f.y_hat : f.y_prime;
      Var loss = clip_loss(g, target_logits, mask, cfg.num_classes, cfg.loss);
      losses[static_cast<size_t>(b)] = loss.val().item();
      grads[static_cast<size_t>(b)] = g.backward(loss);
    });

    // Deterministic reduction in batch order; gradient of the batch mean.
    ad::GradMap total;
    for (int64_t b = 0; b < batch; ++b)
      for (auto& [name, gradient] : grads[static_cast<size_t>(b)]) {
        auto it2 = total.find(name);
        if (it2 == total.end())
          total[name] = gradient;
        else
          it2->second = ops::add(it2->second, gradient);
      }
    for (auto& [name, gradient] : total) gradient = ops::scale(gradient, 1.0 / static_cast<double>(batch));

    double mean_loss = 0;
    for (double l : losses) mean_loss += l;
    mean_loss /= static_cast<double>(batch);

    if (!std::isfinite(mean_loss)) {
      if (!opts.out_dir.empty()) last_good.save((fs::path(opts.out_dir) / "last_good").string());
      result.nan_abort = true;
      return StageOutcome{true};
    }
    last_good = ps;
    opt.step(ps, total);
    result.curve.push_back({iter_base + it, stage, mean_loss});
    ++result.iterations_run;
    if (opts.verbose && (it % opts.log_every == 0 || it + 1 == iters))
      std::fprintf(stderr, "[train] stage %d iter %lld/%lld loss %.6f\n", stage, static_cast<long long>(it),
                   static_cast<long long>(iters), mean_loss);
  }
  return {};
}

}  // namespace

TrainResult train(ParamStore& ps, const ModelConfig& cfg, const std::vector<ClipSample>& data,
                  const TrainOptions& opts) {
  check(!data.empty(), "train: dataset is empty");
  cfg.validate();
  TrainResult result;
  ad::AdamWConfig ocfg;
  ocfg.lr = cfg.lr;
  ocfg.weight_decay = cfg.weight_decay;
  ocfg.beta1 = cfg.beta1;
  ocfg.beta2 = cfg.beta2;
  ocfg.eps = cfg.adam_eps;

  // Stage 1: everything except the label propagator.
  ps.set_trainable_prefix("", true);
  ps.set_trainable_prefix("lp.", false);
  {
    ad::AdamW opt(ocfg);
    StageOutcome o = run_stage(ps, cfg, data, 1, cfg.stage1_iters, 0, opt, result, opts);
    if (!opts.out_dir.empty() && !o.nan) ps.save((fs::path(opts.out_dir) / "stage1").string());
    if (o.nan) return result;
  }
  // Stage 2: freeze the trained weights, train only the propagator.
  if (cfg.labelprop && cfg.stage2_iters > 0) {
    ps.set_trainable_prefix("", false);
    ps.set_trainable_prefix("lp.", true);
    ad::AdamW opt(ocfg);
    StageOutcome o = run_stage(ps, cfg, data, 2, cfg.stage2_iters, cfg.stage1_iters, opt, result, opts);
    if (!opts.out_dir.empty() && !o.nan) ps.save((fs::path(opts.out_dir) / "stage2").string());
    if (o.nan) return result;
  }
  if (!opts.out_dir.empty()) {
    ps.save((fs::path(opts.out_dir) / "final").string());
    io::write_text_file((fs::path(opts.out_dir) / "loss.csv").string(), loss_curve_csv(result));
  }
  return result;
}

std::string loss_curve_csv(const TrainResult& r) {
  std::ostringstream os;
  os << "iter,stage,loss\n";
  for (const auto& p : r.curve) os << p.iter << "," << p.stage << "," << p.loss << "\n";
  return os.str();
}

}  // namespace medvt::model
