// medvt: multiscale encoder-decoder video transformer for video object
// segmentation, with many-to-many temporal label propagation.
//
// Subcommands: gen, train, infer, eval, gradcheck, propcheck, ablate.
// Exit codes: 0 ok, 1 check failure, 2 usage/config error.

#include <cstdlib>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "medvt/config.hpp"
#include "medvt/io.hpp"
#include "medvt/metrics.hpp"
#include "medvt/pipeline.hpp"
#include "medvt/synthclip.hpp"
#include "medvt/threads.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace medvt;
using medvt::ad::Var;

namespace {

struct Common {
  std::string config_path;
  uint64_t seed = 0;
  bool seed_set = false;
  int threads = 0;
  bool json_out = false;
};

model::ModelConfig load_config(const Common& c) {
  model::ModelConfig base;
  std::string path = c.config_path;
  if (path.empty())
    if (const char* env = std::getenv("MEDVT_CONFIG")) path = env;
  if (!path.empty()) base = cfg::load_file(path, base);
  if (c.seed_set) base.seed = c.seed;
  return base;
}

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config_path, "flat key=value config file (default: $MEDVT_CONFIG)");
  app->add_option("--seed", c.seed, "seed override")->each([&c](const std::string&) { c.seed_set = true; });
  app->add_option("--threads", c.threads, "cap on worker threads (default: logical cores)");
  app->add_flag("--json", c.json_out, "machine-readable JSON output");
}

void apply_threads(const Common& c) {
  if (c.threads > 0) set_threads(c.threads);
}

std::vector<model::ClipSample> to_samples(const std::vector<synth::DatasetItem>& items) {
  std::vector<model::ClipSample> out;
  out.reserve(items.size());
  for (const auto& it : items) out.push_back(it.sample);
  return out;
}

double dataset_miou(const ad::ParamStore& ps, const model::ModelConfig& cfg,
                    const std::vector<synth::DatasetItem>& items, const std::vector<double>& scales) {
  double total = 0;
  for (const auto& item : items) {
    pipe::InferOptions opts;
    Tensor pred = scales.size() == 1 && scales[0] == 1.0 ? pipe::infer_video(ps, cfg, item.sample.clip, opts)
                                                         : pipe::multiscale_infer(ps, cfg, item.sample.clip, scales, opts);
    const int64_t t = pred.dim(0), h = pred.dim(1), w = pred.dim(2);
    std::vector<double> ious;
    for (int64_t f = 0; f < t; ++f)
      ious.push_back(metrics::iou(ops::reshape(ops::slice(pred, 0, f, f + 1), {h, w}),
                                  ops::reshape(ops::slice(item.sample.mask, 0, f, f + 1), {h, w})));
    double m = 0;
    for (double v : ious) m += v;
    total += m / static_cast<double>(ious.size());
  }
  return total / static_cast<double>(items.size());
}

// ----------------------------------------------------------------- gradcheck

int run_gradcheck(const Common& common, bool quick) {
  apply_threads(common);
  int failures = 0;
  auto report = [&](const std::string& name, const ad::GradCheckReport& r, double tol) {
    const bool ok = r.pass(tol);
    if (!ok) ++failures;
    std::printf("[%s] %-34s worst rel err %.3e (tol %.0e, worst at %s)\n", ok ? "PASS" : "FAIL", name.c_str(),
                r.worst, tol, r.worst_param.empty() ? "-" : r.worst_param.c_str());
    return ok;
  };

  Rng rng(common.seed_set ? common.seed : 17);
  const double step = 1e-5, op_tol = 1e-4;

  // Per-op suites: >= 10 random shapes per op family.
  {
    ad::GradCheckReport worst;
    for (int trial = 0; trial < 10; ++trial) {
      Rng tr = rng.fork(static_cast<uint64_t>(trial));
      const int64_t m = tr.uniform_int(2, 5), k = tr.uniform_int(2, 6), n = tr.uniform_int(2, 5);
      ad::ParamStore ps;
      ps.add("a", tr.normal_tensor({m, k}, 0, 1.0));
      ps.add("b", tr.normal_tensor({k, n}, 0, 1.0));
      auto r = ad::grad_check(
          [&](ad::Graph& g, const ad::ParamStore& p) {
            return ad::mean_all(ad::softmax(ad::matmul(g.param(p, "a"), g.param(p, "b")), 1));
          },
          ps, step);
      if (r.worst > worst.worst) worst = r;
    }
    report("matmul+softmax chain", worst, op_tol);
  }
  {
    ad::GradCheckReport worst;
    for (int trial = 0; trial < 10; ++trial) {
      Rng tr = rng.fork(100 + static_cast<uint64_t>(trial));
      const int64_t t = tr.uniform_int(1, 2), h = tr.uniform_int(3, 6), w = tr.uniform_int(3, 6);
      const int64_t ci = tr.uniform_int(1, 3), co = tr.uniform_int(1, 3), ks = 1 + 2 * tr.uniform_int(0, 1);
      const int stride = static_cast<int>(tr.uniform_int(1, 2));
      ad::ParamStore ps;
      ps.add("x", tr.normal_tensor({t, h, w, ci}, 0, 1.0));
      ps.add("k", tr.normal_tensor({ks, ks, ci, co}, 0, 0.5));
      auto r = ad::grad_check(
          [&](ad::Graph& g, const ad::ParamStore& p) {
            return ad::mean_all(ad::relu(ad::conv2d(g.param(p, "x"), g.param(p, "k"), stride)));
          },
          ps, step);
      if (r.worst > worst.worst) worst = r;
    }
    report("conv2d+relu", worst, op_tol);
  }
  {
    ad::GradCheckReport worst;
    for (int trial = 0; trial < 10; ++trial) {
      Rng tr = rng.fork(200 + static_cast<uint64_t>(trial));
      const int64_t t = tr.uniform_int(2, 3), h = tr.uniform_int(3, 5), w = tr.uniform_int(3, 5);
      const int64_t ci = tr.uniform_int(1, 2), co = tr.uniform_int(1, 2);
      ad::ParamStore ps;
      ps.add("x", tr.normal_tensor({t, h, w, ci}, 0, 1.0));
      ps.add("k", tr.normal_tensor({3, 3, 3, ci, co}, 0, 0.5));
      auto r = ad::grad_check(
          [&](ad::Graph& g, const ad::ParamStore& p) {
            return ad::mean_all(ad::conv3d(g.param(p, "x"), g.param(p, "k")));
          },
          ps, step);
      if (r.worst > worst.worst) worst = r;
    }
    report("conv3d", worst, op_tol);
  }
  {
    ad::GradCheckReport worst;
    for (int trial = 0; trial < 10; ++trial) {
      Rng tr = rng.fork(300 + static_cast<uint64_t>(trial));
      const int64_t t = tr.uniform_int(1, 2), h = tr.uniform_int(2, 4), w = tr.uniform_int(2, 4), c = tr.uniform_int(1, 3);
      ad::ParamStore ps;
      ps.add("x", tr.normal_tensor({t, h, w, c}, 0, 1.0));
      auto r = ad::grad_check(
          [&](ad::Graph& g, const ad::ParamStore& p) {
            return ad::mean_all(ad::bilinear_upsample(g.param(p, "x"), h * 2, w * 2 + 1));
          },
          ps, step);
      if (r.worst > worst.worst) worst = r;
    }
    report("bilinear_upsample", worst, op_tol);
  }
  {
    ad::GradCheckReport worst;
    for (int trial = 0; trial < 10; ++trial) {
      Rng tr = rng.fork(400 + static_cast<uint64_t>(trial));
      const int64_t t = tr.uniform_int(1, 2), h = tr.uniform_int(2, 4), w = tr.uniform_int(2, 4);
      const int64_t groups = tr.uniform_int(1, 2), c = groups * tr.uniform_int(1, 3);
      ad::ParamStore ps;
      ps.add("x", tr.normal_tensor({t, h, w, c}, 0, 1.0));
      ps.add("gain", tr.normal_tensor({c}, 1.0, 0.1));
      ps.add("bias", tr.normal_tensor({c}, 0.0, 0.1));
      auto r = ad::grad_check(
          [&](ad::Graph& g, const ad::ParamStore& p) {
            return ad::mean_all(ad::group_norm(g.param(p, "x"), static_cast<int>(groups), 1e-5, g.param(p, "gain"),
                                               g.param(p, "bias")));
          },
          ps, step);
      if (r.worst > worst.worst) worst = r;
    }
    report("group_norm", worst, op_tol);
  }
  {
    ad::GradCheckReport worst;
    for (int trial = 0; trial < 10; ++trial) {
      Rng tr = rng.fork(500 + static_cast<uint64_t>(trial));
      const int64_t n = tr.uniform_int(3, 6), d = 2 * tr.uniform_int(1, 3);
      ad::ParamStore ps;
      ps.add("q", tr.normal_tensor({n, d}, 0, 1.0));
      ps.add("k", tr.normal_tensor({n, d}, 0, 1.0));
      ps.add("v", tr.normal_tensor({n, d}, 0, 1.0));
      ps.add("wq", tr.normal_tensor({d, d}, 0, 0.5));
      ps.add("wk", tr.normal_tensor({d, d}, 0, 0.5));
      ps.add("wv", tr.normal_tensor({d, d}, 0, 0.5));
      ps.add("wo", tr.normal_tensor({d, d}, 0, 0.5));
      auto r = ad::grad_check(
          [&](ad::Graph& g, const ad::ParamStore& p) {
            attn::MhaWeights w{g.param(p, "wq"), g.param(p, "wk"), g.param(p, "wv"), g.param(p, "wo"), 2, false};
            return ad::mean_all(attn::mha(g.param(p, "q"), g.param(p, "k"), g.param(p, "v"), w));
          },
          ps, step);
      if (r.worst > worst.worst) worst = r;
    }
    report("multihead attention", worst, op_tol);
  }
  {
    ad::GradCheckReport worst;
    for (int trial = 0; trial < 10; ++trial) {
      Rng tr = rng.fork(600 + static_cast<uint64_t>(trial));
      const int64_t frames = tr.uniform_int(2, 3), hw = tr.uniform_int(1, 3), d = 4;
      const attn::MaskRule rule = trial % 2 == 0
                                      ? attn::mask_rule_mtom(attn::FrameIndex{frames, hw})
                                      : attn::mask_rule_mto1(attn::FrameIndex{frames, hw});
      ad::ParamStore ps;
      ps.add("f", tr.normal_tensor({frames * hw, d}, 0, 1.0));
      ps.add("y", tr.normal_tensor({frames * hw, d}, 0, 1.0));
      ps.add("lp.attn.wq", tr.normal_tensor({d, d}, 0, 0.5));
      ps.add("lp.attn.wk", tr.normal_tensor({d, d}, 0, 0.5));
      ps.add("lp.attn.wv", tr.normal_tensor({d, d}, 0, 0.5));
      ps.add("lp.attn.wo", tr.normal_tensor({d, d}, 0, 0.5));
      auto r = ad::grad_check(
          [&](ad::Graph& g, const ad::ParamStore& p) {
            Var f = g.param(p, "f");
            if (rule.kind == attn::MaskKind::mto1) {
              // Mto1 goes through the propagator (frame 0 is bypassed);
              // restrict the loss to the non-degenerate frames.
              lp::LabelPropConfig lc;
              lc.label_dim = static_cast<int>(d);
              lc.n_heads = 2;
              lc.rule = attn::MaskKind::mto1;
              Var out = lp::propagate(g, p, lc, f, g.param(p, "y"), rule);
              return ad::mean_all(ad::slice(out, 0, hw, frames * hw));
            }
            attn::MhaWeights w{g.param(p, "lp.attn.wq"), g.param(p, "lp.attn.wk"), g.param(p, "lp.attn.wv"),
                               g.param(p, "lp.attn.wo"), 2, false};
            return ad::mean_all(attn::masked_mha(f, f, g.param(p, "y"), w, rule));
          },
          ps, step);
      if (r.worst > worst.worst) worst = r;
    }
    report("masked attention (MtoM/Mto1)", worst, op_tol);
  }
  {
    Rng tr = rng.fork(700);
    ad::ParamStore ps;
    ps.add("x", tr.normal_tensor({3, 5}, 0, 1.0));
    auto r = ad::grad_check(
        [](ad::Graph& g, const ad::ParamStore& p) {
          Var x = g.param(p, "x");
          Var y = ad::mul(ad::exp(ad::scale(x, 0.3)), ad::add_scalar(ad::pow_scalar(ad::add_scalar(x, 4.0), 1.5), 1.0));
          return ad::mean_all(ad::div(y, ad::add_scalar(ad::sqrt(ad::add_scalar(ad::mul(x, x), 1.0)), 0.5)));
        },
        ps, step);
    report("elementwise chain", r, op_tol);
  }
  {
    // Losses against targets.
    Rng tr = rng.fork(800);
    ad::ParamStore ps;
    ps.add("logits", tr.normal_tensor({2, 4, 4, 2}, 0, 1.0));
    Tensor cls({2, 4, 4}, Dtype::f64);
    for (int64_t i = 0; i < cls.numel(); ++i) cls.set(i, tr.uniform() < 0.4 ? 1 : 0);
    const Tensor onehot = model::one_hot(cls, 2, Dtype::f64);
    model::LossConfig lc;
    auto r = ad::grad_check(
        [&](ad::Graph& g, const ad::ParamStore& p) {
          return model::combined_loss(g.param(p, "logits"), onehot, lc);
        },
        ps, step);
    report("focal+dice loss", r, op_tol);
  }

  // End-to-end micro model. The backbone stride contract (divisible by 32)
  // makes 32x32 the smallest admissible input.
  if (!quick) {
    model::ModelConfig mc;
    mc.T = 2;
    mc.H = 32;
    mc.W = 32;
    mc.d = 8;
    mc.n_heads = 2;
    mc.label_dim = 4;
    mc.head_width = 8;
    mc.gn_groups = 2;
    mc.bb_widths = {4, 8, 8, 8};
    mc.enc_blocks = {1, 1};
    mc.n_dec_iterations = 1;
    mc.num_decoder_scales = 2;
    mc.pe = attn::PeKind::learnable;  // d=8 is not divisible into sinusoidal axis blocks
    mc.dtype = Dtype::f64;
    mc.seed = common.seed_set ? common.seed : 17;
    ad::ParamStore ps = model::init_params(mc, mc.seed);
    Rng dr = rng.fork(900);
    synth::SceneSpec spec;
    spec.seed = 904;
    spec.t = mc.T;
    spec.h = mc.H;
    spec.w = mc.W;
    spec.velocity = 2.0;
    synth::GeneratedClip gc = synth::generate(spec);
    const Tensor clip = gc.clip.astype(Dtype::f64);
    auto loss_fn = [&](ad::Graph& g, const ad::ParamStore& p) {
      model::Forward f = model::forward(g, p, mc, clip, true);
      return model::clip_loss(g, f.y_hat, gc.masks, mc.num_classes, mc.loss);
    };
    auto r = ad::grad_check(loss_fn, ps, step, 24);
    report("end-to-end micro model", r, 1e-3);
    (void)dr;
  }

  return failures == 0 ? 0 : 1;
}

// ----------------------------------------------------------------- propcheck

int run_propcheck(const Common& common) {
  apply_threads(common);
  Rng rng(common.seed_set ? common.seed : 23);
  int failures = 0;
  auto line = [&](bool ok, const std::string& what) {
    if (!ok) ++failures;
    std::printf("[%s] %s\n", ok ? "PASS" : "FAIL", what.c_str());
  };

  // Mask semantics: 100 random instances, invariance of protected frames.
  {
    bool mtom_ok = true, mto1_ok = true;
    for (int inst = 0; inst < 100; ++inst) {
      Rng tr = rng.fork(static_cast<uint64_t>(inst));
      const int64_t frames = tr.uniform_int(2, 4);
      const int64_t hw = tr.uniform_int(1, 4);
      const int64_t d = 8, dlab = 4;
      lp::LabelPropConfig lc;
      lc.label_dim = static_cast<int>(dlab);
      lc.n_heads = 2;
      lc.num_classes = 2;
      ad::ParamStore ps;
      Rng ir = tr.fork(1);
      lp::init_labelprop_params(ps, ir, lc, d, Dtype::f64);
      const Tensor feats = tr.normal_tensor({frames * hw, d}, 0, 1.0);
      const Tensor labels = tr.normal_tensor({frames * hw, dlab}, 0, 1.0);
      const int64_t target = tr.uniform_int(0, frames - 1);
      Tensor perturbed = labels;
      for (int64_t i = target * hw * dlab; i < (target + 1) * hw * dlab; ++i)
        perturbed.set(i, perturbed.get(i) + tr.uniform(-3.0, 3.0));
      auto run = [&](attn::MaskKind kind, const Tensor& lab) {
        ad::Graph g;
        lc.rule = kind;
        const attn::MaskRule rule{kind, attn::FrameIndex{frames, hw}};
        return lp::propagate(g, ps, lc, g.leaf(feats), g.leaf(lab), rule).val();
      };
      {
        const Tensor a = run(attn::MaskKind::mtom, labels);
        const Tensor b = run(attn::MaskKind::mtom, perturbed);
        const Tensor ra = ops::slice(a, 0, target * hw, (target + 1) * hw);
        const Tensor rb = ops::slice(b, 0, target * hw, (target + 1) * hw);
        if (!ra.bits_equal(rb)) mtom_ok = false;
      }
      {
        // Perturb frames >= t; rows of frame t must be bit-identical.
        Tensor pert_ge = labels;
        for (int64_t i = target * hw * dlab; i < frames * hw * dlab; ++i)
          pert_ge.set(i, pert_ge.get(i) - tr.uniform(-2.0, 2.0));
        const Tensor a = run(attn::MaskKind::mto1, labels);
        const Tensor b = run(attn::MaskKind::mto1, pert_ge);
        const Tensor ra = ops::slice(a, 0, target * hw, (target + 1) * hw);
        const Tensor rb = ops::slice(b, 0, target * hw, (target + 1) * hw);
        if (!ra.bits_equal(rb)) mto1_ok = false;
      }
    }
    line(mtom_ok, "MtoM: frame-t output bit-invariant to frame-t label perturbations (100 instances)");
    line(mto1_ok, "Mto1: frame-t output bit-invariant to label perturbations at frames >= t (100 instances)");
  }

  // Spectral oracle: attention rows equal D^-1 W within 1e-10.
  {
    bool ok = true;
    double worst = 0;
    for (int inst = 0; inst < 50; ++inst) {
      Rng tr = rng.fork(1000 + static_cast<uint64_t>(inst));
      const int64_t frames = tr.uniform_int(2, 4);
      const int64_t hw = tr.uniform_int(1, 4);  // up to 48 tokens
      const int64_t n = frames * hw;
      const int64_t d = 8;
      lp::LabelPropConfig lc;
      lc.label_dim = 4;
      lc.n_heads = 2;
      ad::ParamStore ps;
      Rng ir = tr.fork(1);
      lp::init_labelprop_params(ps, ir, lc, d, Dtype::f64);
      const Tensor feats = tr.normal_tensor({n, d}, 0, 1.0);
      const attn::MaskRule rule = attn::mask_rule_mtom(attn::FrameIndex{frames, hw});
      const auto scores = attn::masked_attention_scores(feats, feats, ps.value("lp.attn.wq"), ps.value("lp.attn.wk"),
                                                        lc.n_heads, lc.scale_by_head_dim);
      for (const Tensor& s : scores) {
        const lp::SpectralReport rep = lp::spectral_oracle(s, rule);
        worst = std::max(worst, rep.max_abs_diff);
        if (!rep.ok(1e-10)) ok = false;
      }
    }
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "spectral oracle: propagator attention equals D^-1 W (50 instances, worst %.2e, tol 1e-10)", worst);
    line(ok, buf);
  }
  return failures == 0 ? 0 : 1;
}

// --------------------------------------------------------------------- ablate

json ablate_run(const Common& common, const std::string& data_dir, int seeds, model::ModelConfig base,
                const std::string& work_dir) {
  const auto train_items = synth::load_dataset((fs::path(data_dir) / "train").string());
  const auto val_items = synth::load_dataset((fs::path(data_dir) / "val").string());
  const auto train_samples = to_samples(train_items);

  struct Row {
    std::string name;
    bool dec_ms, enc_ms, lp;
    attn::MaskKind rule = attn::MaskKind::mtom;
    double miou = 0;
  };
  std::vector<Row> rows = {
      {"baseline", false, false, false},
      {"ms_decoder", true, false, false},
      {"ms_encoder", true, true, false},
      {"full", true, true, true, attn::MaskKind::mtom},
      {"mto1", true, true, true, attn::MaskKind::mto1},
      {"mtom", true, true, true, attn::MaskKind::mtom},
  };

  for (int seed_i = 0; seed_i < seeds; ++seed_i) {
    const uint64_t seed = base.seed + static_cast<uint64_t>(seed_i) * 1000;
    // Shared trunk training for the three multiscale-encoder rows.
    ad::ParamStore trunk_ms;
    for (auto& row : rows) {
      model::ModelConfig cfg = base;
      cfg.seed = seed;
      cfg.num_encoded_scales = row.enc_ms ? 2 : 1;
      cfg.enc_blocks = row.enc_ms ? base.enc_blocks : std::vector<int>{base.enc_blocks.at(0)};
      cfg.num_decoder_scales = row.dec_ms ? 3 : 1;
      cfg.labelprop = row.lp;
      cfg.prop_rule = row.rule;
      if (!row.lp) cfg.stage2_iters = 0;

      ad::ParamStore ps;
      const bool reuse_trunk = row.lp && trunk_ms.size() > 0;  // rows 4..6 share the ms_encoder trunk
      if (reuse_trunk) {
        ps = trunk_ms;
        model::ModelConfig s2 = cfg;
        s2.stage1_iters = 0;
        model::TrainResult tr = model::train(ps, s2, train_samples);
        check(!tr.nan_abort, "ablate: NaN during stage 2");
      } else {
        ps = model::init_params(cfg, seed);
        model::TrainResult tr = model::train(ps, cfg, train_samples);
        check(!tr.nan_abort, "ablate: NaN during training");
        if (row.name == "ms_encoder") trunk_ms = ps;
      }
      row.miou += dataset_miou(ps, cfg, val_items, {1.0});
      if (!work_dir.empty()) ps.save((fs::path(work_dir) / (row.name + "_seed" + std::to_string(seed_i))).string());
    }
  }
  json out;
  out["rows"] = json::array();
  for (auto& row : rows) {
    row.miou /= seeds;
    json r;
    r["name"] = row.name;
    r["decoder_ms"] = row.dec_ms;
    r["encoder_ms"] = row.enc_ms;
    r["labelprop"] = row.lp;
    if (row.lp) r["rule"] = row.rule == attn::MaskKind::mtom ? "mtom" : "mto1";
    r["miou"] = row.miou;
    out["rows"].push_back(r);
  }
  out["seeds"] = seeds;
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multiscale encoder-decoder video transformer (AVOS, desk scale)"};
  app.require_subcommand(1);
  Common common;

  // --- gen ---
  auto* gen = app.add_subcommand("gen", "generate a synthetic clip dataset");
  Common gen_c;
  add_common(gen, gen_c);
  std::string gen_out = "data";
  int gen_train = 8, gen_val = 4;
  int64_t gen_t = 6, gen_hw = 64;
  std::string gen_tex = "camouflage";
  int gen_n = -1;
  gen->add_option("--out", gen_out, "output directory");
  gen->add_option("--n", gen_n, "shorthand: n train clips and n/2 val clips");
  gen->add_option("--n-train", gen_train, "training clips");
  gen->add_option("--n-val", gen_val, "validation clips");
  gen->add_option("--frames", gen_t, "frames per clip");
  gen->add_option("--size", gen_hw, "H = W (multiple of 32)");
  gen->add_option("--texture", gen_tex, "camouflage|contrast")->check(CLI::IsMember({"camouflage", "contrast"}));

  // --- train ---
  auto* train_cmd = app.add_subcommand("train", "two-stage training on a generated dataset");
  Common train_c;
  add_common(train_cmd, train_c);
  std::string train_data = "data", train_out = "runs/model";
  bool train_verbose = false;
  int64_t train_s1 = -1, train_s2 = -1, train_batch = -1;
  bool train_no_lp = false, train_mto1 = false, train_single_scale = false, train_paper_dims = false;
  double train_lr = -1;
  train_cmd->add_option("--data", train_data, "dataset directory (with train/ val/)");
  train_cmd->add_option("--out", train_out, "output directory for checkpoints and loss curve");
  train_cmd->add_option("--stage1-iters", train_s1, "stage-1 iterations");
  train_cmd->add_option("--stage2-iters", train_s2, "stage-2 iterations");
  train_cmd->add_option("--batch", train_batch, "clips per iteration (0 = all)");
  train_cmd->add_option("--lr", train_lr, "learning rate");
  train_cmd->add_flag("--no-labelprop", train_no_lp, "skip the label propagator and stage 2");
  train_cmd->add_flag("--mto1", train_mto1, "causal many-to-one propagation rule");
  train_cmd->add_flag("--single-scale", train_single_scale, "single-scale encoder and decoder baseline");
  train_cmd->add_flag("--paper-dims", train_paper_dims, "paper-scale dims (shape exploration only)");
  train_cmd->add_flag("--verbose", train_verbose, "log losses");

  // --- infer ---
  auto* infer_cmd = app.add_subcommand("infer", "sliding-window inference over a clip file");
  Common infer_c;
  add_common(infer_cmd, infer_c);
  std::string infer_ckpt, infer_clip, infer_out = "pred";
  std::string infer_scales = "1.0";
  std::string infer_dump_attn;
  bool infer_logits = false;
  int64_t infer_stride = 1;
  infer_cmd->add_option("--ckpt", infer_ckpt, "checkpoint directory")->required();
  infer_cmd->add_option("--clip", infer_clip, "input MVT1 clip [T,H,W,3]")->required();
  infer_cmd->add_option("--out", infer_out, "output directory (PGM masks)");
  infer_cmd->add_option("--scales", infer_scales, "comma-separated scale multipliers");
  infer_cmd->add_option("--stride", infer_stride, "window stride");
  infer_cmd->add_flag("--save-logits", infer_logits, "also write logits as MVT1");
  infer_cmd->add_option("--dump-attention", infer_dump_attn, "write per-window object attention maps here");

  // --- eval ---
  auto* eval_cmd = app.add_subcommand("eval", "evaluate predicted masks against a dataset split");
  Common eval_c;
  add_common(eval_cmd, eval_c);
  std::string eval_pred, eval_data;
  double eval_tol = 1.0;
  eval_cmd->add_option("--pred", eval_pred, "directory with <id>_<frame>.pgm predictions")->required();
  eval_cmd->add_option("--data", eval_data, "dataset split directory (manifest.json)")->required();
  eval_cmd->add_option("--boundary-tolerance", eval_tol, "boundary match radius in px");

  // --- gradcheck ---
  auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference gradient acceptance suite");
  Common gc_c;
  add_common(gc_cmd, gc_c);
  bool gc_quick = false;
  gc_cmd->add_flag("--quick", gc_quick, "skip the end-to-end micro model");

  // --- propcheck ---
  auto* pc_cmd = app.add_subcommand("propcheck", "mask semantics and spectral-oracle suite");
  Common pc_c;
  add_common(pc_cmd, pc_c);

  // --- ablate ---
  auto* ab_cmd = app.add_subcommand("ablate", "multiscale/label-propagation ablation grid");
  Common ab_c;
  add_common(ab_cmd, ab_c);
  std::string ab_data = "data", ab_out, ab_work;
  int ab_seeds = 1;
  int64_t ab_s1 = -1, ab_s2 = -1, ab_batch = -1;
  ab_cmd->add_option("--data", ab_data, "dataset directory");
  ab_cmd->add_option("--seeds", ab_seeds, "seeds to average");
  ab_cmd->add_option("--out", ab_out, "write the JSON table here");
  ab_cmd->add_option("--save-models", ab_work, "directory for per-row checkpoints");
  ab_cmd->add_option("--stage1-iters", ab_s1, "stage-1 iterations per row");
  ab_cmd->add_option("--stage2-iters", ab_s2, "stage-2 iterations per row");
  ab_cmd->add_option("--batch", ab_batch, "clips per iteration");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      apply_threads(gen_c);
      model::ModelConfig cfg = load_config(gen_c);
      if (gen_n > 0) {
        gen_train = gen_n;
        gen_val = std::max(1, gen_n / 2);
      }
      const uint64_t seed = gen_c.seed_set ? gen_c.seed : cfg.seed;
      synth::make_dataset(gen_out, gen_train, gen_val, seed,
                          gen_tex == "camouflage" ? synth::TextureMode::camouflage : synth::TextureMode::contrast,
                          gen_t, gen_hw, gen_hw);
      if (gen_c.json_out) {
        json j{{"out", gen_out}, {"n_train", gen_train}, {"n_val", gen_val}, {"seed", seed}};
        std::cout << j.dump(2) << "\n";
      } else {
        std::cout << "wrote " << gen_train << " train / " << gen_val << " val clips to " << gen_out << "\n";
      }
      return 0;
    }
    if (train_cmd->parsed()) {
      apply_threads(train_c);
      model::ModelConfig cfg = train_paper_dims ? model::ModelConfig::paper_dims() : load_config(train_c);
      if (train_c.seed_set) cfg.seed = train_c.seed;
      if (train_s1 >= 0) cfg.stage1_iters = train_s1;
      if (train_s2 >= 0) cfg.stage2_iters = train_s2;
      if (train_batch >= 0) cfg.batch_size = train_batch;
      if (train_lr > 0) cfg.lr = train_lr;
      if (train_no_lp) cfg.labelprop = false;
      if (train_mto1) cfg.prop_rule = attn::MaskKind::mto1;
      if (train_single_scale) {
        cfg.num_encoded_scales = 1;
        cfg.enc_blocks = {cfg.enc_blocks.at(0)};
        cfg.num_decoder_scales = 1;
      }
      auto items = synth::load_dataset((fs::path(train_data) / "train").string());
      check(!items.empty(), "train: empty dataset");
      cfg.T = items[0].sample.clip.dim(0);
      cfg.H = items[0].sample.clip.dim(1);
      cfg.W = items[0].sample.clip.dim(2);
      ad::ParamStore ps = model::init_params(cfg, cfg.seed);
      model::TrainOptions opts;
      opts.out_dir = train_out;
      opts.verbose = train_verbose;
      fs::create_directories(train_out);
      io::write_text_file((fs::path(train_out) / "config.cfg").string(), cfg::to_text(cfg));
      model::TrainResult r = model::train(ps, cfg, to_samples(items), opts);
      if (r.nan_abort) {
        std::cerr << "training aborted on non-finite loss; last good checkpoint kept\n";
        return 1;
      }
      if (train_c.json_out) {
        json j{{"iterations", r.iterations_run},
               {"final_loss", r.curve.empty() ? 0.0 : r.curve.back().loss},
               {"out", train_out}};
        std::cout << j.dump(2) << "\n";
      } else {
        std::cout << "trained " << r.iterations_run << " iterations; checkpoints in " << train_out << "\n";
      }
      return 0;
    }
    if (infer_cmd->parsed()) {
      apply_threads(infer_c);
      model::ModelConfig cfg = cfg::load_file((fs::path(infer_ckpt) / ".." / "config.cfg").string());
      ad::ParamStore ps = ad::ParamStore::load(infer_ckpt);
      const Tensor frames = io::read_mvt1(infer_clip);
      std::vector<double> scales;
      for (const auto& part : json::parse("[" + infer_scales + "]")) scales.push_back(part.get<double>());
      pipe::InferOptions opts;
      opts.stride = infer_stride;
      opts.dump_attention_dir = infer_dump_attn;
      const Tensor mask = scales.size() == 1 && scales[0] == 1.0
                              ? pipe::infer_video(ps, cfg, frames, opts)
                              : pipe::multiscale_infer(ps, cfg, frames, scales, opts);
      fs::create_directories(infer_out);
      const int64_t n = mask.dim(0), h = mask.dim(1), w = mask.dim(2);
      for (int64_t f = 0; f < n; ++f) {
        char name[32];
        std::snprintf(name, sizeof(name), "%05lld.pgm", static_cast<long long>(f));
        io::write_mask_pgm((fs::path(infer_out) / name).string(), ops::reshape(ops::slice(mask, 0, f, f + 1), {h, w}));
      }
      if (infer_logits)
        io::write_mvt1((fs::path(infer_out) / "logits.mvt1").string(),
                       pipe::infer_video_logits(ps, cfg, frames, opts).astype(Dtype::f32));
      if (infer_c.json_out) {
        json j{{"frames", n}, {"out", infer_out}};
        std::cout << j.dump(2) << "\n";
      } else {
        std::cout << "wrote " << n << " masks to " << infer_out << "\n";
      }
      return 0;
    }
    if (eval_cmd->parsed()) {
      apply_threads(eval_c);
      auto items = synth::load_dataset(eval_data);
      std::vector<metrics::VideoEval> videos;
      for (const auto& item : items) {
        metrics::VideoEval v;
        v.category = item.category;
        v.gt_boxes = item.boxes;
        const int64_t t = item.sample.mask.dim(0), h = item.sample.mask.dim(1), w = item.sample.mask.dim(2);
        for (int64_t f = 0; f < t; ++f) {
          v.gt.push_back(ops::reshape(ops::slice(item.sample.mask, 0, f, f + 1), {h, w}));
          const std::string pred_path =
              (fs::path(eval_pred) / (item.id + "_" + std::to_string(f) + ".pgm")).string();
          v.pred.push_back(io::read_mask_pgm(pred_path));
        }
        videos.push_back(std::move(v));
      }
      const metrics::EvalReport rep = metrics::evaluate(videos, eval_tol);
      if (eval_c.json_out)
        std::cout << rep.to_json() << "\n";
      else
        std::cout << rep.table();
      return 0;
    }
    if (gc_cmd->parsed()) return run_gradcheck(gc_c, gc_quick);
    if (pc_cmd->parsed()) return run_propcheck(pc_c);
    if (ab_cmd->parsed()) {
      apply_threads(ab_c);
      model::ModelConfig cfg = load_config(ab_c);
      if (ab_c.seed_set) cfg.seed = ab_c.seed;
      if (ab_s1 >= 0) cfg.stage1_iters = ab_s1;
      if (ab_s2 >= 0) cfg.stage2_iters = ab_s2;
      if (ab_batch >= 0) cfg.batch_size = ab_batch;
      {
        auto items = synth::load_dataset((fs::path(ab_data) / "train").string());
        check(!items.empty(), "ablate: empty dataset");
        cfg.T = items[0].sample.clip.dim(0);
        cfg.H = items[0].sample.clip.dim(1);
        cfg.W = items[0].sample.clip.dim(2);
      }
      const json table = ablate_run(ab_c, ab_data, ab_seeds, cfg, ab_work);
      const std::string text = table.dump(2) + "\n";
      if (!ab_out.empty()) io::write_text_file(ab_out, text);
      std::cout << text;
      return 0;
    }
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
