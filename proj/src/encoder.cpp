#include "medvt/encoder.hpp"

#include <algorithm>

namespace medvt::enc {

void EncoderConfig::validate(int num_scales) const {
  check(d >= 1 && n_heads >= 1 && d % n_heads == 0, "encoder: d must be a positive multiple of n_heads");
  if (encoded_scales.empty()) return;  // attention disabled, phi-only pipeline
  std::vector<int> sorted = encoded_scales;
  std::sort(sorted.begin(), sorted.end());
  check(sorted.back() == num_scales - 1, "encoder: encoded_scales must include the coarsest scale");
  for (size_t i = 1; i < sorted.size(); ++i)
    check(sorted[i] == sorted[i - 1] + 1, "encoder: encoded_scales must be contiguous from the coarsest");
  for (int s : encoded_scales) {
    auto it = blocks_per_scale.find(s);
    check(it != blocks_per_scale.end() && it->second >= 1,
          "encoder: blocks_per_scale must be >= 1 for scale " + std::to_string(s));
  }
}

Var down_project(Graph& g, const ParamStore& ps, int scale_id, Var f, int d) {
  const Shape& s = f.val().shape();
  check(s.size() == 4, "down_project: input must be [T,H,W,C], got " + shape_str(f.val().shape()));
  const std::string name = "enc.phi.s" + std::to_string(scale_id);
  Var flat = ad::reshape(f, {s[0] * s[1] * s[2], s[3]});  // (t,y,x) row-major
  Var y = ad::add_bias(ad::matmul(flat, g.param(ps, name + ".w")), g.param(ps, name + ".b"));
  check(y.dim(1) == d, "down_project: projection does not produce d columns");
  return y;
}

Var positional_encoding(Graph& g, const ParamStore& ps, const EncoderConfig& cfg, int scale_id,
                        const ScaleInfo& info) {
  if (cfg.pe == attn::PeKind::learnable) return g.param(ps, "enc.pe.s" + std::to_string(scale_id));
  const Dtype dt = ps.value("enc.phi.s" + std::to_string(scale_id) + ".w").dtype();
  return g.leaf(attn::sinusoidal_pe(info.t, info.h, info.w, cfg.d).astype(dt));
}

namespace {

Var encoder_block(Graph& g, const ParamStore& ps, const EncoderConfig& cfg, const std::string& prefix, Var x,
                  Var pe) {
  check(pe.val().shape() == x.val().shape(),
        "within_scale: positional encoding shape " + shape_str(pe.val().shape()) + " does not match features " +
            shape_str(x.val().shape()));
  Var a = nn::layer_norm(g, ps, prefix + ".ln1", x);
  Var qk = ad::add(a, pe);
  Var attn_out = attn::mha(qk, qk, a, nn::mha_weights(g, ps, prefix + ".attn", cfg.n_heads, cfg.scale_by_head_dim));
  x = ad::add(x, attn_out);
  Var b = nn::layer_norm(g, ps, prefix + ".ln2", x);
  return ad::add(x, nn::ffn(g, ps, prefix + ".ffn", b));
}

}  // namespace

Var within_scale(Graph& g, const ParamStore& ps, const EncoderConfig& cfg, int scale_id, Var f, Var pe, int layers) {
  check(layers >= 1, "within_scale: layer count must be >= 1");
  Var x = f;
  for (int i = 0; i < layers; ++i)
    x = encoder_block(g, ps, cfg, "enc.s" + std::to_string(scale_id) + ".blk" + std::to_string(i), x, pe);
  return x;
}

Var between_scale(Graph& g, const ParamStore& ps, const EncoderConfig& cfg, int finer_id, int coarser_id, Var f_fine,
                  Var pe_fine, Var f_coarse, Var pe_coarse) {
  check(coarser_id == finer_id + 1, "between_scale: scales " + std::to_string(finer_id) + " and " +
                                        std::to_string(coarser_id) + " are not an adjacent (finer, coarser) pair");
  const std::string prefix = "enc.btw.s" + std::to_string(finer_id);
  Var aq = nn::layer_norm(g, ps, prefix + ".ln_q", f_fine);
  Var akv = nn::layer_norm(g, ps, prefix + ".ln_kv", f_coarse);
  Var attn_out = attn::mha(ad::add(aq, pe_fine), ad::add(akv, pe_coarse), akv,
                           nn::mha_weights(g, ps, prefix + ".attn", cfg.n_heads, cfg.scale_by_head_dim));
  Var x = ad::add(f_fine, attn_out);
  if (cfg.between_scale_ffn) {
    Var b = nn::layer_norm(g, ps, prefix + ".ln_f", x);
    x = ad::add(x, nn::ffn(g, ps, prefix + ".ffn", b));
  }
  return x;
}

EncodeResult encode(Graph& g, const ParamStore& ps, const EncoderConfig& cfg, const std::vector<Var>& pyramid,
                    const std::vector<ScaleInfo>& infos) {
  const int num_scales = static_cast<int>(pyramid.size());
  check(num_scales >= 2, "encode: pyramid needs at least 2 scales");
  check(infos.size() == pyramid.size(), "encode: infos/pyramid size mismatch");
  cfg.validate(num_scales);
  for (int s = 0; s + 1 < num_scales; ++s)
    check(infos[static_cast<size_t>(s + 1)].h <= infos[static_cast<size_t>(s)].h &&
              infos[static_cast<size_t>(s + 1)].w <= infos[static_cast<size_t>(s)].w,
          "encode: pyramid must be ordered fine to coarse");

  EncodeResult out;
  out.scales.resize(pyramid.size());
  out.pes.resize(pyramid.size());
  for (int s = 0; s < num_scales; ++s) {
    out.scales[static_cast<size_t>(s)] = down_project(g, ps, s, pyramid[static_cast<size_t>(s)], cfg.d);
    out.pes[static_cast<size_t>(s)] = positional_encoding(g, ps, cfg, s, infos[static_cast<size_t>(s)]);
  }

  if (cfg.encoded_scales.empty()) return out;

  std::vector<int> enc_sorted = cfg.encoded_scales;
  std::sort(enc_sorted.begin(), enc_sorted.end());
  for (int s : enc_sorted) {
    const int layers = cfg.blocks_per_scale.at(s);
    out.scales[static_cast<size_t>(s)] =
        within_scale(g, ps, cfg, s, out.scales[static_cast<size_t>(s)], out.pes[static_cast<size_t>(s)], layers);
  }
  // Between-scale pass, coarse -> fine over adjacent encoded pairs; the
  // coarsest scale passes through unchanged.
  for (int i = static_cast<int>(enc_sorted.size()) - 1; i > 0; --i) {
    const int coarser = enc_sorted[static_cast<size_t>(i)];
    const int finer = enc_sorted[static_cast<size_t>(i - 1)];
    out.scales[static_cast<size_t>(finer)] =
        between_scale(g, ps, cfg, finer, coarser, out.scales[static_cast<size_t>(finer)],
                      out.pes[static_cast<size_t>(finer)], out.scales[static_cast<size_t>(coarser)],
                      out.pes[static_cast<size_t>(coarser)]);
  }
  return out;
}

void init_encoder_params(ParamStore& ps, Rng& rng, const EncoderConfig& cfg, const std::vector<ScaleInfo>& infos,
                         Dtype dt) {
  cfg.validate(static_cast<int>(infos.size()));
  Rng r = rng.fork(0x454e43);  // "ENC"
  for (size_t s = 0; s < infos.size(); ++s) {
    const std::string phi = "enc.phi.s" + std::to_string(s);
    nn::init_linear(ps, r, phi + ".w", infos[s].c, cfg.d, dt);
    nn::init_bias(ps, phi + ".b", cfg.d, dt);
    if (cfg.pe == attn::PeKind::learnable)
      ps.add("enc.pe.s" + std::to_string(s), r.normal_tensor({infos[s].tokens(), cfg.d}, 0.0, 0.02, dt));
  }
  for (int s : cfg.encoded_scales) {
    for (int i = 0; i < cfg.blocks_per_scale.at(s); ++i) {
      const std::string p = "enc.s" + std::to_string(s) + ".blk" + std::to_string(i);
      nn::init_layer_norm(ps, p + ".ln1", cfg.d, dt);
      nn::init_mha(ps, r, p + ".attn", cfg.d, cfg.d, cfg.d, cfg.d, cfg.d, dt);
      nn::init_layer_norm(ps, p + ".ln2", cfg.d, dt);
      nn::init_ffn(ps, r, p + ".ffn", cfg.d, cfg.d * cfg.ffn_mult, dt);
    }
  }
  std::vector<int> enc_sorted = cfg.encoded_scales;
  std::sort(enc_sorted.begin(), enc_sorted.end());
  for (size_t i = 1; i < enc_sorted.size(); ++i) {
    const std::string p = "enc.btw.s" + std::to_string(enc_sorted[i - 1]);
    nn::init_layer_norm(ps, p + ".ln_q", cfg.d, dt);
    nn::init_layer_norm(ps, p + ".ln_kv", cfg.d, dt);
    nn::init_mha(ps, r, p + ".attn", cfg.d, cfg.d, cfg.d, cfg.d, cfg.d, dt);
    if (cfg.between_scale_ffn) {
      nn::init_layer_norm(ps, p + ".ln_f", cfg.d, dt);
      nn::init_ffn(ps, r, p + ".ffn", cfg.d, cfg.d * cfg.ffn_mult, dt);
    }
  }
}

}  // namespace medvt::enc
