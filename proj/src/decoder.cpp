#include "medvt/decoder.hpp"

#include <algorithm>

namespace medvt::dec {

void DecoderConfig::validate(int num_scales) const {
  check(n_iterations >= 1, "decoder: N_d must be >= 1");
  check(!decoder_scales.empty(), "decoder: decoder_scales must not be empty");
  for (size_t i = 0; i < decoder_scales.size(); ++i) {
    check(decoder_scales[i] >= 0 && decoder_scales[i] < num_scales, "decoder: scale id out of range");
    if (i > 0)
      check(decoder_scales[i] < decoder_scales[i - 1], "decoder: decoder_scales must be ordered coarse -> fine");
  }
  check(d % n_heads == 0, "decoder: d must be divisible by n_heads");
}

std::vector<Var> pixel_decode(Graph& g, const ParamStore& ps, const DecoderConfig& cfg,
                              const std::vector<Var>& encoded, const std::vector<int>& encoder_scales,
                              const std::vector<Var>& raw_pyramid, const std::vector<ScaleInfo>& infos) {
  const int num_scales = static_cast<int>(raw_pyramid.size());
  check(num_scales == static_cast<int>(infos.size()) && num_scales == static_cast<int>(encoded.size()),
        "pixel_decode: expected one entry per scale; missing scale input");
  std::vector<bool> from_encoder(static_cast<size_t>(num_scales), false);
  for (int s : encoder_scales) from_encoder[static_cast<size_t>(s)] = true;

  // Projected per-scale inputs as [T,H,W,d] images.
  std::vector<Var> proj(static_cast<size_t>(num_scales));
  for (int s = 0; s < num_scales; ++s) {
    const ScaleInfo& in = infos[static_cast<size_t>(s)];
    Var x;
    if (from_encoder[static_cast<size_t>(s)])
      x = ad::reshape(encoded[static_cast<size_t>(s)], {in.t, in.h, in.w, cfg.d});
    else
      x = raw_pyramid[static_cast<size_t>(s)];
    proj[static_cast<size_t>(s)] = nn::pointwise_conv(g, ps, "dec.fpn.s" + std::to_string(s), x);
  }

  // Coarse-to-fine accumulation.
  std::vector<Var> out(static_cast<size_t>(num_scales));
  out[static_cast<size_t>(num_scales - 1)] = proj[static_cast<size_t>(num_scales - 1)];
  for (int s = num_scales - 2; s >= 0; --s) {
    const ScaleInfo& in = infos[static_cast<size_t>(s)];
    Var up = ad::bilinear_upsample(ad::relu(out[static_cast<size_t>(s + 1)]), in.h, in.w);
    out[static_cast<size_t>(s)] = ad::add(proj[static_cast<size_t>(s)], up);
  }
  return out;
}

Var decoder_block(Graph& g, const ParamStore& ps, const DecoderConfig& cfg, int iteration, int scale_id, Var q,
                  Var qpe, Var feats, Var pe, Var scale_emb) {
  check(scale_emb.val().shape() == feats.val().shape(),
        "decoder_block: scale embedding shape " + shape_str(scale_emb.val().shape()) + " does not match features " +
            shape_str(feats.val().shape()));
  const std::string prefix = "dec.blk" + std::to_string(iteration) + ".s" + std::to_string(scale_id);
  // Self attention over queries.
  Var a = nn::layer_norm(g, ps, prefix + ".self.ln", q);
  Var aq = ad::add(a, qpe);
  q = ad::add(q, attn::mha(aq, aq, a, nn::mha_weights(g, ps, prefix + ".self", cfg.n_heads, cfg.scale_by_head_dim)));
  // Cross attention into the pixel-decoded features; keys carry feature
  // positional embeddings plus the broadcast scale embedding.
  Var cq = nn::layer_norm(g, ps, prefix + ".cross.ln_q", q);
  Var cm = nn::layer_norm(g, ps, prefix + ".cross.ln_kv", feats);
  Var keys = ad::add(ad::add(cm, pe), scale_emb);
  q = ad::add(q, attn::mha(ad::add(cq, qpe), keys, cm,
                           nn::mha_weights(g, ps, prefix + ".cross", cfg.n_heads, cfg.scale_by_head_dim)));
  Var b = nn::layer_norm(g, ps, prefix + ".ffn.ln", q);
  return ad::add(q, nn::ffn(g, ps, prefix + ".ffn", b));
}

LearnedQueries learn_queries(Graph& g, const ParamStore& ps, const DecoderConfig& cfg,
                             const std::vector<Var>& pixel_scales, const std::vector<Var>& pes,
                             const std::vector<ScaleInfo>& infos) {
  LearnedQueries out;
  Var q = g.param(ps, "dec.query");
  for (int i = 0; i < cfg.n_iterations; ++i) {
    for (int s : cfg.decoder_scales) {
      const ScaleInfo& in = infos[static_cast<size_t>(s)];
      Var feats = ad::reshape(pixel_scales[static_cast<size_t>(s)], {in.tokens(), static_cast<int64_t>(cfg.d)});
      Var qpe;
      if (cfg.query_pe == attn::PeKind::learnable) {
        qpe = g.param(ps, "dec.qpe.s" + std::to_string(s));
      } else {
        qpe = g.leaf(attn::sinusoidal_pe_1d(q.dim(0), cfg.d).astype(q.val().dtype()));
      }
      Var scale_emb = ad::tile(g.param(ps, "dec.scale_emb.s" + std::to_string(s)), {in.tokens(), 1});
      q = decoder_block(g, ps, cfg, i, s, q, qpe, feats, pes[static_cast<size_t>(s)], scale_emb);
      out.trace.emplace_back(i, s);
    }
  }
  out.q = q;
  return out;
}

ObjectAttention object_attention(Graph& g, const ParamStore& ps, const DecoderConfig& cfg, Var queries, Var f_fine,
                                 const ScaleInfo& fine_info) {
  const int64_t nq = queries.dim(0);
  check(nq == 1 || nq == fine_info.t,
        "object_attention: N_q must be 1 (per clip) or T (per frame), got " + std::to_string(nq));
  check(f_fine.val().rank() == 2 && f_fine.dim(0) == fine_info.tokens(),
        "object_attention: features must be flattened to [T*H1*W1, d]");
  ObjectAttention out;
  out.raw = attn::attention_affinity(queries, f_fine, g.param(ps, "dec.objattn.wq"), g.param(ps, "dec.objattn.wk"),
                                     cfg.n_heads, cfg.scale_by_head_dim);
  const int64_t hw = fine_info.h * fine_info.w;
  const int64_t nh = cfg.n_heads;
  if (cfg.qmap == QueryMapMode::query_mean) {
    Var m = ad::mean_axis(out.raw, 0);  // [1, THW, Nh]
    out.map = ad::reshape(m, {fine_info.t, fine_info.h, fine_info.w, nh});
    return out;
  }
  if (nq == 1) {
    // Per-clip: the single query's affinity over all positions, reshaped so
    // each frame gets the same query's map.
    out.map = ad::reshape(out.raw, {fine_info.t, fine_info.h, fine_info.w, nh});
    return out;
  }
  // Per-frame: query row t restricted to frame t's positions.
  std::vector<Var> frames;
  frames.reserve(static_cast<size_t>(fine_info.t));
  for (int64_t t = 0; t < fine_info.t; ++t) {
    Var row = ad::slice(out.raw, 0, t, t + 1);               // [1, THW, Nh]
    Var own = ad::slice(row, 1, t * hw, (t + 1) * hw);       // [1, HW, Nh]
    frames.push_back(ad::reshape(own, {1, fine_info.h, fine_info.w, nh}));
  }
  out.map = frames.size() == 1 ? frames[0] : ad::concat(frames, 0);
  return out;
}

Var decoder_output(Var attention_map, Var f_fine_image) {
  const Shape& a = attention_map.val().shape();
  const Shape& f = f_fine_image.val().shape();
  check(a.size() == 4 && f.size() == 4 && a[0] == f[0] && a[1] == f[1] && a[2] == f[2],
        "decoder_output: spatial shapes differ, " + shape_str(a) + " vs " + shape_str(f));
  return ad::concat({attention_map, f_fine_image}, 3);
}

void init_decoder_params(ParamStore& ps, Rng& rng, const DecoderConfig& cfg, const std::vector<int>& encoder_scales,
                         const std::vector<ScaleInfo>& infos, Dtype dt) {
  cfg.validate(static_cast<int>(infos.size()));
  Rng r = rng.fork(0x444543);  // "DEC"
  std::vector<bool> from_encoder(infos.size(), false);
  for (int s : encoder_scales) from_encoder[static_cast<size_t>(s)] = true;
  for (size_t s = 0; s < infos.size(); ++s) {
    const int64_t cin = from_encoder[s] ? cfg.d : infos[s].c;
    const std::string name = "dec.fpn.s" + std::to_string(s);
    nn::init_linear(ps, r, name + ".w", cin, cfg.d, dt);
    nn::init_bias(ps, name + ".b", cfg.d, dt);
  }
  const int64_t nq = cfg.num_queries(infos[0].t);
  // Randomly initialized learnable queries.
  ps.add("dec.query", r.normal_tensor({nq, cfg.d}, 0.0, 0.02, dt));
  for (int s : cfg.decoder_scales) {
    if (cfg.query_pe == attn::PeKind::learnable)
      ps.add("dec.qpe.s" + std::to_string(s), r.normal_tensor({nq, cfg.d}, 0.0, 0.02, dt));
    ps.add("dec.scale_emb.s" + std::to_string(s), r.normal_tensor({1, cfg.d}, 0.0, 0.02, dt));
  }
  for (int i = 0; i < cfg.n_iterations; ++i)
    for (int s : cfg.decoder_scales) {
      const std::string p = "dec.blk" + std::to_string(i) + ".s" + std::to_string(s);
      nn::init_layer_norm(ps, p + ".self.ln", cfg.d, dt);
      nn::init_mha(ps, r, p + ".self", cfg.d, cfg.d, cfg.d, cfg.d, cfg.d, dt);
      nn::init_layer_norm(ps, p + ".cross.ln_q", cfg.d, dt);
      nn::init_layer_norm(ps, p + ".cross.ln_kv", cfg.d, dt);
      nn::init_mha(ps, r, p + ".cross", cfg.d, cfg.d, cfg.d, cfg.d, cfg.d, dt);
      nn::init_layer_norm(ps, p + ".ffn.ln", cfg.d, dt);
      nn::init_ffn(ps, r, p + ".ffn", cfg.d, cfg.d * cfg.ffn_mult, dt);
    }
  // Fresh parameters for the final affinity (not shared with cross attention).
  nn::init_linear(ps, r, "dec.objattn.wq", cfg.d, cfg.d, dt);
  nn::init_linear(ps, r, "dec.objattn.wk", cfg.d, cfg.d, dt);
}

}  // namespace medvt::dec
