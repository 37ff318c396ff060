#include "medvt/nn.hpp"

#include <cmath>

namespace medvt::nn {

void init_linear(ParamStore& ps, Rng& rng, const std::string& name, int64_t in, int64_t out, Dtype dt) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  ps.add(name, rng.uniform_tensor({in, out}, -limit, limit, dt));
}

void init_bias(ParamStore& ps, const std::string& name, int64_t n, Dtype dt) {
  ps.add(name, Tensor::zeros({n}, dt));
}

void init_layer_norm(ParamStore& ps, const std::string& prefix, int64_t c, Dtype dt) {
  ps.add(prefix + ".gain", Tensor::full({c}, 1.0, dt));
  ps.add(prefix + ".bias", Tensor::zeros({c}, dt));
}

void init_mha(ParamStore& ps, Rng& rng, const std::string& prefix, int64_t d_qk, int64_t d_attn, int64_t d_v,
              int64_t d_vproj, int64_t d_out, Dtype dt) {
  init_linear(ps, rng, prefix + ".wq", d_qk, d_attn, dt);
  init_linear(ps, rng, prefix + ".wk", d_qk, d_attn, dt);
  init_linear(ps, rng, prefix + ".wv", d_v, d_vproj, dt);
  init_linear(ps, rng, prefix + ".wo", d_vproj, d_out, dt);
}

void init_ffn(ParamStore& ps, Rng& rng, const std::string& prefix, int64_t d, int64_t hidden, Dtype dt) {
  init_linear(ps, rng, prefix + ".w1", d, hidden, dt);
  init_bias(ps, prefix + ".b1", hidden, dt);
  init_linear(ps, rng, prefix + ".w2", hidden, d, dt);
  init_bias(ps, prefix + ".b2", d, dt);
}

void init_conv(ParamStore& ps, Rng& rng, const std::string& name, Shape kshape, Dtype dt) {
  int64_t fan_in = 1;
  for (size_t i = 0; i + 1 < kshape.size(); ++i) fan_in *= kshape[i];
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  ps.add(name + ".w", rng.uniform_tensor(kshape, -limit, limit, dt));
  ps.add(name + ".b", Tensor::zeros({kshape.back()}, dt));
}

Var layer_norm(Graph& g, const ParamStore& ps, const std::string& prefix, Var x) {
  return ad::layer_norm(x, g.param(ps, prefix + ".gain"), g.param(ps, prefix + ".bias"));
}

attn::MhaWeights mha_weights(Graph& g, const ParamStore& ps, const std::string& prefix, int n_heads,
                             bool scale_by_head_dim) {
  attn::MhaWeights w;
  w.wq = g.param(ps, prefix + ".wq");
  w.wk = g.param(ps, prefix + ".wk");
  w.wv = g.param(ps, prefix + ".wv");
  w.wo = g.param(ps, prefix + ".wo");
  w.n_heads = n_heads;
  w.scale_by_head_dim = scale_by_head_dim;
  return w;
}

Var ffn(Graph& g, const ParamStore& ps, const std::string& prefix, Var x) {
  Var h = ad::relu(ad::add_bias(ad::matmul(x, g.param(ps, prefix + ".w1")), g.param(ps, prefix + ".b1")));
  return ad::add_bias(ad::matmul(h, g.param(ps, prefix + ".w2")), g.param(ps, prefix + ".b2"));
}

Var conv2d_layer(Graph& g, const ParamStore& ps, const std::string& name, Var x, int stride, ops::Pad pad) {
  Var y = ad::conv2d(x, g.param(ps, name + ".w"), stride, pad);
  return ad::add_bias(y, g.param(ps, name + ".b"));
}

Var conv3d_layer(Graph& g, const ParamStore& ps, const std::string& name, Var x, int stride, ops::Pad pad) {
  Var y = ad::conv3d(x, g.param(ps, name + ".w"), stride, pad);
  return ad::add_bias(y, g.param(ps, name + ".b"));
}

Var pointwise_conv(Graph& g, const ParamStore& ps, const std::string& name, Var x) {
  const Shape& s = x.val().shape();
  check(s.size() == 4, "pointwise_conv: input must be [T,H,W,C]");
  Var w = g.param(ps, name + ".w");
  const int64_t out = w.val().dim(1);
  Var flat = ad::reshape(x, {s[0] * s[1] * s[2], s[3]});
  Var y = ad::add_bias(ad::matmul(flat, w), g.param(ps, name + ".b"));
  return ad::reshape(y, {s[0], s[1], s[2], out});
}

}  // namespace medvt::nn
