#pragma once

#include <string>

#include "medvt/attention.hpp"
#include "medvt/autodiff.hpp"
#include "medvt/rng.hpp"

// Shared building blocks for the transformer modules: parameter
// registration and the pre-norm sublayers. Every layer fetches its weights
// from the ParamStore by a stable dotted name.
namespace medvt::nn {

using ad::Graph;
using ad::ParamStore;
using ad::Var;

// Xavier-uniform matrix [in, out].
void init_linear(ParamStore& ps, Rng& rng, const std::string& name, int64_t in, int64_t out, Dtype dt);
void init_bias(ParamStore& ps, const std::string& name, int64_t n, Dtype dt);
void init_layer_norm(ParamStore& ps, const std::string& prefix, int64_t c, Dtype dt);
// wq/wk project d_qk -> d_attn, wv projects d_v -> d_vproj, wo d_vproj -> d_out.
void init_mha(ParamStore& ps, Rng& rng, const std::string& prefix, int64_t d_qk, int64_t d_attn, int64_t d_v,
              int64_t d_vproj, int64_t d_out, Dtype dt);
void init_ffn(ParamStore& ps, Rng& rng, const std::string& prefix, int64_t d, int64_t hidden, Dtype dt);
// He-uniform conv kernels; shape is the full kernel shape, fan-in derived.
void init_conv(ParamStore& ps, Rng& rng, const std::string& name, Shape kshape, Dtype dt);

Var layer_norm(Graph& g, const ParamStore& ps, const std::string& prefix, Var x);
attn::MhaWeights mha_weights(Graph& g, const ParamStore& ps, const std::string& prefix, int n_heads,
                             bool scale_by_head_dim);
// relu(x W1 + b1) W2 + b2
Var ffn(Graph& g, const ParamStore& ps, const std::string& prefix, Var x);
// 2-D conv + channel bias; weights at <name>.w / <name>.b.
Var conv2d_layer(Graph& g, const ParamStore& ps, const std::string& name, Var x, int stride = 1,
                 ops::Pad pad = ops::Pad::same);
Var conv3d_layer(Graph& g, const ParamStore& ps, const std::string& name, Var x, int stride = 1,
                 ops::Pad pad = ops::Pad::same);
// 1x1 convolution expressed as flatten + matmul; x [T,H,W,C] -> [T,H,W,out].
Var pointwise_conv(Graph& g, const ParamStore& ps, const std::string& name, Var x);

}  // namespace medvt::nn
