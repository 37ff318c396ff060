#include "medvt/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "medvt/io.hpp"
#include "medvt/threads.hpp"

namespace medvt::ad {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------- ParamStore

void ParamStore::add(const std::string& name, Tensor value, bool trainable) {
  check(!name.empty(), "param name must not be empty");
  check(!map_.count(name), "duplicate param name: " + name);
  order_.push_back(name);
  map_[name] = Entry{std::move(value), trainable};
}

bool ParamStore::has(const std::string& name) const { return map_.count(name) > 0; }

const Tensor& ParamStore::value(const std::string& name) const {
  auto it = map_.find(name);
  check(it != map_.end(), "unknown param: " + name);
  return it->second.value;
}

Tensor& ParamStore::mutable_value(const std::string& name) {
  auto it = map_.find(name);
  check(it != map_.end(), "unknown param: " + name);
  return it->second.value;
}

bool ParamStore::trainable(const std::string& name) const {
  auto it = map_.find(name);
  check(it != map_.end(), "unknown param: " + name);
  return it->second.trainable;
}

void ParamStore::set_trainable(const std::string& name, bool t) {
  auto it = map_.find(name);
  check(it != map_.end(), "unknown param: " + name);
  it->second.trainable = t;
}

void ParamStore::set_trainable_prefix(const std::string& prefix, bool t) {
  for (const auto& n : order_)
    if (n.rfind(prefix, 0) == 0) map_[n].trainable = t;
}

int64_t ParamStore::total_elements() const {
  int64_t n = 0;
  for (const auto& name : order_) n += map_.at(name).value.numel();
  return n;
}

namespace {
std::string param_file_name(const std::string& name) {
  std::string s = name;
  for (char& c : s)
    if (c == '/' || c == '\\') c = '_';
  return s + ".mvt1";
}
}  // namespace

void ParamStore::save(const std::string& dir) const {
  fs::create_directories(dir);
  json manifest;
  manifest["format"] = "medvt-checkpoint-v1";
  json items = json::array();
  for (const auto& name : order_) {
    const Entry& e = map_.at(name);
    const std::string file = param_file_name(name);
    io::write_mvt1((fs::path(dir) / file).string(), e.value);
    json item;
    item["name"] = name;
    item["dtype"] = dtype_name(e.value.dtype());
    item["shape"] = e.value.shape();
    item["trainable"] = e.trainable;
    item["file"] = file;
    items.push_back(item);
  }
  manifest["params"] = items;
  io::write_text_file((fs::path(dir) / "manifest.json").string(), manifest.dump(2) + "\n");
}

ParamStore ParamStore::load(const std::string& dir) {
  const json manifest = json::parse(io::read_text_file((fs::path(dir) / "manifest.json").string()));
  ParamStore ps;
  for (const auto& item : manifest.at("params")) {
    const std::string name = item.at("name").get<std::string>();
    Tensor t = io::read_mvt1((fs::path(dir) / item.at("file").get<std::string>()).string());
    const Shape expect = item.at("shape").get<Shape>();
    check(t.shape() == expect, "checkpoint shape mismatch for " + name);
    ps.add(name, std::move(t), item.at("trainable").get<bool>());
  }
  return ps;
}

// --------------------------------------------------------------------- Graph

struct Node {
  Tensor value;
  std::vector<int32_t> inputs;
  // Called with the accumulated output gradient; must push gradients into
  // the input nodes via Graph accumulation.
  std::function<void(Graph&, const Tensor&)> vjp;
  std::string param_name;  // non-empty for named leaves
  bool requires_grad = false;
};

struct Graph::Impl {
  std::vector<Node> nodes;
  std::vector<Tensor> grads;  // aligned with nodes during/after backward
  std::unordered_map<std::string, int32_t> param_cache;

  void accum(int32_t id, const Tensor& g) {
    Node& n = nodes[static_cast<size_t>(id)];
    if (!n.requires_grad) return;
    Tensor& slot = grads[static_cast<size_t>(id)];
    if (!slot.defined())
      slot = g;
    else
      slot = ops::add(slot, g);
  }
};

Graph::Graph() : impl_(std::make_unique<Impl>()) {}
Graph::~Graph() = default;

const Tensor& Var::val() const { return g->value(*this); }
const Shape& Var::shape() const { return val().shape(); }
int64_t Var::dim(int i) const { return val().dim(i); }

namespace {
Var push(Graph& g, Node n);
}

Var Graph::leaf(Tensor v) {
  Node n;
  n.value = std::move(v);
  n.requires_grad = false;
  impl_->nodes.push_back(std::move(n));
  return Var{this, static_cast<int32_t>(impl_->nodes.size() - 1)};
}

Var Graph::input(Tensor v) {
  Node n;
  n.value = std::move(v);
  n.requires_grad = true;
  impl_->nodes.push_back(std::move(n));
  return Var{this, static_cast<int32_t>(impl_->nodes.size() - 1)};
}

Var Graph::param(const ParamStore& ps, const std::string& name) {
  auto it = impl_->param_cache.find(name);
  if (it != impl_->param_cache.end()) return Var{this, it->second};
  Node n;
  n.value = ps.value(name);
  n.param_name = name;
  n.requires_grad = ps.trainable(name);
  impl_->nodes.push_back(std::move(n));
  const int32_t id = static_cast<int32_t>(impl_->nodes.size() - 1);
  impl_->param_cache[name] = id;
  return Var{this, id};
}

const Tensor& Graph::value(Var v) const {
  check(v.g == this && v.id >= 0 && v.id < static_cast<int32_t>(impl_->nodes.size()), "Var does not belong to graph");
  return impl_->nodes[static_cast<size_t>(v.id)].value;
}

bool Graph::requires_grad(Var v) const { return impl_->nodes[static_cast<size_t>(v.id)].requires_grad; }

size_t Graph::num_nodes() const { return impl_->nodes.size(); }

GradMap Graph::backward(Var loss) {
  check(loss.g == this, "loss Var does not belong to graph");
  const Tensor& lv = value(loss);
  check(lv.numel() == 1, "backward: loss must be scalar, got " + shape_str(lv.shape()));
  auto& nodes = impl_->nodes;
  auto& grads = impl_->grads;
  grads.assign(nodes.size(), Tensor());
  grads[static_cast<size_t>(loss.id)] = Tensor::full({1}, 1.0, lv.dtype());
  for (int32_t i = loss.id; i >= 0; --i) {
    Node& n = nodes[static_cast<size_t>(i)];
    const Tensor& g = grads[static_cast<size_t>(i)];
    if (!g.defined() || !n.requires_grad || !n.vjp) continue;
    n.vjp(*this, g);
  }
  GradMap out;
  for (size_t i = 0; i < nodes.size(); ++i) {
    const Node& n = nodes[i];
    if (!n.param_name.empty() && n.requires_grad && grads[i].defined()) out[n.param_name] = grads[i];
  }
  return out;
}

Tensor Graph::grad_of(Var v) const {
  check(v.g == this, "Var does not belong to graph");
  check(impl_->grads.size() == impl_->nodes.size(), "grad_of: run backward first");
  const Tensor& g = impl_->grads[static_cast<size_t>(v.id)];
  if (g.defined()) return g;
  return Tensor::zeros(value(v).shape(), value(v).dtype());
}

// ----------------------------------------------------------------------- ops

namespace {

Var push(Graph& g, Node n) {
  for (int32_t in : n.inputs)
    if (g.impl().nodes[static_cast<size_t>(in)].requires_grad) n.requires_grad = true;
  g.impl().nodes.push_back(std::move(n));
  return Var{&g, static_cast<int32_t>(g.impl().nodes.size() - 1)};
}

const Tensor& in_val(Graph& g, int32_t id) { return g.impl().nodes[static_cast<size_t>(id)].value; }

Graph& same_graph(Var a, Var b) {
  check(a.defined() && b.defined() && a.g == b.g, "Vars must belong to the same graph");
  return *a.g;
}

}  // namespace

Var add(Var a, Var b) {
  Graph& g = same_graph(a, b);
  Node n;
  n.value = ops::add(a.val(), b.val());
  n.inputs = {a.id, b.id};
  n.vjp = [ia = a.id, ib = b.id](Graph& gr, const Tensor& gout) {
    gr.impl().accum(ia, gout);
    gr.impl().accum(ib, gout);
  };
  return push(g, std::move(n));
}

Var sub(Var a, Var b) {
  Graph& g = same_graph(a, b);
  Node n;
  n.value = ops::sub(a.val(), b.val());
  n.inputs = {a.id, b.id};
  n.vjp = [ia = a.id, ib = b.id](Graph& gr, const Tensor& gout) {
    gr.impl().accum(ia, gout);
    gr.impl().accum(ib, ops::neg(gout));
  };
  return push(g, std::move(n));
}

Var mul(Var a, Var b) {
  Graph& g = same_graph(a, b);
  Node n;
  n.value = ops::mul(a.val(), b.val());
  n.inputs = {a.id, b.id};
  n.vjp = [ia = a.id, ib = b.id](Graph& gr, const Tensor& gout) {
    gr.impl().accum(ia, ops::mul(gout, in_val(gr, ib)));
    gr.impl().accum(ib, ops::mul(gout, in_val(gr, ia)));
  };
  return push(g, std::move(n));
}

Var div(Var a, Var b) {
  Graph& g = same_graph(a, b);
  Node n;
  n.value = ops::div(a.val(), b.val());
  n.inputs = {a.id, b.id};
  n.vjp = [ia = a.id, ib = b.id](Graph& gr, const Tensor& gout) {
    const Tensor& bv = in_val(gr, ib);
    gr.impl().accum(ia, ops::div(gout, bv));
    // d/db (a/b) = -a / b^2
    gr.impl().accum(ib, ops::neg(ops::div(ops::mul(gout, in_val(gr, ia)), ops::mul(bv, bv))));
  };
  return push(g, std::move(n));
}

Var scale(Var x, double c) {
  Node n;
  n.value = ops::scale(x.val(), c);
  n.inputs = {x.id};
  n.vjp = [ix = x.id, c](Graph& gr, const Tensor& gout) { gr.impl().accum(ix, ops::scale(gout, c)); };
  return push(*x.g, std::move(n));
}

Var add_scalar(Var x, double c) {
  Node n;
  n.value = ops::add_scalar(x.val(), c);
  n.inputs = {x.id};
  n.vjp = [ix = x.id](Graph& gr, const Tensor& gout) { gr.impl().accum(ix, gout); };
  return push(*x.g, std::move(n));
}

Var pow_scalar(Var x, double p) {
  Node n;
  n.value = ops::pow_scalar(x.val(), p);
  n.inputs = {x.id};
  n.vjp = [ix = x.id, p](Graph& gr, const Tensor& gout) {
    gr.impl().accum(ix, ops::mul(gout, ops::scale(ops::pow_scalar(in_val(gr, ix), p - 1.0), p)));
  };
  return push(*x.g, std::move(n));
}

Var relu(Var x) {
  Node n;
  n.value = ops::relu(x.val());
  n.inputs = {x.id};
  // Subgradient at 0 is 0: gradient passes only where x > 0 strictly.
  n.vjp = [ix = x.id](Graph& gr, const Tensor& gout) {
    const Tensor& xv = in_val(gr, ix);
    Tensor gx(xv.shape(), xv.dtype());
    dispatch(xv.dtype(), [&](auto tag) {
      using T = decltype(tag);
      const T* px = xv.data<T>();
      const T* pg = gout.data<T>();
      T* po = gx.data<T>();
      for (int64_t i = 0; i < xv.numel(); ++i) po[i] = px[i] > T(0) ? pg[i] : T(0);
    });
    gr.impl().accum(ix, gx);
  };
  return push(*x.g, std::move(n));
}

Var exp(Var x) {
  Node n;
  n.value = ops::exp(x.val());
  n.inputs = {x.id};
  Var out = push(*x.g, std::move(n));
  auto& node = out.g->impl().nodes[static_cast<size_t>(out.id)];
  node.vjp = [ix = x.id, iy = out.id](Graph& gr, const Tensor& gout) {
    gr.impl().accum(ix, ops::mul(gout, in_val(gr, iy)));
  };
  return out;
}

Var log(Var x) {
  Node n;
  n.value = ops::log(x.val());
  n.inputs = {x.id};
  n.vjp = [ix = x.id](Graph& gr, const Tensor& gout) { gr.impl().accum(ix, ops::div(gout, in_val(gr, ix))); };
  return push(*x.g, std::move(n));
}

Var sqrt(Var x) {
  Node n;
  n.value = ops::sqrt(x.val());
  n.inputs = {x.id};
  Var out = push(*x.g, std::move(n));
  auto& node = out.g->impl().nodes[static_cast<size_t>(out.id)];
  node.vjp = [ix = x.id, iy = out.id](Graph& gr, const Tensor& gout) {
    gr.impl().accum(ix, ops::div(ops::scale(gout, 0.5), in_val(gr, iy)));
  };
  return out;
}

Var neg(Var x) {
  Node n;
  n.value = ops::neg(x.val());
  n.inputs = {x.id};
  n.vjp = [ix = x.id](Graph& gr, const Tensor& gout) { gr.impl().accum(ix, ops::neg(gout)); };
  return push(*x.g, std::move(n));
}

Var matmul(Var a, Var b) {
  Graph& g = same_graph(a, b);
  Node n;
  n.value = ops::matmul(a.val(), b.val());
  n.inputs = {a.id, b.id};
  n.vjp = [ia = a.id, ib = b.id](Graph& gr, const Tensor& gout) {
    gr.impl().accum(ia, ops::matmul(gout, ops::transpose2d(in_val(gr, ib))));
    gr.impl().accum(ib, ops::matmul(ops::transpose2d(in_val(gr, ia)), gout));
  };
  return push(g, std::move(n));
}

Var softmax(Var x, int axis) {
  Node n;
  n.value = ops::softmax(x.val(), axis);
  n.inputs = {x.id};
  Var out = push(*x.g, std::move(n));
  auto& node = out.g->impl().nodes[static_cast<size_t>(out.id)];
  // Fused Jacobian-vector form: gx = y * (g - sum(g*y, axis)).
  node.vjp = [ix = x.id, iy = out.id, axis](Graph& gr, const Tensor& gout) {
    const Tensor& y = in_val(gr, iy);
    const int ax = axis < 0 ? axis + y.rank() : axis;
    Tensor gy = ops::mul(gout, y);
    Tensor s = ops::sum_axis(gy, ax);
    std::vector<int64_t> reps(static_cast<size_t>(y.rank()), 1);
    reps[static_cast<size_t>(ax)] = y.dim(ax);
    gr.impl().accum(ix, ops::mul(y, ops::sub(gout, ops::tile(s, reps))));
  };
  return out;
}

Var log_softmax(Var x, int axis) {
  Node n;
  n.value = ops::log_softmax(x.val(), axis);
  n.inputs = {x.id};
  Var out = push(*x.g, std::move(n));
  auto& node = out.g->impl().nodes[static_cast<size_t>(out.id)];
  // gx = g - softmax(x) * sum(g, axis)
  node.vjp = [ix = x.id, iy = out.id, axis](Graph& gr, const Tensor& gout) {
    const Tensor& y = in_val(gr, iy);
    const int ax = axis < 0 ? axis + y.rank() : axis;
    Tensor p = ops::exp(y);
    Tensor s = ops::sum_axis(gout, ax);
    std::vector<int64_t> reps(static_cast<size_t>(y.rank()), 1);
    reps[static_cast<size_t>(ax)] = y.dim(ax);
    gr.impl().accum(ix, ops::sub(gout, ops::mul(p, ops::tile(s, reps))));
  };
  return out;
}

Var conv2d(Var x, Var k, int stride, ops::Pad pad) {
  Graph& g = same_graph(x, k);
  Node n;
  n.value = ops::conv2d(x.val(), k.val(), stride, pad);
  n.inputs = {x.id, k.id};
  n.vjp = [ix = x.id, ik = k.id, stride, pad](Graph& gr, const Tensor& gout) {
    const Tensor& xv = in_val(gr, ix);
    const Tensor& kv = in_val(gr, ik);
    if (gr.impl().nodes[static_cast<size_t>(ix)].requires_grad)
      gr.impl().accum(ix, ops::conv2d_grad_input(gout, kv, xv.shape(), stride, pad));
    if (gr.impl().nodes[static_cast<size_t>(ik)].requires_grad)
      gr.impl().accum(ik, ops::conv2d_grad_kernel(gout, xv, kv.shape(), stride, pad));
  };
  return push(g, std::move(n));
}

Var conv3d(Var x, Var k, int stride, ops::Pad pad) {
  Graph& g = same_graph(x, k);
  Node n;
  n.value = ops::conv3d(x.val(), k.val(), stride, pad);
  n.inputs = {x.id, k.id};
  n.vjp = [ix = x.id, ik = k.id, stride, pad](Graph& gr, const Tensor& gout) {
    const Tensor& xv = in_val(gr, ix);
    const Tensor& kv = in_val(gr, ik);
    if (gr.impl().nodes[static_cast<size_t>(ix)].requires_grad)
      gr.impl().accum(ix, ops::conv3d_grad_input(gout, kv, xv.shape(), stride, pad));
    if (gr.impl().nodes[static_cast<size_t>(ik)].requires_grad)
      gr.impl().accum(ik, ops::conv3d_grad_kernel(gout, xv, kv.shape(), stride, pad));
  };
  return push(g, std::move(n));
}

Var bilinear_upsample(Var x, int64_t h2, int64_t w2) {
  Node n;
  n.value = ops::bilinear_upsample(x.val(), h2, w2);
  n.inputs = {x.id};
  n.vjp = [ix = x.id](Graph& gr, const Tensor& gout) {
    gr.impl().accum(ix, ops::bilinear_resize_grad_input(gout, in_val(gr, ix).shape()));
  };
  return push(*x.g, std::move(n));
}

Var concat(const std::vector<Var>& xs, int axis) {
  check(!xs.empty(), "concat: empty list");
  Graph& g = *xs[0].g;
  std::vector<Tensor> vals;
  Node n;
  for (const Var& v : xs) {
    check(v.g == &g, "concat: Vars from different graphs");
    vals.push_back(v.val());
    n.inputs.push_back(v.id);
  }
  n.value = ops::concat(vals, axis);
  std::vector<int32_t> ids = n.inputs;
  const int ax = axis < 0 ? axis + vals[0].rank() : axis;
  n.vjp = [ids, ax](Graph& gr, const Tensor& gout) {
    int64_t offset = 0;
    for (int32_t id : ids) {
      const int64_t m = in_val(gr, id).dim(ax);
      gr.impl().accum(id, ops::slice(gout, ax, offset, offset + m));
      offset += m;
    }
  };
  return push(g, std::move(n));
}

Var slice(Var x, int axis, int64_t begin, int64_t end) {
  Node n;
  n.value = ops::slice(x.val(), axis, begin, end);
  n.inputs = {x.id};
  const int ax = axis < 0 ? axis + x.val().rank() : axis;
  n.vjp = [ix = x.id, ax, begin, end](Graph& gr, const Tensor& gout) {
    const Tensor& xv = in_val(gr, ix);
    // Scatter the slice gradient back into a zero tensor.
    Tensor gx = Tensor::zeros(xv.shape(), xv.dtype());
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < ax; ++i) outer *= xv.dim(i);
    for (int i = ax + 1; i < xv.rank(); ++i) inner *= xv.dim(i);
    const int64_t n_full = xv.dim(ax), m = end - begin;
    dispatch(xv.dtype(), [&](auto tag) {
      using T = decltype(tag);
      const T* pg = gout.data<T>();
      T* po = gx.data<T>();
      for (int64_t o = 0; o < outer; ++o)
        std::copy(pg + o * m * inner, pg + (o + 1) * m * inner, po + (o * n_full + begin) * inner);
    });
    gr.impl().accum(ix, gx);
  };
  return push(*x.g, std::move(n));
}

Var reshape(Var x, Shape shape) {
  Node n;
  n.value = ops::reshape(x.val(), shape);
  n.inputs = {x.id};
  n.vjp = [ix = x.id](Graph& gr, const Tensor& gout) {
    gr.impl().accum(ix, ops::reshape(gout, in_val(gr, ix).shape()));
  };
  return push(*x.g, std::move(n));
}

Var transpose(Var x, const std::vector<int>& perm) {
  Node n;
  n.value = ops::transpose(x.val(), perm);
  n.inputs = {x.id};
  std::vector<int> inv(perm.size());
  for (size_t i = 0; i < perm.size(); ++i) inv[static_cast<size_t>(perm[i])] = static_cast<int>(i);
  n.vjp = [ix = x.id, inv](Graph& gr, const Tensor& gout) { gr.impl().accum(ix, ops::transpose(gout, inv)); };
  return push(*x.g, std::move(n));
}

Var transpose2d(Var x) { return transpose(x, {1, 0}); }

Var tile(Var x, const std::vector<int64_t>& reps) {
  Node n;
  n.value = ops::tile(x.val(), reps);
  n.inputs = {x.id};
  n.vjp = [ix = x.id](Graph& gr, const Tensor& gout) {
    const Tensor& xv = in_val(gr, ix);
    Tensor gx = Tensor::zeros(xv.shape(), xv.dtype());
    const int rank = xv.rank();
    std::vector<int64_t> in_strides(static_cast<size_t>(rank), 1);
    for (int i = rank - 2; i >= 0; --i) in_strides[static_cast<size_t>(i)] = in_strides[static_cast<size_t>(i + 1)] * xv.dim(i + 1);
    std::vector<int64_t> idx(static_cast<size_t>(rank), 0);
    dispatch(xv.dtype(), [&](auto tag) {
      using T = decltype(tag);
      const T* pg = gout.data<T>();
      T* po = gx.data<T>();
      for (int64_t flat = 0; flat < gout.numel(); ++flat) {
        int64_t src = 0;
        for (int i = 0; i < rank; ++i) src += (idx[static_cast<size_t>(i)] % xv.dim(i)) * in_strides[static_cast<size_t>(i)];
        po[src] += pg[flat];
        for (int i = rank - 1; i >= 0; --i) {
          if (++idx[static_cast<size_t>(i)] < gout.dim(i)) break;
          idx[static_cast<size_t>(i)] = 0;
        }
      }
    });
    gr.impl().accum(ix, gx);
  };
  return push(*x.g, std::move(n));
}

Var sum_axis(Var x, int axis) {
  Node n;
  n.value = ops::sum_axis(x.val(), axis);
  n.inputs = {x.id};
  const int ax = axis < 0 ? axis + x.val().rank() : axis;
  n.vjp = [ix = x.id, ax](Graph& gr, const Tensor& gout) {
    const Tensor& xv = in_val(gr, ix);
    std::vector<int64_t> reps(static_cast<size_t>(xv.rank()), 1);
    reps[static_cast<size_t>(ax)] = xv.dim(ax);
    gr.impl().accum(ix, ops::tile(gout, reps));
  };
  return push(*x.g, std::move(n));
}

Var mean_axis(Var x, int axis) {
  const int ax = axis < 0 ? axis + x.val().rank() : axis;
  return scale(sum_axis(x, ax), 1.0 / static_cast<double>(x.val().dim(ax)));
}

Var sum_all(Var x) {
  Node n;
  n.value = ops::sum_all(x.val());
  n.inputs = {x.id};
  n.vjp = [ix = x.id](Graph& gr, const Tensor& gout) {
    const Tensor& xv = in_val(gr, ix);
    gr.impl().accum(ix, Tensor::full(xv.shape(), gout.get(0), xv.dtype()));
  };
  return push(*x.g, std::move(n));
}

Var mean_all(Var x) { return scale(sum_all(x), 1.0 / static_cast<double>(x.val().numel())); }

Var detach(Var x) {
  return x.g->leaf(x.val());
}

// ---------------------------------------------------------------- composites

Var linear(Var x, Var w) { return matmul(x, w); }

Var add_bias(Var x, Var b) {
  const Tensor& xv = x.val();
  const int rank = xv.rank();
  check(b.val().rank() == 1 && b.val().dim(0) == xv.dim(rank - 1),
        "add_bias: bias extent must match last axis of " + shape_str(xv.shape()));
  Shape view(static_cast<size_t>(rank), 1);
  view[static_cast<size_t>(rank - 1)] = b.val().dim(0);
  std::vector<int64_t> reps(xv.shape().begin(), xv.shape().end());
  reps[static_cast<size_t>(rank - 1)] = 1;
  return add(x, tile(reshape(b, view), reps));
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  const int rank = x.val().rank();
  const int64_t c = x.val().dim(rank - 1);
  check(gain.val().numel() == c && bias.val().numel() == c, "layer_norm: gain/bias must have last-axis extent");
  Var m = mean_axis(x, rank - 1);
  std::vector<int64_t> reps(static_cast<size_t>(rank), 1);
  reps[static_cast<size_t>(rank - 1)] = c;
  Var centered = sub(x, tile(m, reps));
  Var var = mean_axis(mul(centered, centered), rank - 1);
  Var inv = pow_scalar(add_scalar(var, eps), -0.5);
  Var normed = mul(centered, tile(inv, reps));
  Shape view(static_cast<size_t>(rank), 1);
  view[static_cast<size_t>(rank - 1)] = c;
  std::vector<int64_t> breps(x.val().shape().begin(), x.val().shape().end());
  breps[static_cast<size_t>(rank - 1)] = 1;
  return add(mul(normed, tile(reshape(gain, view), breps)), tile(reshape(bias, view), breps));
}

Var group_norm(Var x, int groups, double eps, Var gain, Var bias) {
  const Tensor& xv = x.val();
  check(xv.rank() == 4, "group_norm: input must be [T,H,W,C]");
  const int64_t T_ = xv.dim(0), H = xv.dim(1), W = xv.dim(2), C = xv.dim(3);
  check(C % groups == 0, "group_norm: channels " + std::to_string(C) + " not divisible by groups " +
                             std::to_string(groups));
  const int64_t cg = C / groups;
  // [T,H,W,C] -> [T, HWcg-per-group stats]: reshape to [T, H*W, G, cg] then
  // normalize over (H*W, cg) per (t, g).
  Var r = reshape(x, {T_, H * W, groups, cg});
  Var m = mean_axis(mean_axis(r, 1), 3);                       // [T,1,G,1]
  Var mt = tile(m, {1, H * W, 1, cg});
  Var centered = sub(r, mt);
  Var var = mean_axis(mean_axis(mul(centered, centered), 1), 3);  // [T,1,G,1]
  Var inv = pow_scalar(add_scalar(var, eps), -0.5);
  Var normed = mul(centered, tile(inv, {1, H * W, 1, cg}));
  Var out = reshape(normed, {T_, H, W, C});
  Var gview = reshape(gain, {1, 1, 1, C});
  Var bview = reshape(bias, {1, 1, 1, C});
  return add(mul(out, tile(gview, {T_, H, W, 1})), tile(bview, {T_, H, W, 1}));
}

// ----------------------------------------------------------------- gradcheck

GradCheckReport grad_check(const std::function<Var(Graph&, const ParamStore&)>& loss_fn, const ParamStore& params,
                           double step, int64_t max_entries_per_param) {
  GradMap analytic;
  {
    Graph g;
    Var loss = loss_fn(g, params);
    check(loss.val().numel() == 1, "grad_check: loss must be scalar");
    check(loss.val().all_finite(), "grad_check: non-finite loss at the checkpoint");
    analytic = g.backward(loss);
  }
  GradCheckReport report;
  for (const auto& name : params.names()) {
    if (!params.trainable(name)) continue;
    const Tensor& p = params.value(name);
    const int64_t n = p.numel();
    int64_t stride = 1, count = n;
    if (max_entries_per_param > 0 && n > max_entries_per_param) {
      stride = n / max_entries_per_param;
      count = max_entries_per_param;
    }
    const Tensor* ga = analytic.count(name) ? &analytic.at(name) : nullptr;
    std::vector<double> errs(static_cast<size_t>(count), 0.0);
    parallel_for(count, [&](int64_t j) {
      const int64_t i = j * stride;
      ParamStore local;  // fresh copy per probe
      for (const auto& nm : params.names()) local.add(nm, params.value(nm), params.trainable(nm));
      Tensor& t = local.mutable_value(name);
      const double orig = t.get(i);
      t.set(i, orig + step);
      double lp, lm;
      {
        Graph g;
        lp = loss_fn(g, local).val().item();
      }
      t.set(i, orig - step);
      {
        Graph g;
        lm = loss_fn(g, local).val().item();
      }
      const double numeric = (lp - lm) / (2.0 * step);
      const double a = ga ? ga->get(i) : 0.0;
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
      errs[static_cast<size_t>(j)] = std::abs(a - numeric) / denom;
    });
    GradCheckReport::Entry e;
    e.name = name;
    e.checked = count;
    for (double v : errs) e.max_rel_err = std::max(e.max_rel_err, v);
    if (e.max_rel_err > report.worst) {
      report.worst = e.max_rel_err;
      report.worst_param = name;
    }
    report.entries.push_back(std::move(e));
  }
  return report;
}

// ---------------------------------------------------------------- optimizers

void sgd_step(ParamStore& params, const GradMap& grads, double lr, double weight_decay) {
  for (const auto& name : params.names()) {
    if (!params.trainable(name)) continue;
    Tensor& p = params.mutable_value(name);
    auto it = grads.find(name);
    if (it != grads.end())
      check(it->second.shape() == p.shape(), "sgd_step: grad shape mismatch for " + name + ": " +
                                                 shape_str(it->second.shape()) + " vs " + shape_str(p.shape()));
    for (int64_t i = 0; i < p.numel(); ++i) {
      const double g = (it != grads.end() ? it->second.get(i) : 0.0) + weight_decay * p.get(i);
      p.set(i, p.get(i) - lr * g);
    }
  }
}

void AdamW::step(ParamStore& params, const GradMap& grads) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (const auto& name : params.names()) {
    if (!params.trainable(name)) continue;
    Tensor& p = params.mutable_value(name);
    auto git = grads.find(name);
    if (git != grads.end())
      check(git->second.shape() == p.shape(), "adamw_step: grad shape mismatch for " + name + ": " +
                                                  shape_str(git->second.shape()) + " vs " + shape_str(p.shape()));
    auto& mv = state_[name];
    if (!mv.first.defined()) {
      mv.first = Tensor::zeros(p.shape(), p.dtype());
      mv.second = Tensor::zeros(p.shape(), p.dtype());
    }
    Tensor& m = mv.first;
    Tensor& v = mv.second;
    for (int64_t i = 0; i < p.numel(); ++i) {
      const double g = git != grads.end() ? git->second.get(i) : 0.0;
      const double mi = cfg_.beta1 * m.get(i) + (1.0 - cfg_.beta1) * g;
      const double vi = cfg_.beta2 * v.get(i) + (1.0 - cfg_.beta2) * g * g;
      m.set(i, mi);
      v.set(i, vi);
      const double mhat = mi / bc1;
      const double vhat = vi / bc2;
      // Decoupled weight decay.
      p.set(i, p.get(i) - cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * p.get(i)));
    }
  }
}

}  // namespace medvt::ad
