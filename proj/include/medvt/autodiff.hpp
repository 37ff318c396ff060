#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "medvt/ops.hpp"
#include "medvt/tensor.hpp"

namespace medvt::ad {

class Graph;

// Handle to a node in a Graph's tape.
struct Var {
  Graph* g = nullptr;
  int32_t id = -1;
  bool defined() const { return g != nullptr; }
  const Tensor& val() const;
  const Shape& shape() const;
  int64_t dim(int i) const;
};

// name -> (value, trainable). Names are unique and iteration order is the
// insertion order, which keeps initialization and checkpoints stable.
class ParamStore {
 public:
  void add(const std::string& name, Tensor value, bool trainable = true);
  bool has(const std::string& name) const;
  const Tensor& value(const std::string& name) const;
  Tensor& mutable_value(const std::string& name);
  bool trainable(const std::string& name) const;
  void set_trainable(const std::string& name, bool t);
  void set_trainable_prefix(const std::string& prefix, bool t);
  const std::vector<std::string>& names() const { return order_; }
  size_t size() const { return order_.size(); }
  int64_t total_elements() const;

  // Checkpoint: directory of MVT1 files plus manifest.json listing
  // (name, dtype, shape, trainable, file).
  void save(const std::string& dir) const;
  static ParamStore load(const std::string& dir);

 private:
  struct Entry {
    Tensor value;
    bool trainable = true;
  };
  std::vector<std::string> order_;
  std::unordered_map<std::string, Entry> map_;
};

using GradMap = std::unordered_map<std::string, Tensor>;

// Reverse-mode tape. Nodes are appended in topological order during the
// forward pass; backward walks the tape once in reverse. Single-threaded
// during construction and backward; distinct graphs may live on distinct
// threads.
class Graph {
 public:
  Graph();
  ~Graph();
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var leaf(Tensor v);                // constant, no gradient
  Var input(Tensor v);               // differentiable anonymous leaf
  Var param(const ParamStore& ps, const std::string& name);  // cached by name

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const;
  size_t num_nodes() const;

  // Gradients of a scalar loss for every trainable named param reached by
  // the tape. Non-trainable params are absent from the result.
  GradMap backward(Var loss);
  // Post-backward accumulated gradient of any differentiable node.
  Tensor grad_of(Var v) const;

  struct Impl;
  Impl& impl() { return *impl_; }
  const Impl& impl() const { return *impl_; }

 private:
  std::unique_ptr<Impl> impl_;
};

// --- differentiable op set ---
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var scale(Var x, double c);
Var add_scalar(Var x, double c);
Var pow_scalar(Var x, double p);
Var relu(Var x);
Var exp(Var x);
Var log(Var x);
Var sqrt(Var x);
Var neg(Var x);
Var matmul(Var a, Var b);
Var softmax(Var x, int axis);
Var log_softmax(Var x, int axis);
Var conv2d(Var x, Var k, int stride = 1, ops::Pad pad = ops::Pad::same);
Var conv3d(Var x, Var k, int stride = 1, ops::Pad pad = ops::Pad::same);
Var bilinear_upsample(Var x, int64_t h2, int64_t w2);
Var concat(const std::vector<Var>& xs, int axis);
Var slice(Var x, int axis, int64_t begin, int64_t end);
Var reshape(Var x, Shape shape);
Var transpose(Var x, const std::vector<int>& perm);
Var transpose2d(Var x);
Var tile(Var x, const std::vector<int64_t>& reps);
Var sum_axis(Var x, int axis);
Var mean_axis(Var x, int axis);
Var sum_all(Var x);
Var mean_all(Var x);
Var detach(Var x);

// Composites (built from the primitives above, no dedicated backward).
Var linear(Var x, Var w);                       // matmul alias for readability
Var add_bias(Var x, Var b);                     // b has the last-axis extent
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);  // over last axis
Var group_norm(Var x, int groups, double eps, Var gain, Var bias);  // x [T,H,W,C]

// --- gradient checking ---
struct GradCheckReport {
  struct Entry {
    std::string name;
    double max_rel_err = 0;
    int64_t checked = 0;
  };
  std::vector<Entry> entries;
  double worst = 0;
  std::string worst_param;
  bool pass(double tol) const { return worst < tol; }
};

// Central finite differences against the tape gradients. `loss_fn` must
// build a scalar from the given graph and params. max_entries_per_param = 0
// checks every entry; otherwise a deterministic strided subset.
GradCheckReport grad_check(const std::function<Var(Graph&, const ParamStore&)>& loss_fn, const ParamStore& params,
                           double step = 1e-5, int64_t max_entries_per_param = 0);

// --- optimizers ---
void sgd_step(ParamStore& params, const GradMap& grads, double lr, double weight_decay = 0.0);

struct AdamWConfig {
  double lr = 1e-4;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}
  AdamWConfig& config() { return cfg_; }
  // Trainable params with no gradient entry are treated as zero-gradient
  // (weight decay still applies); frozen params are untouched.
  void step(ParamStore& params, const GradMap& grads);
  int64_t steps_taken() const { return t_; }

 private:
  AdamWConfig cfg_;
  int64_t t_ = 0;
  std::unordered_map<std::string, std::pair<Tensor, Tensor>> state_;  // m, v
};

}  // namespace medvt::ad
