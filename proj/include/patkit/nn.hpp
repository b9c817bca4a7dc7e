#pragma once

#include <string>
#include <utility>
#include <vector>

#include "patkit/rng.hpp"
#include "patkit/tensor.hpp"

namespace patkit::nn {

// Activations live in (batch, channel, height, width) tensors; dense layers
// flatten whatever they are fed and emit (batch, features, 1, 1).
enum class Op {
  input,
  dense,
  conv3x3,       // same-size zero padding
  tconv2x2,      // transposed conv, 2x2 kernel, stride 2 upsampling
  maxpool2,
  concat,        // channel concatenation of in0 and in1
  add,           // elementwise in0 + in1
  relu,
  elu,
  leaky_relu,    // slope 0.01
  reshape,
};

struct NodeSpec {
  Op op = Op::input;
  int in0 = -1, in1 = -1;
  int in_ch = 0, out_ch = 0;     // conv / tconv
  int in_feat = 0, out_feat = 0; // dense
  bool bias = true;
  bool zero_init = false;        // start as the zero map (residual identity)
  int rc = 0, rh = 0, rw = 0;    // reshape target
  std::string name;
};

template <typename S>
struct Param {
  std::string name;
  std::vector<int> shape;
  std::vector<S> w, g, m, v;  // value, gradient slot, Adam moments

  size_t size() const { return w.size(); }
};

template <typename S>
struct ParamSet {
  std::vector<Param<S>> items;
  long step = 0;

  size_t count() const {
    size_t n = 0;
    for (const auto& p : items) n += p.size();
    return n;
  }
  void zero_grads() {
    for (auto& p : items) std::fill(p.g.begin(), p.g.end(), S(0));
  }
};

struct TrainConfig {
  double lr = 1e-4;
  int batch = 4;
  long n_steps = 5000;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double l1 = 0.0;  // optional |theta|_1 penalty weight
  uint64_t seed = 0;
};

// Adam with bias correction on every parameter that has a filled gradient slot.
template <typename S>
void adam_step(ParamSet<S>& params, const TrainConfig& cfg);

// mean squared error and its gradient 2(pred - target)/count
template <typename S>
std::pair<double, Tensor<S>> mse_loss(const Tensor<S>& pred, const Tensor<S>& target);

template <typename S>
struct Net {
  std::vector<NodeSpec> nodes;  // nodes[0] is the input
  ParamSet<S> params;
  std::vector<int> widx, bidx;  // per node indices into params.items, -1 if none

  struct Trace {
    std::vector<Tensor<S>> out;            // per node
    std::vector<std::vector<int>> argmax;  // per maxpool node
  };

  int input_node() const { return 0; }
  int output_node() const { return (int)nodes.size() - 1; }

  // Builder helpers; return the new node index.
  int add_input();
  int add(NodeSpec n);
  int conv(int in, int ic, int oc, const std::string& name, bool bias = true,
           bool zero_init = false);
  int dense(int in, int in_feat, int out_feat, const std::string& name, bool bias = true);
  int act(int in, Op kind, const std::string& name);

  void init_params(RngStream& rng);
  size_t param_count() const { return params.count(); }

  Tensor<S> forward(const Tensor<S>& x, Trace* tr) const;
  // Accumulates parameter gradients; optionally returns the input gradient
  // (needed when a net sits inside an unrolled chain).
  Tensor<S> backward(const Trace& tr, const Tensor<S>& dout, bool want_input_grad);
};

using NetF = Net<float>;
using NetD = Net<double>;

}  // namespace patkit::nn
