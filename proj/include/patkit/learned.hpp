#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "patkit/forward.hpp"
#include "patkit/nn.hpp"

namespace patkit::learned {

enum class Arch { fully_learned, postproc_unet, preproc_cnn, learned_gd, learned_pd };

std::string arch_name(Arch a);
Arch arch_from_name(const std::string& s);

struct Sample {
  TensorD g;   // n_det x n_t measurement
  Image f0;    // adjoint reconstruction A^T g
  Image f;     // ground truth
  uint64_t seed = 0;
  int family = 0;  // phantom family tag
};

struct Dataset {
  std::vector<Sample> samples;
  int m = 0, n_det = 0, n_t = 0;
  uint64_t fingerprint = 0;  // geometry that produced the data

  size_t size() const { return samples.size(); }
};

struct BuildConfig {
  int m = 64, n_det = 64, n_t = 192;
  int unroll = 5;
  uint64_t seed = 0;
  uint64_t fingerprint = 0;  // geometry binding for model-based variants
  uint64_t dense_cap_bytes = 2ull << 30;
};

// A reconstruction operator: one or more parameter blocks plus, for the
// model-based variants, a binding to the acoustic operator of the matching
// geometry. Blocks of the unrolled variants hold per-iterate parameters.
template <typename S>
struct ReconNet {
  Arch arch = Arch::postproc_unet;
  int m = 0, n_det = 0, n_t = 0;
  int unroll = 0;
  uint64_t fingerprint = 0;
  std::vector<nn::Net<S>> nets;

  const ForwardMatrix* A = nullptr;               // runtime binding, not serialized
  std::shared_ptr<std::vector<float>> gram;       // A^T A, single precision fast path

  bool model_based() const {
    return arch == Arch::learned_gd || arch == Arch::learned_pd || arch == Arch::preproc_cnn;
  }
  size_t param_count() const {
    size_t n = 0;
    for (const auto& net : nets) n += net.param_count();
    return n;
  }
  std::string descriptor() const;
};

template <typename S> ReconNet<S> build_fully_learned(const BuildConfig& cfg);
template <typename S> ReconNet<S> build_postproc_unet(const BuildConfig& cfg);
template <typename S> ReconNet<S> build_preproc_cnn(const BuildConfig& cfg);
template <typename S> ReconNet<S> build_learned_gd(const BuildConfig& cfg);
template <typename S> ReconNet<S> build_learned_pd(const BuildConfig& cfg);
template <typename S> ReconNet<S> build_arch(Arch a, const BuildConfig& cfg);

// Attaches the acoustic operator; required before evaluating or training any
// model-based variant. Refuses a mismatched geometry.
template <typename S>
void bind_operator(ReconNet<S>& net, const ForwardMatrix& A, bool want_gram = true);

// Writes each block's weights to a fixed map that turns learned-gd into plain
// gradient descent with step eta.
template <typename S>
void set_fixed_gradient_blocks(ReconNet<S>& net, double eta);

// --- evaluation ----------------------------------------------------------------

template <typename S>
struct EvalTrace {
  std::vector<typename nn::Net<S>::Trace> traces;
  std::vector<Tensor<S>> iterates;  // learned-gd: f per stage; learned-pd: f then h
  Tensor<S> input;
  Tensor<S> aux;  // b = A^T g for the unrolled variants
};

// Batched forward evaluation. The input carries g for every arch except
// postproc-unet, which consumes f0. For the unrolled variants f0 (= A^T g)
// may be supplied to skip the adjoint application; pass an empty tensor to
// have it computed through the bound operator.
template <typename S>
Tensor<S> forward_batch(const ReconNet<S>& net, const Tensor<S>& input, const Tensor<S>& f0,
                        EvalTrace<S>* tr);

// Backpropagates dout, accumulating into every block's gradient slots.
template <typename S>
void backward_batch(ReconNet<S>& net, const EvalTrace<S>& tr, const Tensor<S>& dout);

// Single-sample reconstruction from measured data (or from f0 for postproc).
template <typename S>
Image reconstruct(const ReconNet<S>& net, const SensorData& g);
template <typename S>
Image reconstruct_from_f0(const ReconNet<S>& net, const Image& f0);

// --- training --------------------------------------------------------------------

struct TrainResult {
  double final_train_loss = 0;  // objective over the train split at the final parameters
  double best_val_loss = 0;
  long best_val_step = -1;
  long steps = 0;
};

// Supervised end-to-end training with Adam; logs train loss every 10 steps and
// validation loss/psnr/ssim every 250 steps to the CSV, and returns with the
// best-validation parameters loaded.
template <typename S>
TrainResult train_supervised(ReconNet<S>& net, const Dataset& train, const Dataset& val,
                             const nn::TrainConfig& cfg, const std::string& log_csv);

// Trains learned-gd blocks one at a time against the ground truth; gradients
// never cross block boundaries. The step budget is split evenly over blocks.
template <typename S>
TrainResult train_greedy(ReconNet<S>& net, const Dataset& train, const Dataset& val,
                         const nn::TrainConfig& cfg, const std::string& log_csv);

// Mean data-term loss of the current parameters over a dataset.
template <typename S>
double evaluate_loss(const ReconNet<S>& net, const Dataset& data);

// --- checkpoints -------------------------------------------------------------------

template <typename S>
void save_checkpoint(const std::string& path, const ReconNet<S>& net);
template <typename S>
ReconNet<S> load_checkpoint(const std::string& path);
std::string checkpoint_descriptor(const std::string& path);

}  // namespace patkit::learned
