#pragma once

// Minimal feed-forward network with dense, batch-norm and ReLU layers.
//
// Everything is templated on the scalar type: float is the production
// instantiation, double exists for finite-difference gradient checks.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "bowl/bnt_format.hpp"
#include "bowl/random.hpp"
#include "bowl/tensor.hpp"

namespace bowl::nn {

enum class Mode { train, eval };

template <typename T>
struct Dense {
  Dense() = default;
  Dense(std::size_t in_features, std::size_t out_features, Rng& rng);

  std::size_t in_features() const { return weight.dims()[1]; }
  std::size_t out_features() const { return weight.dims()[0]; }

  BasicTensor<T> forward(const BasicTensor<T>& x) const;
  // Accumulates parameter gradients and returns dL/dx.
  BasicTensor<T> backward(const BasicTensor<T>& x, const BasicTensor<T>& dy);

  // Appends output rows initialized like a fresh layer; existing rows are
  // untouched.
  void add_outputs(std::size_t n, Rng& rng);

  BasicTensor<T> weight;  // [out, in]
  BasicTensor<T> bias;    // [out]
  BasicTensor<T> grad_weight;
  BasicTensor<T> grad_bias;
};

template <typename T>
struct BatchNorm {
  // State retained from the last training forward for backward().
  struct Cache {
    BasicTensor<T> standardized;   // z, [N, C]
    std::vector<T> inv_std;        // per channel
    bool used_batch_stats = true;  // false when normalized with running stats
  };

  BatchNorm() = default;
  explicit BatchNorm(std::size_t channels, T eps = T(1e-5), T momentum = T(0.1));

  std::size_t channels() const { return gamma.size(); }

  // Train mode normalizes with batch statistics and updates the running
  // statistics: running <- (1 - momentum) * running + momentum * batch.
  // Eval mode normalizes with running statistics and leaves state untouched.
  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode,
                         BasicTensor<T>* standardized_out = nullptr);

  // Eval-mode forward; never mutates.
  BasicTensor<T> forward_eval(const BasicTensor<T>& x,
                              BasicTensor<T>* standardized_out = nullptr) const;

  // Training forward that keeps what backward() needs. Batches of a single
  // sample are normalized with the running statistics (batch variance is
  // undefined) and do not update them.
  BasicTensor<T> forward_train(const BasicTensor<T>& x, Cache& cache);

  BasicTensor<T> backward(const Cache& cache, const BasicTensor<T>& dy);

  T eps = T(1e-5);
  T momentum = T(0.1);
  BasicTensor<T> gamma;
  BasicTensor<T> beta;
  BasicTensor<T> running_mean;
  BasicTensor<T> running_var;
  BasicTensor<T> grad_gamma;
  BasicTensor<T> grad_beta;
};

struct Relu {};

template <typename T>
using Layer = std::variant<Dense<T>, BatchNorm<T>, Relu>;

// Per-BN-layer activations of one forward pass, indexed [sample, channel *
// spatial + position].
template <typename T>
struct BnActivations {
  std::size_t channels = 0;
  std::size_t spatial = 1;
  BasicTensor<T> standardized;  // z = (x - mu_BN) / sqrt(var_BN + eps)
  BasicTensor<T> post_affine;   // a = gamma * z + beta
};

template <typename T>
struct ActivationTraceT {
  std::vector<BnActivations<T>> layers;

  std::size_t samples() const {
    return layers.empty() ? 0 : layers.front().standardized.rows();
  }
  // Scalar entries per sample summed over all BN layers.
  std::size_t total_dim() const {
    std::size_t d = 0;
    for (const auto& l : layers) d += l.channels * l.spatial;
    return d;
  }
};

using ActivationTrace = ActivationTraceT<float>;

template <typename T>
struct ForwardResult {
  BasicTensor<T> logits;
  std::optional<ActivationTraceT<T>> trace;
};

template <typename T>
struct ParamView {
  std::string name;
  std::span<T> value;
  std::span<T> grad;
};

struct MlpSpec {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden;  // each hidden width gets Dense -> BN -> ReLU
  std::size_t n_classes = 0;
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;
};

template <typename T>
class Network {
 public:
  Network() = default;
  // Validates dimension compatibility and the presence of at least one BN
  // layer.
  Network(std::vector<Layer<T>> body, Dense<T> head);

  static Network mlp(const MlpSpec& spec, Rng& rng);

  void set_mode(Mode m) { mode_ = m; }
  Mode mode() const { return mode_; }

  std::size_t input_dim() const;
  std::size_t n_classes() const { return head_.out_features(); }
  std::size_t bn_layer_count() const;

  // Runs in the current mode. In train mode BN running statistics are
  // updated and intermediate values are cached for backward.
  ForwardResult<T> forward(const BasicTensor<T>& x, bool capture = false);

  // Eval-mode forward on an immutable network; safe to call concurrently.
  ForwardResult<T> infer(const BasicTensor<T>& x, bool capture = false) const;

  // Train-mode forward + backward of mean softmax cross-entropy. Gradients
  // are overwritten, not accumulated. Returns the loss.
  double loss_and_gradients(const BasicTensor<T>& x, std::span<const std::uint32_t> labels);

  std::vector<ParamView<T>> parameters();

  // Parameters and running statistics by stable name, for checkpoints.
  std::vector<bnt::NamedTensor> to_named_tensors() const;
  static Network from_named_tensors(const std::vector<bnt::NamedTensor>& tensors);

  void expand_head(std::size_t n_new_classes, Rng& rng);

  const std::vector<Layer<T>>& body() const { return body_; }
  std::vector<Layer<T>>& body() { return body_; }
  const Dense<T>& head() const { return head_; }
  Dense<T>& head() { return head_; }

  template <typename U>
  Network<U> cast() const;

 private:
  ForwardResult<T> run(const BasicTensor<T>& x, bool capture);

  std::vector<Layer<T>> body_;
  Dense<T> head_;
  Mode mode_ = Mode::train;

  // Training caches, valid after a train-mode forward.
  std::vector<BasicTensor<T>> inputs_;
  std::vector<typename BatchNorm<T>::Cache> bn_caches_;
  BasicTensor<T> head_input_;
};

// Mean softmax cross-entropy, accumulated in double. Optionally writes
// dL/dlogits.
template <typename T>
double softmax_cross_entropy(const BasicTensor<T>& logits,
                             std::span<const std::uint32_t> labels,
                             BasicTensor<T>* grad = nullptr);

// Row-wise softmax in double.
std::vector<double> softmax_row(std::span<const float> logits);

template <typename T>
class SgdOptimizer {
 public:
  SgdOptimizer(double learning_rate, double momentum, double weight_decay);

  // g <- grad + wd * w;  v <- momentum * v + g;  w <- w - lr * v.
  // Velocity buffers follow parameter growth (head expansion) with zeros.
  void step(Network<T>& net);

  double learning_rate() const { return lr_; }
  double momentum() const { return momentum_; }
  double weight_decay() const { return weight_decay_; }
  std::uint64_t steps() const { return steps_; }

 private:
  double lr_;
  double momentum_;
  double weight_decay_;
  std::vector<std::vector<T>> velocity_;
  std::uint64_t steps_ = 0;
};

// One gradient step on a labelled batch. The network must be in train mode.
// Returns the loss before the step; throws NumericError on a non-finite loss.
template <typename T>
double backward_and_step(Network<T>& net, const BasicTensor<T>& x,
                         std::span<const std::uint32_t> labels, SgdOptimizer<T>& opt);

extern template struct Dense<float>;
extern template struct Dense<double>;
extern template struct BatchNorm<float>;
extern template struct BatchNorm<double>;
extern template class Network<float>;
extern template class Network<double>;
extern template class SgdOptimizer<float>;
extern template class SgdOptimizer<double>;

}  // namespace bowl::nn
