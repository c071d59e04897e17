#include "bowl/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <type_traits>

#include "bowl/error.hpp"

namespace bowl::nn {
namespace {

template <typename T>
void require_matrix(const BasicTensor<T>& x, std::size_t cols, const char* where) {
  if (x.rank() < 2 || x.cols() != cols)
    throw ShapeError(std::string(where) + ": expected " + std::to_string(cols) +
                     " features per sample, got " + dims_to_string(x.dims()));
}

template <typename T>
void init_uniform(std::span<T> w, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : w) v = static_cast<T>(dist(rng));
}

std::vector<std::uint32_t> u32_dims(const std::vector<std::size_t>& dims) {
  return {dims.begin(), dims.end()};
}

template <typename T>
bnt::NamedTensor named(const std::string& name, const BasicTensor<T>& t) {
  return bnt::make_f32(name, u32_dims(t.dims()),
                       std::vector<float>(t.storage().begin(), t.storage().end()));
}

template <typename T>
BasicTensor<T> tensor_from(const bnt::NamedTensor& nt) {
  const auto& v = nt.f32();
  return BasicTensor<T>(std::vector<std::size_t>(nt.dims.begin(), nt.dims.end()),
                        std::vector<T>(v.begin(), v.end()));
}

}  // namespace

// ---------------------------------------------------------------- Dense

template <typename T>
Dense<T>::Dense(std::size_t in_features, std::size_t out_features, Rng& rng)
    : weight({out_features, in_features}),
      bias({out_features}),
      grad_weight({out_features, in_features}),
      grad_bias({out_features}) {
  if (in_features == 0 || out_features == 0) throw ShapeError("dense layer with zero width");
  init_uniform(weight.data(), in_features, rng);
}

template <typename T>
BasicTensor<T> Dense<T>::forward(const BasicTensor<T>& x) const {
  const std::size_t in = in_features(), out = out_features(), n = x.rows();
  require_matrix(x, in, "dense forward");
  BasicTensor<T> y({n, out});
  for (std::size_t s = 0; s < n; ++s) {
    const T* xr = &x[s * in];
    for (std::size_t o = 0; o < out; ++o) {
      const T* wr = &weight[o * in];
      T acc = bias[o];
      for (std::size_t i = 0; i < in; ++i) acc += wr[i] * xr[i];
      y[s * out + o] = acc;
    }
  }
  return y;
}

template <typename T>
BasicTensor<T> Dense<T>::backward(const BasicTensor<T>& x, const BasicTensor<T>& dy) {
  const std::size_t in = in_features(), out = out_features(), n = x.rows();
  BasicTensor<T> dx({n, in});
  for (std::size_t s = 0; s < n; ++s) {
    const T* xr = &x[s * in];
    T* dxr = &dx[s * in];
    for (std::size_t o = 0; o < out; ++o) {
      const T g = dy[s * out + o];
      if (g == T(0)) continue;
      grad_bias[o] += g;
      T* gw = &grad_weight[o * in];
      const T* wr = &weight[o * in];
      for (std::size_t i = 0; i < in; ++i) {
        gw[i] += g * xr[i];
        dxr[i] += g * wr[i];
      }
    }
  }
  return dx;
}

template <typename T>
void Dense<T>::add_outputs(std::size_t n, Rng& rng) {
  const std::size_t in = in_features(), out = out_features();
  std::vector<T> w = weight.storage();
  w.resize((out + n) * in);
  init_uniform(std::span<T>(w).subspan(out * in), in, rng);
  std::vector<T> b = bias.storage();
  b.resize(out + n, T(0));
  weight = BasicTensor<T>({out + n, in}, std::move(w));
  bias = BasicTensor<T>({out + n}, std::move(b));
  grad_weight = BasicTensor<T>({out + n, in});
  grad_bias = BasicTensor<T>({out + n});
}

// ------------------------------------------------------------ BatchNorm

template <typename T>
BatchNorm<T>::BatchNorm(std::size_t channels, T eps_, T momentum_)
    : eps(eps_),
      momentum(momentum_),
      gamma({channels}, T(1)),
      beta({channels}, T(0)),
      running_mean({channels}, T(0)),
      running_var({channels}, T(1)),
      grad_gamma({channels}),
      grad_beta({channels}) {
  if (channels == 0) throw ShapeError("batch norm with zero channels");
  if (!(eps > T(0))) throw std::invalid_argument("batch norm eps must be positive");
  if (!(momentum > T(0) && momentum <= T(1)))
    throw std::invalid_argument("batch norm momentum must be in (0, 1]");
}

template <typename T>
BasicTensor<T> BatchNorm<T>::forward(const BasicTensor<T>& x, Mode mode,
                                     BasicTensor<T>* standardized_out) {
  if (mode == Mode::eval) return forward_eval(x, standardized_out);
  require_matrix(x, channels(), "batch norm forward");
  if (x.rows() < 2) throw ShapeError("batch norm in train mode needs a batch of at least 2");
  Cache cache;
  auto y = forward_train(x, cache);
  if (standardized_out) *standardized_out = std::move(cache.standardized);
  return y;
}

template <typename T>
BasicTensor<T> BatchNorm<T>::forward_eval(const BasicTensor<T>& x,
                                          BasicTensor<T>* standardized_out) const {
  const std::size_t c = channels(), n = x.rows();
  require_matrix(x, c, "batch norm forward");
  BasicTensor<T> y({n, c});
  BasicTensor<T> z;
  if (standardized_out) z = BasicTensor<T>({n, c});
  for (std::size_t ch = 0; ch < c; ++ch) {
    const T inv = T(1) / std::sqrt(running_var[ch] + eps);
    for (std::size_t s = 0; s < n; ++s) {
      const T zv = (x[s * c + ch] - running_mean[ch]) * inv;
      if (standardized_out) z[s * c + ch] = zv;
      y[s * c + ch] = gamma[ch] * zv + beta[ch];
    }
  }
  if (standardized_out) *standardized_out = std::move(z);
  return y;
}

template <typename T>
BasicTensor<T> BatchNorm<T>::forward_train(const BasicTensor<T>& x, Cache& cache) {
  const std::size_t c = channels(), n = x.rows();
  require_matrix(x, c, "batch norm forward");
  if (n == 0) throw ShapeError("batch norm forward on an empty batch");
  cache.standardized = BasicTensor<T>({n, c});
  cache.inv_std.assign(c, T(0));
  cache.used_batch_stats = n >= 2;
  BasicTensor<T> y({n, c});
  for (std::size_t ch = 0; ch < c; ++ch) {
    T mean, var;
    if (cache.used_batch_stats) {
      double sum = 0;
      for (std::size_t s = 0; s < n; ++s) sum += x[s * c + ch];
      const double m = sum / static_cast<double>(n);
      double sq = 0;
      for (std::size_t s = 0; s < n; ++s) {
        const double d = x[s * c + ch] - m;
        sq += d * d;
      }
      mean = static_cast<T>(m);
      var = static_cast<T>(sq / static_cast<double>(n));
      // Running variance tracks the unbiased estimate.
      const double unbiased = sq / static_cast<double>(n - 1);
      running_mean[ch] = static_cast<T>((1.0 - momentum) * running_mean[ch] + momentum * m);
      running_var[ch] = static_cast<T>((1.0 - momentum) * running_var[ch] + momentum * unbiased);
    } else {
      mean = running_mean[ch];
      var = running_var[ch];
    }
    const T inv = T(1) / std::sqrt(var + eps);
    cache.inv_std[ch] = inv;
    for (std::size_t s = 0; s < n; ++s) {
      const T zv = (x[s * c + ch] - mean) * inv;
      cache.standardized[s * c + ch] = zv;
      y[s * c + ch] = gamma[ch] * zv + beta[ch];
    }
  }
  return y;
}

template <typename T>
BasicTensor<T> BatchNorm<T>::backward(const Cache& cache, const BasicTensor<T>& dy) {
  const std::size_t c = channels(), n = dy.rows();
  BasicTensor<T> dx({n, c});
  for (std::size_t ch = 0; ch < c; ++ch) {
    double sum_dy = 0, sum_dy_z = 0;
    for (std::size_t s = 0; s < n; ++s) {
      sum_dy += dy[s * c + ch];
      sum_dy_z += dy[s * c + ch] * cache.standardized[s * c + ch];
    }
    grad_beta[ch] += static_cast<T>(sum_dy);
    grad_gamma[ch] += static_cast<T>(sum_dy_z);
    const T scale = gamma[ch] * cache.inv_std[ch];
    if (!cache.used_batch_stats) {
      for (std::size_t s = 0; s < n; ++s) dx[s * c + ch] = dy[s * c + ch] * scale;
      continue;
    }
    const double mean_dy = sum_dy / static_cast<double>(n);
    const double mean_dy_z = sum_dy_z / static_cast<double>(n);
    for (std::size_t s = 0; s < n; ++s) {
      const double z = cache.standardized[s * c + ch];
      dx[s * c + ch] =
          static_cast<T>(scale * (dy[s * c + ch] - mean_dy - z * mean_dy_z));
    }
  }
  return dx;
}

// ------------------------------------------------------------- Network

template <typename T>
Network<T>::Network(std::vector<Layer<T>> body, Dense<T> head)
    : body_(std::move(body)), head_(std::move(head)) {
  std::size_t width = 0;
  bool have_width = false, have_bn = false;
  for (std::size_t i = 0; i < body_.size(); ++i) {
    std::visit(
        [&](const auto& layer) {
          using L = std::decay_t<decltype(layer)>;
          if constexpr (std::is_same_v<L, Dense<T>>) {
            if (have_width && layer.in_features() != width)
              throw ShapeError("layer " + std::to_string(i) + " expects " +
                               std::to_string(layer.in_features()) + " inputs, previous width is " +
                               std::to_string(width));
            width = layer.out_features();
            have_width = true;
          } else if constexpr (std::is_same_v<L, BatchNorm<T>>) {
            if (have_width && layer.channels() != width)
              throw ShapeError("batch norm layer " + std::to_string(i) + " has " +
                               std::to_string(layer.channels()) + " channels, previous width is " +
                               std::to_string(width));
            width = layer.channels();
            have_width = true;
            have_bn = true;
          }
        },
        body_[i]);
  }
  if (!have_bn) throw ShapeError("network needs at least one batch norm layer");
  if (head_.weight.empty()) throw ShapeError("network has no output head");
  if (have_width && head_.in_features() != width)
    throw ShapeError("head expects " + std::to_string(head_.in_features()) +
                     " inputs, body width is " + std::to_string(width));
}

template <typename T>
Network<T> Network<T>::mlp(const MlpSpec& spec, Rng& rng) {
  if (spec.input_dim == 0 || spec.n_classes == 0) throw ShapeError("mlp needs input and output widths");
  if (spec.hidden.empty()) throw ShapeError("mlp needs at least one hidden layer for batch norm");
  std::vector<Layer<T>> body;
  std::size_t width = spec.input_dim;
  for (std::size_t h : spec.hidden) {
    body.emplace_back(Dense<T>(width, h, rng));
    body.emplace_back(BatchNorm<T>(h, static_cast<T>(spec.bn_eps), static_cast<T>(spec.bn_momentum)));
    body.emplace_back(Relu{});
    width = h;
  }
  return Network(std::move(body), Dense<T>(width, spec.n_classes, rng));
}

template <typename T>
std::size_t Network<T>::input_dim() const {
  for (const auto& layer : body_) {
    if (auto* d = std::get_if<Dense<T>>(&layer)) return d->in_features();
    if (auto* b = std::get_if<BatchNorm<T>>(&layer)) return b->channels();
  }
  return head_.in_features();
}

template <typename T>
std::size_t Network<T>::bn_layer_count() const {
  return static_cast<std::size_t>(std::count_if(body_.begin(), body_.end(), [](const auto& l) {
    return std::holds_alternative<BatchNorm<T>>(l);
  }));
}

template <typename T>
ForwardResult<T> Network<T>::forward(const BasicTensor<T>& x, bool capture) {
  if (mode_ == Mode::eval) return infer(x, capture);
  return run(x, capture);
}

template <typename T>
ForwardResult<T> Network<T>::infer(const BasicTensor<T>& x, bool capture) const {
  require_matrix(x, input_dim(), "network forward");
  ForwardResult<T> result;
  if (capture) result.trace.emplace();
  BasicTensor<T> h = x.flattened();
  for (const auto& layer : body_) {
    if (const auto* d = std::get_if<Dense<T>>(&layer)) {
      h = d->forward(h);
    } else if (const auto* bn = std::get_if<BatchNorm<T>>(&layer)) {
      BasicTensor<T> z;
      h = bn->forward_eval(h, capture ? &z : nullptr);
      if (capture)
        result.trace->layers.push_back({bn->channels(), 1, std::move(z), h});
    } else {
      for (auto& v : h.storage()) v = v < T(0) ? T(0) : v;  // NaN passes through
    }
  }
  result.logits = head_.forward(h);
  return result;
}

template <typename T>
ForwardResult<T> Network<T>::run(const BasicTensor<T>& x, bool capture) {
  require_matrix(x, input_dim(), "network forward");
  ForwardResult<T> result;
  if (capture) result.trace.emplace();
  inputs_.assign(body_.size(), {});
  bn_caches_.assign(body_.size(), {});
  BasicTensor<T> h = x.flattened();
  for (std::size_t i = 0; i < body_.size(); ++i) {
    inputs_[i] = h;
    auto& layer = body_[i];
    if (auto* d = std::get_if<Dense<T>>(&layer)) {
      h = d->forward(h);
    } else if (auto* bn = std::get_if<BatchNorm<T>>(&layer)) {
      h = bn->forward_train(h, bn_caches_[i]);
      if (capture)
        result.trace->layers.push_back({bn->channels(), 1, bn_caches_[i].standardized, h});
    } else {
      for (auto& v : h.storage()) v = v < T(0) ? T(0) : v;  // NaN passes through
    }
  }
  head_input_ = h;
  result.logits = head_.forward(h);
  return result;
}

template <typename T>
double softmax_cross_entropy(const BasicTensor<T>& logits, std::span<const std::uint32_t> labels,
                             BasicTensor<T>* grad) {
  const std::size_t n = logits.rows(), c = logits.cols();
  if (labels.size() != n) throw ShapeError("label count does not match batch size");
  if (n == 0) throw ShapeError("cross-entropy on an empty batch");
  if (grad) *grad = BasicTensor<T>(logits.dims());
  double total = 0;
  std::vector<double> p(c);
  for (std::size_t s = 0; s < n; ++s) {
    if (labels[s] >= c)
      throw ShapeError("label " + std::to_string(labels[s]) + " outside head of width " +
                       std::to_string(c));
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < c; ++k) mx = std::max(mx, double(logits.at(s, k)));
    double z = 0;
    for (std::size_t k = 0; k < c; ++k) z += std::exp(double(logits.at(s, k)) - mx);
    const double log_z = std::log(z) + mx;
    total += log_z - double(logits.at(s, labels[s]));
    if (grad) {
      for (std::size_t k = 0; k < c; ++k) {
        const double pk = std::exp(double(logits.at(s, k)) - log_z);
        grad->at(s, k) = static_cast<T>((pk - (k == labels[s] ? 1.0 : 0.0)) / double(n));
      }
    }
  }
  return total / double(n);
}

std::vector<double> softmax_row(std::span<const float> logits) {
  std::vector<double> p(logits.size());
  if (logits.empty()) return p;
  double mx = -std::numeric_limits<double>::infinity();
  for (float v : logits) mx = std::max(mx, double(v));
  double z = 0;
  for (std::size_t k = 0; k < logits.size(); ++k) z += p[k] = std::exp(double(logits[k]) - mx);
  for (auto& v : p) v /= z;
  return p;
}

template <typename T>
double Network<T>::loss_and_gradients(const BasicTensor<T>& x,
                                      std::span<const std::uint32_t> labels) {
  for (auto& layer : body_) {
    if (auto* d = std::get_if<Dense<T>>(&layer)) {
      d->grad_weight.fill(T(0));
      d->grad_bias.fill(T(0));
    } else if (auto* bn = std::get_if<BatchNorm<T>>(&layer)) {
      bn->grad_gamma.fill(T(0));
      bn->grad_beta.fill(T(0));
    }
  }
  head_.grad_weight.fill(T(0));
  head_.grad_bias.fill(T(0));

  auto fwd = run(x, false);
  BasicTensor<T> g;
  const double loss = softmax_cross_entropy(fwd.logits, labels, &g);
  g = head_.backward(head_input_, g);
  for (std::size_t i = body_.size(); i-- > 0;) {
    auto& layer = body_[i];
    if (auto* d = std::get_if<Dense<T>>(&layer)) {
      g = d->backward(inputs_[i], g);
    } else if (auto* bn = std::get_if<BatchNorm<T>>(&layer)) {
      g = bn->backward(bn_caches_[i], g);
    } else {
      const auto& in = inputs_[i];
      for (std::size_t k = 0; k < g.size(); ++k)
        if (!(in[k] > T(0))) g[k] = T(0);
    }
  }
  return loss;
}

template <typename T>
std::vector<ParamView<T>> Network<T>::parameters() {
  std::vector<ParamView<T>> out;
  for (std::size_t i = 0; i < body_.size(); ++i) {
    const std::string p = "L" + std::to_string(i) + ".";
    if (auto* d = std::get_if<Dense<T>>(&body_[i])) {
      out.push_back({p + "dense.weight", d->weight.data(), d->grad_weight.data()});
      out.push_back({p + "dense.bias", d->bias.data(), d->grad_bias.data()});
    } else if (auto* bn = std::get_if<BatchNorm<T>>(&body_[i])) {
      out.push_back({p + "bn.gamma", bn->gamma.data(), bn->grad_gamma.data()});
      out.push_back({p + "bn.beta", bn->beta.data(), bn->grad_beta.data()});
    }
  }
  out.push_back({"head.weight", head_.weight.data(), head_.grad_weight.data()});
  out.push_back({"head.bias", head_.bias.data(), head_.grad_bias.data()});
  return out;
}

// Layer kinds in the "arch.kinds" tensor.
enum : std::uint32_t { kDense = 0, kBatchNorm = 1, kRelu = 2 };

template <typename T>
std::vector<bnt::NamedTensor> Network<T>::to_named_tensors() const {
  std::vector<bnt::NamedTensor> out;
  std::vector<std::uint32_t> kinds;
  for (std::size_t i = 0; i < body_.size(); ++i) {
    const std::string p = "L" + std::to_string(i) + ".";
    if (const auto* d = std::get_if<Dense<T>>(&body_[i])) {
      kinds.push_back(kDense);
      out.push_back(named(p + "dense.weight", d->weight));
      out.push_back(named(p + "dense.bias", d->bias));
    } else if (const auto* bn = std::get_if<BatchNorm<T>>(&body_[i])) {
      kinds.push_back(kBatchNorm);
      out.push_back(named(p + "bn.gamma", bn->gamma));
      out.push_back(named(p + "bn.beta", bn->beta));
      out.push_back(named(p + "bn.running_mean", bn->running_mean));
      out.push_back(named(p + "bn.running_var", bn->running_var));
      out.push_back(bnt::make_f32(p + "bn.config", {2},
                                  {static_cast<float>(bn->eps), static_cast<float>(bn->momentum)}));
    } else {
      kinds.push_back(kRelu);
    }
  }
  out.push_back(named("head.weight", head_.weight));
  out.push_back(named("head.bias", head_.bias));
  const auto n = static_cast<std::uint32_t>(kinds.size());
  out.insert(out.begin(), bnt::make_u32("arch.kinds", {n}, std::move(kinds)));
  return out;
}

template <typename T>
Network<T> Network<T>::from_named_tensors(const std::vector<bnt::NamedTensor>& tensors) {
  const auto& kinds = bnt::require(tensors, "arch.kinds").u32();
  std::vector<Layer<T>> body;
  for (std::size_t i = 0; i < kinds.size(); ++i) {
    const std::string p = "L" + std::to_string(i) + ".";
    switch (kinds[i]) {
      case kDense: {
        Dense<T> d;
        d.weight = tensor_from<T>(bnt::require(tensors, p + "dense.weight"));
        d.bias = tensor_from<T>(bnt::require(tensors, p + "dense.bias"));
        if (d.weight.rank() != 2 || d.bias.size() != d.weight.dims()[0])
          throw FormatError("inconsistent dense tensors at " + p);
        d.grad_weight = BasicTensor<T>(d.weight.dims());
        d.grad_bias = BasicTensor<T>(d.bias.dims());
        body.emplace_back(std::move(d));
        break;
      }
      case kBatchNorm: {
        const auto& cfg = bnt::require(tensors, p + "bn.config").f32();
        if (cfg.size() != 2) throw FormatError("bad bn.config at " + p);
        auto gamma = tensor_from<T>(bnt::require(tensors, p + "bn.gamma"));
        BatchNorm<T> bn(gamma.size(), static_cast<T>(cfg[0]), static_cast<T>(cfg[1]));
        bn.gamma = std::move(gamma);
        bn.beta = tensor_from<T>(bnt::require(tensors, p + "bn.beta"));
        bn.running_mean = tensor_from<T>(bnt::require(tensors, p + "bn.running_mean"));
        bn.running_var = tensor_from<T>(bnt::require(tensors, p + "bn.running_var"));
        const auto c = bn.channels();
        if (bn.beta.size() != c || bn.running_mean.size() != c || bn.running_var.size() != c)
          throw FormatError("inconsistent batch norm tensors at " + p);
        body.emplace_back(std::move(bn));
        break;
      }
      case kRelu:
        body.emplace_back(Relu{});
        break;
      default:
        throw FormatError("unknown layer kind " + std::to_string(kinds[i]));
    }
  }
  Dense<T> head;
  head.weight = tensor_from<T>(bnt::require(tensors, "head.weight"));
  head.bias = tensor_from<T>(bnt::require(tensors, "head.bias"));
  if (head.weight.rank() != 2 || head.bias.size() != head.weight.dims()[0])
    throw FormatError("inconsistent head tensors");
  head.grad_weight = BasicTensor<T>(head.weight.dims());
  head.grad_bias = BasicTensor<T>(head.bias.dims());
  Network net(std::move(body), std::move(head));
  net.set_mode(Mode::eval);
  return net;
}

template <typename T>
void Network<T>::expand_head(std::size_t n_new_classes, Rng& rng) {
  if (n_new_classes == 0) throw std::invalid_argument("expand_head needs at least one new class");
  head_.add_outputs(n_new_classes, rng);
}

template <typename T>
template <typename U>
Network<U> Network<T>::cast() const {
  auto cast_dense = [](const Dense<T>& d) {
    Dense<U> o;
    o.weight = d.weight.template cast<U>();
    o.bias = d.bias.template cast<U>();
    o.grad_weight = BasicTensor<U>(d.weight.dims());
    o.grad_bias = BasicTensor<U>(d.bias.dims());
    return o;
  };
  std::vector<Layer<U>> body;
  for (const auto& layer : body_) {
    if (const auto* d = std::get_if<Dense<T>>(&layer)) {
      body.emplace_back(cast_dense(*d));
    } else if (const auto* bn = std::get_if<BatchNorm<T>>(&layer)) {
      BatchNorm<U> o(bn->channels(), static_cast<U>(bn->eps), static_cast<U>(bn->momentum));
      o.gamma = bn->gamma.template cast<U>();
      o.beta = bn->beta.template cast<U>();
      o.running_mean = bn->running_mean.template cast<U>();
      o.running_var = bn->running_var.template cast<U>();
      body.emplace_back(std::move(o));
    } else {
      body.emplace_back(Relu{});
    }
  }
  Network<U> out(std::move(body), cast_dense(head_));
  out.set_mode(mode_);
  return out;
}

// ---------------------------------------------------------- optimizer

template <typename T>
SgdOptimizer<T>::SgdOptimizer(double learning_rate, double momentum, double weight_decay)
    : lr_(learning_rate), momentum_(momentum), weight_decay_(weight_decay) {
  if (lr_ < 0 || momentum_ < 0 || weight_decay_ < 0)
    throw std::invalid_argument("optimizer hyperparameters must be non-negative");
}

template <typename T>
void SgdOptimizer<T>::step(Network<T>& net) {
  auto params = net.parameters();
  if (velocity_.size() != params.size()) velocity_.resize(params.size());
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& vel = velocity_[p];
    auto w = params[p].value;
    auto g = params[p].grad;
    if (vel.size() != w.size()) vel.resize(w.size(), T(0));
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double grad = double(g[i]) + weight_decay_ * double(w[i]);
      const double v = momentum_ * double(vel[i]) + grad;
      vel[i] = static_cast<T>(v);
      w[i] = static_cast<T>(double(w[i]) - lr_ * v);
    }
  }
  ++steps_;
}

template <typename T>
double backward_and_step(Network<T>& net, const BasicTensor<T>& x,
                         std::span<const std::uint32_t> labels, SgdOptimizer<T>& opt) {
  if (net.mode() != Mode::train) throw std::logic_error("backward_and_step requires train mode");
  const double loss = net.loss_and_gradients(x, labels);
  if (!std::isfinite(loss)) throw NumericError("non-finite training loss");
  opt.step(net);
  return loss;
}

template struct Dense<float>;
template struct Dense<double>;
template struct BatchNorm<float>;
template struct BatchNorm<double>;
template class Network<float>;
template class Network<double>;
template class SgdOptimizer<float>;
template class SgdOptimizer<double>;
template double softmax_cross_entropy(const BasicTensor<float>&, std::span<const std::uint32_t>,
                                      BasicTensor<float>*);
template double softmax_cross_entropy(const BasicTensor<double>&, std::span<const std::uint32_t>,
                                      BasicTensor<double>*);
template double backward_and_step(Network<float>&, const BasicTensor<float>&,
                                  std::span<const std::uint32_t>, SgdOptimizer<float>&);
template double backward_and_step(Network<double>&, const BasicTensor<double>&,
                                  std::span<const std::uint32_t>, SgdOptimizer<double>&);
template Network<double> Network<float>::cast<double>() const;
template Network<float> Network<double>::cast<float>() const;

}  // namespace bowl::nn
