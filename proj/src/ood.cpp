#include "bowl/ood.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "bowl/error.hpp"
#include "bowl/io.hpp"

namespace bowl::ood {

std::vector<double> eta0_per_sample(const nn::ActivationTrace& trace) {
  if (trace.layers.empty()) throw DegenerateInputError("activation trace has no batch norm layers");
  const std::size_t n = trace.samples();
  std::vector<double> out(n, 0.0);
  for (const auto& layer : trace.layers)
    for (std::size_t i = 0; i < n; ++i)
      for (float z : layer.standardized.row(i)) out[i] += double(z) * double(z);
  return out;
}

double eta1_from_eta0(double eta0, std::size_t d) {
  if (eta0 < 0 || std::isnan(eta0)) throw std::invalid_argument("eta0 must be non-negative");
  if (eta0 == 0) return std::numeric_limits<double>::infinity();
  return eta0 - static_cast<double>(d) * std::log(eta0);
}

double score_from_eta0(double eta0, std::size_t d, ScoreForm form) {
  if (form == ScoreForm::eta1) return eta1_from_eta0(eta0, d);
  if (eta0 < 0 || std::isnan(eta0)) throw std::invalid_argument("eta0 must be non-negative");
  if (eta0 == 0) return std::numeric_limits<double>::infinity();
  return 0.5 * eta0 - 0.5 * static_cast<double>(d) * std::log(eta0);
}

OodScore batch_ood_score(const nn::Network<float>& net, const Tensor& batch, ScoreForm form) {
  if (batch.rank() == 0 || batch.rows() == 0) throw DegenerateInputError("cannot score an empty batch");
  const auto fwd = net.infer(batch, true);
  const auto eta0 = eta0_per_sample(*fwd.trace);
  OodScore s;
  for (double v : eta0) s.eta0 += v;
  s.eta0 /= static_cast<double>(eta0.size());
  s.d = fwd.trace->total_dim();
  s.eta1 = eta1_from_eta0(s.eta0, s.d);
  s.value = form == ScoreForm::eta1 ? s.eta1 : score_from_eta0(s.eta0, s.d, form);
  return s;
}

void ThresholdConfig::validate() const {
  if (k_bootstrap == 0) throw std::invalid_argument("bootstrap count K must be positive");
  if (bootstrap_size == 0) throw std::invalid_argument("bootstrap set size must be positive");
  if (!(alpha > 0 && alpha < 1)) throw std::invalid_argument("quantile alpha must lie in (0, 1)");
}

double empirical_quantile(std::vector<double> scores, double alpha) {
  if (scores.empty()) throw DegenerateInputError("no scores to take a quantile of");
  if (!(alpha > 0 && alpha < 1)) throw std::invalid_argument("quantile alpha must lie in (0, 1)");
  std::sort(scores.begin(), scores.end());
  // The small slack keeps alpha * K = integer from rounding up a rank.
  auto rank = static_cast<std::size_t>(std::ceil(alpha * static_cast<double>(scores.size()) - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, scores.size());
  return scores[rank - 1];
}

std::vector<double> bootstrap_scores(const nn::Network<float>& net,
                                     const std::vector<std::span<const float>>& inputs,
                                     const ThresholdConfig& cfg, Rng& rng) {
  cfg.validate();
  if (inputs.size() < cfg.bootstrap_size)
    throw DegenerateInputError(fmt::format("buffer holds {} samples, bootstrap needs {}", inputs.size(),
                                           cfg.bootstrap_size));
  const std::size_t dim = net.input_dim();
  std::vector<double> scores;
  scores.reserve(cfg.k_bootstrap);
  for (std::size_t k = 0; k < cfg.k_bootstrap; ++k) {
    std::vector<float> values;
    values.reserve(cfg.bootstrap_size * dim);
    for (std::size_t j = 0; j < cfg.bootstrap_size; ++j) {
      const auto& row = inputs[uniform_index(inputs.size(), rng)];
      values.insert(values.end(), row.begin(), row.end());
    }
    scores.push_back(batch_ood_score(net, Tensor({cfg.bootstrap_size, dim}, std::move(values)), cfg.form).value);
  }
  return scores;
}

double bootstrap_threshold(const nn::Network<float>& net, const memory::MemoryBuffer& buffer,
                           const ThresholdConfig& cfg, Rng& rng) {
  const double tau = empirical_quantile(bootstrap_scores(net, memory::buffer_rows(buffer), cfg, rng), cfg.alpha);
  if (!std::isfinite(tau)) throw NumericError("bootstrap threshold is not finite");
  return tau;
}

FilterResult filter_stream(const nn::Network<float>& net, const stream::Stream& batches, double tau,
                           ScoreForm form) {
  if (std::isnan(tau)) throw std::invalid_argument("threshold is NaN");
  FilterResult out;
  for (const auto& batch : batches) {
    if (batch.empty()) continue;
    const double score = batch_ood_score(net, stream::stack_features(batch), form).value;
    const bool accept = score < tau;
    out.batch_scores.push_back(score);
    out.batch_accepted.push_back(accept);
    if (accept) {
      ++out.accepted_batches;
      out.accepted.insert(out.accepted.end(), batch.begin(), batch.end());
    } else {
      ++out.rejected_batches;
      out.rejected_samples += batch.size();
    }
  }
  return out;
}

double predictive_entropy(const Tensor& logits) {
  if (logits.rank() != 2 || logits.rows() == 0) throw ShapeError("logits must be a non-empty [N, C] tensor");
  double total = 0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    double h = 0;
    for (double p : nn::softmax_row(logits.row(i)))
      if (p > 0) h -= p * std::log(p);
    total += h;
  }
  return total / static_cast<double>(logits.rows());
}

void write_score_csv(const std::filesystem::path& path, const std::vector<ScoreRow>& rows,
                     const std::string& value_column) {
  std::string out = "source," + value_column + "\n";
  for (const auto& r : rows) out += fmt::format("{},{:.17g}\n", r.source, r.value);
  io::write_file_atomic(path, out);
}

}  // namespace bowl::ood
