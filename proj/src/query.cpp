#include "bowl/query.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <set>

#include "bowl/error.hpp"

namespace bowl::query {

void CandidatePool::add(const stream::Sample& sample, std::size_t timestep) {
  if (!ids_.insert(sample.id).second)
    throw std::invalid_argument("sample id " + std::to_string(sample.id) + " already in the pool");
  entries_.push_back({sample.features, sample.id, timestep, sample.origin});
  labels_.push_back(sample.label);
}

void CandidatePool::add(const std::vector<stream::Sample>& samples, std::size_t timestep) {
  for (const auto& s : samples) add(s, timestep);
}

std::vector<stream::Sample> CandidatePool::take(std::span<const std::size_t> positions) {
  std::vector<bool> taken(entries_.size(), false);
  std::vector<stream::Sample> out;
  out.reserve(positions.size());
  for (auto p : positions) {
    if (p >= entries_.size() || taken[p]) throw std::out_of_range("invalid pool position");
    taken[p] = true;
    const auto& e = entries_[p];
    out.push_back({e.input, labels_[p], e.id, e.origin});
  }
  oracle_calls_ += positions.size();

  std::vector<Entry> kept;
  std::vector<std::uint32_t> kept_labels;
  kept.reserve(entries_.size() - positions.size());
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (taken[i]) {
      ids_.erase(entries_[i].id);
      continue;
    }
    kept.push_back(std::move(entries_[i]));
    kept_labels.push_back(labels_[i]);
  }
  entries_ = std::move(kept);
  labels_ = std::move(kept_labels);
  return out;
}

std::vector<std::uint32_t> CandidatePool::label_metadata() const {
  std::set<std::uint32_t> s(labels_.begin(), labels_.end());
  return {s.begin(), s.end()};
}

double activation_spread(const nn::ActivationTrace& trace, std::size_t sample) {
  if (trace.layers.empty()) throw DegenerateInputError("activation trace has no batch norm layers");
  double total = 0;
  for (const auto& layer : trace.layers) {
    const auto row = layer.post_affine.row(sample);
    double layer_sum = 0;
    for (std::size_t c = 0; c < layer.channels; ++c) {
      double channel_sum = 0;
      for (std::size_t p = 0; p < layer.spatial; ++p) {
        const double a = row[c * layer.spatial + p];
        channel_sum += a * a;
      }
      layer_sum += channel_sum / static_cast<double>(layer.spatial);
    }
    total += layer_sum / static_cast<double>(layer.channels);
  }
  return total / static_cast<double>(trace.layers.size());
}

double entropy_term(double sigma_sq) {
  if (sigma_sq < 0) throw std::invalid_argument("activation spread must be non-negative");
  if (sigma_sq == 0) return -std::numeric_limits<double>::infinity();
  return 0.5 * (1.0 + std::log(2.0 * std::numbers::pi * sigma_sq));
}

std::vector<double> activation_entropies(const nn::Network<float>& net,
                                         const std::vector<std::span<const float>>& inputs,
                                         std::size_t eval_batch) {
  std::vector<double> out;
  out.reserve(inputs.size());
  const std::size_t dim = net.input_dim();
  for (std::size_t start = 0; start < inputs.size(); start += eval_batch) {
    const std::size_t end = std::min(inputs.size(), start + eval_batch);
    std::vector<float> values;
    values.reserve((end - start) * dim);
    for (std::size_t i = start; i < end; ++i) {
      if (inputs[i].size() != dim) throw ShapeError("input width does not match the network");
      values.insert(values.end(), inputs[i].begin(), inputs[i].end());
    }
    auto fwd = net.infer(Tensor({end - start, dim}, std::move(values)), true);
    for (std::size_t i = 0; i < end - start; ++i)
      out.push_back(entropy_term(activation_spread(*fwd.trace, i)));
  }
  return out;
}

std::vector<double> mean_cosine_similarity(const std::vector<std::span<const float>>& rows,
                                           std::size_t chunk_size) {
  if (chunk_size == 0) throw std::invalid_argument("chunk size must be positive");
  const std::size_t n = rows.size();
  std::vector<double> out(n, 0.0);
  if (n < 2) return out;
  const std::size_t dim = rows.front().size();

  // Unit-normalized copy, resident for the whole computation.
  std::vector<double> unit(n * dim);
  for (std::size_t i = 0; i < n; ++i) {
    if (rows[i].size() != dim) throw ShapeError("rows differ in dimensionality");
    double norm = 0;
    for (float v : rows[i]) norm += double(v) * double(v);
    norm = std::sqrt(norm);
    if (norm == 0) throw DegenerateInputError("zero-norm input in cosine similarity");
    for (std::size_t d = 0; d < dim; ++d) unit[i * dim + d] = rows[i][d] / norm;
  }

  std::vector<double> block;
  for (std::size_t r0 = 0; r0 < n; r0 += chunk_size) {
    const std::size_t r1 = std::min(n, r0 + chunk_size);
    block.assign((r1 - r0) * n, 0.0);
    for (std::size_t q = r0; q < r1; ++q) {
      const double* uq = &unit[q * dim];
      double* out_row = &block[(q - r0) * n];
      for (std::size_t i = 0; i < n; ++i) {
        const double* ui = &unit[i * dim];
        double dot = 0;
        for (std::size_t d = 0; d < dim; ++d) dot += uq[d] * ui[d];
        out_row[i] = dot;
      }
    }
    for (std::size_t q = r0; q < r1; ++q) {
      const double* sims = &block[(q - r0) * n];
      double sum = 0;
      for (std::size_t i = 0; i < n; ++i)
        if (i != q) sum += sims[i];
      out[q] = std::clamp(sum / static_cast<double>(n - 1), -1.0, 1.0);
    }
  }
  return out;
}

std::vector<std::span<const float>> pool_rows(const CandidatePool& pool) {
  std::vector<std::span<const float>> rows;
  rows.reserve(pool.size());
  for (const auto& e : pool.entries()) rows.emplace_back(e.input);
  return rows;
}

double pool_similarity(const CandidatePool& pool, std::size_t q, std::size_t chunk_size) {
  if (q >= pool.size()) throw std::out_of_range("pool index out of range");
  return mean_cosine_similarity(pool_rows(pool), chunk_size)[q];
}

std::vector<QueryScore> query_scores(const nn::Network<float>& net, const CandidatePool& pool,
                                     const QueryOptions& options) {
  if (pool.empty()) throw DegenerateInputError("cannot score an empty pool");
  const auto rows = pool_rows(pool);
  const std::size_t dim = net.input_dim();
  std::vector<QueryScore> scores(pool.size());
  for (std::size_t start = 0; start < rows.size(); start += options.eval_batch) {
    const std::size_t end = std::min(rows.size(), start + options.eval_batch);
    std::vector<float> values;
    values.reserve((end - start) * dim);
    for (std::size_t i = start; i < end; ++i) values.insert(values.end(), rows[i].begin(), rows[i].end());
    auto fwd = net.infer(Tensor({end - start, dim}, std::move(values)), true);
    for (std::size_t i = start; i < end; ++i) {
      scores[i].sigma_sq = activation_spread(*fwd.trace, i - start);
      scores[i].alpha = entropy_term(scores[i].sigma_sq);
    }
  }
  const auto beta = mean_cosine_similarity(rows, options.chunk_size);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    scores[i].beta = beta[i];
    // A degenerate spread (alpha = -inf) is never selected, whatever beta is.
    scores[i].gamma = std::isinf(scores[i].alpha) ? scores[i].alpha : scores[i].alpha * beta[i];
  }
  return scores;
}

Selection select_top(CandidatePool& pool, const std::vector<QueryScore>& scores, std::size_t budget) {
  if (budget == 0) throw std::invalid_argument("query budget must be at least 1");
  if (pool.empty()) throw DegenerateInputError("cannot query an empty pool");
  if (scores.size() != pool.size()) throw std::invalid_argument("scores do not cover the pool");
  std::vector<std::size_t> order(pool.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const auto& entries = pool.entries();
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a].gamma != scores[b].gamma) return scores[a].gamma > scores[b].gamma;
    return entries[a].id < entries[b].id;
  });
  order.resize(std::min(budget, order.size()));
  Selection sel;
  for (auto p : order) sel.scores.push_back(scores[p]);
  sel.queried = pool.take(order);
  return sel;
}

Selection select_random(CandidatePool& pool, std::size_t size, Rng& rng) {
  if (size == 0) throw std::invalid_argument("query budget must be at least 1");
  if (pool.empty()) throw DegenerateInputError("cannot query an empty pool");
  auto order = shuffled_indices(pool.size(), rng);
  order.resize(std::min(size, order.size()));
  Selection sel;
  sel.scores.resize(order.size());
  sel.queried = pool.take(order);
  return sel;
}

}  // namespace bowl::query
