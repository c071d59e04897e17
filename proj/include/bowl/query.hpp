#pragma once

// Active acquisition: activation-spread entropy, pool similarity and the
// combined query score.

#include <cstdint>
#include <span>
#include <unordered_set>
#include <vector>

#include "bowl/nn.hpp"
#include "bowl/stream.hpp"

namespace bowl::query {

// OoD-accepted samples awaiting a query. Labels are held back until the
// oracle is asked through take().
class CandidatePool {
 public:
  struct Entry {
    std::vector<float> input;
    std::uint64_t id = 0;
    std::size_t accepted_at = 0;
    stream::Origin origin = stream::Origin::clean;
  };

  void add(const stream::Sample& sample, std::size_t timestep);
  void add(const std::vector<stream::Sample>& samples, std::size_t timestep);

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::vector<Entry>& entries() const { return entries_; }

  // Oracle call: removes the entries at `positions` and returns them
  // labelled, in the order given.
  std::vector<stream::Sample> take(std::span<const std::size_t> positions);

  // Distinct labels currently in the pool. Used only to size the output head;
  // does not count as an oracle call.
  std::vector<std::uint32_t> label_metadata() const;

  std::uint64_t oracle_calls() const { return oracle_calls_; }

 private:
  std::vector<Entry> entries_;
  std::vector<std::uint32_t> labels_;
  std::unordered_set<std::uint64_t> ids_;
  std::uint64_t oracle_calls_ = 0;
};

struct QueryScore {
  double sigma_sq = 0;  // mean squared post-BN activation
  double alpha = 0;     // Gaussian entropy of sigma_sq
  double beta = 0;      // mean cosine similarity to the rest of the pool
  double gamma = 0;     // alpha * beta
};

// sigma^2 = mean over BN layers of (mean over channels of (mean over spatial
// positions of a^2)), a being post-affine activations.
double activation_spread(const nn::ActivationTrace& trace, std::size_t sample);

// 0.5 * (1 + ln(2 pi sigma^2)); -inf at sigma^2 = 0.
double entropy_term(double sigma_sq);

// Entropy term of every input under the current network (eval mode).
std::vector<double> activation_entropies(const nn::Network<float>& net,
                                         const std::vector<std::span<const float>>& inputs,
                                         std::size_t eval_batch = 256);

// For each row q: mean over i != q of cos(x_i, x_q). Rows are processed
// chunk_size at a time so intermediate storage is chunk_size x n. A single
// row yields 0. Throws DegenerateInputError on a zero-norm row.
std::vector<double> mean_cosine_similarity(const std::vector<std::span<const float>>& rows,
                                           std::size_t chunk_size = 128);

double pool_similarity(const CandidatePool& pool, std::size_t q, std::size_t chunk_size = 128);

struct QueryOptions {
  std::size_t chunk_size = 128;
  std::size_t eval_batch = 256;
};

std::vector<QueryScore> query_scores(const nn::Network<float>& net, const CandidatePool& pool,
                                     const QueryOptions& options = {});

struct Selection {
  std::vector<stream::Sample> queried;  // labelled, by descending gamma
  std::vector<QueryScore> scores;       // aligned with queried
};

// Queries the min(B, |pool|) highest-gamma entries (ties: lower id first).
Selection select_top(CandidatePool& pool, const std::vector<QueryScore>& scores, std::size_t budget);

// Uniform-random query of min(size, |pool|) entries.
Selection select_random(CandidatePool& pool, std::size_t size, Rng& rng);

std::vector<std::span<const float>> pool_rows(const CandidatePool& pool);

}  // namespace bowl::query
