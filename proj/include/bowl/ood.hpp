#pragma once

// Batch-level outlier scoring from batch-norm statistics and the bootstrap
// acceptance threshold.

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "bowl/memory.hpp"
#include "bowl/nn.hpp"
#include "bowl/stream.hpp"

namespace bowl::ood {

// Sum of squared standardized BN values per sample, over all BN layers.
std::vector<double> eta0_per_sample(const nn::ActivationTrace& trace);

// eta0 - d ln eta0; +inf at eta0 = 0.
double eta1_from_eta0(double eta0, std::size_t d);

// Which monotone form of the score to threshold on. `log_odds` is
// 0.5 eta0 - (d / 2) ln eta0.
enum class ScoreForm { eta1, log_odds };

double score_from_eta0(double eta0, std::size_t d, ScoreForm form);

struct OodScore {
  double eta0 = 0;   // batch mean
  double eta1 = 0;
  std::size_t d = 0;
  double value = 0;  // the configured form
};

OodScore batch_ood_score(const nn::Network<float>& net, const Tensor& batch,
                         ScoreForm form = ScoreForm::eta1);

struct ThresholdConfig {
  std::size_t k_bootstrap = 100;
  std::size_t bootstrap_size = 8;
  double alpha = 0.99;
  ScoreForm form = ScoreForm::eta1;

  void validate() const;
};

// sorted[ceil(alpha * K) - 1]; for K = 100, alpha = 0.99 the 2nd largest.
double empirical_quantile(std::vector<double> scores, double alpha);

// Scores of K bootstrap sets drawn with replacement from `inputs`.
std::vector<double> bootstrap_scores(const nn::Network<float>& net,
                                     const std::vector<std::span<const float>>& inputs,
                                     const ThresholdConfig& cfg, Rng& rng);

double bootstrap_threshold(const nn::Network<float>& net, const memory::MemoryBuffer& buffer,
                           const ThresholdConfig& cfg, Rng& rng);

struct FilterResult {
  std::vector<stream::Sample> accepted;  // in stream order
  std::size_t accepted_batches = 0;
  std::size_t rejected_batches = 0;
  std::size_t rejected_samples = 0;
  std::vector<double> batch_scores;
  std::vector<bool> batch_accepted;
};

// A batch is accepted iff its score is below tau.
FilterResult filter_stream(const nn::Network<float>& net, const stream::Stream& batches, double tau,
                           ScoreForm form = ScoreForm::eta1);

// Batch mean of -sum p ln p over softmax(logits).
double predictive_entropy(const Tensor& logits);

struct ScoreRow {
  std::string source;  // "in" or "out"
  double value = 0;
};

// CSV with columns (source, <value_column>).
void write_score_csv(const std::filesystem::path& path, const std::vector<ScoreRow>& rows,
                     const std::string& value_column = "eta1");

}  // namespace bowl::ood
