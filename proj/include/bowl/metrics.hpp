#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace bowl::metrics {

// Mean of per-timestep accuracies.
double average_accuracy(std::span<const double> accuracies);

// Distinct sample ids in an insertion log of (id, timestep).
std::size_t count_odp(std::span<const std::pair<std::uint64_t, std::size_t>> insert_log);

// Mann-Whitney estimate of P(out scores higher than in), ties count one
// half. With higher_is_outlier = false the scores are negated.
double auroc(std::span<const double> in_scores, std::span<const double> out_scores,
             bool higher_is_outlier = true);

enum class Aggregation { raw, ema };

struct MetricSeries {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
  Aggregation kind = Aggregation::raw;

  // x must be strictly increasing.
  void add(double x_value, double y_value);
  std::size_t size() const { return x.size(); }
};

// y'_k = decay y_k + (1 - decay) y'_{k-1}, y'_0 = y_0.
MetricSeries ema(const MetricSeries& series, double decay = 0.1);

// Columns (series, x, y).
void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricSeries>& series);

}  // namespace bowl::metrics
