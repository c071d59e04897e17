#include "bowl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

#include <fmt/format.h>

#include "bowl/error.hpp"
#include "bowl/io.hpp"

namespace bowl::metrics {

double average_accuracy(std::span<const double> accuracies) {
  if (accuracies.empty()) throw DegenerateInputError("no accuracies to average");
  double sum = 0;
  for (double a : accuracies) sum += a;
  return sum / static_cast<double>(accuracies.size());
}

std::size_t count_odp(std::span<const std::pair<std::uint64_t, std::size_t>> insert_log) {
  std::unordered_set<std::uint64_t> ids;
  for (const auto& entry : insert_log) ids.insert(entry.first);
  return ids.size();
}

double auroc(std::span<const double> in_scores, std::span<const double> out_scores, bool higher_is_outlier) {
  if (in_scores.empty() || out_scores.empty()) throw DegenerateInputError("auroc needs two nonempty score sets");
  const double sign = higher_is_outlier ? 1.0 : -1.0;
  std::vector<double> in, out;
  for (double v : in_scores) in.push_back(sign * v);
  for (double v : out_scores) out.push_back(sign * v);
  for (double v : in)
    if (std::isnan(v)) throw NumericError("NaN score in auroc");
  for (double v : out)
    if (std::isnan(v)) throw NumericError("NaN score in auroc");
  std::sort(in.begin(), in.end());

  // Twice U, kept integral so the result is exact.
  std::uint64_t twice_u = 0;
  for (double o : out) {
    const auto lo = std::lower_bound(in.begin(), in.end(), o);
    const auto hi = std::upper_bound(lo, in.end(), o);
    twice_u += 2 * static_cast<std::uint64_t>(lo - in.begin()) + static_cast<std::uint64_t>(hi - lo);
  }
  return static_cast<double>(twice_u) / (2.0 * static_cast<double>(in.size()) * static_cast<double>(out.size()));
}

void MetricSeries::add(double x_value, double y_value) {
  if (!x.empty() && !(x_value > x.back()))
    throw std::invalid_argument(fmt::format("series '{}': x must be strictly increasing", name));
  x.push_back(x_value);
  y.push_back(y_value);
}

MetricSeries ema(const MetricSeries& series, double decay) {
  if (!(decay > 0 && decay <= 1)) throw std::invalid_argument("ema decay must lie in (0, 1]");
  MetricSeries out{series.name + "_ema", series.x, {}, Aggregation::ema};
  out.y.reserve(series.y.size());
  for (std::size_t k = 0; k < series.y.size(); ++k)
    out.y.push_back(k == 0 ? series.y[0] : decay * series.y[k] + (1.0 - decay) * out.y[k - 1]);
  return out;
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricSeries>& series) {
  std::string out = "series,x,y\n";
  for (const auto& s : series)
    for (std::size_t k = 0; k < s.size(); ++k) out += fmt::format("{},{},{}\n", s.name, s.x[k], s.y[k]);
  io::write_file_atomic(path, out);
}

}  // namespace bowl::metrics
