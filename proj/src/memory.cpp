#include "bowl/memory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

#include <fmt/format.h>

#include "bowl/error.hpp"
#include "bowl/io.hpp"
#include "bowl/query.hpp"

namespace bowl::memory {

MemoryBuffer::MemoryBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw std::invalid_argument("buffer capacity must be positive");
}

void MemoryBuffer::insert(MemoryEntry entry) {
  if (entries_.size() >= capacity_) throw std::length_error("memory buffer is full");
  if (!std::isfinite(entry.cached_entropy)) throw NumericError("buffer entry has a non-finite entropy");
  if (!ids_.insert(entry.id).second)
    throw std::invalid_argument(fmt::format("id {} already in the buffer", entry.id));
  entries_.push_back(std::move(entry));
}

void MemoryBuffer::replace(std::size_t position, MemoryEntry entry) {
  if (position >= entries_.size()) throw std::out_of_range("buffer position out of range");
  if (!std::isfinite(entry.cached_entropy)) throw NumericError("buffer entry has a non-finite entropy");
  if (entry.id != entries_[position].id && ids_.count(entry.id))
    throw std::invalid_argument(fmt::format("id {} already in the buffer", entry.id));
  ids_.erase(entries_[position].id);
  ids_.insert(entry.id);
  entries_[position] = std::move(entry);
}

bool MemoryBuffer::contains(std::uint64_t id) const {
  return ids_.count(id) > 0;
}

std::vector<std::span<const float>> buffer_rows(const MemoryBuffer& buffer) {
  std::vector<std::span<const float>> rows;
  rows.reserve(buffer.size());
  for (const auto& e : buffer.entries()) rows.emplace_back(e.input);
  return rows;
}

MemoryBuffer init_buffer(const std::vector<stream::Sample>& samples, std::size_t capacity,
                         std::uint64_t seed, const nn::Network<float>& net, std::size_t timestep) {
  if (samples.empty()) throw DegenerateInputError("cannot initialize a buffer from an empty dataset");
  Rng rng = make_rng(seed, "buffer");
  auto order = shuffled_indices(samples.size(), rng);
  order.resize(std::min(capacity, samples.size()));

  std::vector<std::span<const float>> rows;
  for (auto i : order) rows.emplace_back(samples[i].features);
  const auto entropy = query::activation_entropies(net, rows);

  MemoryBuffer buffer(capacity);
  for (std::size_t k = 0; k < order.size(); ++k) {
    const auto& s = samples[order[k]];
    buffer.insert({s.features, s.label, entropy[k], timestep, s.id, s.origin});
  }
  return buffer;
}

std::vector<double> memory_gamma(const std::vector<std::span<const float>>& inputs,
                                 std::span<const double> entropy, std::size_t chunk_size) {
  if (inputs.empty()) throw DegenerateInputError("memory score candidate set is empty");
  if (entropy.size() != inputs.size()) throw std::invalid_argument("entropies do not cover the candidates");
  const auto cos = query::mean_cosine_similarity(inputs, chunk_size);
  std::vector<double> gamma(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i)
    gamma[i] = std::isfinite(entropy[i]) ? entropy[i] * (1.0 - cos[i])
                                         : -std::numeric_limits<double>::infinity();
  return gamma;
}

MemoryScores memory_scores(const MemoryBuffer& buffer, const std::vector<stream::Sample>& queried,
                           const nn::Network<float>& net, std::size_t chunk_size) {
  auto rows = buffer_rows(buffer);
  MemoryScores out;
  out.entropy.reserve(buffer.size() + queried.size());
  for (const auto& e : buffer.entries()) out.entropy.push_back(e.cached_entropy);

  std::vector<std::span<const float>> fresh;
  for (const auto& s : queried) fresh.emplace_back(s.features);
  if (!fresh.empty()) {
    const auto h = query::activation_entropies(net, fresh);
    out.entropy.insert(out.entropy.end(), h.begin(), h.end());
  }
  rows.insert(rows.end(), fresh.begin(), fresh.end());
  out.gamma = memory_gamma(rows, out.entropy, chunk_size);
  return out;
}

UpdateResult update_buffer(const MemoryBuffer& buffer, const std::vector<stream::Sample>& queried,
                           const MemoryScores& scores, std::size_t timestep) {
  if (queried.empty()) return {buffer, 0, {}};
  const std::size_t n_old = buffer.size();
  const std::size_t n = n_old + queried.size();
  if (scores.gamma.size() != n || scores.entropy.size() != n)
    throw std::invalid_argument("memory scores do not cover buffer and queried samples");

  auto id_of = [&](std::size_t i) { return i < n_old ? buffer.entries()[i].id : queried[i - n_old].id; };

  // A queried sample already in the buffer competes only through its
  // existing entry.
  std::unordered_set<std::uint64_t> seen;
  std::vector<std::size_t> order;
  order.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!seen.insert(id_of(i)).second) continue;
    if (!std::isfinite(scores.entropy[i]) || std::isnan(scores.gamma[i])) continue;
    order.push_back(i);
  }
  const std::size_t keep = std::min(buffer.capacity(), order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (scores.gamma[a] != scores.gamma[b]) return scores.gamma[a] > scores.gamma[b];
                      return id_of(a) < id_of(b);
                    });
  order.resize(keep);

  UpdateResult result{MemoryBuffer(buffer.capacity()), 0, {}};
  for (auto i : order) {
    if (i < n_old) {
      result.buffer.insert(buffer.entries()[i]);
    } else {
      const auto& s = queried[i - n_old];
      result.buffer.insert({s.features, s.label, scores.entropy[i], timestep, s.id, s.origin});
      ++result.n_new_inserted;
      result.inserted_ids.push_back(s.id);
    }
  }
  return result;
}

std::map<std::uint32_t, std::size_t> composition(const MemoryBuffer& buffer) {
  std::map<std::uint32_t, std::size_t> out;
  for (const auto& e : buffer.entries()) ++out[e.label];
  return out;
}

std::vector<CompositionRow> composition_rows(const MemoryBuffer& buffer, std::size_t timestep) {
  std::vector<CompositionRow> rows;
  for (const auto& [label, count] : composition(buffer)) rows.push_back({timestep, label, count});
  return rows;
}

void write_composition_csv(const std::filesystem::path& path, const std::vector<CompositionRow>& rows) {
  std::string out = "timestep,class_id,count\n";
  for (const auto& r : rows) out += fmt::format("{},{},{}\n", r.timestep, r.class_id, r.count);
  io::write_file_atomic(path, out);
}

}  // namespace bowl::memory
