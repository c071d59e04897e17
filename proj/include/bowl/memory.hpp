#pragma once

// Fixed-capacity replay buffer ranked by memory score.

#include <cstdint>
#include <filesystem>
#include <map>
#include <unordered_set>
#include <vector>

#include "bowl/nn.hpp"
#include "bowl/stream.hpp"

namespace bowl::memory {

struct MemoryEntry {
  std::vector<float> input;
  std::uint32_t label = 0;
  double cached_entropy = 0;  // entropy term at insertion time
  std::size_t inserted_at = 0;
  std::uint64_t id = 0;
  stream::Origin origin = stream::Origin::clean;
};

class MemoryBuffer {
 public:
  explicit MemoryBuffer(std::size_t capacity);

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::vector<MemoryEntry>& entries() const { return entries_; }

  // Throws when full, on a duplicate id or a non-finite entropy.
  void insert(MemoryEntry entry);

  // Overwrites the entry at `position`; same checks as insert.
  void replace(std::size_t position, MemoryEntry entry);

  bool contains(std::uint64_t id) const;

 private:
  std::size_t capacity_;
  std::vector<MemoryEntry> entries_;
  std::unordered_set<std::uint64_t> ids_;
};

// Uniform sample without replacement of min(capacity, |samples|) items.
// Entropies come from `net` in eval mode.
MemoryBuffer init_buffer(const std::vector<stream::Sample>& samples, std::size_t capacity,
                         std::uint64_t seed, const nn::Network<float>& net, std::size_t timestep = 0);

// Scores over S = buffer entries (in order) followed by queried samples.
struct MemoryScores {
  std::vector<double> gamma;
  std::vector<double> entropy;
};

// gamma(s) = H(s) * (1 - mean cosine of s to S \ {s}). Existing entries use
// their cached entropy; queried samples are scored with `net`.
MemoryScores memory_scores(const MemoryBuffer& buffer, const std::vector<stream::Sample>& queried,
                           const nn::Network<float>& net, std::size_t chunk_size = 128);

// Same, with entropies supplied directly.
std::vector<double> memory_gamma(const std::vector<std::span<const float>>& inputs,
                                 std::span<const double> entropy, std::size_t chunk_size = 128);

struct UpdateResult {
  MemoryBuffer buffer;
  std::size_t n_new_inserted = 0;
  std::vector<std::uint64_t> inserted_ids;
};

// Keeps the top-capacity members of S by gamma, ties by lower id. Candidates
// with a non-finite entropy are never kept.
UpdateResult update_buffer(const MemoryBuffer& buffer, const std::vector<stream::Sample>& queried,
                           const MemoryScores& scores, std::size_t timestep);

// label -> count
std::map<std::uint32_t, std::size_t> composition(const MemoryBuffer& buffer);

struct CompositionRow {
  std::size_t timestep = 0;
  std::uint32_t class_id = 0;
  std::size_t count = 0;
};

std::vector<CompositionRow> composition_rows(const MemoryBuffer& buffer, std::size_t timestep);
void write_composition_csv(const std::filesystem::path& path, const std::vector<CompositionRow>& rows);

std::vector<std::span<const float>> buffer_rows(const MemoryBuffer& buffer);

}  // namespace bowl::memory
