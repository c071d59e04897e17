#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "bowl/random.hpp"
#include "bowl/tensor.hpp"

namespace bowl::stream {

enum class Origin : std::uint8_t { clean, corrupted, foreign };

// One stream element. Foreign samples are the sentinel-marked outliers: they
// never count towards accuracy, but the oracle still answers with `label`
// when one is queried.
struct Sample {
  std::vector<float> features;
  std::uint32_t label = 0;
  std::uint64_t id = 0;
  Origin origin = Origin::clean;

  bool is_sentinel() const { return origin == Origin::foreign; }
};

using Batch = std::vector<Sample>;
using Stream = std::vector<Batch>;

struct Dataset {
  Tensor inputs;  // [N, features] or [N, C, H, W]
  std::vector<std::uint32_t> labels;
  std::vector<std::string> class_names;

  std::size_t size() const { return labels.size(); }
  std::size_t feature_dim() const { return inputs.cols(); }
  // Sorted distinct labels.
  std::vector<std::uint32_t> classes() const;
  Sample sample(std::size_t i, std::uint64_t id_offset = 0) const;
  std::vector<Sample> samples(std::uint64_t id_offset = 0) const;
  Dataset subset_of_classes(std::span<const std::uint32_t> keep) const;
  void validate() const;
};

struct TaskSchedule {
  std::vector<std::vector<std::uint32_t>> timesteps;
  bool disjoint = true;

  void validate() const;
  // Classes of timesteps 0..t.
  std::vector<std::uint32_t> seen_through(std::size_t t) const;
};

// Emits each timestep's samples, shuffled under `seed`, in batches of
// `batch_size` (the last batch may be short). Sample ids are dataset indices.
std::vector<Stream> make_split_tasks(const Dataset& dataset, const TaskSchedule& schedule,
                                     std::size_t batch_size, std::uint64_t seed);

enum class CorruptionType { gaussian, shot, impulse };

CorruptionType parse_corruption(const std::string& name);
std::string to_string(CorruptionType type);

// Shot noise photon scale: lambda = kShotPhotons / severity.
inline constexpr double kShotPhotons = 60.0;

// gaussian: x + N(0, severity^2); shot: Poisson(x * lambda) / lambda;
// impulse: each entry set to 0 or 1 with probability severity / 2 each.
// Results are clamped to [0, 1]; shape is preserved.
void corrupt_in_place(std::span<float> values, CorruptionType type, double severity, Rng& rng);
Tensor corrupt(const Tensor& inputs, CorruptionType type, double severity, std::uint64_t seed);

struct CorruptionSpec {
  CorruptionType type = CorruptionType::gaussian;
  double severity = 0.5;
};

struct MixSpec {
  double corrupted_fraction = 0;
  std::vector<CorruptionSpec> corruptions{{CorruptionType::gaussian, 0.5}};
  double ood_fraction = 0;
};

// Interleaves injected batches into a task stream. Every emitted slot is
// independently clean / corrupted / foreign with probabilities
// (1 - fc - fo, fc, fo) until the task batches are exhausted, so all task
// batches appear in order and injected batches come on top. Corrupted batches
// are corrupted copies of random task samples; foreign batches are drawn from
// `foreign` and answered by the oracle with a random class of the task.
// Fresh ids are taken from `next_id`.
Stream mix_streams(const Stream& task_stream, const MixSpec& mix, const Dataset* foreign,
                   std::span<const std::uint32_t> task_classes, std::uint64_t seed,
                   std::uint64_t& next_id);

struct SynthSpec {
  std::size_t n_classes = 2;
  std::size_t dims = 2;
  double separation = 0.3;  // distance between class means
  double stddev = 0.05;     // within-class, per coordinate
  std::size_t n_samples = 1000;
  std::uint64_t seed = 0;
  // Class k sits on axis (k + axis_offset); a foreign dataset uses offset
  // axes so its means are disjoint from the in-distribution ones.
  std::size_t axis_offset = 0;
  std::uint32_t label_offset = 0;
};

// Gaussian blobs with means on a scaled simplex around 0.5.
// Labels are assigned round-robin.
Dataset synth_generate(const SynthSpec& spec);

void save_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

// Batches `samples` in order.
Stream batch_samples(const std::vector<Sample>& samples, std::size_t batch_size);

// Stacks sample features into [N, features].
Tensor stack_features(const Batch& batch);

}  // namespace bowl::stream
