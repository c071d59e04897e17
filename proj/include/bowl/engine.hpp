#pragma once

// The open-world loop over timesteps, its ablation variants and baselines.

#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "bowl/memory.hpp"
#include "bowl/nn.hpp"
#include "bowl/ood.hpp"
#include "bowl/stream.hpp"
#include "bowl/training.hpp"

namespace bowl::engine {

enum class Variant { full, no_ood, random_query, no_cl, finetune, balanced_buffer };

Variant parse_variant(const std::string& name);
std::string to_string(Variant v);

struct LoopConfig {
  std::size_t acquisition_batch = 256;
  std::size_t buffer_capacity = 5000;
  std::size_t epochs_per_update = 1;
  std::size_t minibatch = 32;
  std::size_t pretrain_epochs = 10;
  std::size_t finetune_epochs = 0;  // 0: same as pretrain_epochs
  ood::ThresholdConfig threshold;
  double learning_rate = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::vector<std::size_t> hidden{64, 32};
  double bn_momentum = 0.1;
  bool use_ood = true;
  bool use_active_query = true;
  bool use_cl = true;
  bool eval_every_update = true;
  std::size_t similarity_chunk = 128;
  std::uint64_t seed = 0;

  void validate() const;
  // Non-fatal configuration concerns.
  std::vector<std::string> warnings() const;
};

// Switches of `base` set for one ablation variant.
LoopConfig config_for(Variant v, LoopConfig base);

// Everything a run consumes. tasks[k] is the stream of timestep k + 1;
// test[t] holds the clean test samples of timestep t's classes.
struct Experiment {
  std::vector<stream::Sample> pretrain;
  std::vector<std::uint32_t> pretrain_classes;
  std::vector<stream::Stream> tasks;
  std::vector<std::vector<stream::Sample>> test;

  std::size_t timesteps() const { return tasks.size(); }
  std::size_t stream_size() const;
  std::vector<stream::Sample> cumulative_test(std::size_t t) const;
};

Experiment build_experiment(const stream::Dataset& train, const stream::Dataset& test,
                            const stream::TaskSchedule& schedule, const stream::MixSpec& mix,
                            const stream::Dataset* foreign, std::size_t ood_batch_size, std::uint64_t seed);

struct StepRecord {
  std::size_t timestep = 0;
  std::size_t update = 0;
  std::size_t global_step = 0;
  std::size_t queried = 0;
  std::size_t n_new_inserted = 0;
  double train_loss = 0;
  double accuracy = std::numeric_limits<double>::quiet_NaN();  // NaN when not evaluated
};

struct TimestepRecord {
  std::size_t timestep = 0;
  double tau = std::numeric_limits<double>::quiet_NaN();  // NaN without OoD filtering
  std::size_t stream_batches = 0;
  std::size_t accepted_batches = 0;
  std::size_t rejected_batches = 0;
  std::size_t accepted_samples = 0;
  std::size_t rejected_samples = 0;
  std::size_t new_classes = 0;
  std::size_t head_width = 0;
  std::size_t updates = 0;
  double accuracy = 0;
};

struct RunReport {
  std::string variant;
  std::uint64_t seed = 0;
  std::vector<StepRecord> steps;
  std::vector<TimestepRecord> timesteps;
  std::vector<double> task_accuracy;  // a_t for t = 0..T
  std::size_t pretrain_steps = 0;
  std::size_t total_steps = 0;
  std::vector<std::pair<std::uint64_t, std::size_t>> insert_log;
  std::size_t stream_size = 0;
  std::vector<memory::CompositionRow> composition;  // end of every timestep
  std::uint64_t oracle_calls = 0;
  std::vector<std::string> warnings;
  bool aborted = false;
  std::string error;

  // Mean of a_t over t = 1..T.
  double average_accuracy() const;
  double final_accuracy() const;
  std::size_t odp() const;
};

struct Pretrained {
  nn::Network<float> net;
  ClassMap classes;
  nn::SgdOptimizer<float> opt{0.0, 0.0, 0.0};
  std::size_t steps = 0;
  double accuracy = 0;
};

// Supervised training on the timestep-0 data.
Pretrained pretrain(const LoopConfig& cfg, const Experiment& exp);

// State at the end of a run, for checkpoints.
struct RunState {
  nn::Network<float> net;
  ClassMap classes;
  std::optional<memory::MemoryBuffer> buffer;
};

// The loop with cfg's ablation switches.
RunReport run_bowl(const LoopConfig& cfg, const Experiment& exp, const Pretrained& start,
                   RunState* final_state = nullptr);

RunReport run_variant(Variant v, const LoopConfig& cfg, const Experiment& exp, const Pretrained& start,
                      RunState* final_state = nullptr);

// Pretrains and runs in one go.
RunReport run_variant(Variant v, const LoopConfig& cfg, const Experiment& exp, RunState* final_state = nullptr);

void write_report_csv(const std::filesystem::path& path, const RunReport& report);
std::string summary_text(const RunReport& report);
void write_summary(const std::filesystem::path& path, const RunReport& report);

}  // namespace bowl::engine
