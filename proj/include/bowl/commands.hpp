#pragma once

// Subcommands behind the bowl executable. Each returns a process exit code;
// configuration problems surface as ConfigError.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include "bowl/config.hpp"
#include "bowl/engine.hpp"
#include "bowl/nn.hpp"
#include "bowl/ood.hpp"
#include "bowl/stream.hpp"
#include "bowl/training.hpp"

namespace bowl::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRunFailure = 1;
inline constexpr int kExitConfigError = 2;

struct Data {
  stream::Dataset train, test;
  std::optional<stream::Dataset> foreign;
};

// Synthetic data is drawn from the run seed; files are loaded as given.
Data load_data(const config::RunConfig& cfg);
engine::Experiment make_experiment(const config::RunConfig& cfg, const Data& data);

struct Checkpoint {
  nn::Network<float> net;
  ClassMap classes;
};

void save_checkpoint(const std::filesystem::path& path, const nn::Network<float>& net, const ClassMap& classes);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// report.csv, summary.txt, timesteps.csv, metrics.csv, buffer_composition.csv,
// model.bnt and the resolved config.ini.
void write_run_outputs(const std::filesystem::path& dir, const engine::RunReport& report,
                       const engine::RunState& state, const config::RunConfig& cfg);

int cmd_run(const config::RunConfig& cfg, std::ostream& log);

// Runs cfg.ablate_variants over cfg.seeds into <output_dir>/<variant>_seed<k>
// and writes ablation.csv and ablation_runs.csv.
int cmd_ablate(const config::RunConfig& cfg, std::ostream& log);

struct OodHistOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path in_set, out_set;
  std::filesystem::path output_dir;
  std::size_t batch_size = 8;
  ood::ScoreForm form = ood::ScoreForm::eta1;
};

// ood_eta1.csv, ood_entropy.csv and ood_summary.txt with both AUROCs.
int cmd_ood_hist(const OodHistOptions& opt, std::ostream& log);

struct GenDataOptions {
  stream::SynthSpec spec;
  // Corrupt an existing dataset instead of generating one.
  std::optional<std::filesystem::path> from;
  std::optional<stream::CorruptionSpec> corruption;
  std::filesystem::path output;
};

int cmd_gen_data(const GenDataOptions& opt, std::ostream& log);

int cmd_eval(const std::filesystem::path& checkpoint, const std::filesystem::path& data, std::ostream& log);

}  // namespace bowl::cli
