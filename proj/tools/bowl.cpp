// bowl: open-world learning runs, ablations, OoD histograms and datasets.

#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "bowl/commands.hpp"
#include "bowl/config.hpp"
#include "bowl/error.hpp"

using namespace bowl;

namespace {

struct ConfigArgs {
  std::string path;
  std::vector<std::string> overrides;
  std::string output;

  void attach(CLI::App* cmd, bool required) {
    auto* opt = cmd->add_option("-c,--config", path, "run configuration file");
    if (required) opt->required();
    cmd->add_option("-s,--set", overrides, "override a key: section.key=value (repeatable)");
    cmd->add_option("-o,--output", output, "output directory (beats BOWL_OUTPUT_DIR and run.output_dir)");
  }

  config::RunConfig load() const {
    auto cfg = config::load(path, overrides);
    if (const char* env = std::getenv("BOWL_OUTPUT_DIR"); env && *env) cfg.output_dir = env;
    if (!output.empty()) cfg.output_dir = output;
    return cfg;
  }
};

stream::CorruptionSpec parse_corruption_arg(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw ConfigError("corruption must be type:severity, e.g. gaussian:0.5");
  try {
    return {stream::parse_corruption(text.substr(0, colon)), std::stod(text.substr(colon + 1))};
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(fmt::format("bad corruption '{}': {}", text, e.what()));
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"BOWL: open-world learning from batch-norm statistics"};
  app.require_subcommand(1);

  ConfigArgs run_args, ablate_args, hist_config;
  auto* run = app.add_subcommand("run", "run one variant and write its report, summary and checkpoint");
  run_args.attach(run, true);

  auto* ablate = app.add_subcommand("ablate", "run the configured variants over the configured seeds");
  ablate_args.attach(ablate, true);

  cli::OodHistOptions hist;
  std::string hist_ckpt, hist_form;
  std::size_t hist_batch = 0;
  auto* ood_hist = app.add_subcommand("ood-hist", "score in/out datasets with a checkpoint and export histograms");
  hist_config.attach(ood_hist, false);
  ood_hist->add_option("--checkpoint", hist_ckpt, "model checkpoint (default: <output>/model.bnt)");
  ood_hist->add_option("--in", hist.in_set, "in-distribution dataset")->required();
  ood_hist->add_option("--out", hist.out_set, "out-of-distribution dataset")->required();
  ood_hist->add_option("--batch", hist_batch, "samples per scored batch (default: stream.ood_batch_size or 8)");
  ood_hist->add_option("--score", hist_form, "eta1 | log_odds");

  cli::GenDataOptions gen;
  std::string gen_from, gen_corrupt;
  auto* gen_data = app.add_subcommand("gen-data", "write a synthetic (or corrupted) dataset file");
  gen_data->add_option("--classes", gen.spec.n_classes, "number of classes")->capture_default_str();
  gen_data->add_option("--dims", gen.spec.dims, "feature width")->capture_default_str();
  gen_data->add_option("--separation", gen.spec.separation, "distance between class means")->capture_default_str();
  gen_data->add_option("--stddev", gen.spec.stddev, "within-class std")->capture_default_str();
  gen_data->add_option("--samples", gen.spec.n_samples, "number of samples")->capture_default_str();
  gen_data->add_option("--seed", gen.spec.seed, "seed")->capture_default_str();
  gen_data->add_option("--axis-offset", gen.spec.axis_offset, "first axis used by class means")->capture_default_str();
  gen_data->add_option("--label-offset", gen.spec.label_offset, "added to every label")->capture_default_str();
  gen_data->add_option("--from", gen_from, "corrupt this dataset instead of generating one");
  gen_data->add_option("--corrupt", gen_corrupt, "type:severity with type gaussian | shot | impulse");
  gen_data->add_option("-o,--output", gen.output, "output file")->required();

  std::string eval_ckpt, eval_data;
  auto* eval = app.add_subcommand("eval", "accuracy of a checkpoint on a dataset");
  eval->add_option("--checkpoint", eval_ckpt, "model checkpoint")->required();
  eval->add_option("--data", eval_data, "dataset file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return cli::kExitConfigError;
  }

  try {
    if (*run) return cli::cmd_run(run_args.load(), std::cout);
    if (*ablate) return cli::cmd_ablate(ablate_args.load(), std::cout);
    if (*ood_hist) {
      std::size_t batch = 8;
      ood::ScoreForm form = ood::ScoreForm::eta1;
      std::filesystem::path out_dir = ".";
      if (!hist_config.path.empty()) {
        const auto cfg = hist_config.load();
        batch = cfg.stream.ood_batch_size;
        form = cfg.loop.threshold.form;
        out_dir = cfg.output_dir;
      } else if (const char* env = std::getenv("BOWL_OUTPUT_DIR"); env && *env) {
        out_dir = env;
      }
      if (!hist_config.output.empty()) out_dir = hist_config.output;
      if (hist_batch) batch = hist_batch;
      if (hist_form == "log_odds") form = ood::ScoreForm::log_odds;
      else if (!hist_form.empty() && hist_form != "eta1") throw ConfigError("--score must be eta1 or log_odds");
      hist.batch_size = batch;
      hist.form = form;
      hist.output_dir = out_dir;
      hist.checkpoint = hist_ckpt.empty() ? out_dir / "model.bnt" : std::filesystem::path(hist_ckpt);
      return cli::cmd_ood_hist(hist, std::cout);
    }
    if (*gen_data) {
      if (!gen_from.empty()) gen.from = gen_from;
      if (!gen_corrupt.empty()) gen.corruption = parse_corruption_arg(gen_corrupt);
      return cli::cmd_gen_data(gen, std::cout);
    }
    if (*eval) return cli::cmd_eval(eval_ckpt, eval_data, std::cout);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return cli::kExitConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return cli::kExitRunFailure;
  }
  return cli::kExitConfigError;
}
