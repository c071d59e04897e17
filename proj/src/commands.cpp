#include "bowl/commands.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <ostream>
#include <thread>

#include <fmt/format.h>
#include <fmt/ostream.h>

#include "bowl/bnt_format.hpp"
#include "bowl/error.hpp"
#include "bowl/io.hpp"
#include "bowl/metrics.hpp"
#include "bowl/random.hpp"

namespace bowl::cli {

namespace {

constexpr std::uint32_t kForeignLabelOffset = 1u << 20;

void require_file(const std::filesystem::path& path, const char* what) {
  if (path.empty()) throw ConfigError(fmt::format("no {} path given", what));
  if (!std::filesystem::is_regular_file(path))
    throw std::runtime_error(fmt::format("{} '{}' does not exist", what, path.string()));
}

// Runs fn(0..n-1) on up to `jobs` threads; rethrows the first failure.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn fn) {
  if (jobs == 0) jobs = std::max(1u, std::thread::hardware_concurrency());
  jobs = std::min(jobs, n);
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> workers;
  for (std::size_t w = 0; w < jobs; ++w)
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  for (auto& w : workers) w.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::string fmt_num(double v) { return std::isnan(v) ? std::string() : fmt::format("{:.6f}", v); }

void write_timesteps_csv(const std::filesystem::path& path, const engine::RunReport& r) {
  std::string out =
      "timestep,tau,stream_batches,accepted_batches,rejected_batches,accepted_samples,rejected_samples,"
      "new_classes,head_width,updates,accuracy\n";
  for (const auto& t : r.timesteps)
    out += fmt::format("{},{},{},{},{},{},{},{},{},{},{}\n", t.timestep, fmt_num(t.tau), t.stream_batches,
                       t.accepted_batches, t.rejected_batches, t.accepted_samples, t.rejected_samples,
                       t.new_classes, t.head_width, t.updates, fmt_num(t.accuracy));
  io::write_file_atomic(path, out);
}

std::vector<metrics::MetricSeries> run_series(const engine::RunReport& r) {
  metrics::MetricSeries acc{"accuracy", {}, {}};
  for (std::size_t t = 0; t < r.task_accuracy.size(); ++t) acc.add(double(t), r.task_accuracy[t]);
  metrics::MetricSeries loss{"train_loss", {}, {}}, inserted{"n_new_inserted", {}, {}};
  for (std::size_t k = 0; k < r.steps.size(); ++k) {
    loss.add(double(k + 1), r.steps[k].train_loss);
    inserted.add(double(k + 1), double(r.steps[k].n_new_inserted));
  }
  std::vector<metrics::MetricSeries> out{acc, loss};
  if (!loss.y.empty()) out.push_back(metrics::ema(loss));
  out.push_back(inserted);
  return out;
}

double mean(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return s / double(v.size());
}

// Sample standard deviation; 0 for a single value.
double stddev(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / double(v.size() - 1));
}

}  // namespace

Data load_data(const config::RunConfig& cfg) {
  const auto& d = cfg.data;
  Data out;
  if (d.source == config::DataSource::files) {
    require_file(d.train_path, "training dataset");
    require_file(d.test_path, "test dataset");
    out.train = stream::load_dataset(d.train_path);
    out.test = stream::load_dataset(d.test_path);
    if (!d.foreign_path.empty()) {
      require_file(d.foreign_path, "foreign dataset");
      out.foreign = stream::load_dataset(d.foreign_path);
    }
    return out;
  }
  stream::SynthSpec s;
  s.n_classes = d.classes;
  s.dims = d.dims;
  s.separation = d.separation;
  s.stddev = d.stddev;
  s.n_samples = d.train_samples;
  s.seed = derive_seed(cfg.seed, "data/train");
  out.train = stream::synth_generate(s);
  s.n_samples = d.test_samples;
  s.seed = derive_seed(cfg.seed, "data/test");
  out.test = stream::synth_generate(s);
  if (d.foreign_classes > 0) {
    if (d.dims < d.classes + d.foreign_classes)
      throw ConfigError("data.dims must be at least classes + foreign_classes");
    stream::SynthSpec f = s;
    f.n_classes = d.foreign_classes;
    f.axis_offset = d.classes;
    f.label_offset = kForeignLabelOffset;
    f.separation = d.separation * d.foreign_separation_factor;
    f.n_samples = d.foreign_samples;
    f.seed = derive_seed(cfg.seed, "data/foreign");
    out.foreign = stream::synth_generate(f);
  }
  return out;
}

engine::Experiment make_experiment(const config::RunConfig& cfg, const Data& data) {
  stream::MixSpec mix;
  mix.corrupted_fraction = cfg.stream.corrupted_fraction;
  mix.corruptions = cfg.stream.corruptions;
  mix.ood_fraction = cfg.stream.ood_fraction;
  return engine::build_experiment(data.train, data.test, cfg.stream.schedule, mix,
                                  data.foreign ? &*data.foreign : nullptr, cfg.stream.ood_batch_size, cfg.seed);
}

void save_checkpoint(const std::filesystem::path& path, const nn::Network<float>& net, const ClassMap& classes) {
  auto tensors = net.to_named_tensors();
  tensors.push_back(bnt::make_u32("classes", {static_cast<std::uint32_t>(classes.size())}, classes.labels()));
  bnt::write_file(path, tensors);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  require_file(path, "checkpoint");
  auto tensors = bnt::read_file(path);
  Checkpoint c{nn::Network<float>::from_named_tensors(tensors), ClassMap(bnt::require(tensors, "classes").u32())};
  if (c.classes.size() != c.net.n_classes()) throw FormatError("checkpoint class map does not match the head");
  c.net.set_mode(nn::Mode::eval);
  return c;
}

void write_run_outputs(const std::filesystem::path& dir, const engine::RunReport& report,
                       const engine::RunState& state, const config::RunConfig& cfg) {
  std::filesystem::create_directories(dir);
  engine::write_report_csv(dir / "report.csv", report);
  engine::write_summary(dir / "summary.txt", report);
  write_timesteps_csv(dir / "timesteps.csv", report);
  metrics::write_metrics_csv(dir / "metrics.csv", run_series(report));
  memory::write_composition_csv(dir / "buffer_composition.csv", report.composition);
  save_checkpoint(dir / "model.bnt", state.net, state.classes);
  io::write_file_atomic(dir / "config.ini", config::to_text(cfg));
}

int cmd_run(const config::RunConfig& cfg, std::ostream& log) {
  const auto data = load_data(cfg);
  const auto exp = make_experiment(cfg, data);
  fmt::print(log, "run {} seed {}: {} timesteps, {} stream samples\n", engine::to_string(cfg.variant), cfg.seed,
             exp.timesteps(), exp.stream_size());
  engine::RunState state;
  const auto report = engine::run_variant(cfg.variant, cfg.loop, exp, &state);
  write_run_outputs(cfg.output_dir, report, state, cfg);
  for (const auto& w : report.warnings) fmt::print(log, "warning: {}\n", w);
  if (report.aborted) {
    fmt::print(log, "run aborted: {}\n", report.error);
    return kExitRunFailure;
  }
  fmt::print(log, "final accuracy {:.4f}, average accuracy {:.4f}, odp {}, steps {}\n", report.final_accuracy(),
             report.average_accuracy(), report.odp(), report.total_steps);
  fmt::print(log, "outputs in {}\n", cfg.output_dir.string());
  return kExitOk;
}

int cmd_ablate(const config::RunConfig& cfg, std::ostream& log) {
  const auto& seeds = cfg.seeds;
  const auto& variants = cfg.ablate_variants;
  std::mutex log_mutex;
  auto say = [&](const std::string& line) {
    std::lock_guard lock(log_mutex);
    log << line << std::flush;
  };

  // Each seed gets its own data and one pretrained start shared by all variants.
  struct SeedState {
    config::RunConfig cfg;
    Data data;
    engine::Experiment exp;
    engine::Pretrained start;
  };
  std::vector<SeedState> per_seed(seeds.size());
  parallel_for(seeds.size(), cfg.jobs, [&](std::size_t i) {
    auto& s = per_seed[i];
    s.cfg = cfg;
    s.cfg.seed = seeds[i];
    s.cfg.loop.seed = seeds[i];
    s.data = load_data(s.cfg);
    s.exp = make_experiment(s.cfg, s.data);
    s.start = engine::pretrain(s.cfg.loop, s.exp);
    say(fmt::format("seed {}: pretrained, accuracy {:.4f}\n", seeds[i], s.start.accuracy));
  });

  std::vector<engine::RunReport> reports(seeds.size() * variants.size());
  parallel_for(reports.size(), cfg.jobs, [&](std::size_t job) {
    const std::size_t si = job / variants.size(), vi = job % variants.size();
    const auto& s = per_seed[si];
    auto run_cfg = s.cfg;
    run_cfg.variant = variants[vi];
    engine::RunState state;
    reports[job] = engine::run_variant(variants[vi], run_cfg.loop, s.exp, s.start, &state);
    const auto dir = cfg.output_dir / fmt::format("{}_seed{}", engine::to_string(variants[vi]), seeds[si]);
    write_run_outputs(dir, reports[job], state, run_cfg);
    const auto& r = reports[job];
    say(r.aborted ? fmt::format("{} seed {}: aborted ({})\n", r.variant, seeds[si], r.error)
                  : fmt::format("{} seed {}: final accuracy {:.4f}\n", r.variant, seeds[si], r.final_accuracy()));
  });

  bool failed = false;
  const std::size_t T = per_seed.front().exp.timesteps();
  std::string agg = "variant,runs";
  for (std::size_t t = 1; t <= T; ++t) agg += fmt::format(",t{}_mean,t{}_std", t, t);
  agg += ",average_mean,average_std,samples_mean,samples_std\n";
  std::string runs = "variant,seed,average_accuracy,final_accuracy,odp,total_steps,aborted\n";
  for (std::size_t vi = 0; vi < variants.size(); ++vi) {
    std::vector<std::vector<double>> acc(T + 1);
    std::vector<double> avg, samples;
    for (std::size_t si = 0; si < seeds.size(); ++si) {
      const auto& r = reports[si * variants.size() + vi];
      if (r.aborted) {
        failed = true;
        runs += fmt::format("{},{},,,{},{},true\n", r.variant, seeds[si], r.odp(), r.total_steps);
        continue;
      }
      for (std::size_t t = 1; t <= T; ++t) acc[t].push_back(r.task_accuracy[t]);
      avg.push_back(r.average_accuracy());
      samples.push_back(double(r.odp()));
      runs += fmt::format("{},{},{:.6f},{:.6f},{},{},false\n", r.variant, seeds[si], r.average_accuracy(),
                          r.final_accuracy(), r.odp(), r.total_steps);
    }
    agg += fmt::format("{},{}", engine::to_string(variants[vi]), avg.size());
    if (avg.empty()) {
      for (std::size_t c = 0; c < 2 * T + 4; ++c) agg += ",";
      agg += "\n";
      continue;
    }
    for (std::size_t t = 1; t <= T; ++t) agg += fmt::format(",{:.6f},{:.6f}", mean(acc[t]), stddev(acc[t]));
    agg += fmt::format(",{:.6f},{:.6f},{:.1f},{:.1f}\n", mean(avg), stddev(avg), mean(samples), stddev(samples));
  }
  std::filesystem::create_directories(cfg.output_dir);
  io::write_file_atomic(cfg.output_dir / "ablation.csv", agg);
  io::write_file_atomic(cfg.output_dir / "ablation_runs.csv", runs);
  log << agg;
  return failed ? kExitRunFailure : kExitOk;
}

int cmd_ood_hist(const OodHistOptions& opt, std::ostream& log) {
  if (opt.in_set.empty()) throw ConfigError("no in-distribution dataset given");
  if (opt.out_set.empty()) throw ConfigError("no out-of-distribution dataset given");
  if (opt.batch_size == 0) throw ConfigError("batch size must be positive");
  const auto ckpt = load_checkpoint(opt.checkpoint);
  require_file(opt.in_set, "in-distribution dataset");
  require_file(opt.out_set, "out-of-distribution dataset");

  std::vector<ood::ScoreRow> eta_rows, pe_rows;
  std::vector<double> eta_in, eta_out, pe_in, pe_out;
  auto score = [&](const std::filesystem::path& path, const char* source, std::vector<double>& eta,
                   std::vector<double>& pe) {
    const auto ds = stream::load_dataset(path);
    if (ds.size() == 0) throw DegenerateInputError(fmt::format("dataset '{}' is empty", path.string()));
    if (ds.feature_dim() != ckpt.net.input_dim())
      throw ShapeError(fmt::format("dataset '{}' has {} features, the model expects {}", path.string(),
                                   ds.feature_dim(), ckpt.net.input_dim()));
    for (const auto& batch : stream::batch_samples(ds.samples(), opt.batch_size)) {
      const auto x = stream::stack_features(batch);
      const auto s = ood::batch_ood_score(ckpt.net, x, opt.form);
      const double h = ood::predictive_entropy(ckpt.net.infer(x).logits);
      eta.push_back(s.value);
      pe.push_back(h);
      eta_rows.push_back({source, s.value});
      pe_rows.push_back({source, h});
    }
  };
  score(opt.in_set, "in", eta_in, pe_in);
  score(opt.out_set, "out", eta_out, pe_out);

  const double auroc_eta = metrics::auroc(eta_in, eta_out);
  const double auroc_pe = metrics::auroc(pe_in, pe_out);
  std::filesystem::create_directories(opt.output_dir);
  const std::string column = opt.form == ood::ScoreForm::eta1 ? "eta1" : "log_odds";
  ood::write_score_csv(opt.output_dir / ("ood_" + column + ".csv"), eta_rows, column);
  ood::write_score_csv(opt.output_dir / "ood_entropy.csv", pe_rows, "predictive_entropy");
  const auto summary = fmt::format(
      "in_batches = {}\nout_batches = {}\nbatch_size = {}\nauroc_{} = {:.6f}\nauroc_predictive_entropy = {:.6f}\n",
      eta_in.size(), eta_out.size(), opt.batch_size, column, auroc_eta, auroc_pe);
  io::write_file_atomic(opt.output_dir / "ood_summary.txt", summary);
  log << summary;
  return kExitOk;
}

int cmd_gen_data(const GenDataOptions& opt, std::ostream& log) {
  if (opt.output.empty()) throw ConfigError("no output path given");
  stream::Dataset ds;
  if (opt.from) {
    require_file(*opt.from, "source dataset");
    ds = stream::load_dataset(*opt.from);
  } else {
    try {
      ds = stream::synth_generate(opt.spec);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
  if (opt.corruption) {
    if (!(opt.corruption->severity >= 0)) throw ConfigError("corruption severity must be non-negative");
    ds.inputs = stream::corrupt(ds.inputs, opt.corruption->type, opt.corruption->severity,
                                derive_seed(opt.spec.seed, "corrupt"));
  }
  if (opt.output.has_parent_path()) std::filesystem::create_directories(opt.output.parent_path());
  stream::save_dataset(ds, opt.output);
  fmt::print(log, "wrote {} samples x {} features, {} classes to {}\n", ds.size(), ds.feature_dim(),
             ds.classes().size(), opt.output.string());
  return kExitOk;
}

int cmd_eval(const std::filesystem::path& checkpoint, const std::filesystem::path& data, std::ostream& log) {
  const auto ckpt = load_checkpoint(checkpoint);
  require_file(data, "dataset");
  const auto ds = stream::load_dataset(data);
  if (ds.feature_dim() != ckpt.net.input_dim())
    throw ShapeError(fmt::format("dataset has {} features, the model expects {}", ds.feature_dim(),
                                 ckpt.net.input_dim()));
  const double acc = accuracy(ckpt.net, ds.samples(), ckpt.classes);
  fmt::print(log, "samples = {}\nclasses = {}\naccuracy = {:.6f}\n", ds.size(), ckpt.classes.size(), acc);
  return kExitOk;
}

}  // namespace bowl::cli
