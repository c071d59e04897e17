#include "bowl/engine.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <fmt/format.h>

#include "bowl/error.hpp"
#include "bowl/io.hpp"
#include "bowl/metrics.hpp"
#include "bowl/query.hpp"

namespace bowl::engine {

Variant parse_variant(const std::string& name) {
  if (name == "full") return Variant::full;
  if (name == "no_ood") return Variant::no_ood;
  if (name == "random_query") return Variant::random_query;
  if (name == "no_cl") return Variant::no_cl;
  if (name == "finetune") return Variant::finetune;
  if (name == "balanced_buffer") return Variant::balanced_buffer;
  throw ConfigError("unknown variant '" + name + "'");
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::no_ood: return "no_ood";
    case Variant::random_query: return "random_query";
    case Variant::no_cl: return "no_cl";
    case Variant::finetune: return "finetune";
    case Variant::balanced_buffer: return "balanced_buffer";
  }
  return "?";
}

void LoopConfig::validate() const {
  if (acquisition_batch == 0) throw ConfigError("acquisition batch must be at least 1");
  if (buffer_capacity == 0) throw ConfigError("buffer capacity must be at least 1");
  if (epochs_per_update == 0) throw ConfigError("epochs per update must be at least 1");
  if (minibatch == 0) throw ConfigError("minibatch size must be at least 1");
  if (similarity_chunk == 0) throw ConfigError("similarity chunk size must be at least 1");
  if (hidden.empty()) throw ConfigError("network needs at least one hidden layer");
  for (auto w : hidden)
    if (w == 0) throw ConfigError("hidden layer widths must be positive");
  if (!(learning_rate >= 0) || !(momentum >= 0) || !(weight_decay >= 0))
    throw ConfigError("optimizer hyperparameters must be non-negative");
  if (!(bn_momentum > 0 && bn_momentum <= 1)) throw ConfigError("batch norm momentum must lie in (0, 1]");
  try {
    threshold.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

std::vector<std::string> LoopConfig::warnings() const {
  std::vector<std::string> out;
  if (buffer_capacity < acquisition_batch)
    out.push_back(fmt::format("buffer capacity {} is smaller than the acquisition batch {}", buffer_capacity,
                              acquisition_batch));
  return out;
}

LoopConfig config_for(Variant v, LoopConfig base) {
  base.use_ood = v != Variant::no_ood;
  base.use_active_query = v != Variant::random_query;
  base.use_cl = v != Variant::no_cl;
  return base;
}

std::size_t Experiment::stream_size() const {
  std::size_t n = 0;
  for (const auto& s : tasks)
    for (const auto& b : s) n += b.size();
  return n;
}

std::vector<stream::Sample> Experiment::cumulative_test(std::size_t t) const {
  std::vector<stream::Sample> out;
  for (std::size_t i = 0; i <= t && i < test.size(); ++i) out.insert(out.end(), test[i].begin(), test[i].end());
  return out;
}

Experiment build_experiment(const stream::Dataset& train, const stream::Dataset& test,
                            const stream::TaskSchedule& schedule, const stream::MixSpec& mix,
                            const stream::Dataset* foreign, std::size_t ood_batch_size, std::uint64_t seed) {
  schedule.validate();
  if (schedule.timesteps.size() < 2) throw ConfigError("schedule needs timestep 0 and at least one task");
  if (train.feature_dim() != test.feature_dim()) throw ShapeError("train and test feature widths differ");
  if (foreign && foreign->feature_dim() != train.feature_dim())
    throw ShapeError("foreign dataset feature width differs from the training data");

  auto split = stream::make_split_tasks(train, schedule, ood_batch_size, seed);
  Experiment exp;
  for (const auto& b : split[0]) exp.pretrain.insert(exp.pretrain.end(), b.begin(), b.end());
  exp.pretrain_classes = schedule.timesteps[0];

  std::uint64_t next_id = train.size();
  for (std::size_t t = 1; t < split.size(); ++t)
    exp.tasks.push_back(stream::mix_streams(split[t], mix, foreign, schedule.timesteps[t],
                                            derive_seed(seed, fmt::format("mix/{}", t)), next_id));

  constexpr std::uint64_t kTestIds = 1ull << 40;
  for (const auto& classes : schedule.timesteps) {
    auto part = test.subset_of_classes(classes);
    if (part.size() == 0) throw ConfigError("a timestep has no test samples");
    exp.test.push_back(part.samples(kTestIds));
  }
  return exp;
}

double RunReport::average_accuracy() const {
  if (task_accuracy.size() < 2) throw DegenerateInputError("run has no timesteps after pretraining");
  return metrics::average_accuracy(std::span<const double>(task_accuracy).subspan(1));
}

double RunReport::final_accuracy() const {
  if (task_accuracy.empty()) throw DegenerateInputError("run recorded no accuracy");
  return task_accuracy.back();
}

std::size_t RunReport::odp() const { return metrics::count_odp(insert_log); }

namespace {

nn::SgdOptimizer<float> make_optimizer(const LoopConfig& cfg) {
  return {cfg.learning_rate, cfg.momentum, cfg.weight_decay};
}

class Runner {
 public:
  Runner(const LoopConfig& cfg, const Experiment& exp, const Pretrained& start, std::string variant)
      : cfg_(cfg),
        exp_(exp),
        net_(start.net),
        classes_(start.classes),
        opt_(start.opt),
        train_rng_(make_rng(cfg.seed, "train")),
        expand_rng_(make_rng(cfg.seed, "expand")),
        bootstrap_rng_(make_rng(cfg.seed, "bootstrap")),
        query_rng_(make_rng(cfg.seed, "query")),
        balance_rng_(make_rng(cfg.seed, "balance")),
        buffer_(memory::init_buffer(exp.pretrain, cfg.buffer_capacity, cfg.seed, start.net)) {
    cfg.validate();
    report_.variant = std::move(variant);
    report_.seed = cfg.seed;
    report_.pretrain_steps = start.steps;
    report_.stream_size = exp.stream_size();
    report_.task_accuracy.push_back(start.accuracy);
    report_.warnings = cfg.warnings();
    global_step_ = start.steps;
    for (std::size_t t = 0; t <= exp.timesteps(); ++t) tests_.push_back(exp.cumulative_test(t));
    report_.composition = memory::composition_rows(buffer_, 0);
  }

  template <typename Body>
  RunReport run(Body body, RunState* final_state) {
    try {
      for (std::size_t t = 1; t <= exp_.timesteps(); ++t) {
        TimestepRecord rec;
        rec.timestep = t;
        rec.stream_batches = exp_.tasks[t - 1].size();
        if (exp_.tasks[t - 1].empty()) {
          // Nothing arrived: no training, the previous accuracy carries over.
          rec.accuracy = report_.task_accuracy.back();
        } else {
          body(t, rec);
          rec.accuracy = evaluate(t);
        }
        rec.head_width = net_.n_classes();
        report_.task_accuracy.push_back(rec.accuracy);
        report_.timesteps.push_back(rec);
        const auto comp = memory::composition_rows(buffer_, t);
        report_.composition.insert(report_.composition.end(), comp.begin(), comp.end());
      }
    } catch (const NumericError& e) {
      report_.aborted = true;
      report_.error = e.what();
    }
    report_.total_steps = global_step_;
    if (final_state) *final_state = RunState{net_, classes_, buffer_};
    return std::move(report_);
  }

  // Algorithm body with the ablation switches of cfg_.
  void bowl_timestep(std::size_t t, TimestepRecord& rec) {
    const auto& batches = exp_.tasks[t - 1];
    query::CandidatePool pool;
    if (cfg_.use_ood) {
      rec.tau = ood::bootstrap_threshold(net_, buffer_, cfg_.threshold, bootstrap_rng_);
      auto f = ood::filter_stream(net_, batches, rec.tau, cfg_.threshold.form);
      rec.accepted_batches = f.accepted_batches;
      rec.rejected_batches = f.rejected_batches;
      rec.accepted_samples = f.accepted.size();
      rec.rejected_samples = f.rejected_samples;
      pool.add(f.accepted, t);
    } else {
      for (const auto& b : batches) {
        pool.add(b, t);
        rec.accepted_samples += b.size();
      }
      rec.accepted_batches = batches.size();
    }
    rec.new_classes = expand(pool.label_metadata());

    if (cfg_.use_active_query) {
      while (!pool.empty()) {
        auto scores = query::query_scores(net_, pool, {cfg_.similarity_chunk, 256});
        auto sel = query::select_top(pool, scores, cfg_.acquisition_batch);
        absorb(t, rec, sel.queried);
      }
    } else if (!pool.empty()) {
      // One random fixed-size query at the start of the task, then as many
      // training rounds as the pool would have taken to drain.
      const std::size_t rounds = (pool.size() + cfg_.acquisition_batch - 1) / cfg_.acquisition_batch;
      auto sel = query::select_random(pool, cfg_.acquisition_batch, query_rng_);
      absorb(t, rec, sel.queried);
      for (std::size_t r = 1; r < rounds; ++r) absorb(t, rec, {});
    }
    report_.oracle_calls += pool.oracle_calls();
  }

  void finetune_timestep(std::size_t t, TimestepRecord& rec) {
    std::vector<stream::Sample> all;
    for (const auto& b : exp_.tasks[t - 1]) all.insert(all.end(), b.begin(), b.end());
    rec.accepted_samples = all.size();
    rec.accepted_batches = exp_.tasks[t - 1].size();
    rec.new_classes = expand(labels_of(all));
    report_.oracle_calls += all.size();
    for (const auto& s : all) report_.insert_log.emplace_back(s.id, t);
    const std::size_t epochs = cfg_.finetune_epochs ? cfg_.finetune_epochs : cfg_.pretrain_epochs;
    for (std::size_t e = 0; e < epochs; ++e) {
      auto stats = train_epoch_on_samples(net_, all, opt_, cfg_.minibatch, classes_, train_rng_);
      record(t, ++rec.updates, e == 0 ? all.size() : 0, e == 0 ? all.size() : 0, stats);
    }
  }

  // Class-balanced greedy buffer filled from the raw stream.
  void balanced_timestep(std::size_t t, TimestepRecord& rec) {
    std::vector<stream::Sample> all;
    for (const auto& b : exp_.tasks[t - 1]) all.insert(all.end(), b.begin(), b.end());
    rec.accepted_samples = all.size();
    rec.accepted_batches = exp_.tasks[t - 1].size();
    rec.new_classes = expand(labels_of(all));
    report_.oracle_calls += all.size();

    std::size_t inserted = 0;
    for (const auto& s : all) {
      if (buffer_.contains(s.id)) continue;
      memory::MemoryEntry entry{s.features, s.label, 0.0, t, s.id, s.origin};
      if (buffer_.size() < buffer_.capacity()) {
        buffer_.insert(std::move(entry));
      } else {
        auto counts = memory::composition(buffer_);
        const std::size_t seen = counts.size() + (counts.count(s.label) ? 0 : 1);
        if (counts[s.label] >= buffer_.capacity() / seen) continue;
        std::uint32_t largest = counts.begin()->first;
        for (const auto& [label, n] : counts)
          if (n > counts[largest]) largest = label;
        std::vector<std::size_t> candidates;
        for (std::size_t i = 0; i < buffer_.size(); ++i)
          if (buffer_.entries()[i].label == largest) candidates.push_back(i);
        buffer_.replace(candidates[uniform_index(candidates.size(), balance_rng_)], std::move(entry));
      }
      report_.insert_log.emplace_back(s.id, t);
      ++inserted;
    }
    const std::size_t rounds = (all.size() + cfg_.acquisition_batch - 1) / cfg_.acquisition_batch;
    for (std::size_t r = 0; r < rounds; ++r) {
      auto stats = train_buffer();
      const std::size_t n_new = r == 0 ? inserted : 0;
      record(t, ++rec.updates, r == 0 ? all.size() : 0, n_new, stats);
    }
  }

 private:
  void absorb(std::size_t t, TimestepRecord& rec, const std::vector<stream::Sample>& queried) {
    EpochStats stats;
    std::size_t n_new = 0;
    if (cfg_.use_cl) {
      if (!queried.empty()) {
        auto ms = memory::memory_scores(buffer_, queried, net_, cfg_.similarity_chunk);
        auto upd = memory::update_buffer(buffer_, queried, ms, t);
        buffer_ = std::move(upd.buffer);
        n_new = upd.n_new_inserted;
        for (auto id : upd.inserted_ids) report_.insert_log.emplace_back(id, t);
      }
      stats = train_buffer();
    } else {
      // No replay: train on the queried batch alone.
      for (const auto& s : queried) report_.insert_log.emplace_back(s.id, t);
      n_new = queried.size();
      double loss = 0;
      for (std::size_t e = 0; e < cfg_.epochs_per_update; ++e) {
        auto s = train_epoch_on_samples(net_, queried, opt_, cfg_.minibatch, classes_, train_rng_);
        stats.steps += s.steps;
        loss += s.mean_loss;
      }
      stats.mean_loss = loss / static_cast<double>(cfg_.epochs_per_update);
    }
    record(t, ++rec.updates, queried.size(), n_new, stats);
  }

  EpochStats train_buffer() {
    EpochStats total;
    double loss = 0;
    for (std::size_t e = 0; e < cfg_.epochs_per_update; ++e) {
      auto s = train_one_epoch(net_, buffer_, opt_, cfg_.minibatch, classes_, train_rng_);
      total.steps += s.steps;
      loss += s.mean_loss;
    }
    total.mean_loss = loss / static_cast<double>(cfg_.epochs_per_update);
    return total;
  }

  void record(std::size_t t, std::size_t update, std::size_t queried, std::size_t n_new, const EpochStats& stats) {
    global_step_ += stats.steps;
    StepRecord r;
    r.timestep = t;
    r.update = update;
    r.global_step = global_step_;
    r.queried = queried;
    r.n_new_inserted = n_new;
    r.train_loss = stats.mean_loss;
    if (cfg_.eval_every_update) r.accuracy = evaluate(t);
    report_.steps.push_back(r);
  }

  std::size_t expand(const std::vector<std::uint32_t>& labels) {
    const std::size_t added = classes_.add(labels);
    if (added > 0) net_.expand_head(added, expand_rng_);
    return added;
  }

  static std::vector<std::uint32_t> labels_of(const std::vector<stream::Sample>& samples) {
    std::vector<std::uint32_t> out;
    for (const auto& s : samples) out.push_back(s.label);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }

  double evaluate(std::size_t t) { return accuracy(net_, tests_[t], classes_); }

  const LoopConfig& cfg_;
  const Experiment& exp_;
  nn::Network<float> net_;
  ClassMap classes_;
  nn::SgdOptimizer<float> opt_;
  Rng train_rng_, expand_rng_, bootstrap_rng_, query_rng_, balance_rng_;
  memory::MemoryBuffer buffer_;
  std::vector<std::vector<stream::Sample>> tests_;
  RunReport report_;
  std::size_t global_step_ = 0;
};

}  // namespace

Pretrained pretrain(const LoopConfig& cfg, const Experiment& exp) {
  cfg.validate();
  if (exp.pretrain.empty()) throw DegenerateInputError("no timestep-0 data to pretrain on");
  Rng init = make_rng(cfg.seed, "init");
  std::vector<std::uint32_t> labels = exp.pretrain_classes;
  std::sort(labels.begin(), labels.end());
  Pretrained p;
  p.classes = ClassMap(labels);
  nn::MlpSpec spec{exp.pretrain.front().features.size(), cfg.hidden, p.classes.size(), 1e-5, cfg.bn_momentum};
  p.net = nn::Network<float>::mlp(spec, init);
  p.opt = make_optimizer(cfg);
  Rng rng = make_rng(cfg.seed, "pretrain");
  for (std::size_t e = 0; e < cfg.pretrain_epochs; ++e)
    p.steps += train_epoch_on_samples(p.net, exp.pretrain, p.opt, cfg.minibatch, p.classes, rng).steps;
  p.net.set_mode(nn::Mode::eval);
  p.accuracy = accuracy(p.net, exp.test.at(0), p.classes);
  return p;
}

RunReport run_bowl(const LoopConfig& cfg, const Experiment& exp, const Pretrained& start, RunState* final_state) {
  std::string name = "full";
  if (!cfg.use_ood) name = "no_ood";
  if (!cfg.use_active_query) name = "random_query";
  if (!cfg.use_cl) name = "no_cl";
  if (int(!cfg.use_ood) + int(!cfg.use_active_query) + int(!cfg.use_cl) > 1) name = "custom";
  Runner r(cfg, exp, start, name);
  return r.run([&](std::size_t t, TimestepRecord& rec) { r.bowl_timestep(t, rec); }, final_state);
}

RunReport run_variant(Variant v, const LoopConfig& cfg, const Experiment& exp, const Pretrained& start,
                      RunState* final_state) {
  switch (v) {
    case Variant::full:
    case Variant::no_ood:
    case Variant::random_query:
    case Variant::no_cl:
      return run_bowl(config_for(v, cfg), exp, start, final_state);
    case Variant::finetune: {
      Runner r(cfg, exp, start, to_string(v));
      return r.run([&](std::size_t t, TimestepRecord& rec) { r.finetune_timestep(t, rec); }, final_state);
    }
    case Variant::balanced_buffer: {
      Runner r(cfg, exp, start, to_string(v));
      return r.run([&](std::size_t t, TimestepRecord& rec) { r.balanced_timestep(t, rec); }, final_state);
    }
  }
  throw std::invalid_argument("unknown variant");
}

RunReport run_variant(Variant v, const LoopConfig& cfg, const Experiment& exp, RunState* final_state) {
  return run_variant(v, cfg, exp, pretrain(cfg, exp), final_state);
}

namespace {

std::string fmt_double(double v) { return std::isnan(v) ? std::string() : fmt::format("{:.6f}", v); }

}  // namespace

void write_report_csv(const std::filesystem::path& path, const RunReport& report) {
  std::string out = "timestep,update,global_step,queried,n_new_inserted,train_loss,accuracy\n";
  for (const auto& s : report.steps)
    out += fmt::format("{},{},{},{},{},{},{}\n", s.timestep, s.update, s.global_step, s.queried, s.n_new_inserted,
                       fmt_double(s.train_loss), fmt_double(s.accuracy));
  io::write_file_atomic(path, out);
}

std::string summary_text(const RunReport& report) {
  std::string out;
  out += fmt::format("variant = {}\n", report.variant);
  out += fmt::format("seed = {}\n", report.seed);
  if (report.task_accuracy.size() >= 2) {
    out += fmt::format("average_accuracy = {:.6f}\n", report.average_accuracy());
    out += fmt::format("final_accuracy = {:.6f}\n", report.final_accuracy());
  }
  out += fmt::format("total_steps = {}\n", report.total_steps);
  out += fmt::format("pretrain_steps = {}\n", report.pretrain_steps);
  out += fmt::format("odp = {}\n", report.odp());
  out += fmt::format("stream_size = {}\n", report.stream_size);
  out += fmt::format("oracle_calls = {}\n", report.oracle_calls);
  for (std::size_t t = 0; t < report.task_accuracy.size(); ++t)
    out += fmt::format("accuracy_t{} = {:.6f}\n", t, report.task_accuracy[t]);
  for (const auto& r : report.timesteps)
    out += fmt::format("ood_t{} = tau {} accepted_batches {} rejected_batches {} new_classes {} updates {}\n",
                       r.timestep, std::isnan(r.tau) ? std::string("none") : fmt::format("{:.6f}", r.tau),
                       r.accepted_batches, r.rejected_batches, r.new_classes, r.updates);
  for (const auto& w : report.warnings) out += fmt::format("warning = {}\n", w);
  out += fmt::format("aborted = {}\n", report.aborted ? "true" : "false");
  if (report.aborted) out += fmt::format("error = {}\n", report.error);
  return out;
}

void write_summary(const std::filesystem::path& path, const RunReport& report) {
  io::write_file_atomic(path, summary_text(report));
}

}  // namespace bowl::engine
