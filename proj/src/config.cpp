#include "bowl/config.hpp"

#include <algorithm>
#include <charconv>
#include <functional>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "bowl/error.hpp"
#include "bowl/io.hpp"

namespace bowl::config {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) out.push_back(trim(item));
  if (!s.empty() && s.back() == sep) out.push_back({});
  return out;
}

std::uint64_t parse_uint(const std::string& s) {
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw std::invalid_argument("expected a non-negative integer");
  return v;
}

double parse_double(const std::string& s) {
  double v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw std::invalid_argument("expected a number");
  return v;
}

bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw std::invalid_argument("expected true or false");
}

std::vector<std::size_t> parse_sizes(const std::string& s) {
  std::vector<std::size_t> out;
  for (const auto& item : split(s, ',')) out.push_back(parse_uint(item));
  return out;
}

template <typename T>
std::string join(const std::vector<T>& v, const std::function<std::string(const T&)>& f, const char* sep = ",") {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? sep : "") + f(v[i]);
  return out;
}

std::string num(double v) { return fmt::format("{}", v); }

ood::ScoreForm parse_form(const std::string& s) {
  if (s == "eta1") return ood::ScoreForm::eta1;
  if (s == "log_odds") return ood::ScoreForm::log_odds;
  throw std::invalid_argument("expected eta1 or log_odds");
}

struct Entry {
  KeyInfo info;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

const std::vector<Entry>& entries() {
  using V = engine::Variant;
  static const std::vector<Entry> table = {
      {{"run", "variant", false, "full | no_ood | random_query | no_cl | finetune | balanced_buffer"},
       [](RunConfig& c, const std::string& v) { c.variant = engine::parse_variant(v); },
       [](const RunConfig& c) { return engine::to_string(c.variant); }},
      {{"run", "variants", false, "comma-separated variants for ablate"},
       [](RunConfig& c, const std::string& v) {
         c.ablate_variants.clear();
         for (const auto& name : split(v, ',')) c.ablate_variants.push_back(engine::parse_variant(name));
       },
       [](const RunConfig& c) {
         return join<V>(c.ablate_variants, [](const V& v) { return engine::to_string(v); });
       }},
      {{"run", "seed", true, "master seed"},
       [](RunConfig& c, const std::string& v) { c.seed = parse_uint(v); },
       [](const RunConfig& c) { return std::to_string(c.seed); }},
      {{"run", "seeds", false, "comma-separated seeds for ablate (default: seed)"},
       [](RunConfig& c, const std::string& v) {
         c.seeds.clear();
         for (const auto& s : split(v, ',')) c.seeds.push_back(parse_uint(s));
       },
       [](const RunConfig& c) {
         return join<std::uint64_t>(c.seeds, [](const std::uint64_t& s) { return std::to_string(s); });
       }},
      {{"run", "jobs", false, "parallel ablation runs (0: all cores)"},
       [](RunConfig& c, const std::string& v) { c.jobs = parse_uint(v); },
       [](const RunConfig& c) { return std::to_string(c.jobs); }},
      {{"run", "output_dir", false, "directory for all outputs"},
       [](RunConfig& c, const std::string& v) { c.output_dir = v; },
       [](const RunConfig& c) { return c.output_dir.string(); }},

      {{"data", "source", true, "synthetic | files"},
       [](RunConfig& c, const std::string& v) {
         if (v == "synthetic")
           c.data.source = DataSource::synthetic;
         else if (v == "files")
           c.data.source = DataSource::files;
         else
           throw std::invalid_argument("expected synthetic or files");
       },
       [](const RunConfig& c) { return c.data.source == DataSource::synthetic ? "synthetic" : "files"; }},
      {{"data", "train", false, "training dataset file"},
       [](RunConfig& c, const std::string& v) { c.data.train_path = v; },
       [](const RunConfig& c) { return c.data.train_path.string(); }},
      {{"data", "test", false, "test dataset file"},
       [](RunConfig& c, const std::string& v) { c.data.test_path = v; },
       [](const RunConfig& c) { return c.data.test_path.string(); }},
      {{"data", "foreign", false, "foreign (outlier) dataset file"},
       [](RunConfig& c, const std::string& v) { c.data.foreign_path = v; },
       [](const RunConfig& c) { return c.data.foreign_path.string(); }},
      {{"data", "classes", false, "synthetic classes"},
       [](RunConfig& c, const std::string& v) { c.data.classes = parse_uint(v); },
       [](const RunConfig& c) { return std::to_string(c.data.classes); }},
      {{"data", "dims", false, "synthetic feature width"},
       [](RunConfig& c, const std::string& v) { c.data.dims = parse_uint(v); },
       [](const RunConfig& c) { return std::to_string(c.data.dims); }},
      {{"data", "separation", false, "distance between class means"},
       [](RunConfig& c, const std::string& v) { c.data.separation = parse_double(v); },
       [](const RunConfig& c) { return num(c.data.separation); }},
      {{"data", "stddev", false, "within-class std per coordinate"},
       [](RunConfig& c, const std::string& v) { c.data.stddev = parse_double(v); },
       [](const RunConfig& c) { return num(c.data.stddev); }},
      {{"data", "train_samples", false, ""},
       [](RunConfig& c, const std::string& v) { c.data.train_samples = parse_uint(v); },
       [](const RunConfig& c) { return std::to_string(c.data.train_samples); }},
      {{"data", "test_samples", false, ""},
       [](RunConfig& c, const std::string& v) { c.data.test_samples = parse_uint(v); },
       [](const RunConfig& c) { return std::to_string(c.data.test_samples); }},
      {{"data", "foreign_classes", false, "synthetic foreign classes (0: none)"},
       [](RunConfig& c, const std::string& v) { c.data.foreign_classes = parse_uint(v); },
       [](const RunConfig& c) { return std::to_string(c.data.foreign_classes); }},
      {{"data", "foreign_separation_factor", false, "foreign separation relative to separation"},
       [](RunConfig& c, const std::string& v) { c.data.foreign_separation_factor = parse_double(v); },
       [](const RunConfig& c) { return num(c.data.foreign_separation_factor); }},
      {{"data", "foreign_samples", false, ""},
       [](RunConfig& c, const std::string& v) { c.data.foreign_samples = parse_uint(v); },
       [](const RunConfig& c) { return std::to_string(c.data.foreign_samples); }},

      {{"stream", "schedule", true, "classes per timestep, e.g. 0,1;2,3 (timestep 0 first)"},
       [](RunConfig& c, const std::string& v) { c.stream.schedule = parse_schedule(v); },
       [](const RunConfig& c) { return format_schedule(c.stream.schedule); }},
      {{"stream", "ood_batch_size", false, "stream batch size b"},
       [](RunConfig& c, const std::string& v) { c.stream.ood_batch_size = parse_uint(v); },
       [](const RunConfig& c) { return std::to_string(c.stream.ood_batch_size); }},
      {{"stream", "corrupted_fraction", false, ""},
       [](RunConfig& c, const std::string& v) { c.stream.corrupted_fraction = parse_double(v); },
       [](const RunConfig& c) { return num(c.stream.corrupted_fraction); }},
      {{"stream", "corruptions", false, "type:severity list, e.g. gaussian:0.5,shot:0.3"},
       [](RunConfig& c, const std::string& v) {
         c.stream.corruptions.clear();
         for (const auto& item : split(v, ',')) {
           const auto colon = item.find(':');
           if (colon == std::string::npos) throw std::invalid_argument("expected type:severity");
           c.stream.corruptions.push_back(
               {stream::parse_corruption(trim(item.substr(0, colon))), parse_double(trim(item.substr(colon + 1)))});
         }
       },
       [](const RunConfig& c) {
         return join<stream::CorruptionSpec>(c.stream.corruptions, [](const stream::CorruptionSpec& s) {
           return stream::to_string(s.type) + ":" + num(s.severity);
         });
       }},
      {{"stream", "ood_fraction", false, "fraction of foreign batches"},
       [](RunConfig& c, const std::string& v) { c.stream.ood_fraction = parse_double(v); },
       [](const RunConfig& c) { return num(c.stream.ood_fraction); }},

      {{"model", "hidden", false, "hidden widths; each is Dense -> BN -> ReLU"},
       [](RunConfig& c, const std::string& v) { c.loop.hidden = parse_sizes(v); },
       [](const RunConfig& c) {
         return join<std::size_t>(c.loop.hidden, [](const std::size_t& w) { return std::to_string(w); });
       }},
      {{"model", "bn_momentum", false, ""},
       [](RunConfig& c, const std::string& v) { c.loop.bn_momentum = parse_double(v); },
       [](const RunConfig& c) { return num(c.loop.bn_momentum); }},

      {{"optim", "learning_rate", false, ""},
       [](RunConfig& c, const std::string& v) { c.loop.learning_rate = parse_double(v); },
       [](const RunConfig& c) { return num(c.loop.learning_rate); }},
      {{"optim", "momentum", false, ""},
       [](RunConfig& c, const std::string& v) { c.loop.momentum = parse_double(v); },
       [](const RunConfig& c) { return num(c.loop.momentum); }},
      {{"optim", "weight_decay", false, ""},
       [](RunConfig& c, const std::string& v) { c.loop.weight_decay = parse_double(v); },
       [](const RunConfig& c) { return num(c.loop.weight_decay); }},
      {{"optim", "minibatch", false, "training minibatch size"},
       [](RunConfig& c, const std::string& v) { c.loop.minibatch = parse_uint(v); },
       [](const RunConfig& c) { return std::to_string(c.loop.minibatch); }},

      {{"loop", "acquisition_batch", false, "query size B"},
       [](RunConfig& c, const std::string& v) { c.loop.acquisition_batch = parse_uint(v); },
       [](const RunConfig& c) { return std::to_string(c.loop.acquisition_batch); }},
      {{"loop", "buffer_capacity", false, "memory size |M|"},
       [](RunConfig& c, const std::string& v) { c.loop.buffer_capacity = parse_uint(v); },
       [](const RunConfig& c) { return std::to_string(c.loop.buffer_capacity); }},
      {{"loop", "epochs_per_update", false, ""},
       [](RunConfig& c, const std::string& v) { c.loop.epochs_per_update = parse_uint(v); },
       [](const RunConfig& c) { return std::to_string(c.loop.epochs_per_update); }},
      {{"loop", "pretrain_epochs", false, "timestep-0 epochs"},
       [](RunConfig& c, const std::string& v) { c.loop.pretrain_epochs = parse_uint(v); },
       [](const RunConfig& c) { return std::to_string(c.loop.pretrain_epochs); }},
      {{"loop", "finetune_epochs", false, "finetune baseline epochs per task (0: pretrain_epochs)"},
       [](RunConfig& c, const std::string& v) { c.loop.finetune_epochs = parse_uint(v); },
       [](const RunConfig& c) { return std::to_string(c.loop.finetune_epochs); }},
      {{"loop", "bootstrap_sets", false, "K"},
       [](RunConfig& c, const std::string& v) { c.loop.threshold.k_bootstrap = parse_uint(v); },
       [](const RunConfig& c) { return std::to_string(c.loop.threshold.k_bootstrap); }},
      {{"loop", "bootstrap_size", false, "samples per bootstrap set"},
       [](RunConfig& c, const std::string& v) { c.loop.threshold.bootstrap_size = parse_uint(v); },
       [](const RunConfig& c) { return std::to_string(c.loop.threshold.bootstrap_size); }},
      {{"loop", "alpha", false, "threshold quantile"},
       [](RunConfig& c, const std::string& v) { c.loop.threshold.alpha = parse_double(v); },
       [](const RunConfig& c) { return num(c.loop.threshold.alpha); }},
      {{"loop", "score", false, "eta1 | log_odds"},
       [](RunConfig& c, const std::string& v) { c.loop.threshold.form = parse_form(v); },
       [](const RunConfig& c) {
         return std::string(c.loop.threshold.form == ood::ScoreForm::eta1 ? "eta1" : "log_odds");
       }},
      {{"loop", "similarity_chunk", false, "rows per cosine block"},
       [](RunConfig& c, const std::string& v) { c.loop.similarity_chunk = parse_uint(v); },
       [](const RunConfig& c) { return std::to_string(c.loop.similarity_chunk); }},
      {{"loop", "eval_every_update", false, "evaluate after every update"},
       [](RunConfig& c, const std::string& v) { c.loop.eval_every_update = parse_bool(v); },
       [](const RunConfig& c) { return std::string(c.loop.eval_every_update ? "true" : "false"); }},
  };
  return table;
}

}  // namespace

IniDocument IniDocument::parse(const std::string& text, const std::string& origin) {
  IniDocument doc;
  doc.origin_ = origin;
  std::istringstream in(text);
  std::string raw, section;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(fmt::format("{}:{}: malformed section header", origin, line_no));
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) throw ConfigError(fmt::format("{}:{}: empty section name", origin, line_no));
      doc.sections_[section];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(fmt::format("{}:{}: expected key = value", origin, line_no));
    if (section.empty()) throw ConfigError(fmt::format("{}:{}: key outside any section", origin, line_no));
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(fmt::format("{}:{}: empty key", origin, line_no));
    auto& keys = doc.sections_[section];
    if (keys.count(key))
      throw ConfigError(fmt::format("{}:{}: duplicate key '{}.{}'", origin, line_no, section, key));
    keys[key] = Value{trim(line.substr(eq + 1)), line_no};
  }
  return doc;
}

void IniDocument::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq)
    throw ConfigError(fmt::format("override '{}' is not section.key=value", assignment));
  set(trim(assignment.substr(0, dot)), trim(assignment.substr(dot + 1, eq - dot - 1)), trim(assignment.substr(eq + 1)));
}

void IniDocument::set(const std::string& section, const std::string& key, std::string value) {
  sections_[section][key] = Value{std::move(value), 0};
}

const IniDocument::Value* IniDocument::find(const std::string& section, const std::string& key) const {
  auto s = sections_.find(section);
  if (s == sections_.end()) return nullptr;
  auto k = s->second.find(key);
  return k == s->second.end() ? nullptr : &k->second;
}

const std::vector<KeyInfo>& schema() {
  static const std::vector<KeyInfo> keys = [] {
    std::vector<KeyInfo> out;
    for (const auto& e : entries()) out.push_back(e.info);
    return out;
  }();
  return keys;
}

RunConfig from_document(const IniDocument& doc) {
  std::set<std::pair<std::string, std::string>> known;
  std::set<std::string> known_sections;
  for (const auto& e : entries()) {
    known.insert({e.info.section, e.info.key});
    known_sections.insert(e.info.section);
  }
  auto where = [&](const IniDocument::Value& v) {
    return v.line ? fmt::format("{}:{}", doc.origin(), v.line) : std::string("override");
  };
  for (const auto& [section, keys] : doc.sections()) {
    if (!known_sections.count(section)) throw ConfigError(fmt::format("{}: unknown section [{}]", doc.origin(), section));
    for (const auto& [key, value] : keys)
      if (!known.count({section, key}))
        throw ConfigError(fmt::format("{}: unknown key '{}.{}'", where(value), section, key));
  }

  RunConfig cfg;
  for (const auto& e : entries()) {
    const auto* v = doc.find(e.info.section, e.info.key);
    if (!v) {
      if (e.info.required)
        throw ConfigError(fmt::format("{}: missing required key '{}.{}'", doc.origin(), e.info.section, e.info.key));
      continue;
    }
    try {
      e.set(cfg, v->text);
    } catch (const std::exception& ex) {
      throw ConfigError(fmt::format("{}: '{}.{}' = '{}': {}", where(*v), e.info.section, e.info.key, v->text, ex.what()));
    }
  }
  if (cfg.seeds.empty()) cfg.seeds = {cfg.seed};
  cfg.loop.seed = cfg.seed;
  cfg.validate();
  return cfg;
}

RunConfig load(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  if (!std::filesystem::exists(path)) throw ConfigError(fmt::format("config file '{}' not found", path.string()));
  auto doc = IniDocument::parse(io::read_text_file(path), path.string());
  for (const auto& o : overrides) doc.apply_override(o);
  return from_document(doc);
}

void RunConfig::validate() const {
  try {
    loop.validate();
    loop.threshold.validate();
    stream.schedule.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  if (stream.schedule.timesteps.size() < 2) throw ConfigError("stream.schedule needs timestep 0 and at least one task");
  if (stream.ood_batch_size == 0) throw ConfigError("stream.ood_batch_size must be positive");
  if (stream.corrupted_fraction < 0 || stream.ood_fraction < 0 ||
      stream.corrupted_fraction + stream.ood_fraction >= 1)
    throw ConfigError("stream fractions must be non-negative and sum to less than 1");
  if (stream.corrupted_fraction > 0 && stream.corruptions.empty())
    throw ConfigError("stream.corruptions is empty but corrupted_fraction > 0");
  if (seeds.empty()) throw ConfigError("run.seeds is empty");
  if (ablate_variants.empty()) throw ConfigError("run.variants is empty");
  if (data.source == DataSource::files) {
    if (data.train_path.empty()) throw ConfigError("data.train is required when data.source = files");
    if (data.test_path.empty()) throw ConfigError("data.test is required when data.source = files");
    if (stream.ood_fraction > 0 && data.foreign_path.empty())
      throw ConfigError("stream.ood_fraction > 0 needs data.foreign");
  } else {
    if (data.classes == 0 || data.dims == 0 || data.train_samples == 0 || data.test_samples == 0)
      throw ConfigError("synthetic data needs positive classes, dims and sample counts");
    if (stream.ood_fraction > 0 && data.foreign_classes == 0)
      throw ConfigError("stream.ood_fraction > 0 needs data.foreign_classes > 0");
  }
}

std::string to_text(const RunConfig& cfg) {
  std::string out;
  std::string section;
  for (const auto& e : entries()) {
    std::string value = e.get(cfg);
    if (value.empty()) continue;
    if (e.info.section != section) {
      section = e.info.section;
      out += fmt::format("{}[{}]\n", out.empty() ? "" : "\n", section);
    }
    out += fmt::format("{} = {}\n", e.info.key, value);
  }
  return out;
}

stream::TaskSchedule parse_schedule(const std::string& text) {
  stream::TaskSchedule s;
  for (const auto& step : split(text, ';')) {
    if (step.empty()) throw std::invalid_argument("empty timestep in schedule");
    std::vector<std::uint32_t> classes;
    for (const auto& c : split(step, ',')) {
      const auto v = parse_uint(c);
      if (v > UINT32_MAX) throw std::invalid_argument("class id out of range");
      classes.push_back(static_cast<std::uint32_t>(v));
    }
    s.timesteps.push_back(std::move(classes));
  }
  s.validate();
  return s;
}

std::string format_schedule(const stream::TaskSchedule& schedule) {
  std::string out;
  for (std::size_t t = 0; t < schedule.timesteps.size(); ++t) {
    if (t) out += ';';
    for (std::size_t i = 0; i < schedule.timesteps[t].size(); ++i)
      out += (i ? "," : "") + std::to_string(schedule.timesteps[t][i]);
  }
  return out;
}

}  // namespace bowl::config
