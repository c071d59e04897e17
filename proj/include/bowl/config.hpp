#pragma once

// Run configuration files: "[section]" headers, "key = value" lines and "#"
// comments. Unknown sections or keys are errors.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "bowl/engine.hpp"
#include "bowl/stream.hpp"

namespace bowl::config {

// section -> key -> value, with the line each key came from.
class IniDocument {
 public:
  struct Value {
    std::string text;
    std::size_t line = 0;  // 0 for overrides
  };

  static IniDocument parse(const std::string& text, const std::string& origin = "config");

  // "section.key=value"
  void apply_override(const std::string& assignment);
  void set(const std::string& section, const std::string& key, std::string value);

  const Value* find(const std::string& section, const std::string& key) const;
  const std::map<std::string, std::map<std::string, Value>>& sections() const { return sections_; }
  const std::string& origin() const { return origin_; }

 private:
  std::string origin_;
  std::map<std::string, std::map<std::string, Value>> sections_;
};

enum class DataSource { synthetic, files };

struct DataConfig {
  DataSource source = DataSource::synthetic;
  // files
  std::filesystem::path train_path, test_path, foreign_path;
  // synthetic
  std::size_t classes = 8;
  std::size_t dims = 50;
  double separation = 0.4;
  double stddev = 0.2;
  std::size_t train_samples = 5000;
  std::size_t test_samples = 2000;
  std::size_t foreign_classes = 5;  // 0: no foreign data
  double foreign_separation_factor = 10.0;
  std::size_t foreign_samples = 2000;
};

struct StreamConfig {
  stream::TaskSchedule schedule;
  std::size_t ood_batch_size = 8;
  double corrupted_fraction = 0;
  std::vector<stream::CorruptionSpec> corruptions{{stream::CorruptionType::gaussian, 0.5}};
  double ood_fraction = 0;
};

struct RunConfig {
  engine::Variant variant = engine::Variant::full;
  std::vector<engine::Variant> ablate_variants{engine::Variant::full, engine::Variant::no_ood,
                                               engine::Variant::random_query, engine::Variant::no_cl};
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> seeds;  // ablation seeds; defaults to {seed}
  std::size_t jobs = 0;              // 0: hardware concurrency
  std::filesystem::path output_dir = "bowl_out";
  DataConfig data;
  StreamConfig stream;
  engine::LoopConfig loop;

  void validate() const;
};

RunConfig from_document(const IniDocument& doc);
RunConfig load(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

// Resolved configuration in the file format; parses back to the same values.
std::string to_text(const RunConfig& cfg);

// "0,1;2,3" -> {{0,1},{2,3}}
stream::TaskSchedule parse_schedule(const std::string& text);
std::string format_schedule(const stream::TaskSchedule& schedule);

// Every key the format accepts, as (section, key, required).
struct KeyInfo {
  std::string section, key;
  bool required = false;
  std::string help;
};
const std::vector<KeyInfo>& schema();

}  // namespace bowl::config
