#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <functional>
#include <sstream>

#include "bowl/bnt_format.hpp"
#include "bowl/commands.hpp"
#include "bowl/config.hpp"
#include "bowl/error.hpp"
#include "bowl/io.hpp"

using namespace bowl;
namespace fs = std::filesystem;

namespace {

const char* kTiny = R"(# tiny run
[run]
variant = full
seed = 3
output_dir = unused

[data]
source = synthetic
classes = 4
dims = 12
separation = 0.4
stddev = 0.1
train_samples = 800
test_samples = 400
foreign_classes = 2

[stream]
schedule = 0,1;2,3
ood_fraction = 0.2
corrupted_fraction = 0.2

[model]
hidden = 16,8

[loop]
acquisition_batch = 32
buffer_capacity = 100
pretrain_epochs = 3
)";

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

config::RunConfig tiny(const fs::path& out, std::vector<std::string> overrides = {}) {
  auto doc = config::IniDocument::parse(kTiny, "tiny.ini");
  for (const auto& o : overrides) doc.apply_override(o);
  auto cfg = config::from_document(doc);
  cfg.output_dir = out;
  return cfg;
}

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("ini parsing") {
  auto doc = config::IniDocument::parse("# head\n[a]\nx = 1 # trailing\n\n[b]\ny=two words\n");
  REQUIRE(doc.find("a", "x"));
  CHECK(doc.find("a", "x")->text == "1");
  CHECK(doc.find("a", "x")->line == 3);
  CHECK(doc.find("b", "y")->text == "two words");
  CHECK(doc.find("b", "x") == nullptr);
  CHECK_THROWS_AS(config::IniDocument::parse("[a]\nx = 1\nx = 2\n"), ConfigError);
  CHECK_THROWS_AS(config::IniDocument::parse("x = 1\n"), ConfigError);
  CHECK_THROWS_AS(config::IniDocument::parse("[a]\njunk\n"), ConfigError);
  CHECK_THROWS_AS(config::IniDocument::parse("[a\n"), ConfigError);
  doc.apply_override("a.x=5");
  CHECK(doc.find("a", "x")->text == "5");
  CHECK_THROWS_AS(doc.apply_override("novalue"), ConfigError);
}

TEST_CASE("unknown and missing keys are named") {
  CHECK(error_of([] { tiny("o", {"loop.acquisiton_batch=4"}); }).find("loop.acquisiton_batch") != std::string::npos);
  CHECK(error_of([] { tiny("o", {"extra.key=4"}); }).find("[extra]") != std::string::npos);
  auto doc = config::IniDocument::parse("[run]\nseed = 1\n[data]\nsource = synthetic\n", "partial.ini");
  const auto msg = error_of([&] { config::from_document(doc); });
  CHECK(msg.find("stream.schedule") != std::string::npos);
  CHECK(msg.find("partial.ini") != std::string::npos);
  CHECK(error_of([] { tiny("o", {"loop.alpha=high"}); }).find("loop.alpha") != std::string::npos);
  CHECK(error_of([] { tiny("o", {"run.variant=best"}); }).find("best") != std::string::npos);
  CHECK(!error_of([] { tiny("o", {"stream.ood_fraction=0.6", "stream.corrupted_fraction=0.4"}); }).empty());
}

TEST_CASE("required keys") {
  int required = 0;
  for (const auto& k : config::schema()) required += k.required;
  CHECK(required == 3);
}

TEST_CASE("resolved config round-trips") {
  auto cfg = tiny("some/dir", {"run.seeds=4,5", "loop.score=log_odds", "stream.corruptions=shot:0.3,impulse:0.1"});
  const auto text = config::to_text(cfg);
  auto again = config::from_document(config::IniDocument::parse(text));
  CHECK(config::to_text(again) == text);
  CHECK(again.seeds == std::vector<std::uint64_t>{4, 5});
  CHECK(again.loop.threshold.form == ood::ScoreForm::log_odds);
  CHECK(again.stream.corruptions.size() == 2);
  CHECK(again.loop.hidden == std::vector<std::size_t>{16, 8});
}

TEST_CASE("schedule syntax") {
  auto s = config::parse_schedule("0,1; 2,3 ;4");
  CHECK(s.timesteps == std::vector<std::vector<std::uint32_t>>{{0, 1}, {2, 3}, {4}});
  CHECK(config::format_schedule(s) == "0,1;2,3;4");
  CHECK_THROWS(config::parse_schedule("0,1;;2"));
  CHECK_THROWS(config::parse_schedule("0,x"));
}

TEST_CASE("run writes every output and is reproducible") {
  TempDir dir("bowl_cli_run");
  std::ostringstream log;
  REQUIRE(cli::cmd_run(tiny(dir.path / "a"), log) == cli::kExitOk);
  REQUIRE(cli::cmd_run(tiny(dir.path / "b"), log) == cli::kExitOk);
  for (const char* f : {"report.csv", "summary.txt", "buffer_composition.csv", "model.bnt", "metrics.csv",
                        "timesteps.csv", "config.ini"})
    CHECK(fs::exists(dir.path / "a" / f));
  CHECK(io::read_text_file(dir.path / "a" / "summary.txt") == io::read_text_file(dir.path / "b" / "summary.txt"));
  CHECK(io::read_text_file(dir.path / "a" / "model.bnt") == io::read_text_file(dir.path / "b" / "model.bnt"));

  auto ckpt = cli::load_checkpoint(dir.path / "a" / "model.bnt");
  CHECK(ckpt.classes.size() == 4);
  CHECK(ckpt.net.n_classes() == 4);
}

TEST_CASE("gen-data") {
  TempDir dir("bowl_cli_gen");
  std::ostringstream log;
  cli::GenDataOptions opt;
  opt.spec.n_classes = 2;
  opt.spec.dims = 5;
  opt.spec.n_samples = 1000;
  opt.spec.seed = 11;
  opt.output = dir.path / "a.bnt";
  REQUIRE(cli::cmd_gen_data(opt, log) == cli::kExitOk);
  auto tensors = bnt::read_file(opt.output);
  CHECK(bnt::require(tensors, "labels").dims == std::vector<std::uint32_t>{1000});
  auto loaded = stream::load_dataset(opt.output);
  auto direct = stream::synth_generate(opt.spec);
  CHECK(loaded.labels == direct.labels);
  CHECK(loaded.inputs.storage() == direct.inputs.storage());

  opt.output = dir.path / "b.bnt";
  REQUIRE(cli::cmd_gen_data(opt, log) == cli::kExitOk);
  CHECK(io::read_text_file(dir.path / "a.bnt") == io::read_text_file(dir.path / "b.bnt"));

  opt.spec.n_classes = 0;
  CHECK_THROWS_AS(cli::cmd_gen_data(opt, log), ConfigError);
}

TEST_CASE("ood-hist and eval") {
  TempDir dir("bowl_cli_hist");
  std::ostringstream log;
  REQUIRE(cli::cmd_run(tiny(dir.path / "run", {"stream.ood_fraction=0", "stream.corrupted_fraction=0"}), log) == 0);

  cli::GenDataOptions gen;
  gen.spec.n_classes = 4;
  gen.spec.dims = 12;
  gen.spec.separation = 0.4;
  gen.spec.stddev = 0.1;
  gen.spec.n_samples = 800;
  gen.spec.seed = 21;
  gen.output = dir.path / "in.bnt";
  REQUIRE(cli::cmd_gen_data(gen, log) == 0);
  gen.from = gen.output;
  gen.corruption = stream::CorruptionSpec{stream::CorruptionType::gaussian, 0.5};
  gen.output = dir.path / "noisy.bnt";
  REQUIRE(cli::cmd_gen_data(gen, log) == 0);

  cli::OodHistOptions opt;
  opt.checkpoint = dir.path / "run" / "model.bnt";
  opt.in_set = dir.path / "in.bnt";
  opt.out_set = dir.path / "noisy.bnt";
  opt.output_dir = dir.path / "hist";
  std::ostringstream out;
  REQUIRE(cli::cmd_ood_hist(opt, out) == 0);
  const auto summary = io::read_text_file(opt.output_dir / "ood_summary.txt");
  const auto pos = summary.find("auroc_eta1 = ");
  REQUIRE(pos != std::string::npos);
  CHECK(std::stod(summary.substr(pos + 13)) >= 0.90);
  CHECK(fs::exists(opt.output_dir / "ood_eta1.csv"));
  CHECK(fs::exists(opt.output_dir / "ood_entropy.csv"));

  opt.out_set = opt.in_set;
  std::ostringstream same;
  cli::cmd_ood_hist(opt, same);
  CHECK(same.str().find("auroc_eta1 = 0.500000") != std::string::npos);

  opt.out_set.clear();
  CHECK_THROWS_AS(cli::cmd_ood_hist(opt, same), ConfigError);

  std::ostringstream ev;
  REQUIRE(cli::cmd_eval(dir.path / "run" / "model.bnt", dir.path / "in.bnt", ev) == 0);
  CHECK(ev.str().find("accuracy = ") != std::string::npos);
  CHECK_THROWS(cli::cmd_eval(dir.path / "missing.bnt", dir.path / "in.bnt", ev));
}

TEST_CASE("ablate") {
  TempDir dir("bowl_cli_ablate");
  std::ostringstream log;
  REQUIRE(cli::cmd_ablate(tiny(dir.path / "two", {"run.seeds=1,2"}), log) == cli::kExitOk);
  int runs = 0;
  for (const auto& e : fs::directory_iterator(dir.path / "two")) runs += e.is_directory();
  CHECK(runs == 8);
  const auto csv = io::read_text_file(dir.path / "two" / "ablation.csv");
  CHECK(csv.rfind("variant,runs,t1_mean,t1_std,average_mean,average_std,samples_mean,samples_std\n", 0) == 0);
  for (const char* v : {"\nfull,2,", "\nno_ood,2,", "\nrandom_query,2,", "\nno_cl,2,"})
    CHECK(csv.find(v) != std::string::npos);

  REQUIRE(cli::cmd_ablate(tiny(dir.path / "one", {"run.seeds=7", "run.variants=full"}), log) == cli::kExitOk);
  const auto one = io::read_text_file(dir.path / "one" / "ablation.csv");
  const auto row = one.substr(one.find("\nfull,1,") + 1);
  std::vector<std::string> cells;
  std::stringstream ss(row.substr(0, row.find('\n')));
  for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
  REQUIRE(cells.size() == 8);
  CHECK(cells[3] == "0.000000");
  CHECK(cells[5] == "0.000000");
}
