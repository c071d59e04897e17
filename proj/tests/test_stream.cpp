#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "bowl/error.hpp"
#include "bowl/stream.hpp"

using namespace bowl;
using namespace bowl::stream;

namespace {

Dataset small_dataset(std::size_t classes = 4, std::size_t n = 400, std::uint64_t seed = 1) {
  SynthSpec spec;
  spec.n_classes = classes;
  spec.dims = 8;
  spec.n_samples = n;
  spec.seed = seed;
  return synth_generate(spec);
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("bowl_test_stream_" + name);
}

}  // namespace

TEST_CASE("split tasks are disjoint and cover the schedule classes") {
  auto ds = small_dataset();
  TaskSchedule sched{{{0, 1}, {2, 3}}, true};
  auto tasks = make_split_tasks(ds, sched, 16, 7);
  REQUIRE(tasks.size() == 2);
  std::set<std::uint64_t> ids0, ids1;
  for (const auto& b : tasks[0])
    for (const auto& s : b) {
      CHECK((s.label == 0 || s.label == 1));
      ids0.insert(s.id);
    }
  for (const auto& b : tasks[1])
    for (const auto& s : b) {
      CHECK((s.label == 2 || s.label == 3));
      ids1.insert(s.id);
    }
  CHECK(ids0.size() == 200);
  CHECK(ids1.size() == 200);
  for (auto id : ids0) CHECK(ids1.count(id) == 0);
  for (std::size_t i = 0; i + 1 < tasks[0].size(); ++i) CHECK(tasks[0][i].size() == 16);
}

TEST_CASE("split tasks are deterministic in the seed") {
  auto ds = small_dataset();
  TaskSchedule sched{{{0, 1}, {2, 3}}, true};
  auto a = make_split_tasks(ds, sched, 16, 7);
  auto b = make_split_tasks(ds, sched, 16, 7);
  auto c = make_split_tasks(ds, sched, 16, 8);
  auto ids = [](const std::vector<Stream>& t) {
    std::vector<std::uint64_t> out;
    for (const auto& s : t)
      for (const auto& batch : s)
        for (const auto& x : batch) out.push_back(x.id);
    return out;
  };
  CHECK(ids(a) == ids(b));
  CHECK(ids(a) != ids(c));
}

TEST_CASE("schedule validation") {
  auto ds = small_dataset();
  CHECK_THROWS_AS(make_split_tasks(ds, {{{0, 1}, {1, 2}}, true}, 8, 0), std::invalid_argument);
  CHECK_NOTHROW(make_split_tasks(ds, {{{0, 1}, {1, 2}}, false}, 8, 0));
  CHECK_THROWS_AS(make_split_tasks(ds, {{{0, 9}}, true}, 8, 0), std::invalid_argument);
  CHECK_THROWS_AS(make_split_tasks(ds, {{}, true}, 8, 0), std::invalid_argument);
  CHECK_THROWS_AS(make_split_tasks(ds, {{{0}}, true}, 0, 0), std::invalid_argument);
  TaskSchedule s{{{0, 1}, {2}, {3}}, true};
  CHECK(s.seen_through(1) == std::vector<std::uint32_t>{0, 1, 2});
}

TEST_CASE("corruptions keep shape and range") {
  auto ds = small_dataset(4, 64);
  for (auto type : {CorruptionType::gaussian, CorruptionType::shot, CorruptionType::impulse}) {
    auto out = corrupt(ds.inputs, type, 0.5, 3);
    CHECK(out.dims() == ds.inputs.dims());
    CHECK(out != ds.inputs);
    for (float v : out.storage()) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
    CHECK(corrupt(ds.inputs, type, 0.5, 3) == out);
  }
  auto imp = corrupt(ds.inputs, CorruptionType::impulse, 1.0, 3);
  for (float v : imp.storage()) CHECK((v == 0.0f || v == 1.0f));
  CHECK_THROWS_AS(corrupt(ds.inputs, CorruptionType::impulse, 1.5, 3), std::invalid_argument);
  CHECK_THROWS_AS(corrupt(ds.inputs, CorruptionType::gaussian, 0.0, 3), std::invalid_argument);
  CHECK(parse_corruption("shot") == CorruptionType::shot);
  CHECK_THROWS_AS(parse_corruption("fog"), std::invalid_argument);
}

TEST_CASE("shot noise is unbiased away from the clamp") {
  Tensor x({1, 20000}, 0.4f);
  auto out = corrupt(x, CorruptionType::shot, 1.0, 11);
  double mean = 0;
  for (float v : out.storage()) mean += v;
  mean /= 20000.0;
  CHECK(mean == doctest::Approx(0.4).epsilon(0.01));
}

TEST_CASE("mixing with zero fractions is the identity") {
  auto ds = small_dataset();
  auto tasks = make_split_tasks(ds, {{{0, 1}}, true}, 16, 1);
  std::uint64_t next_id = 1000;
  std::vector<std::uint32_t> cls{0, 1};
  auto out = mix_streams(tasks[0], MixSpec{}, nullptr, cls, 5, next_id);
  REQUIRE(out.size() == tasks[0].size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    REQUIRE(out[i].size() == tasks[0][i].size());
    for (std::size_t j = 0; j < out[i].size(); ++j) CHECK(out[i][j].id == tasks[0][i][j].id);
  }
  CHECK(next_id == 1000);
}

TEST_CASE("mixing injects batches at the configured rates") {
  // 3000 clean batches; each slot is injected with probability 0.5, so about
  // 3000 injected batches on top, half corrupted and half foreign.
  std::vector<Sample> samples;
  for (std::uint64_t i = 0; i < 3000; ++i) samples.push_back({{0.5f, 0.5f}, 0, i, Origin::clean});
  auto stream = batch_samples(samples, 1);
  Dataset foreign{Tensor({2, 2}, std::vector<float>{0.1f, 0.9f, 0.9f, 0.1f}), {7, 7}, {}};
  MixSpec mix;
  mix.corrupted_fraction = 0.25;
  mix.ood_fraction = 0.25;
  std::uint64_t next_id = 1u << 20;
  std::vector<std::uint32_t> cls{0, 1};
  auto out = mix_streams(stream, mix, &foreign, cls, 9, next_id);
  std::size_t clean = 0, corrupted = 0, foreign_n = 0;
  std::set<std::uint64_t> ids;
  for (const auto& b : out) {
    REQUIRE(b.size() == 1);
    ids.insert(b[0].id);
    switch (b[0].origin) {
      case Origin::clean: ++clean; break;
      case Origin::corrupted: ++corrupted; break;
      case Origin::foreign:
        ++foreign_n;
        CHECK(b[0].is_sentinel());
        CHECK((b[0].label == 0 || b[0].label == 1));
        break;
    }
  }
  CHECK(clean == 3000);
  CHECK(ids.size() == out.size());
  // Each count has sd of roughly 55.
  CHECK(corrupted == doctest::Approx(1500).epsilon(0.12));
  CHECK(foreign_n == doctest::Approx(1500).epsilon(0.12));
  CHECK(next_id == (1u << 20) + corrupted + foreign_n);

  MixSpec bad;
  bad.corrupted_fraction = 0.6;
  bad.ood_fraction = 0.4;
  CHECK_THROWS_AS(mix_streams(stream, bad, &foreign, cls, 9, next_id), std::invalid_argument);
  MixSpec no_foreign;
  no_foreign.ood_fraction = 0.1;
  CHECK_THROWS_AS(mix_streams(stream, no_foreign, nullptr, cls, 9, next_id), std::invalid_argument);
}

TEST_CASE("synthetic blobs") {
  SynthSpec spec;
  spec.n_classes = 3;
  spec.dims = 5;
  spec.n_samples = 301;
  spec.separation = 0.4;
  spec.stddev = 0.0;
  auto ds = synth_generate(spec);
  std::map<std::uint32_t, int> hist;
  for (auto l : ds.labels) ++hist[l];
  CHECK(hist[0] == 101);
  CHECK(hist[1] == 100);
  CHECK(hist[2] == 100);
  // With zero noise the rows are the class means, pairwise `separation` apart.
  double d2 = 0;
  for (std::size_t c = 0; c < 5; ++c) {
    const double diff = ds.inputs.at(0, c) - ds.inputs.at(1, c);
    d2 += diff * diff;
  }
  CHECK(std::sqrt(d2) == doctest::Approx(0.4).epsilon(1e-5));

  spec.n_samples = 0;
  CHECK_THROWS_AS(synth_generate(spec), std::invalid_argument);
  spec.n_samples = 10;
  spec.dims = 2;
  CHECK_THROWS_AS(synth_generate(spec), std::invalid_argument);
}

TEST_CASE("dataset round trip and malformed files") {
  auto ds = small_dataset(4, 50);
  auto path = temp_path("ds.bnt");
  save_dataset(ds, path);
  auto back = load_dataset(path);
  CHECK(back.inputs == ds.inputs);
  CHECK(back.labels == ds.labels);

  {
    std::ofstream f(path, std::ios::binary);
    f << "XXXX";
  }
  CHECK_THROWS_AS(load_dataset(path), FormatError);
  std::filesystem::remove(path);
  CHECK_THROWS(load_dataset(path));
}
