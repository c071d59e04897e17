#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>

#include "bowl/error.hpp"
#include "bowl/training.hpp"

using namespace bowl;

namespace {

stream::Dataset blobs(std::size_t n, std::uint64_t seed) {
  stream::SynthSpec spec;
  spec.n_classes = 3;
  spec.dims = 6;
  spec.n_samples = n;
  spec.seed = seed;
  spec.separation = 0.4;
  spec.stddev = 0.08;
  return synth_generate(spec);
}

memory::MemoryBuffer fill(const std::vector<stream::Sample>& samples, std::size_t n) {
  memory::MemoryBuffer buf(std::max<std::size_t>(n, 1));
  for (std::size_t i = 0; i < n; ++i) buf.insert({samples[i].features, samples[i].label, 1.0, 0, samples[i].id});
  return buf;
}

}  // namespace

TEST_CASE("class map") {
  ClassMap m(std::vector<std::uint32_t>{5, 2});
  CHECK(m.size() == 2);
  CHECK(m.index_of(2) == 1);
  std::vector<std::uint32_t> more{2, 7, 9, 7};
  CHECK(m.add(more) == 2);
  CHECK(m.labels() == std::vector<std::uint32_t>{5, 2, 7, 9});
  CHECK_THROWS_AS(m.index_of(4), std::out_of_range);
}

TEST_CASE("epoch step counts") {
  auto data = blobs(5000, 1).samples();
  Rng rng(1);
  auto net = nn::Network<float>::mlp({6, {8}, 3}, rng);
  nn::SgdOptimizer<float> opt(0.01, 0.9, 5e-4);
  ClassMap classes(std::vector<std::uint32_t>{0, 1, 2});
  net.set_mode(nn::Mode::eval);
  CHECK(train_one_epoch(net, fill(data, 5000), opt, 256, classes, rng).steps == 20);
  CHECK(train_one_epoch(net, fill(data, 1), opt, 256, classes, rng).steps == 1);
  CHECK(train_one_epoch(net, fill(data, 257), opt, 256, classes, rng).steps == 2);
  CHECK(opt.steps() == 23);
  CHECK(net.mode() == nn::Mode::eval);
  CHECK_THROWS_AS(train_one_epoch(net, memory::MemoryBuffer(4), opt, 8, classes, rng), DegenerateInputError);
  CHECK_THROWS_AS(train_one_epoch(net, fill(data, 4), opt, 0, classes, rng), std::invalid_argument);
  ClassMap wrong(std::vector<std::uint32_t>{0, 1});
  CHECK_THROWS_AS(train_one_epoch(net, fill(data, 4), opt, 2, wrong, rng), ShapeError);
}

TEST_CASE("visit order is a permutation fixed by the seed") {
  Rng a(42), b(42);
  auto pa = shuffled_indices(1000, a);
  auto pb = shuffled_indices(1000, b);
  CHECK(pa == pb);
  std::sort(pa.begin(), pa.end());
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i] == i);

  auto data = blobs(300, 2).samples();
  auto buf = fill(data, 300);
  ClassMap classes(std::vector<std::uint32_t>{0, 1, 2});
  Rng init(3);
  auto n1 = nn::Network<float>::mlp({6, {8}, 3}, init);
  auto n2 = n1;
  nn::SgdOptimizer<float> o1(0.05, 0.9, 5e-4), o2(0.05, 0.9, 5e-4);
  Rng r1(7), r2(7);
  train_one_epoch(n1, buf, o1, 16, classes, r1);
  train_one_epoch(n2, buf, o2, 16, classes, r2);
  CHECK(n1.to_named_tensors() == n2.to_named_tensors());
}

TEST_CASE("training on separable blobs learns them") {
  auto train = blobs(900, 4).samples();
  auto test = blobs(300, 5).samples();
  auto buf = fill(train, 900);
  ClassMap classes(std::vector<std::uint32_t>{0, 1, 2});
  Rng rng(8);
  auto net = nn::Network<float>::mlp({6, {16}, 3}, rng);
  nn::SgdOptimizer<float> opt(0.05, 0.9, 5e-4);
  CHECK(accuracy(net, test, classes) < 0.9);
  for (int e = 0; e < 5; ++e) train_one_epoch(net, buf, opt, 32, classes, rng);
  CHECK(accuracy(net, test, classes) > 0.95);

  std::vector<stream::Sample> sentinels{test[0]};
  sentinels[0].origin = stream::Origin::foreign;
  CHECK_THROWS_AS(accuracy(net, sentinels, classes), DegenerateInputError);
}

TEST_CASE("labels are routed through the class map") {
  // Dataset labels 10 and 20 mapped onto outputs 0 and 1.
  auto data = blobs(400, 6).samples();
  std::vector<stream::Sample> two;
  for (auto s : data)
    if (s.label < 2) {
      s.label = s.label == 0 ? 10 : 20;
      two.push_back(s);
    }
  ClassMap classes(std::vector<std::uint32_t>{10, 20});
  Rng rng(9);
  auto net = nn::Network<float>::mlp({6, {16}, 2}, rng);
  nn::SgdOptimizer<float> opt(0.05, 0.9, 5e-4);
  for (int e = 0; e < 5; ++e) train_epoch_on_samples(net, two, opt, 32, classes, rng);
  CHECK(accuracy(net, two, classes) > 0.95);
}
