#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <limits>
#include <sstream>

#include "bowl/bnt_format.hpp"
#include "bowl/error.hpp"
#include "bowl/io.hpp"
#include "bowl/ood.hpp"
#include "bowl/training.hpp"

using namespace bowl;
using namespace bowl::ood;

namespace {

nn::ActivationTrace trace_from(const std::vector<std::vector<float>>& layer_rows) {
  nn::ActivationTrace t;
  for (const auto& r : layer_rows) {
    nn::BnActivations<float> a;
    a.channels = r.size();
    a.standardized = Tensor({1, r.size()}, r);
    a.post_affine = a.standardized;
    t.layers.push_back(a);
  }
  return t;
}

stream::Dataset blobs(std::size_t n, std::uint64_t seed) {
  stream::SynthSpec spec;
  spec.n_classes = 3;
  spec.dims = 8;
  spec.n_samples = n;
  spec.seed = seed;
  spec.separation = 0.4;
  spec.stddev = 0.08;
  return synth_generate(spec);
}

// Small net trained briefly on blobs so that its running statistics describe
// the data.
struct Trained {
  nn::Network<float> net;
  std::vector<stream::Sample> train;
  std::vector<stream::Sample> test;
};

const Trained& trained() {
  static const Trained t = [] {
    Trained out;
    out.train = blobs(1200, 1).samples();
    out.test = blobs(800, 2).samples(100000);
    Rng rng(3);
    out.net = nn::Network<float>::mlp({8, {16, 8}, 3}, rng);
    nn::SgdOptimizer<float> opt(0.05, 0.9, 5e-4);
    ClassMap classes(std::vector<std::uint32_t>{0, 1, 2});
    for (int e = 0; e < 4; ++e) train_epoch_on_samples(out.net, out.train, opt, 32, classes, rng);
    out.net.set_mode(nn::Mode::eval);
    return out;
  }();
  return t;
}

std::string serialized(const nn::Network<float>& net) {
  std::ostringstream os;
  bnt::write(os, net.to_named_tensors());
  return os.str();
}

stream::Stream noise_stream(std::size_t batches, std::size_t b, std::size_t dim, double mean, double sd,
                            std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> dist(mean, sd);
  stream::Stream s;
  for (std::size_t k = 0; k < batches; ++k) {
    stream::Batch batch;
    for (std::size_t i = 0; i < b; ++i) {
      std::vector<float> f(dim);
      for (auto& v : f) v = static_cast<float>(dist(rng));
      batch.push_back({f, 0, 500000 + k * b + i, stream::Origin::foreign});
    }
    s.push_back(batch);
  }
  return s;
}

}  // namespace

TEST_CASE("eta0 is the sum of squared standardized values") {
  CHECK(eta0_per_sample(trace_from({{1.0f, -2.0f, 0.5f}}))[0] == doctest::Approx(5.25));
  CHECK(eta0_per_sample(trace_from({{1.0f, 1.0f}, {2.0f}}))[0] == doctest::Approx(6.0));
  CHECK(eta0_per_sample(trace_from({{0.0f, 0.0f}}))[0] == 0.0);
  CHECK_THROWS_AS(eta0_per_sample(nn::ActivationTrace{}), DegenerateInputError);
}

TEST_CASE("eta0 of standard normal activations has mean d") {
  Rng rng(11);
  std::normal_distribution<float> z(0.0f, 1.0f);
  const std::size_t d = 100, n = 10000;
  nn::BnActivations<float> a;
  a.channels = d;
  a.standardized = Tensor({n, d});
  for (auto& v : a.standardized.storage()) v = z(rng);
  a.post_affine = a.standardized;
  nn::ActivationTrace t;
  t.layers.push_back(a);
  double mean = 0;
  for (double v : eta0_per_sample(t)) mean += v;
  mean /= double(n);
  CHECK(std::abs(mean - 100.0) <= 5.0);
}

TEST_CASE("eta1 values and shape") {
  CHECK(eta1_from_eta0(1.0, 1) == doctest::Approx(1.0));
  CHECK(eta1_from_eta0(4.0, 4) == doctest::Approx(4.0 - 4.0 * std::log(4.0)));
  CHECK(eta1_from_eta0(4.0, 4) == doctest::Approx(-1.5452).epsilon(1e-4));
  CHECK(eta1_from_eta0(0.4, 4) > eta1_from_eta0(4.0, 4));
  CHECK(eta1_from_eta0(40.0, 4) > eta1_from_eta0(4.0, 4));
  CHECK(eta1_from_eta0(0.0, 4) == std::numeric_limits<double>::infinity());
  CHECK_THROWS(eta1_from_eta0(-1.0, 4));
  // Strictly decreasing below d, strictly increasing above.
  const std::size_t d = 24;
  double prev = eta1_from_eta0(0.01, d);
  for (double x = 0.02; x < double(d); x += 0.01) {
    const double v = eta1_from_eta0(x, d);
    CHECK(v < prev);
    prev = v;
  }
  prev = eta1_from_eta0(double(d), d);
  for (double x = double(d) + 0.01; x < 10.0 * d; x += 0.37) {
    const double v = eta1_from_eta0(x, d);
    CHECK(v > prev);
    prev = v;
  }
  CHECK(score_from_eta0(7.0, 3, ScoreForm::log_odds) == doctest::Approx(0.5 * eta1_from_eta0(7.0, 3)));
}

TEST_CASE("input at the running mean scores eta0 = 0") {
  Rng rng(1);
  auto net = nn::Network<float>::mlp({3, {4}, 2}, rng);
  auto& dense = std::get<nn::Dense<float>>(net.body()[0]);
  dense.weight.fill(0.0f);
  dense.bias.fill(0.0f);
  auto s = batch_ood_score(net, Tensor({2, 3}, 0.7f));
  CHECK(s.eta0 == 0.0);
  CHECK(s.eta1 == std::numeric_limits<double>::infinity());
  CHECK(s.d == 4);
}

TEST_CASE("batch scores on a trained net") {
  const auto& t = trained();
  const auto before = serialized(t.net);

  auto one = t.test[0].features;
  std::vector<float> rep;
  for (int i = 0; i < 8; ++i) rep.insert(rep.end(), one.begin(), one.end());
  auto single = batch_ood_score(t.net, Tensor({1, 8}, one));
  auto batch = batch_ood_score(t.net, Tensor({8, 8}, rep));
  CHECK(batch.eta1 == doctest::Approx(single.eta1).epsilon(1e-6));
  CHECK(batch.d == 24);

  std::vector<float> ref, scaled;
  for (int i = 0; i < 8; ++i)
    for (float v : t.test[i].features) {
      ref.push_back(v);
      scaled.push_back(10.0f * v);
    }
  auto a = batch_ood_score(t.net, Tensor({8, 8}, ref));
  auto b = batch_ood_score(t.net, Tensor({8, 8}, scaled));
  CHECK(b.eta0 > a.eta0);
  CHECK(b.eta1 > a.eta1);

  CHECK_THROWS_AS(batch_ood_score(t.net, Tensor({0, 8})), DegenerateInputError);
  CHECK(serialized(t.net) == before);
}

TEST_CASE("quantile convention") {
  std::vector<double> v;
  for (int i = 100; i >= 1; --i) v.push_back(i);
  CHECK(empirical_quantile(v, 0.99) == 99.0);
  CHECK(empirical_quantile(v, 0.5) == 50.0);
  CHECK(empirical_quantile(v, 0.001) == 1.0);
  CHECK(empirical_quantile({3.0}, 0.9) == 3.0);
  CHECK_THROWS(empirical_quantile(v, 1.0));
  CHECK_THROWS(empirical_quantile({}, 0.5));
}

TEST_CASE("bootstrap threshold") {
  const auto& t = trained();
  // One repeated point: every bootstrap score is that point's score.
  memory::MemoryBuffer rep(20);
  for (std::uint64_t i = 0; i < 20; ++i) rep.insert({t.test[0].features, 0, 1.0, 0, i});
  const double s = batch_ood_score(t.net, Tensor({1, 8}, t.test[0].features)).eta1;
  for (double alpha : {0.1, 0.5, 0.99}) {
    Rng rng(4);
    CHECK(bootstrap_threshold(t.net, rep, {100, 8, alpha}, rng) == doctest::Approx(s).epsilon(1e-6));
  }

  memory::MemoryBuffer buf(600);
  for (std::size_t i = 0; i < 600; ++i) buf.insert({t.train[i].features, t.train[i].label, 1.0, 0, t.train[i].id});
  Rng r1(5), r2(5);
  const double tau = bootstrap_threshold(t.net, buf, {}, r1);
  auto scores = bootstrap_scores(t.net, memory::buffer_rows(buf), {}, r2);
  std::sort(scores.begin(), scores.end());
  CHECK(tau == scores[98]);

  memory::MemoryBuffer tiny(4);
  tiny.insert({t.train[0].features, 0, 1.0, 0, 1});
  Rng r3(1);
  CHECK_THROWS_AS(bootstrap_threshold(t.net, tiny, {}, r3), DegenerateInputError);
  CHECK_THROWS(bootstrap_threshold(t.net, buf, {100, 8, 1.0}, r3));
}

TEST_CASE("filtering separates clean from noise batches") {
  const auto& t = trained();
  memory::MemoryBuffer buf(600);
  for (std::size_t i = 0; i < 600; ++i) buf.insert({t.train[i].features, t.train[i].label, 1.0, 0, t.train[i].id});
  Rng rng(6);
  const double tau = bootstrap_threshold(t.net, buf, {}, rng);

  auto clean = stream::batch_samples(t.test, 8);
  auto fc = filter_stream(t.net, clean, tau);
  CHECK(fc.accepted_batches + fc.rejected_batches == clean.size());
  CHECK(fc.accepted.size() + fc.rejected_samples == t.test.size());
  CHECK(double(fc.accepted_batches) / double(clean.size()) >= 0.9);
  // Order within accepted is stream order.
  for (std::size_t i = 1; i < fc.accepted.size(); ++i) CHECK(fc.accepted[i].id > fc.accepted[i - 1].id);

  auto noise = noise_stream(100, 8, 8, 0.5, 0.6, 7);
  auto fn = filter_stream(t.net, noise, tau);
  CHECK(double(fn.accepted_batches) / 100.0 <= 0.05);

  auto none = filter_stream(t.net, clean, -std::numeric_limits<double>::infinity());
  CHECK(none.accepted.empty());
  CHECK(none.rejected_batches == clean.size());
}

TEST_CASE("both score forms accept the same batches") {
  const auto& t = trained();
  memory::MemoryBuffer buf(600);
  for (std::size_t i = 0; i < 600; ++i) buf.insert({t.train[i].features, t.train[i].label, 1.0, 0, t.train[i].id});
  auto clean = stream::batch_samples(t.test, 8);
  auto noise = noise_stream(40, 8, 8, 0.5, 0.3, 8);
  clean.insert(clean.end(), noise.begin(), noise.end());
  for (double alpha : {0.5, 0.9, 0.99}) {
    Rng r1(9), r2(9);
    ThresholdConfig main_cfg{100, 8, alpha, ScoreForm::eta1};
    ThresholdConfig odds_cfg{100, 8, alpha, ScoreForm::log_odds};
    auto a = filter_stream(t.net, clean, bootstrap_threshold(t.net, buf, main_cfg, r1), ScoreForm::eta1);
    auto b = filter_stream(t.net, clean, bootstrap_threshold(t.net, buf, odds_cfg, r2), ScoreForm::log_odds);
    CHECK(a.batch_accepted == b.batch_accepted);
  }
}

TEST_CASE("predictive entropy") {
  CHECK(predictive_entropy(Tensor({2, 10}, 0.3f)) == doctest::Approx(std::log(10.0)));
  Tensor extreme({1, 4}, -1000.0f);
  extreme[0] = 1000.0f;
  CHECK(predictive_entropy(extreme) == doctest::Approx(0.0).epsilon(1e-12));
  Rng rng(2);
  std::normal_distribution<float> d(0.0f, 3.0f);
  Tensor r({50, 6});
  for (auto& v : r.storage()) v = d(rng);
  const double h = predictive_entropy(r);
  CHECK(h >= 0.0);
  CHECK(h <= std::log(6.0));
}

TEST_CASE("score csv") {
  auto path = std::filesystem::temp_directory_path() / "bowl_test_scores.csv";
  write_score_csv(path, {{"in", 1.5}, {"out", -2.0}});
  CHECK(io::read_text_file(path) == "source,eta1\nin,1.5\nout,-2\n");
  std::filesystem::remove(path);
}
