#include "bowl/training.hpp"

#include <algorithm>

#include "bowl/error.hpp"

namespace bowl {

ClassMap::ClassMap(std::vector<std::uint32_t> labels) { add(labels); }

bool ClassMap::contains(std::uint32_t label) const {
  return std::find(labels_.begin(), labels_.end(), label) != labels_.end();
}

std::size_t ClassMap::index_of(std::uint32_t label) const {
  auto it = std::find(labels_.begin(), labels_.end(), label);
  if (it == labels_.end()) throw std::out_of_range("label " + std::to_string(label) + " has no output");
  return static_cast<std::size_t>(it - labels_.begin());
}

std::size_t ClassMap::add(std::span<const std::uint32_t> labels) {
  std::size_t added = 0;
  for (auto l : labels) {
    if (contains(l)) continue;
    labels_.push_back(l);
    ++added;
  }
  return added;
}

namespace {

template <typename Get>
EpochStats run_epoch(nn::Network<float>& net, std::size_t n, Get get, nn::SgdOptimizer<float>& opt,
                     std::size_t minibatch, const ClassMap& classes, Rng& rng) {
  if (minibatch == 0) throw std::invalid_argument("minibatch size must be positive");
  if (classes.size() != net.n_classes())
    throw ShapeError("class map has " + std::to_string(classes.size()) + " labels but the head has " +
                     std::to_string(net.n_classes()) + " outputs");
  const auto order = shuffled_indices(n, rng);
  const auto previous = net.mode();
  net.set_mode(nn::Mode::train);
  EpochStats stats;
  double loss_sum = 0;
  const std::size_t dim = net.input_dim();
  try {
    for (std::size_t start = 0; start < n; start += minibatch) {
      const std::size_t end = std::min(n, start + minibatch);
      std::vector<float> values;
      std::vector<std::uint32_t> labels;
      values.reserve((end - start) * dim);
      for (std::size_t k = start; k < end; ++k) {
        const auto& [features, label] = get(order[k]);
        if (features.size() != dim) throw ShapeError("training input width does not match the network");
        values.insert(values.end(), features.begin(), features.end());
        labels.push_back(static_cast<std::uint32_t>(classes.index_of(label)));
      }
      loss_sum += nn::backward_and_step(net, Tensor({end - start, dim}, std::move(values)), labels, opt);
      ++stats.steps;
    }
  } catch (...) {
    net.set_mode(previous);
    throw;
  }
  net.set_mode(previous);
  stats.mean_loss = loss_sum / static_cast<double>(stats.steps);
  return stats;
}

}  // namespace

EpochStats train_one_epoch(nn::Network<float>& net, const memory::MemoryBuffer& buffer,
                           nn::SgdOptimizer<float>& opt, std::size_t minibatch, const ClassMap& classes,
                           Rng& rng) {
  if (buffer.empty()) throw DegenerateInputError("cannot train on an empty buffer");
  const auto& entries = buffer.entries();
  return run_epoch(
      net, entries.size(),
      [&](std::size_t i) { return std::pair<const std::vector<float>&, std::uint32_t>(entries[i].input, entries[i].label); },
      opt, minibatch, classes, rng);
}

EpochStats train_epoch_on_samples(nn::Network<float>& net, const std::vector<stream::Sample>& samples,
                                  nn::SgdOptimizer<float>& opt, std::size_t minibatch,
                                  const ClassMap& classes, Rng& rng) {
  if (samples.empty()) throw DegenerateInputError("cannot train on an empty sample set");
  return run_epoch(
      net, samples.size(),
      [&](std::size_t i) { return std::pair<const std::vector<float>&, std::uint32_t>(samples[i].features, samples[i].label); },
      opt, minibatch, classes, rng);
}

double accuracy(const nn::Network<float>& net, const std::vector<stream::Sample>& samples,
                const ClassMap& classes, std::size_t eval_batch) {
  std::vector<const stream::Sample*> scored;
  for (const auto& s : samples)
    if (!s.is_sentinel()) scored.push_back(&s);
  if (scored.empty()) throw DegenerateInputError("no labelled samples to evaluate");
  const std::size_t dim = net.input_dim();
  std::size_t correct = 0;
  for (std::size_t start = 0; start < scored.size(); start += eval_batch) {
    const std::size_t end = std::min(scored.size(), start + eval_batch);
    std::vector<float> values;
    values.reserve((end - start) * dim);
    for (std::size_t k = start; k < end; ++k)
      values.insert(values.end(), scored[k]->features.begin(), scored[k]->features.end());
    const auto logits = net.infer(Tensor({end - start, dim}, std::move(values))).logits;
    for (std::size_t k = start; k < end; ++k) {
      const auto row = logits.row(k - start);
      const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
      if (best < classes.size() && classes.labels()[best] == scored[k]->label) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(scored.size());
}

}  // namespace bowl
