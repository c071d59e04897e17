#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "bowl/memory.hpp"
#include "bowl/nn.hpp"
#include "bowl/stream.hpp"

namespace bowl {

// Dataset label <-> head output index. Outputs are appended in discovery
// order and never removed.
class ClassMap {
 public:
  ClassMap() = default;
  explicit ClassMap(std::vector<std::uint32_t> labels);

  std::size_t size() const { return labels_.size(); }
  const std::vector<std::uint32_t>& labels() const { return labels_; }
  bool contains(std::uint32_t label) const;
  std::size_t index_of(std::uint32_t label) const;
  // Appends the labels not yet known; returns how many were new.
  std::size_t add(std::span<const std::uint32_t> labels);

 private:
  std::vector<std::uint32_t> labels_;
};

struct EpochStats {
  std::size_t steps = 0;
  double mean_loss = 0;
};

// One pass over the buffer in shuffled minibatches: ceil(|M| / minibatch)
// steps. The network is in train mode during the pass and its previous mode
// is restored afterwards.
EpochStats train_one_epoch(nn::Network<float>& net, const memory::MemoryBuffer& buffer,
                           nn::SgdOptimizer<float>& opt, std::size_t minibatch, const ClassMap& classes,
                           Rng& rng);

// Same over an explicit sample list. Used for pretraining and for the
// baselines that train without a buffer.
EpochStats train_epoch_on_samples(nn::Network<float>& net, const std::vector<stream::Sample>& samples,
                                  nn::SgdOptimizer<float>& opt, std::size_t minibatch,
                                  const ClassMap& classes, Rng& rng);

// Top-1 accuracy over labelled samples; labels missing from `classes` count
// as errors. Sentinel samples are skipped.
double accuracy(const nn::Network<float>& net, const std::vector<stream::Sample>& samples,
                const ClassMap& classes, std::size_t eval_batch = 512);

}  // namespace bowl
