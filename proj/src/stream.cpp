#include "bowl/stream.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "bowl/bnt_format.hpp"
#include "bowl/error.hpp"

namespace bowl::stream {

std::vector<std::uint32_t> Dataset::classes() const {
  std::set<std::uint32_t> s(labels.begin(), labels.end());
  return {s.begin(), s.end()};
}

Sample Dataset::sample(std::size_t i, std::uint64_t id_offset) const {
  auto row = inputs.row(i);
  return Sample{{row.begin(), row.end()}, labels[i], id_offset + i, Origin::clean};
}

std::vector<Sample> Dataset::samples(std::uint64_t id_offset) const {
  std::vector<Sample> out;
  out.reserve(size());
  for (std::size_t i = 0; i < size(); ++i) out.push_back(sample(i, id_offset));
  return out;
}

Dataset Dataset::subset_of_classes(std::span<const std::uint32_t> keep) const {
  std::set<std::uint32_t> k(keep.begin(), keep.end());
  std::vector<float> values;
  std::vector<std::uint32_t> kept_labels;
  for (std::size_t i = 0; i < size(); ++i) {
    if (!k.count(labels[i])) continue;
    auto row = inputs.row(i);
    values.insert(values.end(), row.begin(), row.end());
    kept_labels.push_back(labels[i]);
  }
  auto dims = inputs.dims();
  dims[0] = kept_labels.size();
  return Dataset{Tensor(dims, std::move(values)), std::move(kept_labels), class_names};
}

void Dataset::validate() const {
  if (inputs.rank() < 2) throw ShapeError("dataset inputs need a batch axis and features");
  if (inputs.rows() != labels.size())
    throw ShapeError("dataset has " + std::to_string(inputs.rows()) + " inputs but " +
                     std::to_string(labels.size()) + " labels");
}

void TaskSchedule::validate() const {
  if (timesteps.empty()) throw std::invalid_argument("task schedule has no timesteps");
  std::set<std::uint32_t> seen;
  for (std::size_t t = 0; t < timesteps.size(); ++t) {
    if (timesteps[t].empty())
      throw std::invalid_argument("timestep " + std::to_string(t) + " has no classes");
    for (auto c : timesteps[t]) {
      if (disjoint && seen.count(c))
        throw std::invalid_argument("class " + std::to_string(c) +
                                    " appears in more than one timestep of a disjoint schedule");
      seen.insert(c);
    }
  }
}

std::vector<std::uint32_t> TaskSchedule::seen_through(std::size_t t) const {
  std::set<std::uint32_t> s;
  for (std::size_t i = 0; i <= t && i < timesteps.size(); ++i)
    s.insert(timesteps[i].begin(), timesteps[i].end());
  return {s.begin(), s.end()};
}

Stream batch_samples(const std::vector<Sample>& samples, std::size_t batch_size) {
  if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
  Stream out;
  for (std::size_t i = 0; i < samples.size(); i += batch_size) {
    const std::size_t end = std::min(samples.size(), i + batch_size);
    out.emplace_back(samples.begin() + static_cast<std::ptrdiff_t>(i),
                     samples.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

std::vector<Stream> make_split_tasks(const Dataset& dataset, const TaskSchedule& schedule,
                                     std::size_t batch_size, std::uint64_t seed) {
  dataset.validate();
  schedule.validate();
  const auto available = dataset.classes();
  for (const auto& ts : schedule.timesteps)
    for (auto c : ts)
      if (!std::binary_search(available.begin(), available.end(), c))
        throw std::invalid_argument("schedule names class " + std::to_string(c) +
                                    " which the dataset does not contain");

  Rng rng = make_rng(seed, "split");
  std::vector<Stream> out;
  for (const auto& ts : schedule.timesteps) {
    std::set<std::uint32_t> cls(ts.begin(), ts.end());
    std::vector<Sample> samples;
    for (std::size_t i = 0; i < dataset.size(); ++i)
      if (cls.count(dataset.labels[i])) samples.push_back(dataset.sample(i));
    deterministic_shuffle(samples, rng);
    out.push_back(batch_samples(samples, batch_size));
  }
  return out;
}

CorruptionType parse_corruption(const std::string& name) {
  if (name == "gaussian") return CorruptionType::gaussian;
  if (name == "shot") return CorruptionType::shot;
  if (name == "impulse") return CorruptionType::impulse;
  throw std::invalid_argument("unknown corruption type '" + name + "'");
}

std::string to_string(CorruptionType type) {
  switch (type) {
    case CorruptionType::gaussian: return "gaussian";
    case CorruptionType::shot: return "shot";
    case CorruptionType::impulse: return "impulse";
  }
  return "?";
}

void corrupt_in_place(std::span<float> values, CorruptionType type, double severity, Rng& rng) {
  if (!(severity > 0)) throw std::invalid_argument("corruption severity must be positive");
  switch (type) {
    case CorruptionType::gaussian: {
      std::normal_distribution<double> noise(0.0, severity);
      for (auto& v : values) v = static_cast<float>(std::clamp(v + noise(rng), 0.0, 1.0));
      break;
    }
    case CorruptionType::shot: {
      const double lambda = kShotPhotons / severity;
      for (auto& v : values) {
        const double mean = std::max(0.0, double(v)) * lambda;
        double count = 0.0;
        if (mean > 0) count = double(std::poisson_distribution<long>(mean)(rng));
        v = static_cast<float>(std::clamp(count / lambda, 0.0, 1.0));
      }
      break;
    }
    case CorruptionType::impulse: {
      if (severity > 1) throw std::invalid_argument("impulse severity must be at most 1");
      for (auto& v : values) {
        const double u = uniform01(rng);
        if (u < severity / 2)
          v = 0.0f;
        else if (u < severity)
          v = 1.0f;
      }
      break;
    }
  }
}

Tensor corrupt(const Tensor& inputs, CorruptionType type, double severity, std::uint64_t seed) {
  Tensor out = inputs;
  Rng rng = make_rng(seed, "corrupt");
  corrupt_in_place(out.data(), type, severity, rng);
  return out;
}

Stream mix_streams(const Stream& task_stream, const MixSpec& mix, const Dataset* foreign,
                   std::span<const std::uint32_t> task_classes, std::uint64_t seed,
                   std::uint64_t& next_id) {
  const double fc = mix.corrupted_fraction, fo = mix.ood_fraction;
  if (fc < 0 || fo < 0 || fc > 1 || fo > 1) throw std::invalid_argument("mix fractions must be in [0, 1]");
  if (fc + fo >= 1) throw std::invalid_argument("mix fractions must leave room for clean batches");
  if (fc == 0 && fo == 0) return task_stream;
  if (fc > 0 && mix.corruptions.empty()) throw std::invalid_argument("no corruption types configured");
  if (fo > 0 && (!foreign || foreign->size() == 0))
    throw std::invalid_argument("ood fraction set but no foreign dataset given");
  if (fo > 0 && task_classes.empty()) throw std::invalid_argument("task has no classes");

  std::vector<const Sample*> pool;
  std::size_t batch_size = 0;
  for (const auto& b : task_stream) {
    batch_size = std::max(batch_size, b.size());
    for (const auto& s : b) pool.push_back(&s);
  }
  if (pool.empty()) return task_stream;

  Rng rng = make_rng(seed, "mix");
  Stream out;
  std::size_t next_clean = 0;
  while (next_clean < task_stream.size()) {
    const double u = uniform01(rng);
    if (u < fc) {
      const auto& spec = mix.corruptions[uniform_index(mix.corruptions.size(), rng)];
      Batch b;
      for (std::size_t i = 0; i < batch_size; ++i) {
        Sample s = *pool[uniform_index(pool.size(), rng)];
        corrupt_in_place(s.features, spec.type, spec.severity, rng);
        s.id = next_id++;
        s.origin = Origin::corrupted;
        b.push_back(std::move(s));
      }
      out.push_back(std::move(b));
    } else if (u < fc + fo) {
      Batch b;
      for (std::size_t i = 0; i < batch_size; ++i) {
        Sample s = foreign->sample(uniform_index(foreign->size(), rng));
        s.label = task_classes[uniform_index(task_classes.size(), rng)];
        s.id = next_id++;
        s.origin = Origin::foreign;
        b.push_back(std::move(s));
      }
      out.push_back(std::move(b));
    } else {
      out.push_back(task_stream[next_clean++]);
    }
  }
  return out;
}

Dataset synth_generate(const SynthSpec& spec) {
  if (spec.n_samples == 0) throw std::invalid_argument("synthetic dataset needs at least one sample");
  if (spec.n_classes == 0) throw std::invalid_argument("synthetic dataset needs at least one class");
  if (!(spec.separation > 0)) throw std::invalid_argument("class separation must be positive");
  if (!(spec.stddev >= 0)) throw std::invalid_argument("within-class std must be non-negative");
  if (spec.dims < spec.axis_offset + spec.n_classes)
    throw std::invalid_argument("synthetic dataset needs dims >= axis_offset + n_classes");

  // Vertices e_k scaled by s / sqrt(2) are pairwise s apart.
  const double scale = spec.separation / std::sqrt(2.0);
  const double centroid = scale / static_cast<double>(spec.n_classes);
  std::vector<std::vector<double>> means(spec.n_classes, std::vector<double>(spec.dims, 0.5));
  for (std::size_t k = 0; k < spec.n_classes; ++k) {
    for (std::size_t a = 0; a < spec.n_classes; ++a) means[k][spec.axis_offset + a] -= centroid;
    means[k][spec.axis_offset + k] += scale;
  }

  Rng rng = make_rng(spec.seed, "synth");
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<float> values(spec.n_samples * spec.dims);
  std::vector<std::uint32_t> labels(spec.n_samples);
  for (std::size_t i = 0; i < spec.n_samples; ++i) {
    const std::size_t k = i % spec.n_classes;
    labels[i] = static_cast<std::uint32_t>(k) + spec.label_offset;
    for (std::size_t d = 0; d < spec.dims; ++d)
      values[i * spec.dims + d] = static_cast<float>(means[k][d] + spec.stddev * noise(rng));
  }
  return Dataset{Tensor({spec.n_samples, spec.dims}, std::move(values)), std::move(labels), {}};
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  dataset.validate();
  std::vector<std::uint32_t> dims(dataset.inputs.dims().begin(), dataset.inputs.dims().end());
  std::vector<bnt::NamedTensor> tensors;
  tensors.push_back(bnt::make_f32("inputs", std::move(dims), dataset.inputs.storage()));
  tensors.push_back(bnt::make_u32("labels", {static_cast<std::uint32_t>(dataset.size())},
                                  dataset.labels));
  bnt::write_file(path, tensors);
}

Dataset load_dataset(const std::filesystem::path& path) {
  auto tensors = bnt::read_file(path);
  const auto& in = bnt::require(tensors, "inputs");
  const auto& lab = bnt::require(tensors, "labels");
  if (in.dims.size() < 2) throw FormatError("dataset inputs must have rank >= 2");
  if (lab.dims.size() != 1) throw FormatError("dataset labels must have rank 1");
  Dataset d{Tensor(std::vector<std::size_t>(in.dims.begin(), in.dims.end()), in.f32()), lab.u32(), {}};
  if (d.inputs.rows() != d.labels.size()) throw FormatError("dataset inputs and labels differ in length");
  return d;
}

Tensor stack_features(const Batch& batch) {
  if (batch.empty()) throw ShapeError("cannot stack an empty batch");
  const std::size_t f = batch.front().features.size();
  std::vector<float> values;
  values.reserve(batch.size() * f);
  for (const auto& s : batch) {
    if (s.features.size() != f) throw ShapeError("samples in a batch differ in feature count");
    values.insert(values.end(), s.features.begin(), s.features.end());
  }
  return Tensor({batch.size(), f}, std::move(values));
}

}  // namespace bowl::stream
