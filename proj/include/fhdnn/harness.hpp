#pragma once

// Few-shot episodes, the kNN-L1 baseline and the end-to-end pipeline.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "fhdnn/errors.hpp"
#include "fhdnn/hdc.hpp"
#include "fhdnn/io.hpp"
#include "fhdnn/rng.hpp"
#include "fhdnn/tensor.hpp"
#include "fhdnn/wclust.hpp"

namespace fhdnn::harness {

/// Row-major feature matrix with one label per row.
struct FeatureSet {
  std::size_t dim = 0;
  std::vector<float> values;
  std::vector<std::uint32_t> labels;

  std::size_t size() const { return labels.size(); }
  std::span<const float> row(std::size_t i) const { return std::span<const float>(values).subspan(i * dim, dim); }

  void push_back(std::span<const float> x, std::uint32_t label) {
    if (labels.empty() && dim == 0) dim = x.size();
    if (x.size() != dim) throw ShapeError("feature row has " + std::to_string(x.size()) + " values, expected " +
                                          std::to_string(dim));
    values.insert(values.end(), x.begin(), x.end());
    labels.push_back(label);
  }

  /// Samples as (features, label) views for the HDC learner.
  std::vector<hdc::LabeledSample> samples() const {
    std::vector<hdc::LabeledSample> out;
    out.reserve(size());
    for (std::size_t i = 0; i < size(); ++i) out.push_back({row(i), labels[i]});
    return out;
  }

  /// FHT1 view: one row per sample, width 1, channels == dim.
  Tensor3<float> to_tensor() const { return Tensor3<float>(size(), 1, dim, values); }

  static FeatureSet from_tensor(const Tensor3<float>& t, std::vector<std::uint32_t> labels) {
    if (t.width() != 1) throw ShapeError("feature tensor must have width 1 (one row per sample)");
    if (labels.size() != t.height()) {
      throw ShapeError("label count " + std::to_string(labels.size()) + " != sample count " +
                       std::to_string(t.height()));
    }
    FeatureSet f;
    f.dim = t.channels();
    f.values.assign(t.data().begin(), t.data().end());
    f.labels = std::move(labels);
    return f;
  }

  friend bool operator==(const FeatureSet&, const FeatureSet&) = default;
};

inline void write_feature_set(const FeatureSet& f, const std::filesystem::path& features,
                              const std::filesystem::path& labels) {
  io::write_file_atomic(features, io::encode_tensor(f.to_tensor()));
  io::write_file_atomic(labels, io::encode_labels(f.labels));
}

inline FeatureSet read_feature_set(const std::filesystem::path& features, const std::filesystem::path& labels) {
  return FeatureSet::from_tensor(io::decode_tensor(io::read_file(features)),
                                 io::decode_labels(io::read_file(labels)));
}

/// Gaussian classes: class means are i.i.d. N(0, 1) per coordinate, samples add
/// N(0, spread^2) noise. Rows are ordered class by class.
inline FeatureSet make_synthetic_dataset(std::size_t classes, std::size_t per_class, std::size_t dim, double spread,
                                         std::uint64_t seed) {
  if (classes < 2 || per_class < 2) throw ConfigError("synthetic dataset needs >= 2 classes and >= 2 samples/class");
  if (dim < 1) throw ConfigError("feature dimension must be >= 1");
  const CounterRng root(seed);
  CounterRng mean_rng = root.split("synthetic-means");
  CounterRng noise_rng = root.split("synthetic-noise");
  std::vector<double> means(classes * dim);
  for (auto& m : means) m = mean_rng.normal();
  FeatureSet out;
  out.dim = dim;
  std::vector<float> x(dim);
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t s = 0; s < per_class; ++s) {
      for (std::size_t f = 0; f < dim; ++f) x[f] = static_cast<float>(means[c * dim + f] + spread * noise_rng.normal());
      out.push_back(x, static_cast<std::uint32_t>(c));
    }
  }
  return out;
}

/// One N-way K-shot trial. Labels are remapped to 0..way-1 in draw order;
/// support and query rows are grouped by class.
struct Episode {
  std::size_t way = 0, shot = 0, query = 0;
  std::uint64_t seed = 0;
  std::vector<std::uint32_t> source_classes;  ///< dataset label of episode class i
  FeatureSet support;
  FeatureSet queries;
  std::vector<std::size_t> support_rows;  ///< dataset row of each support sample
  std::vector<std::size_t> query_rows;

  friend bool operator==(const Episode&, const Episode&) = default;
};

inline Episode sample_episode(const FeatureSet& data, std::size_t way, std::size_t shot, std::size_t query,
                              std::uint64_t seed) {
  if (way < 1 || shot < 1 || query < 1) throw ConfigError("way, shot and query must be >= 1");
  std::map<std::uint32_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < data.size(); ++i) by_class[data.labels[i]].push_back(i);
  std::vector<std::uint32_t> eligible;
  std::string deficient;
  for (const auto& [label, rows] : by_class) {
    if (rows.size() >= shot + query) {
      eligible.push_back(label);
    } else if (deficient.empty()) {
      deficient = "class " + std::to_string(label) + " has " + std::to_string(rows.size()) + " samples, needs " +
                  std::to_string(shot + query);
    }
  }
  if (eligible.size() < way) {
    throw DataError("cannot draw a " + std::to_string(way) + "-way episode: only " + std::to_string(eligible.size()) +
                    " classes have enough samples" + (deficient.empty() ? "" : " (" + deficient + ")"));
  }
  CounterRng rng = CounterRng(seed).split("episode");
  deterministic_shuffle(std::span(eligible), rng);
  Episode ep;
  ep.way = way;
  ep.shot = shot;
  ep.query = query;
  ep.seed = seed;
  ep.support.dim = ep.queries.dim = data.dim;
  ep.source_classes.assign(eligible.begin(), eligible.begin() + static_cast<std::ptrdiff_t>(way));
  std::vector<std::vector<std::size_t>> picks(way);
  for (std::size_t c = 0; c < way; ++c) {
    picks[c] = by_class[ep.source_classes[c]];
    deterministic_shuffle(std::span(picks[c]), rng);
  }
  for (std::size_t c = 0; c < way; ++c) {
    for (std::size_t s = 0; s < shot; ++s) {
      ep.support.push_back(data.row(picks[c][s]), static_cast<std::uint32_t>(c));
      ep.support_rows.push_back(picks[c][s]);
    }
  }
  for (std::size_t c = 0; c < way; ++c) {
    for (std::size_t q = 0; q < query; ++q) {
      ep.queries.push_back(data.row(picks[c][shot + q]), static_cast<std::uint32_t>(c));
      ep.query_rows.push_back(picks[c][shot + q]);
    }
  }
  return ep;
}

inline double l1(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i]));
  return s;
}

/// k-nearest-neighbour label under L1 distance. Neighbours are ranked by
/// (distance, label, support index); the vote goes to the most frequent label,
/// ties to the lowest label.
inline std::uint32_t knn_l1_predict(const FeatureSet& support, std::span<const float> x, std::size_t k,
                                    std::size_t classes) {
  if (k < 1 || k > support.size()) throw ConfigError("k must be in [1, support size]");
  struct Neighbor {
    double dist;
    std::uint32_t label;
    std::size_t index;
  };
  std::vector<Neighbor> all;
  all.reserve(support.size());
  for (std::size_t i = 0; i < support.size(); ++i) all.push_back({l1(support.row(i), x), support.labels[i], i});
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(),
                    [](const Neighbor& a, const Neighbor& b) {
                      if (a.dist != b.dist) return a.dist < b.dist;
                      if (a.label != b.label) return a.label < b.label;
                      return a.index < b.index;
                    });
  std::vector<std::size_t> votes(classes, 0);
  for (std::size_t i = 0; i < k; ++i) ++votes[all[i].label];
  return static_cast<std::uint32_t>(std::max_element(votes.begin(), votes.end()) - votes.begin());
}

struct KnnResult {
  double accuracy = 0.0;
  std::vector<std::uint32_t> predictions;
};

inline KnnResult knn_l1(const Episode& ep, std::size_t k = 1) {
  KnnResult r;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < ep.queries.size(); ++i) {
    r.predictions.push_back(knn_l1_predict(ep.support, ep.queries.row(i), k, ep.way));
    correct += r.predictions.back() == ep.queries.labels[i];
  }
  r.accuracy = ep.queries.size() ? static_cast<double>(correct) / static_cast<double>(ep.queries.size()) : 0.0;
  return r;
}

struct EpisodeReport {
  std::size_t episode = 0;
  std::uint64_t seed = 0;
  std::size_t way = 0, shot = 0, query = 0;
  hdc::HdcConfig config;
  double hdc_accuracy = 0.0;
  double knn_accuracy = 0.0;
  std::vector<std::uint32_t> hdc_predictions;
  /// confusion[true * way + predicted], HDC classifier.
  std::vector<std::size_t> confusion;
  hdc::TrainStats train;
};

/// Trains a fresh class memory on the support set (single pass) and scores
/// HDC and kNN-L1 on the same queries. cfg.classes is set to the episode's way.
inline EpisodeReport run_pipeline(const Episode& ep, hdc::HdcConfig cfg, std::size_t knn_k = 1) {
  cfg.classes = static_cast<std::uint32_t>(ep.way);
  if (ep.support.dim != cfg.features) {
    throw ConfigError("episode features have dim " + std::to_string(ep.support.dim) + " but F = " +
                      std::to_string(cfg.features));
  }
  cfg.validate();
  const hdc::CrpEncoder encoder(cfg);
  hdc::ClassMemory mem(cfg.classes, cfg.dims);
  EpisodeReport rep;
  rep.seed = ep.seed;
  rep.way = ep.way;
  rep.shot = ep.shot;
  rep.query = ep.query;
  rep.config = cfg;
  rep.train = hdc::train_single_pass(ep.support.samples(), mem, encoder, cfg);

  const hdc::QuantizedMemory qmem(mem, cfg.infer_bits);
  rep.confusion.assign(ep.way * ep.way, 0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < ep.queries.size(); ++i) {
    const auto pred = static_cast<std::uint32_t>(hdc::classify(encoder.encode(ep.queries.row(i)), qmem).predicted);
    rep.hdc_predictions.push_back(pred);
    ++rep.confusion[ep.queries.labels[i] * ep.way + pred];
    correct += pred == ep.queries.labels[i];
  }
  rep.hdc_accuracy = ep.queries.size() ? static_cast<double>(correct) / static_cast<double>(ep.queries.size()) : 0.0;
  rep.knn_accuracy = knn_l1(ep, knn_k).accuracy;
  return rep;
}

/// Worker count: FHDNN_THREADS if set (>= 1), else hardware concurrency.
inline std::size_t worker_count(std::size_t jobs) {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("FHDNN_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) n = static_cast<std::size_t>(v);
  }
  return std::max<std::size_t>(1, std::min(n, jobs));
}

/// Seed of episode `index` in a run with base seed `seed`.
inline std::uint64_t episode_seed(std::uint64_t seed, std::size_t index) {
  return CounterRng(seed).split("episode-seeds").at(index);
}

struct BenchmarkSpec {
  std::size_t way = 10, shot = 5, query = 15;
  std::size_t episodes = 20;
  std::uint64_t seed = 0;
  std::size_t knn_k = 1;
  hdc::HdcConfig hdc;
};

/// Runs `spec.episodes` independent episodes on `data`, in parallel. Results
/// are ordered by episode index and do not depend on the worker count.
inline std::vector<EpisodeReport> run_benchmark(const FeatureSet& data, const BenchmarkSpec& spec) {
  std::vector<EpisodeReport> reports(spec.episodes);
  std::vector<std::exception_ptr> errors(spec.episodes);
  const std::size_t workers = worker_count(spec.episodes);
  auto work = [&](std::size_t w) {
    for (std::size_t e = w; e < spec.episodes; e += workers) {
      try {
        const Episode ep = sample_episode(data, spec.way, spec.shot, spec.query, episode_seed(spec.seed, e));
        reports[e] = run_pipeline(ep, spec.hdc, spec.knn_k);
        reports[e].episode = e;
      } catch (...) {
        errors[e] = std::current_exception();
      }
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w);
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return reports;
}

struct MeanStderr {
  double mean = 0.0;
  double stderr_ = 0.0;
};

inline MeanStderr mean_stderr(std::span<const double> xs) {
  MeanStderr r;
  if (xs.empty()) return r;
  for (const double x : xs) r.mean += x;
  r.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (const double x : xs) ss += (x - r.mean) * (x - r.mean);
    r.stderr_ = std::sqrt(ss / static_cast<double>(xs.size() - 1) / static_cast<double>(xs.size()));
  }
  return r;
}

struct BenchmarkSummary {
  MeanStderr hdc;
  MeanStderr knn;
  MeanStderr difference;  ///< paired hdc - knn
};

inline BenchmarkSummary summarize(std::span<const EpisodeReport> reports) {
  std::vector<double> h, k, d;
  for (const auto& r : reports) {
    h.push_back(r.hdc_accuracy);
    k.push_back(r.knn_accuracy);
    d.push_back(r.hdc_accuracy - r.knn_accuracy);
  }
  return {mean_stderr(h), mean_stderr(k), mean_stderr(d)};
}

inline constexpr const char* kReportCsvHeader = "episode,seed,way,shot,D,infer_bits,hdc_acc,knn_acc";

inline std::string report_csv_row(const EpisodeReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%llu,%zu,%zu,%u,%u,%.6f,%.6f", r.episode,
                static_cast<unsigned long long>(r.seed), r.way, r.shot, r.config.dims, r.config.infer_bits,
                r.hdc_accuracy, r.knn_accuracy);
  return buf;
}

/// Clustered feature extractor: every layer is conv -> ReLU, then global average pooling.
/// Layer shapes must chain; the first layer must accept the images.
template <typename ConvFn>
FeatureSet extract_features_with(std::span<const Tensor3<float>> images, std::span<const std::uint32_t> labels,
                                 std::span<const ConvLayerSpec> specs, ConvFn&& conv) {
  if (specs.empty()) throw ShapeError("model has no layers");
  if (labels.size() != images.size()) throw ShapeError("label count does not match image count");
  for (std::size_t l = 1; l < specs.size(); ++l) {
    const auto& prev = specs[l - 1];
    const auto& cur = specs[l];
    if (cur.in_channels != prev.out_channels || cur.in_height != prev.out_height() ||
        cur.in_width != prev.out_width()) {
      throw ShapeError("layer " + std::to_string(l) + " input " + std::to_string(cur.in_height) + "x" +
                       std::to_string(cur.in_width) + "x" + std::to_string(cur.in_channels) +
                       " does not match layer " + std::to_string(l - 1) + " output " +
                       std::to_string(prev.out_height()) + "x" + std::to_string(prev.out_width()) + "x" +
                       std::to_string(prev.out_channels));
    }
  }
  FeatureSet out;
  out.dim = specs.back().out_channels;
  for (std::size_t i = 0; i < images.size(); ++i) {
    Tensor3<float> x = images[i];
    for (std::size_t l = 0; l < specs.size(); ++l) {
      try {
        x = relu(conv(l, x));
      } catch (const ShapeError& e) {
        throw ShapeError("layer " + std::to_string(l) + ": " + e.what());
      }
    }
    out.push_back(global_average_pool(x), labels[i]);
  }
  return out;
}

inline FeatureSet extract_features(std::span<const Tensor3<float>> images, std::span<const std::uint32_t> labels,
                                   const io::ClusteredModel& model) {
  std::vector<ConvLayerSpec> specs;
  for (const auto& l : model) specs.push_back(l.spec);
  return extract_features_with(images, labels, specs,
                               [&](std::size_t l, const Tensor3<float>& x) { return clustered_conv2d(x, model[l]); });
}

inline FeatureSet extract_features(std::span<const Tensor3<float>> images, std::span<const std::uint32_t> labels,
                                   const io::DenseModel& model) {
  std::vector<ConvLayerSpec> specs;
  for (const auto& l : model) specs.push_back(l.spec());
  return extract_features_with(images, labels, specs,
                               [&](std::size_t l, const Tensor3<float>& x) { return dense_conv2d(x, model[l]); });
}

}  // namespace fhdnn::harness
