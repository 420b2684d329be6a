// fhdnn command-line front end.
//
//   fhdnn <subcommand> [flags]
//
// Exit status: 0 success, 1 data or validation error, 2 usage error.
// Every run writes a JSON manifest (flattened config, seed, SHA-256 of inputs
// and outputs) that `fhdnn replay` can re-execute and verify.

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fhdnn/fhdnn.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace fhdnn;

namespace {

constexpr const char* kVersion = "1.0.0";

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("SHA-256 failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

std::string file_hash(const fs::path& p) { return sha256_hex(io::read_file(p)); }

std::vector<std::string> split_list(const std::string& s, char sep = ',') {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<std::uint32_t> parse_u32_list(const std::string& s, const std::string& flag) {
  std::vector<std::uint32_t> out;
  for (const auto& item : split_list(s)) {
    try {
      std::size_t used = 0;
      const unsigned long v = std::stoul(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      out.push_back(static_cast<std::uint32_t>(v));
    } catch (const std::logic_error&) {
      throw UsageError("--" + flag + ": '" + item + "' is not a non-negative integer");
    }
  }
  if (out.empty()) throw UsageError("--" + flag + " needs at least one value");
  return out;
}

/// Collects what a run read and wrote, for the manifest.
struct RunRecord {
  std::vector<fs::path> inputs;
  std::vector<fs::path> outputs;
  std::optional<std::uint64_t> seed;
};

void write_text(const fs::path& p, const std::string& s, RunRecord& rec) {
  io::write_file_atomic(p, std::string_view(s));
  rec.outputs.push_back(p);
}

void write_bytes(const fs::path& p, const io::Bytes& b, RunRecord& rec) {
  io::write_file_atomic(p, b);
  rec.outputs.push_back(p);
}

io::Bytes read_input(const fs::path& p, RunRecord& rec) {
  rec.inputs.push_back(p);
  return io::read_file(p);
}

ordered_json cost_json(const CostRecord& c) {
  return {{"multiplies", c.multiplies}, {"adds", c.adds},         {"ops", c.ops()},
          {"index_params", c.index_params}, {"centroid_params", c.centroid_params}, {"bytes_params", c.bytes_params}};
}

ordered_json sim_json(const pesim::SimReport& r) {
  return {{"cycles", r.cycles},
          {"input_bus_words", r.input_bus_words},
          {"weight_bus_words", r.weight_bus_words},
          {"accum_ops", r.accum_ops},
          {"mult_ops", r.mult_ops},
          {"pe_utilization", r.pe_utilization},
          {"overlap_efficiency", r.overlap_efficiency},
          {"rf_accumulations", r.rf_accumulations},
          {"accumulate_cycles", r.accumulate_cycles},
          {"multiply_cycles", r.multiply_cycles},
          {"stall_cycles", r.stall_cycles},
          {"tiles", r.tiles},
          {"cycle_model", "phase-overlap approximation: 1 bus word or 1 multiply-add per cycle"}};
}

ordered_json mean_json(const harness::MeanStderr& m) { return {{"mean", m.mean}, {"stderr", m.stderr_}}; }

// ---- subcommand options ----

struct MakeModelOpts {
  std::string layers = "3:8,8:16";
  std::uint32_t size = 16, kernel = 3, stride = 1, padding = 1;
  std::uint64_t seed = 0;
  std::string output;
};

struct ClusterOpts {
  std::string input, output, method = "optimal";
  std::uint32_t groups = 16, group_size = 0;
};

struct SimulateOpts {
  std::string model, report, input, output;
  std::uint32_t layer = 0, rows = 4, cols = 16;
};

struct TrainOpts {
  std::string features, labels, output, update_rule = "literal", encoding = "bipolar";
  std::uint32_t dims = 4096, classes = 0, infer_bits = 8;
  std::uint64_t seed = 0;
};

struct InferOpts {
  std::string memory, features, labels, output, encoding = "bipolar";
  std::uint32_t infer_bits = 8;
  std::uint64_t seed = 0;
};

struct EpisodesOpts {
  std::string features, labels, output, summary, update_rule = "literal", dims = "4096", infer_bits = "8", shot = "5";
  std::uint32_t way = 10, query = 15, episodes = 20, knn_k = 1;
  std::uint32_t classes = 10, per_class = 40, feature_dim = 64;
  double spread = 1.8;
  std::uint64_t seed = 0, data_seed = 1;
};

struct CostsOpts {
  std::string model = "vgg16", output, summary;
  std::uint32_t groups = 16, group_size = 0;
};

struct SynthOpts {
  std::uint32_t classes = 10, per_class = 40, feature_dim = 64;
  double spread = 1.8;
  std::uint64_t seed = 1;
  std::string output, labels;
};

struct ExtractOpts {
  std::string model, images, labels, output, labels_out;
  std::uint32_t image_height = 0;
};

hdc::Encoding parse_encoding(const std::string& s) {
  if (s == "bipolar") return hdc::Encoding::kBipolar;
  if (s == "raw") return hdc::Encoding::kRaw;
  throw ConfigError("unknown encoding '" + s + "' (bipolar | raw)");
}

KMeansMethod parse_method(const std::string& s) {
  if (s == "optimal") return KMeansMethod::kOptimal;
  if (s == "lloyd") return KMeansMethod::kLloyd;
  throw ConfigError("unknown clustering method '" + s + "' (optimal | lloyd)");
}

// ---- subcommand bodies ----

void run_make_model(const MakeModelOpts& o, RunRecord& rec) {
  rec.seed = o.seed;
  io::DenseModel model;
  CounterRng rng = CounterRng(o.seed).split("dense-weights");
  std::uint32_t h = o.size, w = o.size;
  std::optional<std::uint32_t> prev_out;
  for (const auto& pair : split_list(o.layers)) {
    std::string as_list = pair;
    std::replace(as_list.begin(), as_list.end(), ':', ',');
    const auto io_ch = parse_u32_list(as_list, "layers");
    if (io_ch.size() != 2) throw UsageError("--layers expects in:out pairs, got '" + pair + "'");
    if (prev_out && *prev_out != io_ch[0]) {
      throw ConfigError("--layers: layer input channels " + std::to_string(io_ch[0]) + " do not match previous output " +
                        std::to_string(*prev_out));
    }
    const ConvLayerSpec spec{io_ch[0], io_ch[1], o.kernel, o.stride, o.padding, h, w};
    spec.validate();
    std::vector<float> weights(std::size_t{spec.out_channels} * spec.taps());
    const double bound = std::sqrt(6.0 / static_cast<double>(spec.taps()));  // He-uniform scale
    for (auto& v : weights) v = static_cast<float>((2.0 * rng.uniform() - 1.0) * bound);
    model.emplace_back(spec, std::move(weights));
    h = static_cast<std::uint32_t>(spec.out_height());
    w = static_cast<std::uint32_t>(spec.out_width());
    prev_out = io_ch[1];
  }
  if (model.empty()) throw UsageError("--layers is empty");
  write_bytes(o.output, io::encode_dense_model(model), rec);
  std::cout << ordered_json{{"layers", model.size()}, {"output", o.output}}.dump() << "\n";
}

void run_cluster(const ClusterOpts& o, RunRecord& rec) {
  const auto dense = io::decode_dense_model(read_input(o.input, rec));
  const KMeansMethod method = parse_method(o.method);
  io::ClusteredModel model;
  ordered_json layers = ordered_json::array();
  for (std::size_t l = 0; l < dense.size(); ++l) {
    model.push_back(share_patterns(dense[l], o.groups, o.group_size, method));
    const auto expanded = expand(model.back());
    double sse = 0.0;
    for (std::size_t i = 0; i < expanded.weights().size(); ++i) {
      const double d = static_cast<double>(expanded.weights()[i]) - static_cast<double>(dense[l].weights()[i]);
      sse += d * d;
    }
    layers.push_back({{"layer", l},
                      {"pattern_groups", model.back().groups.size()},
                      {"reconstruction_sse", sse},
                      {"dense", cost_json(dense_cost(dense[l].spec()))},
                      {"clustered", cost_json(clustered_cost(model.back()))}});
  }
  write_bytes(o.output, io::encode_clustered_model(model), rec);
  std::cout << ordered_json{{"G", o.groups}, {"group_size", o.group_size}, {"layers", layers}}.dump(2) << "\n";
}

void run_simulate(const SimulateOpts& o, RunRecord& rec) {
  const auto model = io::decode_clustered_model(read_input(o.model, rec));
  if (o.layer >= model.size()) {
    throw DataError("--layer " + std::to_string(o.layer) + " out of range (model has " + std::to_string(model.size()) +
                    " layers)");
  }
  const auto& layer = model[o.layer];
  pesim::ArrayConfig cfg;
  cfg.rows = o.rows;
  cfg.cols = o.cols;
  pesim::SimReport rep;
  if (!o.input.empty()) {
    const auto run = pesim::simulate_values(layer, io::decode_tensor(read_input(o.input, rec)), cfg);
    rep = run.report;
    if (!o.output.empty()) write_bytes(o.output, io::encode_tensor(run.output), rec);
  } else {
    rep = pesim::simulate(pesim::schedule_layer(layer, cfg), cfg);
  }
  ordered_json j = sim_json(rep);
  j["layer"] = o.layer;
  j["clustered_cost"] = cost_json(clustered_cost(layer));
  std::cout << j.dump(2) << "\n";
  if (!o.report.empty()) {
    std::string text;
    if (fs::exists(o.report)) {
      const auto old = io::read_file(o.report);
      text.assign(old.begin(), old.end());
    } else {
      text = "layer,cycles,utilization,ops\n";
    }
    char row[160];
    std::snprintf(row, sizeof row, "%u,%llu,%.6f,%llu\n", o.layer, static_cast<unsigned long long>(rep.cycles),
                  rep.pe_utilization, static_cast<unsigned long long>(rep.accum_ops + rep.mult_ops));
    write_text(o.report, text + row, rec);
  }
}

harness::FeatureSet load_features(const std::string& features, const std::string& labels, RunRecord& rec) {
  const auto t = io::decode_tensor(read_input(features, rec));
  std::vector<std::uint32_t> l;
  if (labels.empty()) {
    l.assign(t.height(), 0);
  } else {
    l = io::decode_labels(read_input(labels, rec));
  }
  return harness::FeatureSet::from_tensor(t, std::move(l));
}

void run_hdc_train(const TrainOpts& o, RunRecord& rec) {
  rec.seed = o.seed;
  const auto data = load_features(o.features, o.labels, rec);
  hdc::HdcConfig cfg;
  cfg.features = static_cast<std::uint32_t>(data.dim);
  cfg.dims = o.dims;
  std::uint32_t max_label = 0;
  for (const auto l : data.labels) max_label = std::max(max_label, l);
  cfg.classes = o.classes ? o.classes : max_label + 1;
  cfg.infer_bits = o.infer_bits;
  cfg.seed = o.seed;
  cfg.update_rule = hdc::parse_update_rule(o.update_rule);
  cfg.encoding = parse_encoding(o.encoding);
  cfg.validate();
  const hdc::CrpEncoder encoder(cfg);
  hdc::ClassMemory mem(cfg.classes, cfg.dims);
  const auto stats = hdc::train_single_pass(data.samples(), mem, encoder, cfg);
  write_bytes(o.output, io::encode_class_memory(mem), rec);
  std::cout << ordered_json{{"samples", stats.samples},
                            {"bootstraps", stats.bootstraps},
                            {"hits", stats.hits},
                            {"misses", stats.misses},
                            {"saturation_events", mem.saturation_events()},
                            {"F", cfg.features},
                            {"D", cfg.dims},
                            {"N", cfg.classes}}
                   .dump()
            << "\n";
}

void run_hdc_infer(const InferOpts& o, RunRecord& rec) {
  rec.seed = o.seed;
  const auto mem = io::decode_class_memory(read_input(o.memory, rec));
  const auto data = load_features(o.features, o.labels, rec);
  hdc::HdcConfig cfg;
  cfg.features = static_cast<std::uint32_t>(data.dim);
  cfg.dims = static_cast<std::uint32_t>(mem.dims());
  cfg.classes = static_cast<std::uint32_t>(mem.classes());
  cfg.infer_bits = o.infer_bits;
  cfg.seed = o.seed;
  cfg.encoding = parse_encoding(o.encoding);
  cfg.validate();
  const hdc::CrpEncoder encoder(cfg);
  const hdc::QuantizedMemory qmem(mem, cfg.infer_bits);
  std::string csv = "sample_id,predicted,label,min_distance\n";
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto r = hdc::classify(encoder.encode(data.row(i)), qmem);
    correct += r.predicted == data.labels[i];
    csv += std::to_string(i) + "," + std::to_string(r.predicted) + "," +
           (o.labels.empty() ? std::string() : std::to_string(data.labels[i])) + "," +
           std::to_string(r.min_distance()) + "\n";
  }
  write_text(o.output, csv, rec);
  ordered_json j{{"samples", data.size()}, {"infer_bits", cfg.infer_bits}};
  if (!o.labels.empty()) {
    j["accuracy"] = data.size() ? static_cast<double>(correct) / static_cast<double>(data.size()) : 0.0;
  }
  std::cout << j.dump() << "\n";
}

void run_episodes(const EpisodesOpts& o, RunRecord& rec) {
  rec.seed = o.seed;
  const auto dims = parse_u32_list(o.dims, "D");
  const auto bits = parse_u32_list(o.infer_bits, "infer-bits");
  const auto shots = parse_u32_list(o.shot, "shot");
  const auto update_rule = hdc::parse_update_rule(o.update_rule);
  const harness::FeatureSet data =
      o.features.empty() ? harness::make_synthetic_dataset(o.classes, o.per_class, o.feature_dim, o.spread, o.data_seed)
                         : load_features(o.features, o.labels, rec);

  // Validate every sweep point before any work starts.
  for (const auto d : dims)
    for (const auto b : bits) {
      hdc::HdcConfig c;
      c.features = static_cast<std::uint32_t>(data.dim);
      c.dims = d;
      c.infer_bits = b;
      c.classes = o.way;
      c.validate();
    }

  std::string csv = std::string(harness::kReportCsvHeader) + "\n";
  ordered_json sweeps = ordered_json::array();
  for (const auto shot : shots)
    for (const auto d : dims)
      for (const auto b : bits) {
        harness::BenchmarkSpec spec;
        spec.way = o.way;
        spec.shot = shot;
        spec.query = o.query;
        spec.episodes = o.episodes;
        spec.seed = o.seed;
        spec.knn_k = o.knn_k;
        spec.hdc.features = static_cast<std::uint32_t>(data.dim);
        spec.hdc.dims = d;
        spec.hdc.infer_bits = b;
        spec.hdc.seed = o.seed;
        spec.hdc.update_rule = update_rule;
        spec.hdc.classes = o.way;
        spec.hdc.validate();
        const auto reports = harness::run_benchmark(data, spec);
        for (const auto& r : reports) csv += harness::report_csv_row(r) + "\n";
        const auto s = harness::summarize(reports);
        sweeps.push_back({{"shot", shot},
                          {"D", d},
                          {"infer_bits", b},
                          {"episodes", reports.size()},
                          {"hdc_acc", mean_json(s.hdc)},
                          {"knn_acc", mean_json(s.knn)},
                          {"paired_difference", mean_json(s.difference)}});
      }
  write_text(o.output, csv, rec);
  ordered_json summary{{"config",
                        {{"way", o.way},
                         {"query", o.query},
                         {"episodes", o.episodes},
                         {"seed", o.seed},
                         {"knn_k", o.knn_k},
                         {"update_rule", hdc::to_string(update_rule)},
                         {"F", data.dim},
                         {"data", o.features.empty() ? ordered_json{{"synthetic",
                                                                     {{"classes", o.classes},
                                                                      {"per_class", o.per_class},
                                                                      {"spread", o.spread},
                                                                      {"seed", o.data_seed}}}}
                                                     : ordered_json{{"features", o.features}, {"labels", o.labels}}}}},
                       {"sweeps", sweeps}};
  const std::string summary_path = o.summary.empty() ? o.output + ".json" : o.summary;
  write_text(summary_path, summary.dump(2) + "\n", rec);
  std::cout << summary.dump(2) << "\n";
}

void run_costs(const CostsOpts& o, RunRecord& rec) {
  std::vector<NamedLayer> layers;
  std::vector<std::string> names;
  if (o.model == "vgg16") {
    layers = vgg16_conv_layers();
  } else {
    const auto dense = io::decode_dense_model(read_input(o.model, rec));
    names.reserve(dense.size());
    for (std::size_t l = 0; l < dense.size(); ++l) names.push_back("layer" + std::to_string(l));
    for (std::size_t l = 0; l < dense.size(); ++l) layers.push_back({names[l], dense[l].spec()});
  }
  const auto table = cost_table(layers, o.groups, o.group_size);
  std::string csv = "layer,dense_ops,clustered_ops,ops_reduction,dense_bytes,clustered_bytes,params_reduction\n";
  std::printf("%-10s %16s %16s %9s %14s %14s %9s\n", "layer", "dense_ops", "clustered_ops", "ops_x", "dense_bytes",
              "clust_bytes", "params_x");
  auto emit = [&](std::string_view name, const CostRecord& d, const CostRecord& c) {
    const double ox = static_cast<double>(d.ops()) / static_cast<double>(c.ops());
    const double px = d.bytes_params / c.bytes_params;
    std::printf("%-10.*s %16llu %16llu %9.3f %14.0f %14.1f %9.3f\n", static_cast<int>(name.size()), name.data(),
                static_cast<unsigned long long>(d.ops()), static_cast<unsigned long long>(c.ops()), ox, d.bytes_params,
                c.bytes_params, px);
    char row[256];
    std::snprintf(row, sizeof row, "%.*s,%llu,%llu,%.6f,%.1f,%.1f,%.6f\n", static_cast<int>(name.size()), name.data(),
                  static_cast<unsigned long long>(d.ops()), static_cast<unsigned long long>(c.ops()), ox,
                  d.bytes_params, c.bytes_params, px);
    csv += row;
  };
  for (const auto& row : table.layers) emit(row.name, row.dense, row.clustered);
  emit("total", table.dense_total, table.clustered_total);
  std::printf("G=%u group_size=%s: ops reduction %.3fx, multiply reduction %.3fx, params reduction %.3fx\n", o.groups,
              o.group_size ? std::to_string(o.group_size).c_str() : "all", table.ops_reduction(),
              table.multiply_reduction(), table.params_reduction());
  if (!o.output.empty()) write_text(o.output, csv, rec);
  if (!o.summary.empty()) {
    const ordered_json j{{"model", o.model},
                         {"G", o.groups},
                         {"group_size", o.group_size},
                         {"dense", cost_json(table.dense_total)},
                         {"clustered", cost_json(table.clustered_total)},
                         {"ops_reduction", table.ops_reduction()},
                         {"multiply_reduction", table.multiply_reduction()},
                         {"params_reduction", table.params_reduction()}};
    write_text(o.summary, j.dump(2) + "\n", rec);
  }
}

void run_synth(const SynthOpts& o, RunRecord& rec) {
  rec.seed = o.seed;
  const auto data = harness::make_synthetic_dataset(o.classes, o.per_class, o.feature_dim, o.spread, o.seed);
  write_bytes(o.output, io::encode_tensor(data.to_tensor()), rec);
  write_bytes(o.labels, io::encode_labels(data.labels), rec);
  std::cout << ordered_json{{"samples", data.size()}, {"F", data.dim}}.dump() << "\n";
}

void run_extract(const ExtractOpts& o, RunRecord& rec) {
  const auto model = io::decode_clustered_model(read_input(o.model, rec));
  const auto stacked = io::decode_tensor(read_input(o.images, rec));
  const std::size_t h = o.image_height ? o.image_height : stacked.height();
  if (h == 0 || stacked.height() % h != 0) {
    throw ShapeError("image tensor height " + std::to_string(stacked.height()) + " is not a multiple of --image-height " +
                     std::to_string(h));
  }
  const std::size_t count = stacked.height() / h;
  const std::size_t per = h * stacked.width() * stacked.channels();
  std::vector<Tensor3<float>> images;
  for (std::size_t i = 0; i < count; ++i) {
    const auto d = stacked.data().subspan(i * per, per);
    images.emplace_back(h, stacked.width(), stacked.channels(), std::vector<float>(d.begin(), d.end()));
  }
  std::vector<std::uint32_t> labels(count, 0);
  if (!o.labels.empty()) labels = io::decode_labels(read_input(o.labels, rec));
  const auto features = harness::extract_features(images, labels, model);
  write_bytes(o.output, io::encode_tensor(features.to_tensor()), rec);
  if (!o.labels_out.empty()) write_bytes(o.labels_out, io::encode_labels(features.labels), rec);
  std::cout << ordered_json{{"images", count}, {"F", features.dim}}.dump() << "\n";
}

// ---- config file, manifest, dispatch ----

/// key=value lines; '#' starts a comment. Keys are long flag names without dashes.
std::vector<std::pair<std::string, std::string>> read_config_file(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw UsageError("cannot open config file " + p.string());
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  int n = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++n;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw UsageError(p.string() + ":" + std::to_string(n) + ": expected key=value");
    out.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return out;
}

/// Flattened view of every option of the subcommand (given or default).
ordered_json flatten_config(const CLI::App* sub) {
  ordered_json cfg = ordered_json::object();
  for (const CLI::Option* opt : sub->get_options()) {
    if (opt->get_lnames().empty()) continue;
    const std::string name = opt->get_lnames().front();
    if (name == "help" || name == "config" || name == "manifest") continue;
    std::string value;
    if (opt->count() > 0) {
      const auto& res = opt->results();
      for (std::size_t i = 0; i < res.size(); ++i) value += (i ? "," : "") + res[i];
    } else {
      value = opt->get_default_str();
    }
    cfg[name] = value;
  }
  return cfg;
}

ordered_json hashes(const std::vector<fs::path>& paths) {
  ordered_json j = ordered_json::object();
  for (const auto& p : paths) j[p.string()] = file_hash(p);
  return j;
}

int run(std::vector<std::string> args);

int run_replay(const fs::path& manifest_path) {
  const auto bytes = io::read_file(manifest_path);
  ordered_json m;
  try {
    m = ordered_json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest " + manifest_path.string() + ": " + e.what());
  }
  std::vector<std::string> args{"fhdnn", m.at("subcommand").get<std::string>()};
  for (const auto& [key, value] : m.at("config").items()) {
    const auto v = value.get<std::string>();
    if (v.empty()) continue;
    args.push_back("--" + key + "=" + v);
  }
  fs::path replay_manifest = manifest_path;
  replay_manifest += ".replay.json";
  args.push_back("--manifest=" + replay_manifest.string());
  if (const int rc = run(args); rc != 0) return rc;
  bool ok = true;
  for (const auto& [path, hash] : m.at("outputs").items()) {
    const std::string now = file_hash(path);
    if (now != hash.get<std::string>()) {
      std::cerr << "replay mismatch: " << path << "\n";
      ok = false;
    }
  }
  std::cout << (ok ? "replay ok: outputs identical\n" : "replay FAILED: outputs differ\n");
  return ok ? 0 : 1;
}

void print_error(const char* kind, const std::string& msg) {
  std::cerr << ordered_json{{"error", {{"kind", kind}, {"message", msg}}}}.dump() << "\n";
}

int run(std::vector<std::string> args) {
  CLI::App app{"fhdnn: clustered CNN features, PE-array simulation and HDC few-shot learning"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  std::string manifest_flag, config_flag;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--manifest", manifest_flag, "manifest path (default: <primary output>.manifest.json)");
    sub->add_option("--config", config_flag, "key=value file merged beneath flags");
  };

  MakeModelOpts mm;
  auto* s_mm = app.add_subcommand("make-model", "write a random dense model (FHD1)");
  s_mm->add_option("--layers", mm.layers, "comma-separated in:out channel pairs");
  s_mm->add_option("--size", mm.size, "input height and width")->check(CLI::PositiveNumber);
  s_mm->add_option("--kernel", mm.kernel);
  s_mm->add_option("--stride", mm.stride)->check(CLI::PositiveNumber);
  s_mm->add_option("--padding", mm.padding);
  s_mm->add_option("--seed", mm.seed);
  s_mm->add_option("--output", mm.output)->required();
  common(s_mm);

  ClusterOpts cl;
  auto* s_cl = app.add_subcommand("cluster", "cluster a dense model (FHD1) into a clustered model (FHC1)");
  s_cl->add_option("--input", cl.input, "dense model file")->required();
  s_cl->add_option("--G", cl.groups, "clusters per filter, 1-16");
  s_cl->add_option("--group-size", cl.group_size, "output channels per shared pattern (0 = whole layer)");
  s_cl->add_option("--method", cl.method, "optimal | lloyd");
  s_cl->add_option("--output", cl.output)->required();
  common(s_cl);

  SimulateOpts sm;
  auto* s_sm = app.add_subcommand("simulate", "simulate one clustered layer on the PE array");
  s_sm->add_option("--model", sm.model, "clustered model file")->required();
  s_sm->add_option("--layer", sm.layer);
  s_sm->add_option("--rows", sm.rows)->check(CLI::PositiveNumber);
  s_sm->add_option("--cols", sm.cols)->check(CLI::PositiveNumber);
  s_sm->add_option("--report", sm.report, "CSV file to append a row to");
  s_sm->add_option("--input", sm.input, "activation tensor (FHT1) for value tracking");
  s_sm->add_option("--output", sm.output, "output feature map (FHT1), requires --input");
  common(s_sm);

  TrainOpts tr;
  auto* s_tr = app.add_subcommand("hdc-train", "single-pass HDC training");
  s_tr->add_option("--features", tr.features, "FHT1 features (one row per sample)")->required();
  s_tr->add_option("--labels", tr.labels, "FHL1 labels")->required();
  s_tr->add_option("--D", tr.dims);
  s_tr->add_option("--N", tr.classes, "class count (0 = max label + 1)");
  s_tr->add_option("--infer-bits", tr.infer_bits, "precision used for in-training classification");
  s_tr->add_option("--seed", tr.seed, "projection seed");
  s_tr->add_option("--update-rule", tr.update_rule, "literal | add-correct-on-miss");
  s_tr->add_option("--encoding", tr.encoding, "bipolar | raw");
  s_tr->add_option("--output", tr.output, "class memory (FHV1)")->required();
  common(s_tr);

  InferOpts in;
  auto* s_in = app.add_subcommand("hdc-infer", "classify features against a class memory");
  s_in->add_option("--memory", in.memory, "class memory (FHV1)")->required();
  s_in->add_option("--features", in.features)->required();
  s_in->add_option("--labels", in.labels, "optional labels for accuracy");
  s_in->add_option("--infer-bits", in.infer_bits);
  s_in->add_option("--seed", in.seed, "projection seed used at training");
  s_in->add_option("--encoding", in.encoding);
  s_in->add_option("--output", in.output, "prediction CSV")->required();
  common(s_in);

  EpisodesOpts ep;
  auto* s_ep = app.add_subcommand("episodes", "few-shot benchmark: HDC vs kNN-L1");
  s_ep->add_option("--features", ep.features, "FHT1 features (default: synthetic Gaussian classes)");
  s_ep->add_option("--labels", ep.labels);
  s_ep->add_option("--way", ep.way);
  s_ep->add_option("--shot", ep.shot, "comma-separated sweep list");
  s_ep->add_option("--query", ep.query);
  s_ep->add_option("--episodes", ep.episodes);
  s_ep->add_option("--D", ep.dims, "comma-separated sweep list");
  s_ep->add_option("--infer-bits", ep.infer_bits, "comma-separated sweep list");
  s_ep->add_option("--seed", ep.seed);
  s_ep->add_option("--knn-k", ep.knn_k);
  s_ep->add_option("--update-rule", ep.update_rule);
  s_ep->add_option("--classes", ep.classes, "synthetic: class count");
  s_ep->add_option("--per-class", ep.per_class, "synthetic: samples per class");
  s_ep->add_option("--F", ep.feature_dim, "synthetic: feature dimension");
  s_ep->add_option("--spread", ep.spread, "synthetic: noise scale");
  s_ep->add_option("--data-seed", ep.data_seed, "synthetic: dataset seed");
  s_ep->add_option("--output", ep.output, "per-episode CSV")->required();
  s_ep->add_option("--summary", ep.summary, "JSON summary (default: <output>.json)");
  common(s_ep);

  CostsOpts co;
  auto* s_co = app.add_subcommand("costs", "dense vs clustered operation and parameter accounting");
  s_co->add_option("--model", co.model, "vgg16 or a dense model file");
  s_co->add_option("--G", co.groups);
  s_co->add_option("--group-size", co.group_size, "0 = one shared pattern per layer");
  s_co->add_option("--output", co.output, "per-layer CSV");
  s_co->add_option("--summary", co.summary, "JSON totals");
  common(s_co);

  SynthOpts sy;
  auto* s_sy = app.add_subcommand("synth", "write a synthetic Gaussian feature set");
  s_sy->add_option("--classes", sy.classes);
  s_sy->add_option("--per-class", sy.per_class);
  s_sy->add_option("--F", sy.feature_dim);
  s_sy->add_option("--spread", sy.spread);
  s_sy->add_option("--seed", sy.seed);
  s_sy->add_option("--output", sy.output, "FHT1 features")->required();
  s_sy->add_option("--labels", sy.labels, "FHL1 labels")->required();
  common(s_sy);

  ExtractOpts ex;
  auto* s_ex = app.add_subcommand("extract", "run images through a clustered model to features");
  s_ex->add_option("--model", ex.model)->required();
  s_ex->add_option("--images", ex.images, "FHT1 tensor of vertically stacked images")->required();
  s_ex->add_option("--image-height", ex.image_height, "height of one image (0 = single image)");
  s_ex->add_option("--labels", ex.labels, "FHL1 image labels");
  s_ex->add_option("--output", ex.output, "FHT1 features")->required();
  s_ex->add_option("--labels-out", ex.labels_out, "FHL1 feature labels");
  common(s_ex);

  std::string replay_path;
  auto* s_rp = app.add_subcommand("replay", "re-run a manifest and verify its outputs");
  s_rp->add_option("manifest", replay_path)->required();

  // Merge the config file beneath the flags: its keys become flags placed
  // before the user's, and keys the user also gave on the command line are dropped.
  if (args.size() > 2) {
    std::optional<std::string> cfg_path;
    for (std::size_t i = 2; i < args.size(); ++i) {
      if (args[i] == "--config" && i + 1 < args.size()) cfg_path = args[i + 1];
      if (args[i].rfind("--config=", 0) == 0) cfg_path = args[i].substr(9);
    }
    if (cfg_path) {
      std::vector<std::string> merged(args.begin(), args.begin() + 2);
      for (const auto& [key, value] : read_config_file(*cfg_path)) {
        bool given = false;
        for (std::size_t i = 2; i < args.size(); ++i) {
          given = given || args[i] == "--" + key || args[i].rfind("--" + key + "=", 0) == 0;
        }
        if (!given) merged.push_back("--" + key + "=" + value);
      }
      merged.insert(merged.end(), args.begin() + 2, args.end());
      args = std::move(merged);
    }
  }

  try {
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  if (s_rp->parsed()) return run_replay(replay_path);

  CLI::App* sub = app.get_subcommands().front();
  RunRecord rec;
  std::string primary;
  if (s_mm->parsed()) {
    run_make_model(mm, rec);
  } else if (s_cl->parsed()) {
    run_cluster(cl, rec);
  } else if (s_sm->parsed()) {
    if (!sm.output.empty() && sm.input.empty()) throw UsageError("--output requires --input");
    run_simulate(sm, rec);
  } else if (s_tr->parsed()) {
    run_hdc_train(tr, rec);
  } else if (s_in->parsed()) {
    run_hdc_infer(in, rec);
  } else if (s_ep->parsed()) {
    run_episodes(ep, rec);
  } else if (s_co->parsed()) {
    run_costs(co, rec);
  } else if (s_sy->parsed()) {
    run_synth(sy, rec);
  } else if (s_ex->parsed()) {
    run_extract(ex, rec);
  }

  fs::path manifest = manifest_flag;
  if (manifest.empty()) {
    manifest = rec.outputs.empty() ? fs::path("fhdnn-" + sub->get_name() + ".manifest.json")
                                   : fs::path(rec.outputs.front().string() + ".manifest.json");
  }
  ordered_json m{{"tool", "fhdnn"},
                 {"version", kVersion},
                 {"subcommand", sub->get_name()},
                 {"config", flatten_config(sub)},
                 {"seed", rec.seed ? ordered_json(*rec.seed) : ordered_json(nullptr)},
                 {"environment", {{"FHDNN_THREADS", std::getenv("FHDNN_THREADS") ? std::getenv("FHDNN_THREADS") : ""}}},
                 {"inputs", hashes(rec.inputs)},
                 {"outputs", hashes(rec.outputs)}};
  io::write_file_atomic(manifest, std::string_view(m.dump(2) + "\n"));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(std::vector<std::string>(argv, argv + argc));
  } catch (const UsageError& e) {
    print_error("usage", e.what());
    return 2;
  } catch (const ConfigError& e) {
    print_error("config", e.what());
    return 1;
  } catch (const FormatError& e) {
    print_error("format", e.what());
    return 1;
  } catch (const ShapeError& e) {
    print_error("shape", e.what());
    return 1;
  } catch (const IntegrityError& e) {
    print_error("integrity", e.what());
    return 1;
  } catch (const DataError& e) {
    print_error("data", e.what());
    return 1;
  } catch (const std::exception& e) {
    print_error("error", e.what());
    return 1;
  }
}
