#pragma once

// Run configuration: a flat `dotted.key = value` text format with typed
// keys, plus builders for the library specs.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "nal/adversary.hpp"
#include "nal/certifier.hpp"
#include "nal/dataset.hpp"
#include "nal/error.hpp"
#include "nal/network.hpp"
#include "nal/smoothing.hpp"
#include "nal/trainers.hpp"

namespace nal {

enum class ValueKind { integer, real, text, boolean, real_list, text_list };

struct KeySpec {
  std::string_view key;
  ValueKind kind;
  std::string_view default_value;
  std::string_view help;
};

// An empty default means "unset"; builders substitute a derived value.
inline constexpr KeySpec kConfigKeys[] = {
    {"run.name", ValueKind::text, "run", "name of the run directory under the output root"},
    {"run.seed", ValueKind::integer, "1", "master seed"},
    {"run.threads", ValueKind::integer, "1", "worker threads"},
    {"data.source", ValueKind::text, "blobs", "mnist | blobs | csv"},
    {"data.mnist_dir", ValueKind::text, "data/mnist", "directory with the four IDX files"},
    {"data.train_size", ValueKind::integer, "5000", "stratified training subset size (mnist)"},
    {"data.test_size", ValueKind::integer, "1000", "stratified test subset size (mnist)"},
    {"data.blobs.train_size", ValueKind::integer, "200", "blob training points"},
    {"data.blobs.test_size", ValueKind::integer, "200", "blob test points"},
    {"data.blobs.dim", ValueKind::integer, "2", "blob dimension (1 or 2)"},
    {"data.blobs.classes", ValueKind::integer, "2", "blob classes"},
    {"data.blobs.separation", ValueKind::real, "4", "min centroid distance over cluster std-dev"},
    {"data.train_csv", ValueKind::text, "", "training CSV (csv source)"},
    {"data.test_csv", ValueKind::text, "", "test CSV (csv source)"},
    {"data.classes", ValueKind::integer, "10", "class count (csv source)"},
    {"model.hidden", ValueKind::real_list, "256,256", "hidden layer widths"},
    {"model.activation", ValueKind::text, "relu", "relu | elu"},
    {"model.path", ValueKind::text, "", "model file for attack, certify and bound"},
    {"train.method", ValueKind::text, "natural", "nal | wrm | noise | pgd_at | natural"},
    {"train.epochs", ValueKind::integer, "10", "epochs"},
    {"train.eta2", ValueKind::real, "0.1", "outer SGD step"},
    {"train.batch_size", ValueKind::integer, "128", "minibatch size"},
    {"train.attack_eps", ValueKind::real, "0.34", "l2 radius for pgd_at"},
    {"train.attack_steps", ValueKind::integer, "10", "PGD steps for pgd_at"},
    {"surrogate.gamma", ValueKind::real, "1.5", "penalty gamma"},
    {"surrogate.K", ValueKind::integer, "4", "inner ascent steps"},
    {"surrogate.eta1", ValueKind::real, "", "inner step (default 0.5 / gamma)"},
    {"surrogate.cost_mode", ValueKind::text, "noisy", "noisy | clean"},
    {"surrogate.start_mode", ValueKind::text, "clean", "clean | random-ball"},
    {"surrogate.start_radius", ValueKind::real, "0", "radius for random-ball starts"},
    {"surrogate.clamp", ValueKind::boolean, "false", "clamp inner iterates to [0,1]"},
    {"noise.sigma", ValueKind::real, "0.1", "Gaussian noise std-dev"},
    {"noise.r", ValueKind::integer, "4", "noise draws per estimate"},
    {"attack.epsilons", ValueKind::real_list, "0.34", "l2 radii for the PGD evaluation"},
    {"attack.k_pgd", ValueKind::integer, "20", "PGD steps"},
    {"attack.test_noise", ValueKind::boolean, "false", "predict with the r-draw noisy majority"},
    {"certify.sigma", ValueKind::real, "", "smoothing std-dev (default noise.sigma)"},
    {"certify.n0", ValueKind::integer, "100", "selection draws"},
    {"certify.n", ValueKind::integer, "1000", "estimation draws"},
    {"certify.alpha", ValueKind::real, "0.001", "failure probability"},
    {"certify.mode", ValueKind::text, "one-sided", "one-sided | two-class"},
    {"certify.radii", ValueKind::real_list, "0,0.25,0.5,0.75,1,1.25,1.5", "radius grid of the curve"},
    {"certify.limit", ValueKind::integer, "0", "certify only the first N test points (0 = all)"},
    {"bound.gammas", ValueKind::real_list, "0.25,1.5,3", "penalties of the certificate curves"},
    {"bound.K", ValueKind::integer, "", "inner steps (default surrogate.K)"},
    {"bound.rho_points", ValueKind::integer, "20", "points of the rho grid"},
    {"bound.split", ValueKind::text, "test", "train | test"},
    {"transfer.models", ValueKind::text_list, "", "model files, used as both sources and targets"},
    {"transfer.labels", ValueKind::text_list, "", "names of the models (default file stems)"},
    {"transfer.epsilon", ValueKind::real, "0.34", "l2 radius of the transfer attack"},
    {"transfer.k_pgd", ValueKind::integer, "20", "PGD steps of the transfer attack"},
    {"verify.level", ValueKind::text, "quick", "quick | full"},
};

inline const KeySpec* find_key(std::string_view key) {
  for (const auto& k : kConfigKeys)
    if (k.key == key) return &k;
  return nullptr;
}

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto comma = s.find(',', start);
    out.push_back(trim(s.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

inline std::optional<double> parse_real(std::string_view s) {
  double v = 0.0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

inline std::optional<std::int64_t> parse_int(std::string_view s) {
  std::int64_t v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) return std::nullopt;
  return v;
}

inline bool value_matches(ValueKind kind, std::string_view v) {
  switch (kind) {
    case ValueKind::integer: return parse_int(v).has_value();
    case ValueKind::real: return parse_real(v).has_value();
    case ValueKind::boolean: return v == "true" || v == "false";
    case ValueKind::text: return true;
    case ValueKind::text_list: return true;
    case ValueKind::real_list:
      for (const auto& item : split_list(v))
        if (!parse_real(item)) return false;
      return true;
  }
  return false;
}

}  // namespace detail

class RunConfig {
 public:
  RunConfig() {
    for (const auto& k : kConfigKeys) values_[std::string(k.key)] = std::string(k.default_value);
  }

  /// Applies `key = value` lines; `#` starts a comment. `origin` names the
  /// source in diagnostics.
  void apply_text(std::string_view text, const std::string& origin) {
    std::istringstream in{std::string(text)};
    std::string line;
    int number = 0;
    while (std::getline(in, line)) {
      ++number;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      if (detail::trim(line).empty()) continue;
      set(line, origin + ":" + std::to_string(number));
    }
  }

  /// One `key=value` assignment; `where` locates it in diagnostics.
  void set(std::string_view assignment, const std::string& where) {
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos) throw ConfigError(where + ": expected 'key = value', got '" + detail::trim(assignment) + "'");
    const std::string key = detail::trim(assignment.substr(0, eq));
    const std::string value = detail::trim(assignment.substr(eq + 1));
    const KeySpec* spec = find_key(key);
    if (!spec) throw ConfigError(where + ": unknown key '" + key + "'");
    if (!value.empty() && !detail::value_matches(spec->kind, value)) {
      throw ConfigError(where + ": key '" + key + "' has invalid value '" + value + "'");
    }
    values_[key] = value;
    origins_[key] = where;
    bases_[key] = loading_dir_;
  }

  /// Relative paths inside the file resolve against the file's directory.
  void load_file(const std::string& path) {
    const std::string text = detail::read_file(path);
    loading_dir_ = std::filesystem::path(path).parent_path();
    if (loading_dir_.empty()) loading_dir_ = ".";
    apply_text(text, path);
    loading_dir_.clear();
  }

  bool is_set(std::string_view key) const { return !raw(key).empty(); }

  const std::string& raw(std::string_view key) const {
    const auto it = values_.find(std::string(key));
    if (it == values_.end()) throw ConfigError("unknown key '" + std::string(key) + "'");
    return it->second;
  }

  std::string text(std::string_view key) const { return raw(key); }

  double real(std::string_view key) const {
    const auto v = detail::parse_real(raw(key));
    if (!v) throw ConfigError(where(key) + "key '" + std::string(key) + "' needs a number");
    return *v;
  }

  std::int64_t integer(std::string_view key) const {
    const auto v = detail::parse_int(raw(key));
    if (!v) throw ConfigError(where(key) + "key '" + std::string(key) + "' needs an integer");
    return *v;
  }

  bool boolean(std::string_view key) const { return raw(key) == "true"; }

  std::vector<double> reals(std::string_view key) const {
    std::vector<double> out;
    for (const auto& item : detail::split_list(raw(key))) out.push_back(*detail::parse_real(item));
    return out;
  }

  std::vector<std::string> texts(std::string_view key) const { return detail::split_list(raw(key)); }

  /// A path value resolved against the directory of the config file.
  std::string path(std::string_view key) const { return resolve(key, raw(key)); }

  std::vector<std::string> paths(std::string_view key) const {
    std::vector<std::string> out;
    for (const auto& item : texts(key)) out.push_back(resolve(key, item));
    return out;
  }

  /// Effective configuration, one `key = value` per line in key order.
  std::string to_text() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
  }

  const std::map<std::string, std::string>& values() const { return values_; }

  /// Checks the cross-key constraints that do not depend on the command.
  void validate() const {
    auto positive_int = [&](std::string_view key) {
      if (integer(key) < 1) throw ConfigError(where(key) + "key '" + std::string(key) + "' must be >= 1");
    };
    for (auto key : {"run.threads", "train.epochs", "train.batch_size", "noise.r", "attack.k_pgd", "certify.n0",
                     "certify.n", "bound.rho_points", "data.train_size", "data.test_size", "data.blobs.train_size",
                     "data.blobs.test_size", "data.blobs.classes", "train.attack_steps", "transfer.k_pgd"}) {
      positive_int(key);
    }
    if (integer("run.seed") < 0) throw ConfigError(where("run.seed") + "key 'run.seed' must be >= 0");
    if (integer("surrogate.K") < 0) throw ConfigError(where("surrogate.K") + "key 'surrogate.K' must be >= 0");
    const auto src = text("data.source");
    if (src != "mnist" && src != "blobs" && src != "csv") {
      throw ConfigError(where("data.source") + "key 'data.source' must be mnist, blobs or csv");
    }
    const auto dim = integer("data.blobs.dim");
    if (dim != 1 && dim != 2) throw ConfigError(where("data.blobs.dim") + "key 'data.blobs.dim' must be 1 or 2");
    try {
      parse_method(text("train.method"));
      parse_activation(text("model.activation"));
      parse_cert_mode(text("certify.mode"));
      (void)train_spec();
      (void)surrogate_spec();
      (void)certify_spec();
    } catch (const ParameterError& e) {
      throw ConfigError(e.what());
    }
    for (double h : reals("model.hidden")) {
      if (!(h >= 1.0) || h != std::floor(h)) throw ConfigError(where("model.hidden") + "key 'model.hidden' needs positive integers");
    }
    for (double e : reals("attack.epsilons")) {
      if (!(e > 0.0)) throw ConfigError(where("attack.epsilons") + "key 'attack.epsilons' needs positive radii");
    }
    const auto split = text("bound.split");
    if (split != "train" && split != "test") throw ConfigError(where("bound.split") + "key 'bound.split' must be train or test");
    const auto level = text("verify.level");
    if (level != "quick" && level != "full") throw ConfigError(where("verify.level") + "key 'verify.level' must be quick or full");
  }

  std::uint64_t seed() const { return static_cast<std::uint64_t>(integer("run.seed")); }
  int threads() const { return static_cast<int>(integer("run.threads")); }

  SurrogateSpec surrogate_spec() const {
    SurrogateSpec ss;
    ss.gamma = real("surrogate.gamma");
    ss.K = static_cast<int>(integer("surrogate.K"));
    ss.eta1 = is_set("surrogate.eta1") ? real("surrogate.eta1") : (ss.gamma > 0.0 ? 0.5 / ss.gamma : 0.1);
    const auto cm = text("surrogate.cost_mode");
    if (cm != "noisy" && cm != "clean") throw ParameterError("surrogate.cost_mode must be noisy or clean");
    ss.cost_mode = cm == "noisy" ? CostMode::noisy : CostMode::clean;
    const auto sm = text("surrogate.start_mode");
    if (sm != "clean" && sm != "random-ball") throw ParameterError("surrogate.start_mode must be clean or random-ball");
    ss.start_mode = sm == "clean" ? StartMode::clean : StartMode::random_ball;
    ss.start_radius = real("surrogate.start_radius");
    ss.clamp_unit_box = boolean("surrogate.clamp");
    ss.validate();
    return ss;
  }

  NoiseSpec noise_spec(std::string_view purpose) const {
    NoiseSpec ns{real("noise.sigma"), static_cast<int>(integer("noise.r")), derive_stream(seed(), purpose, {})};
    ns.validate();
    return ns;
  }

  TrainSpec train_spec() const {
    TrainSpec ts;
    ts.method = parse_method(text("train.method"));
    ts.epochs = static_cast<int>(integer("train.epochs"));
    ts.eta2 = real("train.eta2");
    ts.batch_size = static_cast<std::size_t>(std::max<std::int64_t>(1, integer("train.batch_size")));
    ts.surrogate = surrogate_spec();
    ts.sigma = real("noise.sigma");
    ts.r = static_cast<int>(integer("noise.r"));
    ts.attack_eps = real("train.attack_eps");
    ts.attack_steps = static_cast<int>(integer("train.attack_steps"));
    ts.seed = seed();
    ts.threads = threads();
    ts.validate();
    return ts;
  }

  CertifySpec certify_spec() const {
    CertifySpec cs;
    cs.sigma = is_set("certify.sigma") ? real("certify.sigma") : real("noise.sigma");
    cs.n0 = static_cast<int>(integer("certify.n0"));
    cs.n = static_cast<int>(integer("certify.n"));
    cs.alpha = real("certify.alpha");
    cs.mode = parse_cert_mode(text("certify.mode"));
    cs.seed = derive_stream(seed(), "certify", {});
    cs.validate();
    return cs;
  }

  std::vector<LayerSpec> layer_specs(std::size_t input_dim, std::size_t classes) const {
    std::vector<std::size_t> hidden;
    for (double h : reals("model.hidden")) hidden.push_back(static_cast<std::size_t>(h));
    return mlp_specs(input_dim, hidden, classes, parse_activation(text("model.activation")));
  }

 private:
  std::string where(std::string_view key) const {
    const auto it = origins_.find(std::string(key));
    return it == origins_.end() ? std::string() : it->second + ": ";
  }

  std::string resolve(std::string_view key, const std::string& item) const {
    const std::filesystem::path p(item);
    const auto it = bases_.find(std::string(key));
    if (p.empty() || p.is_absolute() || it == bases_.end() || it->second.empty()) return p.string();
    return (it->second / p).lexically_normal().string();
  }

  std::map<std::string, std::string> values_;
  std::map<std::string, std::string> origins_;
  std::map<std::string, std::filesystem::path> bases_;
  std::filesystem::path loading_dir_;
};

struct DataSplit {
  Dataset train;
  Dataset test;
};

/// Loads or generates the train/test datasets described by the config.
inline DataSplit load_data(const RunConfig& cfg) {
  const auto src = cfg.text("data.source");
  const std::uint64_t seed = cfg.seed();
  DataSplit out;
  if (src == "mnist") {
    const std::filesystem::path dir = cfg.path("data.mnist_dir");
    const Dataset full_train = load_idx((dir / "train-images-idx3-ubyte").string(), (dir / "train-labels-idx1-ubyte").string());
    const Dataset full_test = load_idx((dir / "t10k-images-idx3-ubyte").string(), (dir / "t10k-labels-idx1-ubyte").string());
    auto r1 = make_stream(seed, "subset-train");
    auto r2 = make_stream(seed, "subset-test");
    out.train = subset(full_train, static_cast<std::size_t>(cfg.integer("data.train_size")), r1);
    out.test = subset(full_test, static_cast<std::size_t>(cfg.integer("data.test_size")), r2);
    out.train.name = "mnist-train";
    out.test.name = "mnist-test";
  } else if (src == "blobs") {
    const int d = static_cast<int>(cfg.integer("data.blobs.dim"));
    const int C = static_cast<int>(cfg.integer("data.blobs.classes"));
    const double sep = cfg.real("data.blobs.separation");
    auto r1 = make_stream(seed, "blobs-train");
    auto r2 = make_stream(seed, "blobs-test");
    out.train = make_blobs(static_cast<std::size_t>(cfg.integer("data.blobs.train_size")), d, C, sep, r1);
    out.test = make_blobs(static_cast<std::size_t>(cfg.integer("data.blobs.test_size")), d, C, sep, r2);
    out.train.name = "blobs-train";
    out.test.name = "blobs-test";
  } else {
    const int C = static_cast<int>(cfg.integer("data.classes"));
    out.train = dataset_from_csv(detail::read_file(cfg.path("data.train_csv")), C, "csv-train");
    out.test = dataset_from_csv(detail::read_file(cfg.path("data.test_csv")), C, "csv-test");
  }
  return out;
}

}  // namespace nal
