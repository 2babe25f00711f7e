// nal: command-line front end for training, attacking, certifying and
// checking noise-augmented robust models.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "nal/adversary.hpp"
#include "nal/artifacts.hpp"
#include "nal/bound_eval.hpp"
#include "nal/certifier.hpp"
#include "nal/config.hpp"
#include "nal/network.hpp"
#include "nal/objective.hpp"
#include "nal/trainers.hpp"
#include "nal/verify.hpp"

namespace fs = std::filesystem;
using namespace nal;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> sets;
  std::string out;
  std::optional<std::int64_t> seed;
  std::optional<std::int64_t> threads;
};

fs::path out_root() {
  if (const char* env = std::getenv("NAL_OUT_ROOT"); env && *env) return env;
  return "runs";
}

RunConfig build_config(const Common& c) {
  RunConfig cfg;
  if (!c.config_path.empty()) cfg.load_file(c.config_path);
  for (std::size_t i = 0; i < c.sets.size(); ++i) cfg.set(c.sets[i], "--set #" + std::to_string(i + 1));
  if (c.seed) cfg.set("run.seed=" + std::to_string(*c.seed), "--seed");
  if (c.threads) cfg.set("run.threads=" + std::to_string(*c.threads), "--threads");
  cfg.validate();
  return cfg;
}

fs::path run_dir(const Common& c, const RunConfig& cfg) {
  return c.out.empty() ? out_root() / cfg.text("run.name") : fs::path(c.out);
}

fs::path model_path(const RunConfig& cfg, const fs::path& dir) {
  return cfg.is_set("model.path") ? fs::path(cfg.path("model.path")) : dir / "model.nalnet";
}

/// A bare run name stands for <out root>/<name>/model.nalnet.
fs::path resolve_model_ref(const std::string& ref) {
  if (ref.find('/') == std::string::npos && fs::path(ref).extension() != ".nalnet") {
    return out_root() / ref / "model.nalnet";
  }
  return ref;
}

Network load_model_checked(const fs::path& p, const Dataset& ds) {
  if (!fs::exists(p)) throw FormatError("model file '" + p.string() + "' does not exist (run `nal train` first)");
  Network net = load_network(p.string());
  if (net.input_dim() != ds.dim()) {
    throw DimensionError("model '" + p.string() + "' expects input dimension " + std::to_string(net.input_dim()) +
                         " but the dataset has " + std::to_string(ds.dim()));
  }
  if (net.num_classes() != static_cast<std::size_t>(ds.num_classes)) {
    throw DimensionError("model '" + p.string() + "' has " + std::to_string(net.num_classes()) +
                         " classes but the dataset has " + std::to_string(ds.num_classes));
  }
  return net;
}

void emit(Manifest& m, const fs::path& path, const std::string& text) {
  write_text(path, text);
  m.add_artifact(path);
}

Dataset limited(const Dataset& ds, std::int64_t limit) {
  if (limit <= 0 || static_cast<std::size_t>(limit) >= ds.size()) return ds;
  std::vector<std::size_t> idx(static_cast<std::size_t>(limit));
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return ds.select(idx);
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const Common& c) {
  const RunConfig cfg = build_config(c);
  const fs::path dir = run_dir(c, cfg);
  Manifest m("gen-data", cfg);
  const DataSplit data = load_data(cfg);
  emit(m, dir / "train.csv", dataset_to_csv(data.train));
  emit(m, dir / "test.csv", dataset_to_csv(data.test));
  m.add_dataset("train", data.train);
  m.add_dataset("test", data.test);
  m.write(dir);
  std::cout << "wrote " << data.train.size() << " training and " << data.test.size() << " test rows to " << dir.string()
            << "\n";
  return 0;
}

int cmd_train(const Common& c) {
  const RunConfig cfg = build_config(c);
  const fs::path dir = run_dir(c, cfg);
  const TrainSpec ts = cfg.train_spec();
  Manifest m("train", cfg);
  const DataSplit data = load_data(cfg);
  m.add_dataset("train", data.train);
  m.add_dataset("test", data.test);

  auto init_rng = make_stream(cfg.seed(), "init");
  const Network net0 =
      init_network(cfg.layer_specs(data.train.dim(), static_cast<std::size_t>(data.train.num_classes)), init_rng);
  const TrainResult res = train(net0, data.train, ts);

  const fs::path model = dir / "model.nalnet";
  fs::create_directories(dir);
  save_network(res.net, model.string());
  m.add_artifact(model);
  m.json()["model_checksum_fnv1a64"] = hex64(detail::fnv1a(serialize_network(res.net)));
  emit(m, dir / "history.csv", history_csv(res.history));

  const EvalResult ev = evaluate(res.net, data.test, std::nullopt, std::nullopt, ts.threads);
  m.json()["test_clean_acc"] = ev.clean_acc;
  double seconds = 0.0;
  for (const auto& e : res.history) seconds += e.wall_seconds;
  m.json()["train_seconds"] = seconds;
  m.write(dir);
  std::cout << to_string(ts.method) << ": " << ts.epochs << " epochs in " << verify::fmt(seconds) << " s, final surrogate loss "
            << verify::fmt(res.history.empty() ? 0.0 : res.history.back().surrogate_loss) << ", test clean accuracy "
            << verify::fmt(ev.clean_acc) << "\n";
  return 0;
}

int cmd_attack(const Common& c) {
  const RunConfig cfg = build_config(c);
  const fs::path dir = run_dir(c, cfg);
  Manifest m("attack", cfg);
  const DataSplit data = load_data(cfg);
  m.add_dataset("test", data.test);
  const fs::path mp = model_path(cfg, dir);
  const Network net = load_model_checked(mp, data.test);
  m.json()["model"] = mp.string();

  const bool noisy = cfg.boolean("attack.test_noise");
  const std::optional<NoiseSpec> ns = noisy ? std::optional<NoiseSpec>(cfg.noise_spec("test-noise")) : std::nullopt;
  const int k = static_cast<int>(cfg.integer("attack.k_pgd"));
  std::vector<AttackRow> rows;
  for (double eps : cfg.reals("attack.epsilons")) {
    const EvalResult r = evaluate(net, data.test, AttackSpec(eps, k), ns, cfg.threads());
    rows.push_back({eps, k, r, noisy});
    std::cout << "epsilon " << verify::fmt(eps) << ", PGD-" << k << ": clean " << verify::fmt(r.clean_acc) << ", robust "
              << verify::fmt(r.robust_acc) << "\n";
  }
  emit(m, dir / "attack.csv", attack_csv(rows));
  m.write(dir);
  return 0;
}

int cmd_certify(const Common& c) {
  const RunConfig cfg = build_config(c);
  const fs::path dir = run_dir(c, cfg);
  const CertifySpec cs = cfg.certify_spec();
  Manifest m("certify", cfg);
  const DataSplit data = load_data(cfg);
  const Dataset test = limited(data.test, cfg.integer("certify.limit"));
  m.add_dataset("test", test);
  const fs::path mp = model_path(cfg, dir);
  const Network net = load_model_checked(mp, test);
  m.json()["model"] = mp.string();

  const auto results = certify_dataset(net, test, cs, cfg.threads());
  const auto radii = cfg.reals("certify.radii");
  const auto curve = certified_accuracy_curve(results, test.labels, radii);
  emit(m, dir / "certify.csv", certify_csv(results, test.labels));
  emit(m, dir / "curve.csv", curve_csv(curve));
  m.write(dir);
  std::size_t abstained = 0;
  for (const auto& r : results) abstained += r.abstain;
  std::cout << "certified " << results.size() << " points (" << abstained << " abstained)\n";
  for (const auto& p : curve) {
    std::cout << "  radius " << verify::fmt(p.radius) << ": certified accuracy " << verify::fmt(p.certified_accuracy) << "\n";
  }
  return 0;
}

int cmd_bound(const Common& c) {
  const RunConfig cfg = build_config(c);
  const fs::path dir = run_dir(c, cfg);
  Manifest m("bound", cfg);
  const DataSplit data = load_data(cfg);
  const Dataset& ds = cfg.text("bound.split") == "train" ? data.train : data.test;
  m.add_dataset(cfg.text("bound.split"), ds);
  const fs::path mp = model_path(cfg, dir);
  const Network net = load_model_checked(mp, ds);
  m.json()["model"] = mp.string();

  SurrogateSpec base = cfg.surrogate_spec();
  if (cfg.is_set("bound.K")) base.K = static_cast<int>(cfg.integer("bound.K"));
  const auto gammas = cfg.reals("bound.gammas");
  const NoiseSpec ns = cfg.noise_spec("bound");
  const auto reports = certificate_curve(NetworkLoss(net), ds, gammas, {}, ns, base, cfg.threads());
  std::vector<BoundReport> out = reports;
  double hi = 0.0;
  for (const auto& r : out) hi = std::max(hi, r.point.rho_test);
  const auto grid = linear_grid(2.0 * hi, static_cast<int>(cfg.integer("bound.rho_points")));
  for (auto& r : out) {
    r.rho_grid = grid;
    r.bound_values.clear();
    for (double rho : grid) r.bound_values.push_back(r.point.gamma * rho + r.point.mean_phi);
  }
  emit(m, dir / "bound.csv", bound_csv(out));

  bool all_hold = true;
  nlohmann::json checks = nlohmann::json::array();
  for (const auto& r : out) {
    const auto& p = r.point;
    const bool holds = bound_holds(p);
    all_hold &= holds;
    checks.push_back({{"gamma", p.gamma},
                      {"mean_phi", p.mean_phi},
                      {"phi_se", p.phi_se},
                      {"rho_test", p.rho_test},
                      {"worst_case_loss", p.worst_case_loss},
                      {"combined_se", p.combined_se},
                      {"bound_at_rho_test", p.gamma * p.rho_test + p.mean_phi},
                      {"epsilon_equiv", r.epsilon_equiv},
                      {"holds", holds}});
    std::cout << "gamma " << verify::fmt(p.gamma) << ": worst-case loss " << verify::fmt(p.worst_case_loss)
              << " vs bound " << verify::fmt(p.gamma * p.rho_test + p.mean_phi) << " (+3se " << verify::fmt(3.0 * p.combined_se)
              << ") at rho_test " << verify::fmt(p.rho_test) << ": " << (holds ? "holds" : "VIOLATED") << "\n";
  }
  m.json()["bound_checks"] = checks;
  m.json()["all_hold"] = all_hold;
  m.write(dir);
  return all_hold ? 0 : 1;
}

int cmd_transfer(const Common& c) {
  const RunConfig cfg = build_config(c);
  const fs::path dir = run_dir(c, cfg);
  Manifest m("transfer", cfg);
  const DataSplit data = load_data(cfg);
  m.add_dataset("test", data.test);
  const auto refs = cfg.texts("transfer.models");
  if (refs.empty()) throw ConfigError("key 'transfer.models' lists no models");
  const auto resolved = cfg.paths("transfer.models");
  auto labels = cfg.texts("transfer.labels");
  if (!labels.empty() && labels.size() != refs.size()) {
    throw ConfigError("key 'transfer.labels' needs one name per entry of 'transfer.models'");
  }
  std::vector<Network> nets;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const fs::path p = refs[i].find('/') == std::string::npos ? resolve_model_ref(refs[i]) : fs::path(resolved[i]);
    nets.push_back(load_model_checked(p, data.test));
    m.json()["models"].push_back(p.string());
    if (labels.size() < refs.size()) labels.push_back(refs[i].find('/') == std::string::npos ? refs[i] : p.stem().string());
  }
  const AttackSpec as(cfg.real("transfer.epsilon"), static_cast<int>(cfg.integer("transfer.k_pgd")));
  std::vector<TransferCell> cells;
  for (std::size_t s = 0; s < nets.size(); ++s) {
    for (std::size_t t = 0; t < nets.size(); ++t) {
      const double acc = transfer_eval(nets[s], nets[t], data.test, as, cfg.threads());
      cells.push_back({labels[s], labels[t], acc});
      std::cout << labels[s] << " -> " << labels[t] << ": " << verify::fmt(acc) << "\n";
    }
  }
  emit(m, dir / "transfer.csv", transfer_csv(cells));
  m.write(dir);
  return 0;
}

int cmd_verify(const Common& c, std::string level) {
  RunConfig cfg = build_config(c);
  if (level.empty()) level = cfg.text("verify.level");
  if (level != "quick" && level != "full") throw ConfigError("verify level must be quick or full");
  Manifest m("verify", cfg);
  const auto results = verify::run_property_suite(level == "full");
  bool ok = true;
  std::string report;
  nlohmann::json checks = nlohmann::json::array();
  for (const auto& r : results) {
    ok &= r.pass;
    const std::string line = std::string(r.pass ? "PASS" : "FAIL") + "  " + r.name + ": " + r.detail + " [" +
                             verify::fmt(r.seconds) + " s]";
    std::cout << line << std::endl;
    report += line + "\n";
    checks.push_back({{"name", r.name}, {"pass", r.pass}, {"detail", r.detail}, {"seconds", r.seconds}});
  }
  m.json()["checks"] = checks;
  m.json()["level"] = level;
  if (!c.out.empty()) {
    const fs::path dir = c.out;
    emit(m, dir / "verify.txt", report);
    m.write(dir);
  }
  std::cout << (ok ? "all checks passed" : "some checks FAILED") << "\n";
  return ok ? 0 : 1;
}

int cmd_schema_check(const Common& c, const std::string& target) {
  fs::path dir = target;
  if (dir.empty()) {
    const RunConfig cfg = build_config(c);
    dir = run_dir(c, cfg);
  }
  const SchemaReport rep = check_run_directory(dir);
  for (const auto& p : rep.problems) std::cout << p << "\n";
  std::cout << rep.files_checked << " CSV files checked, " << rep.problems.size() << " problems\n";
  return rep.problems.empty() ? 0 : 1;
}

std::string error_kind(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return "config error";
  if (dynamic_cast<const FormatError*>(&e)) return "format error";
  if (dynamic_cast<const DimensionError*>(&e)) return "dimension error";
  if (dynamic_cast<const ParameterError*>(&e)) return "parameter error";
  if (dynamic_cast<const TrainingDivergenceError*>(&e)) return "training diverged";
  if (dynamic_cast<const AscentDivergenceError*>(&e)) return "ascent diverged";
  if (dynamic_cast<const NonFiniteError*>(&e)) return "non-finite value";
  if (dynamic_cast<const MatchingError*>(&e)) return "matching error";
  if (dynamic_cast<const fs::filesystem_error*>(&e)) return "filesystem error";
  return "error";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Noise-augmented distributionally robust training and certification"};
  app.require_subcommand(1);
  Common common;
  std::string level, target;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "configuration file (dotted key = value lines)")->check(CLI::ExistingFile);
    sub->add_option("--set", common.sets, "override one key, key=value (repeatable)");
    sub->add_option("--out", common.out, "run directory (default $NAL_OUT_ROOT/<run.name>, or runs/<run.name>)");
    sub->add_option("--seed", common.seed, "master seed (overrides run.seed)");
    sub->add_option("--threads", common.threads, "worker threads (overrides run.threads)");
  };

  auto* gen = app.add_subcommand("gen-data", "write the train/test datasets as CSV");
  auto* tr = app.add_subcommand("train", "train a model and write model.nalnet and history.csv");
  auto* at = app.add_subcommand("attack", "PGD robustness evaluation, writes attack.csv");
  auto* ce = app.add_subcommand("certify", "randomized-smoothing certification, writes certify.csv and curve.csv");
  auto* bo = app.add_subcommand("bound", "certificate-vs-worst-case curves, writes bound.csv");
  auto* tf = app.add_subcommand("transfer", "transfer-attack matrix, writes transfer.csv");
  auto* ve = app.add_subcommand("verify", "run the oracle and property suite");
  auto* sc = app.add_subcommand("schema-check", "validate every CSV in a run directory");
  for (auto* s : {gen, tr, at, ce, bo, tf, ve, sc}) add_common(s);
  ve->add_option("--level", level, "quick | full")->check(CLI::IsMember({"quick", "full"}));
  sc->add_option("dir", target, "run directory to check (default: the configured run directory)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (gen->parsed()) return cmd_gen_data(common);
    if (tr->parsed()) return cmd_train(common);
    if (at->parsed()) return cmd_attack(common);
    if (ce->parsed()) return cmd_certify(common);
    if (bo->parsed()) return cmd_bound(common);
    if (tf->parsed()) return cmd_transfer(common);
    if (ve->parsed()) return cmd_verify(common, level);
    if (sc->parsed()) return cmd_schema_check(common, target);
  } catch (const std::exception& e) {
    std::cerr << "nal: " << error_kind(e) << ": " << e.what() << "\n";
    return 2;
  }
  return 0;
}
