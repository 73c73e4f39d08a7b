// cauca: generate, train, evaluate, diagnose, counterexample, reproduce.

#include "cauca/counterexamples.hpp"
#include "cauca/experiment.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <numbers>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;
using namespace cauca;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

std::mutex log_mutex;

void log_line(const std::string& s) {
  std::lock_guard lock(log_mutex);
  std::cerr << s << '\n';
}

void write_json(const fs::path& file, const nlohmann::json& j) {
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + file.string());
  out << j.dump(2) << '\n';
}

nlohmann::json read_json(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot read " + file.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(file.string() + ": " + e.what());
  }
}

/// "1,3,4" → {1, 3, 4}.
std::vector<int> parse_list(const std::string& s, const std::string& what) {
  std::vector<int> out;
  std::stringstream in(s);
  for (std::string item; std::getline(in, item, ',');) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::logic_error&) {
      throw ConfigError(what + ": '" + item + "' is not an integer");
    }
  }
  if (out.empty()) throw ConfigError(what + " is empty");
  return out;
}

struct Common {
  std::string spec;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string scale = "desk";
};

void add_common(CLI::App* cmd, Common& c, bool with_spec = true) {
  if (with_spec) cmd->add_option("--spec", c.spec, "Experiment spec (JSON)");
  cmd->add_option("--seed", c.seed, "Seed");
  cmd->add_option("--out", c.out, "Output directory")->required();
  cmd->add_option("--scale", c.scale, "desk or paper")->check(CLI::IsMember({"desk", "paper"}));
}

ExperimentSpec load_spec(const std::string& file, const std::string& scale) {
  ExperimentSpec s = file.empty() ? ExperimentSpec{} : read_json(file).get<ExperimentSpec>();
  s = apply_scale(s, scale_from_string(scale));
  s.validate();
  return s;
}

// ---- generate

struct GenerateArgs {
  Common c;
  bool csv = false;
};

int cmd_generate(const GenerateArgs& a) {
  ExperimentSpec spec = load_spec(a.c.spec, a.c.scale);
  if (a.c.seed) spec.seed = *a.c.seed;
  const fs::path out = a.c.out;
  fs::create_directories(out);
  const GroundTruth truth = make_ground_truth(spec);
  const auto data = generate_datasets(spec, truth);
  write_json(out / "spec.json", spec);
  write_ground_truth(out, truth);
  write_datasets(out, data);
  if (a.csv)
    for (const auto& ds : data) write_dataset_csv(out / ("regime_" + std::to_string(ds.regime) + ".csv"), ds);
  std::cout << "generated " << data.size() << " regimes x " << spec.n_per_regime << " points, d=" << spec.d
            << ", edges=" << truth.cbn.graph().edges().size() << " -> " << out.string() << '\n';
  return 0;
}

// ---- train

struct TrainArgs {
  Common c;
  std::string data;
  std::string seeds;
  std::optional<int> epochs;
  bool resume = false;
};

int cmd_train(const TrainArgs& a) {
  const fs::path data_dir = a.data;
  ExperimentSpec spec = load_spec(a.c.spec.empty() ? (data_dir / "spec.json").string() : a.c.spec, a.c.scale);
  if (!a.seeds.empty()) {
    spec.train.seeds.clear();
    for (int s : parse_list(a.seeds, "--seeds")) {
      if (s < 0) throw ConfigError("seeds must be non-negative");
      spec.train.seeds.push_back(static_cast<std::uint64_t>(s));
    }
  }
  if (a.c.seed) spec.train.seeds = {*a.c.seed};
  if (a.epochs) spec.train.epochs = *a.epochs;
  spec.validate();

  const GroundTruth truth = read_ground_truth(data_dir);
  const auto data = read_datasets(data_dir);
  const fs::path out = a.c.out;
  fs::create_directories(out);
  if (!a.resume)
    for (std::uint64_t s : spec.train.seeds) fs::remove(out / ("seed_" + std::to_string(s)) / "state.json");

  const MultiSeedResult res = train_seeds(spec, truth.cbn.graph(), data, worker_threads(), log_line, out);
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& r : res.runs) {
    const fs::path dir = out / ("seed_" + std::to_string(r.report.seed));
    write_json(dir / "model.json", model_to_json(r.model));
    write_json(dir / "report.json", r.report);
    runs.push_back({{"seed", r.report.seed}, {"final_validation_log_prob", r.report.final_validation()}});
  }
  const SeedRun& best = res.runs[res.selected];
  write_json(out / "spec.json", spec);
  write_json(out / "model.json", model_to_json(best.model));
  write_json(out / "selection.json", {{"selected_seed", best.report.seed}, {"runs", runs}});
  std::cout << "trained " << res.runs.size() << " seed(s); selected seed " << best.report.seed
            << " (validation log-prob " << best.report.final_validation() << ")\n";
  return 0;
}

// ---- evaluate

struct EvaluateArgs {
  Common c;
  std::string model;
  std::string data;
  bool oracle = false;
};

int cmd_evaluate(const EvaluateArgs& a) {
  const fs::path data_dir = a.data;
  const ExperimentSpec spec = load_spec(a.c.spec.empty() ? (data_dir / "spec.json").string() : a.c.spec, a.c.scale);
  const GroundTruth truth = read_ground_truth(data_dir);
  const auto data = read_datasets(data_dir);
  Metrics m;
  if (a.oracle) {
    m = evaluate_oracle(spec, truth, data);
  } else {
    if (a.model.empty()) throw ConfigError("--model is required unless --oracle is given");
    m = evaluate_model(spec, model_from_json(read_json(a.model)), truth, data);
  }
  fs::create_directories(a.c.out);
  write_json(fs::path(a.c.out) / "metrics.json", m);
  for (const auto& n : m.notices) std::cout << "notice: " << n << '\n';
  if (m.has_latents)
    std::printf("MCC (permutation, Spearman) %.4f | delta log prob %.4f +- %.4f | ambiguity %s\n", m.mcc_perm_spearman,
                m.delta.mean, m.delta.std_error, to_string(m.ambiguity.kind).c_str());
  else
    std::printf("delta log prob %.4f +- %.4f\n", m.delta.mean, m.delta.std_error);
  for (const auto& f : m.flags) std::cout << "flag: " << f << '\n';
  return 0;
}

// ---- diagnose

struct DiagnoseArgs {
  Common c;
  std::string cbn;
  std::string regimes;
  std::string block;
  bool variability = false;
  int points_per_axis = 201;
  double lo = -4.0, hi = 4.0, tol = 1e-8;
};

std::string describe(const DiscrepancyReport& r, const char* value) {
  char buf[200];
  std::snprintf(buf, sizeof buf, "%s (min %s %.6g, %.1f%% of %lld points, %lld skipped)", to_string(r.verdict).c_str(),
                value, r.min_value, 100.0 * r.fraction_satisfied, static_cast<long long>(r.evaluated),
                static_cast<long long>(r.skipped));
  return buf;
}

int cmd_diagnose(const DiagnoseArgs& a) {
  const LatentCbn cbn = cbn_from_json(read_json(a.cbn));
  const int d = cbn.dim();
  GridSpec grid;
  grid.lo = a.lo;
  grid.hi = a.hi;
  grid.points_per_axis = a.points_per_axis;
  auto check_regime = [&](int k) {
    if (k < 0 || k >= cbn.num_regimes()) throw ConfigError("regime " + std::to_string(k) + " out of range");
  };
  nlohmann::json out;

  if (a.block.empty()) {
    // Pairwise: the targets of regime l against their mechanism in regime k.
    std::vector<std::pair<int, int>> pairs;
    if (a.regimes.empty()) {
      for (int l = 1; l < cbn.num_regimes(); ++l) pairs.emplace_back(0, l);
    } else {
      const auto r = parse_list(a.regimes, "--regimes");
      if (r.size() != 2) throw ConfigError("pairwise check takes --regimes k,l");
      check_regime(r[0]);
      check_regime(r[1]);
      pairs.emplace_back(r[0], r[1]);
    }
    out["pairwise"] = nlohmann::json::array();
    for (const auto& [k, l] : pairs) {
      std::vector<int> nodes = cbn.targets(l);
      if (nodes.empty()) nodes = cbn.targets(k);
      if (nodes.empty()) throw ConfigError("regimes " + std::to_string(k) + " and " + std::to_string(l) + " intervene on nothing");
      for (int i : nodes) {
        const DiscrepancyReport r =
            check_interventional_discrepancy(cbn.regime_mechanism(k, i), cbn.regime_mechanism(l, i), grid, a.tol);
        std::cout << "regime " << k << " vs " << l << ", node " << i + 1 << ": " << describe(r, "score gap") << '\n';
        out["pairwise"].push_back({{"regimes", {k, l}}, {"node", i + 1}, {"report", r}});
      }
    }
  } else {
    std::vector<int> nodes;
    for (int i : parse_list(a.block, "--block")) {
      if (i < 1 || i > d) throw ConfigError("--block node " + std::to_string(i) + " out of range");
      nodes.push_back(i - 1);
    }
    std::sort(nodes.begin(), nodes.end());
    if (std::adjacent_find(nodes.begin(), nodes.end()) != nodes.end()) throw ConfigError("--block has repeated nodes");
    if (a.regimes.empty()) throw ConfigError("block checks need --regimes");
    const auto regimes = parse_list(a.regimes, "--regimes");
    const std::size_t n = nodes.size();
    const std::size_t want = a.variability ? 2 * n + 1 : n + 1;
    if (regimes.size() != want)
      throw ConfigError("a block of " + std::to_string(n) + " nodes needs " + std::to_string(want) + " regimes (reference first)");
    std::vector<std::vector<Mechanism>> mechs;
    for (int k : regimes) {
      check_regime(k);
      std::vector<Mechanism> row;
      for (int i : nodes) {
        const Mechanism& m = cbn.regime_mechanism(k, i);
        if (!m.parents().empty())
          throw ConfigError("block node " + std::to_string(i + 1) + " has parents in regime " + std::to_string(k) +
                            "; block checks need parentless block nodes");
        row.push_back(m);
      }
      mechs.push_back(std::move(row));
    }
    const nlohmann::json label = {{"nodes", [&] {
                                     std::vector<int> v;
                                     for (int i : nodes) v.push_back(i + 1);
                                     return v;
                                   }()},
                                  {"regimes", regimes}};
    if (a.variability) {
      const DiscrepancyReport r = check_variability(mechs, grid, a.tol);
      std::cout << "variability " << label.dump() << ": " << describe(r, "singular value") << '\n';
      out["variability"] = {{"block", label}, {"report", r}};
    } else {
      std::vector<BlockDensity> densities;
      for (auto& row : mechs) densities.push_back(independent_block(row));
      const DiscrepancyReport r = check_block_discrepancy(densities, grid, a.tol);
      std::cout << "block " << label.dump() << ": " << describe(r, "|det M|") << '\n';
      out["block"] = {{"block", label}, {"report", r}};
    }
  }
  fs::create_directories(a.c.out);
  write_json(fs::path(a.c.out) / "diagnose.json", out);
  return 0;
}

// ---- counterexample

struct CounterexampleArgs {
  Common c;
  double a = 4 * std::numbers::pi, b = 4 * std::numbers::pi;
  double cc = 9 * std::numbers::pi, dd = 9 * std::numbers::pi;
  double alpha = 3.0;
  int d = 2;
  Index points = 10000;
  Index csv_points = 2000;
};

int cmd_counterexample(const CounterexampleArgs& a) {
  const std::uint64_t seed = a.c.seed.value_or(0);
  const LatentCbn cbn = make_plateau_cbn(a.d, a.a, a.b, a.cc, a.dd);
  const RotationAutomorphism phi = make_plateau_automorphism(a.a, a.b, a.cc, a.dd, a.alpha);
  Rng mix_rng = derive_rng(seed, 1), ce_rng = derive_rng(seed, 2), pts_rng = derive_rng(seed, 3);
  const MixingFunction f = sample_mixing(a.d, 2, mix_rng);
  const SpuriousSolutionReport rep = demonstrate_spurious_solution(cbn, f, phi, a.points, ce_rng);
  const DiscrepancyReport disc = check_interventional_discrepancy(plateau_density(a.a, a.b), plateau_density(a.cc, a.dd));

  fs::create_directories(a.c.out);
  const fs::path out = a.c.out;
  write_json(out / "counterexample.json", {{"seed", seed},
                                           {"plateau", {{"a", a.a}, {"b", a.b}, {"c", a.cc}, {"d", a.dd}}},
                                           {"automorphism", phi},
                                           {"spurious_solution", rep},
                                           {"discrepancy", disc}});
  write_json(out / "cbn.json", cbn);
  write_automorphism_csv(out / "phi.csv", phi, stratified_points(cbn, phi, a.csv_points, pts_rng));
  std::printf("density preservation: max residual %.3g over %lld points\n", rep.preservation.max_residual,
              static_cast<long long>(rep.preservation.points));
  std::printf("observed densities agree: %s (max mismatch %.3g)\n", rep.densities_agree ? "yes" : "no",
              rep.max_density_mismatch);
  std::printf("ambiguity class: %s (interior off-diagonal %.3f)\n", to_string(rep.ambiguity.kind).c_str(),
              rep.interior_offdiagonal);
  std::cout << "discrepancy check: " << describe(disc, "score gap") << '\n';
  std::cout << "verdict: " << rep.verdict << '\n';
  return 0;
}

// ---- reproduce

struct ReproduceArgs {
  Common c;
  std::string figure;
};

int cmd_reproduce(const ReproduceArgs& a) {
  if (a.figure.size() != 1) throw ConfigError("--figure takes one of a..g");
  const ExperimentSpec base = a.c.spec.empty() ? ExperimentSpec{} : read_json(a.c.spec).get<ExperimentSpec>();
  const auto conditions = panel_conditions(a.figure[0], scale_from_string(a.c.scale), a.c.seed.value_or(0), base);
  log_line("panel " + a.figure + ": " + std::to_string(conditions.size()) + " runs");
  const auto rows = run_conditions(conditions, worker_threads(), log_line);
  fs::create_directories(a.c.out);
  const fs::path file = fs::path(a.c.out) / ("panel_" + a.figure + ".csv");
  write_metric_rows(file, rows);
  std::cout << rows.size() << " rows -> " << file.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Causal component analysis: data generation, estimation and identifiability diagnostics"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Sample a ground-truth CBN, mixing and per-regime datasets");
  add_common(g, gen.c);
  g->add_flag("--csv", gen.csv, "Also write CSV copies of the datasets");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Fit one model per seed and select the best");
  add_common(t, tr.c);
  t->add_option("--data", tr.data, "Directory written by generate")->required();
  t->add_option("--seeds", tr.seeds, "Comma-separated training seeds");
  t->add_option("--epochs", tr.epochs, "Override the number of epochs");
  t->add_flag("--resume", tr.resume, "Continue from seed_<s>/state.json checkpoints");

  EvaluateArgs ev;
  auto* e = app.add_subcommand("evaluate", "Metrics of a trained model on the held-out split");
  add_common(e, ev.c);
  e->add_option("--model", ev.model, "model.json written by train");
  e->add_option("--data", ev.data, "Directory written by generate")->required();
  e->add_flag("--oracle", ev.oracle, "Evaluate the true inverse with the true base");

  DiagnoseArgs di;
  auto* dg = app.add_subcommand("diagnose", "Interventional discrepancy checks on a CBN");
  add_common(dg, di.c, false);
  dg->add_option("--cbn", di.cbn, "CBN JSON")->required();
  dg->add_option("--regimes", di.regimes, "Regime pair k,l, or the block's regimes (reference first)");
  dg->add_option("--block", di.block, "Comma-separated 1-based block nodes");
  dg->add_flag("--variability", di.variability, "Variability check with 2n interventions");
  dg->add_option("--points-per-axis", di.points_per_axis, "Grid resolution")->check(CLI::Range(3, 100001));
  dg->add_option("--lo", di.lo, "Grid lower bound");
  dg->add_option("--hi", di.hi, "Grid upper bound");
  dg->add_option("--tol", di.tol, "Discrepancy threshold");

  CounterexampleArgs ce;
  auto* cx = app.add_subcommand("counterexample", "Plateau CBN with a density-preserving rotation");
  add_common(cx, ce.c, false);
  cx->add_option("--a", ce.a, "Observational left rate");
  cx->add_option("--b", ce.b, "Observational right rate");
  cx->add_option("--c", ce.cc, "Interventional left rate");
  cx->add_option("--d", ce.dd, "Interventional right rate");
  cx->add_option("--alpha", ce.alpha, "Rotation speed");
  cx->add_option("--dim", ce.d, "Latent dimension")->check(CLI::Range(2, 64));
  cx->add_option("--points", ce.points, "Stratified check points")->check(CLI::Range(100, 100000000));
  cx->add_option("--csv-points", ce.csv_points, "Rows of phi.csv")->check(CLI::Range(1, 10000000));

  ReproduceArgs rp;
  auto* r = app.add_subcommand("reproduce", "Condition grid of a figure panel as long-format CSV");
  add_common(r, rp.c);
  r->add_option("--figure", rp.figure, "Panel a..g")->required()->check(CLI::IsMember({"a", "b", "c", "d", "e", "f", "g"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& s) {
    return app.exit(s);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return kExitConfig;
  }

  try {
    if (*g) return cmd_generate(gen);
    if (*t) return cmd_train(tr);
    if (*e) return cmd_evaluate(ev);
    if (*dg) return cmd_diagnose(di);
    if (*cx) return cmd_counterexample(ce);
    if (*r) return cmd_reproduce(rp);
  } catch (const ConfigError& err) {
    std::cerr << "configuration error: " << err.what() << '\n';
    return kExitConfig;
  } catch (const NumericError& err) {
    std::cerr << "numeric failure: " << err.what() << '\n';
    return kExitNumeric;
  } catch (const fs::filesystem_error& err) {
    std::cerr << "configuration error: " << err.what() << '\n';
    return kExitConfig;
  }
  return 0;
}
