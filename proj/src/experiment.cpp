#include "cauca/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <mutex>
#include <optional>
#include <thread>

namespace cauca {
namespace {

// Independent random streams of one experiment seed.
constexpr std::uint64_t kGraphStream = 1;
constexpr std::uint64_t kScmStream = 2;
constexpr std::uint64_t kInterventionStream = 3;
constexpr std::uint64_t kMixingStream = 4;
constexpr std::uint64_t kDataStream = 0x100;
constexpr std::uint64_t kInitStream = 0x1a17;

std::string graph_mode_name(GraphMode m) {
  switch (m) {
    case GraphMode::kEmpty: return "empty";
    case GraphMode::kFixed: return "fixed";
    default: return "random";
  }
}

GraphMode graph_mode_from(const std::string& s) {
  if (s == "random") return GraphMode::kRandom;
  if (s == "empty") return GraphMode::kEmpty;
  if (s == "fixed") return GraphMode::kFixed;
  throw ConfigError("unknown graph mode '" + s + "'");
}

std::string scm_name(ScmFamily f) { return f == ScmFamily::kLinearGaussian ? "linear-gaussian" : "location-scale"; }

ScmFamily scm_from(const std::string& s) {
  if (s == "linear-gaussian") return ScmFamily::kLinearGaussian;
  if (s == "location-scale") return ScmFamily::kLocationScale;
  throw ConfigError("unknown scm family '" + s + "'");
}

std::vector<int> one_based(const std::vector<int>& v) {
  std::vector<int> out;
  for (int x : v) out.push_back(x + 1);
  return out;
}

std::vector<int> zero_based(const std::vector<int>& v) {
  std::vector<int> out;
  for (int x : v) out.push_back(x - 1);
  return out;
}

void write_json(const std::filesystem::path& file, const nlohmann::json& j) {
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + file.string());
  out << j.dump(2) << '\n';
}

nlohmann::json read_json(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot read " + file.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(file.string() + ": " + e.what());
  }
}

std::string regime_stem(int k) { return "regime_" + std::to_string(k); }

}  // namespace

std::string to_string(ModelKind m) {
  switch (m) {
    case ModelKind::kCauca: return "cauca";
    case ModelKind::kIcaMisspec: return "ica-misspec";
    case ModelKind::kLinearEncoder: return "linear-encoder";
    case ModelKind::kNaiveIidPooled: return "naive-iid-pooled";
    default: return "nonparametric-base";
  }
}

ModelKind model_kind_from_string(const std::string& s) {
  for (ModelKind m : {ModelKind::kCauca, ModelKind::kIcaMisspec, ModelKind::kLinearEncoder, ModelKind::kNaiveIidPooled,
                      ModelKind::kNonparametricBase})
    if (to_string(m) == s) return m;
  throw ConfigError("unknown model '" + s + "'");
}

std::string to_string(Scale s) { return s == Scale::kDesk ? "desk" : "paper"; }

Scale scale_from_string(const std::string& s) {
  if (s == "desk") return Scale::kDesk;
  if (s == "paper") return Scale::kPaper;
  throw ConfigError("unknown scale '" + s + "'");
}

void ExperimentSpec::validate() const {
  if (d < 1) throw ConfigError("d must be at least 1");
  if (graph_mode == GraphMode::kRandom && !(density >= 0.0 && density <= 1.0))
    throw ConfigError("graph density must lie in [0, 1]");
  if (graph_mode == GraphMode::kFixed) Dag(d, edges);  // throws on invalid edges
  if (!(snr > 0.0)) throw ConfigError("snr must be positive");
  if (mixing_layers < 1) throw ConfigError("need at least one mixing layer");
  if (n_per_regime < 10) throw ConfigError("need at least 10 points per regime");
  if (!per_node_perfect) {
    if (regimes.empty()) throw ConfigError("custom regime list is empty");
    for (const auto& r : regimes) {
      if (r.targets.empty()) throw ConfigError("regime without targets");
      for (int t : r.targets)
        if (t < 0 || t >= d) throw ConfigError("regime target out of range");
      if (!std::is_sorted(r.targets.begin(), r.targets.end()) ||
          std::adjacent_find(r.targets.begin(), r.targets.end()) != r.targets.end())
        throw ConfigError("regime targets must be sorted and unique");
      if (!(r.std > 0.0)) throw ConfigError("intervention std must be positive");
    }
  }
  if (flow.blocks < 1 || flow.hidden < 1) throw ConfigError("flow needs at least one block and unit");
  if (base_hidden < 1 || base_depth < 1) throw ConfigError("invalid nonparametric base size");
  if (!(ambiguity_tol > 0.0 && ambiguity_tol < 1.0)) throw ConfigError("ambiguity_tol must lie in (0, 1)");
  train.validate();
}

void to_json(nlohmann::json& j, const ExperimentSpec& s) {
  nlohmann::json edges = nlohmann::json::array();
  for (const auto& [a, b] : s.edges) edges.push_back({a + 1, b + 1});
  nlohmann::json regimes = nlohmann::json::array();
  for (const auto& r : s.regimes) regimes.push_back({{"targets", one_based(r.targets)}, {"mean", r.mean}, {"std", r.std}});
  j = {{"d", s.d},
       {"graph", {{"mode", graph_mode_name(s.graph_mode)}, {"density", s.density}, {"edges", edges}}},
       {"scm", {{"family", scm_name(s.scm)}, {"snr", s.snr}}},
       {"mixing_layers", s.mixing_layers},
       {"n_per_regime", s.n_per_regime},
       {"regimes", s.per_node_perfect ? nlohmann::json("per-node-perfect") : regimes},
       {"model", to_string(s.model)},
       {"flow", {{"blocks", s.flow.blocks}, {"hidden", s.flow.hidden}, {"bins", s.flow.spline.bins},
                 {"bound", s.flow.spline.bound}}},
       {"base", {{"hidden", s.base_hidden}, {"depth", s.base_depth}}},
       {"train", s.train},
       {"seed", s.seed},
       {"ambiguity_tol", s.ambiguity_tol}};
}

void from_json(const nlohmann::json& j, ExperimentSpec& s) {
  const ExperimentSpec def;
  s = def;
  try {
    s.d = j.value("d", def.d);
    if (j.contains("graph")) {
      const auto& g = j.at("graph");
      s.graph_mode = graph_mode_from(g.value("mode", "random"));
      s.density = g.value("density", def.density);
      s.edges.clear();
      for (const auto& e : g.value("edges", nlohmann::json::array())) {
        const auto pair = e.get<std::vector<int>>();
        if (pair.size() != 2) throw ConfigError("edges are [from, to] pairs");
        s.edges.emplace_back(pair[0] - 1, pair[1] - 1);
      }
    }
    if (j.contains("scm")) {
      s.scm = scm_from(j.at("scm").value("family", "linear-gaussian"));
      s.snr = j.at("scm").value("snr", def.snr);
    }
    s.mixing_layers = j.value("mixing_layers", def.mixing_layers);
    s.n_per_regime = j.value("n_per_regime", def.n_per_regime);
    if (j.contains("regimes")) {
      const auto& r = j.at("regimes");
      if (r.is_string()) {
        if (r.get<std::string>() != "per-node-perfect") throw ConfigError("regimes: expected 'per-node-perfect' or a list");
        s.per_node_perfect = true;
      } else {
        s.per_node_perfect = false;
        for (const auto& e : r)
          s.regimes.push_back(
              {zero_based(e.at("targets").get<std::vector<int>>()), e.value("mean", 2.0), e.value("std", 1.0)});
      }
    }
    s.model = model_kind_from_string(j.value("model", to_string(def.model)));
    if (j.contains("flow")) {
      const auto& f = j.at("flow");
      s.flow.blocks = f.value("blocks", def.flow.blocks);
      s.flow.hidden = f.value("hidden", def.flow.hidden);
      s.flow.spline.bins = f.value("bins", def.flow.spline.bins);
      s.flow.spline.bound = f.value("bound", def.flow.spline.bound);
    }
    if (j.contains("base")) {
      s.base_hidden = j.at("base").value("hidden", def.base_hidden);
      s.base_depth = j.at("base").value("depth", def.base_depth);
    }
    if (j.contains("train")) s.train = j.at("train").get<TrainConfig>();
    s.seed = j.value("seed", def.seed);
    s.ambiguity_tol = j.value("ambiguity_tol", def.ambiguity_tol);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("experiment spec: ") + e.what());
  }
}

ExperimentSpec apply_scale(ExperimentSpec spec, Scale scale) {
  if (scale == Scale::kPaper) {
    spec.n_per_regime = 200'000;
    spec.flow.blocks = 12;
    spec.flow.hidden = 128;
    spec.train.batch_size = 4096;
  }
  return spec;
}

ExperimentSpec read_spec(const std::filesystem::path& file) {
  ExperimentSpec s = read_json(file).get<ExperimentSpec>();
  s.validate();
  return s;
}

GroundTruth make_ground_truth(const ExperimentSpec& spec) {
  spec.validate();
  Rng graph_rng = derive_rng(spec.seed, kGraphStream);
  Dag g;
  switch (spec.graph_mode) {
    case GraphMode::kEmpty: g = Dag::empty(spec.d); break;
    case GraphMode::kFixed: g = Dag(spec.d, spec.edges); break;
    default: g = random_dag(spec.d, spec.density, spec.d > 1 && spec.density > 0.0, graph_rng);
  }
  Rng scm_rng = derive_rng(spec.seed, kScmStream);
  LatentCbn cbn = spec.scm == ScmFamily::kLinearGaussian ? make_linear_gaussian_scm(g, spec.snr, scm_rng)
                                                          : make_location_scale_scm(g, scm_rng);
  Rng int_rng = derive_rng(spec.seed, kInterventionStream);
  if (spec.per_node_perfect) {
    cbn = add_per_node_perfect_interventions(cbn, int_rng);
  } else {
    for (const auto& r : spec.regimes) {
      InterventionSpec iv;
      iv.targets = r.targets;
      for (int t : r.targets) iv.replacements.emplace(t, Mechanism(GaussianMarginal{r.mean, r.std}, {}));
      cbn = cbn.with_intervention(std::move(iv));
    }
  }
  Rng mix_rng = derive_rng(spec.seed, kMixingStream);
  return {std::move(cbn), sample_mixing(spec.d, spec.mixing_layers, mix_rng)};
}

std::vector<RegimeDataset> generate_datasets(const ExperimentSpec& spec, const GroundTruth& truth) {
  std::vector<RegimeDataset> out;
  for (int k = 0; k < truth.cbn.num_regimes(); ++k) {
    Rng rng = derive_rng(spec.seed, kDataStream + static_cast<std::uint64_t>(k));
    RegimeDataset ds;
    ds.regime = k;
    ds.targets = truth.cbn.targets(k);
    ds.seed = spec.seed;
    ds.z = sample(truth.cbn, k, spec.n_per_regime, rng);
    ds.x = truth.f.forward_batch(ds.z);
    out.push_back(std::move(ds));
  }
  return out;
}

void write_ground_truth(const std::filesystem::path& dir, const GroundTruth& truth) {
  std::filesystem::create_directories(dir);
  write_json(dir / "cbn.json", truth.cbn);
  write_json(dir / "mixing.json", truth.f);
}

GroundTruth read_ground_truth(const std::filesystem::path& dir) {
  LatentCbn cbn = cbn_from_json(read_json(dir / "cbn.json"));
  MixingFunction f = read_json(dir / "mixing.json").get<MixingFunction>();
  if (f.dim() != cbn.dim()) throw ConfigError("ground truth: mixing and CBN dimensions differ");
  return {std::move(cbn), std::move(f)};
}

void write_datasets(const std::filesystem::path& dir, const std::vector<RegimeDataset>& data) {
  std::filesystem::create_directories(dir);
  for (const auto& ds : data) write_dataset(dir / regime_stem(ds.regime), ds);
}

std::vector<RegimeDataset> read_datasets(const std::filesystem::path& dir) {
  std::vector<RegimeDataset> out;
  for (int k = 0; std::filesystem::exists(dir / (regime_stem(k) + ".json")); ++k) {
    out.push_back(read_dataset(dir / regime_stem(k)));
    if (out.back().regime != k) throw ConfigError("regime file " + std::to_string(k) + " has a different regime label");
  }
  if (out.empty()) throw ConfigError("no regime files in " + dir.string());
  return out;
}

std::vector<std::vector<int>> intervention_targets(const std::vector<RegimeDataset>& data) {
  std::vector<std::vector<int>> out;
  for (const auto& ds : data)
    if (ds.regime > 0) {
      if (static_cast<std::size_t>(ds.regime) != out.size() + 1) throw ConfigError("regimes must be numbered 0..K in order");
      out.push_back(ds.targets);
    }
  return out;
}

EncoderModel build_model(const ExperimentSpec& spec, const Dag& graph, const std::vector<std::vector<int>>& targets,
                         std::uint64_t init_seed) {
  Rng rng = derive_rng(init_seed, kInitStream);
  const int d = graph.size();
  std::vector<std::unique_ptr<FlowLayer>> layers =
      spec.model == ModelKind::kLinearEncoder ? make_linear_flow(d) : make_spline_flow(d, spec.flow, rng);
  std::unique_ptr<BaseDensity> base;
  switch (spec.model) {
    case ModelKind::kIcaMisspec: base = std::make_unique<GaussianCbnBase>(Dag::empty(d), targets); break;
    case ModelKind::kNaiveIidPooled:
      base = std::make_unique<GaussianCbnBase>(Dag::empty(d), std::vector<std::vector<int>>{}, true);
      break;
    case ModelKind::kNonparametricBase:
      base = std::make_unique<CbnBaseFlow>(graph, targets, spec.base_hidden, spec.base_depth, spec.flow.spline, rng);
      break;
    default: base = std::make_unique<GaussianCbnBase>(graph, targets);
  }
  EncoderModel model(std::move(layers), std::move(base));
  apply_freeze_policy(model, spec.train.freeze);
  return model;
}

int worker_threads() {
  if (const char* env = std::getenv("CAUCA_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1) throw ConfigError("CAUCA_THREADS must be a positive integer");
    return static_cast<int>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
  const int workers = std::max(1, std::min(n, threads));
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr first;
  std::mutex m;
  auto work = [&] {
    for (int i; (i = next.fetch_add(1)) < n;) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(m);
        if (!first) first = std::current_exception();
        next.store(n);
      }
    }
  };
  std::vector<std::thread> pool;
  for (int t = 0; t < workers; ++t) pool.emplace_back(work);
  for (auto& t : pool) t.join();
  if (first) std::rethrow_exception(first);
}

MultiSeedResult train_seeds(const ExperimentSpec& spec, const Dag& graph, const std::vector<RegimeDataset>& data,
                            int threads, const LogFn& log, const std::filesystem::path& checkpoint_dir) {
  const auto targets = intervention_targets(data);
  const auto& seeds = spec.train.seeds;
  std::vector<std::optional<SeedRun>> runs(seeds.size());
  parallel_for(static_cast<int>(seeds.size()), threads, [&](int i) {
    const std::uint64_t seed = seeds[i];
    EncoderModel model = build_model(spec, graph, targets, seed);
    std::filesystem::path state_file;
    std::optional<TrainState> resume;
    if (!checkpoint_dir.empty()) {
      const auto dir = checkpoint_dir / ("seed_" + std::to_string(seed));
      std::filesystem::create_directories(dir);
      state_file = dir / "state.json";
      if (std::filesystem::exists(state_file)) {
        resume = read_json(state_file).get<TrainState>();
        if (log) log("seed " + std::to_string(seed) + ": resuming after epoch " + std::to_string(resume->epoch));
      }
    }
    auto on_epoch = [&](const TrainState& s) {
      if (!state_file.empty()) write_json(state_file, s);
      if (log) {
        char line[160];
        std::snprintf(line, sizeof line, "seed %llu epoch %d/%d train %.5f val %.5f",
                      static_cast<unsigned long long>(seed), s.epoch, spec.train.epochs,
                      s.report.train_log_prob.back(), s.report.validation_log_prob.back());
        log(line);
      }
    };
    try {
      TrainReport report = train(model, data, spec.train, seed, resume ? &*resume : nullptr, on_epoch);
      runs[i] = SeedRun{std::move(report), std::move(model)};
    } catch (const DivergedTraining& e) {
      throw DivergedTraining("seed " + std::to_string(seed) + ": " + e.what(), e.epoch());
    }
  });
  MultiSeedResult out;
  std::vector<TrainReport> reports;
  for (auto& r : runs) {
    reports.push_back(r->report);
    out.runs.push_back(std::move(*r));
  }
  out.selected = model_select(reports);
  return out;
}

void to_json(nlohmann::json& j, const Metrics& m) {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  j = {{"held_out_points", m.delta.points},
       {"has_latents", m.has_latents},
       {"mcc",
        m.has_latents ? nlohmann::json{{"permutation_spearman", num(m.mcc_perm_spearman)},
                                       {"permutation_pearson", num(m.mcc_perm_pearson)},
                                       {"identity_spearman", num(m.mcc_identity_spearman)},
                                       {"identity_pearson", num(m.mcc_identity_pearson)}}
                      : nlohmann::json(nullptr)},
       {"delta_log_prob", {{"mean", num(m.delta.mean)}, {"std_error", num(m.delta.std_error)}}},
       {"model_log_prob", num(m.model_log_prob)},
       {"ambiguity", m.has_latents ? nlohmann::json(m.ambiguity) : nlohmann::json(nullptr)},
       {"flags", m.flags},
       {"notices", m.notices}};
}

Metrics evaluate_encoder(const ExperimentSpec& spec, const std::function<Matrix(const Matrix&)>& encode,
                         const LogProbFn& log_prob, const GroundTruth& truth, const std::vector<RegimeDataset>& data) {
  const DataSplit split = split_datasets(data, spec.train.validation_fraction, spec.train.split_seed);
  const std::vector<RegimeDataset>& held = split.validation;
  Metrics m;
  m.delta = delta_log_prob(log_prob, truth_log_prob(truth.cbn, truth.f), held);
  double total = 0.0;
  for (const auto& ds : held) total += log_prob(ds.x, std::vector<int>(ds.size(), ds.regime)).sum();
  m.model_log_prob = total / static_cast<double>(m.delta.points);
  if (m.delta.mean + 3.0 * m.delta.std_error < 0.0) m.flags.push_back("log_prob_below_truth");

  m.has_latents = std::all_of(held.begin(), held.end(), [](const RegimeDataset& ds) { return ds.has_latents(); });
  if (!m.has_latents) {
    m.notices.push_back("ground-truth latents missing: MCC and ambiguity skipped");
    return m;
  }
  const Matrix z = stack_latents(held);
  const Matrix zhat = encode(stack_observations(held));
  try {
    m.mcc_perm_spearman = mcc(z, zhat, McMode::kPermutation, Correlation::kSpearman);
    m.mcc_perm_pearson = mcc(z, zhat, McMode::kPermutation, Correlation::kPearson);
    m.mcc_identity_spearman = mcc(z, zhat, McMode::kIdentity, Correlation::kSpearman);
    m.mcc_identity_pearson = mcc(z, zhat, McMode::kIdentity, Correlation::kPearson);
  } catch (const NumericError& e) {
    m.flags.push_back(std::string("mcc_undefined: ") + e.what());
  }
  if (m.mcc_perm_spearman < 0.9) m.flags.push_back("mcc_below_0.90");
  const Matrix points = z.topRows(std::min<Index>(z.rows(), 200));
  try {
    m.ambiguity = classify_ambiguity([&](const Vector& x) { return Vector(encode(Matrix(x.transpose())).row(0).transpose()); },
                                     truth.f, truth.cbn.graph(), points, spec.ambiguity_tol);
  } catch (const NumericError& e) {
    m.notices.push_back(std::string("ambiguity classification failed: ") + e.what());
  }
  return m;
}

Metrics evaluate_model(const ExperimentSpec& spec, const EncoderModel& model, const GroundTruth& truth,
                       const std::vector<RegimeDataset>& data) {
  if (model.dim() != truth.cbn.dim()) throw ConfigError("model and ground truth dimensions differ");
  return evaluate_encoder(spec, [&](const Matrix& x) { return model.encode(x); }, model_log_prob(model), truth, data);
}

Metrics evaluate_oracle(const ExperimentSpec& spec, const GroundTruth& truth, const std::vector<RegimeDataset>& data) {
  return evaluate_encoder(spec, [&](const Matrix& x) { return truth.f.inverse_batch(x); },
                          truth_log_prob(truth.cbn, truth.f), truth, data);
}

std::vector<PanelCondition> panel_conditions(char figure, Scale scale, std::uint64_t master_seed,
                                             const ExperimentSpec& base_spec) {
  const int draws = scale == Scale::kDesk ? 5 : 10;
  ExperimentSpec base = apply_scale(base_spec, scale);
  std::vector<std::pair<std::string, ExperimentSpec>> grid;
  auto with_model = [](ExperimentSpec s, ModelKind m) {
    s.model = m;
    return s;
  };
  switch (figure) {
    case 'a':
    case 'e':
      for (ModelKind m : {ModelKind::kCauca, ModelKind::kLinearEncoder, ModelKind::kIcaMisspec})
        grid.emplace_back(to_string(m), with_model(base, m));
      break;
    case 'b':
    case 'f':
      base.graph_mode = GraphMode::kEmpty;
      for (ModelKind m : {ModelKind::kCauca, ModelKind::kLinearEncoder, ModelKind::kNaiveIidPooled})
        grid.emplace_back(to_string(m), with_model(base, m));
      break;
    case 'c': {
      const std::vector<int> layers = scale == Scale::kDesk ? std::vector<int>{1, 2, 3} : std::vector<int>{1, 2, 3, 4, 5};
      for (int m : layers) {
        ExperimentSpec s = base;
        s.mixing_layers = m;
        grid.emplace_back("cauca M=" + std::to_string(m), s);
      }
      break;
    }
    case 'd': {
      const std::vector<int> dims = scale == Scale::kDesk ? std::vector<int>{3, 4, 5} : std::vector<int>{3, 5, 7, 9};
      for (int d : dims) {
        ExperimentSpec s = base;
        s.d = d;
        grid.emplace_back("cauca d=" + std::to_string(d), s);
      }
      break;
    }
    case 'g':
      for (double a : {1.0, 4.0, 8.0})
        for (ModelKind m : {ModelKind::kCauca, ModelKind::kIcaMisspec}) {
          ExperimentSpec s = with_model(base, m);
          s.snr = a;
          grid.emplace_back(to_string(m) + " a=" + std::to_string(static_cast<int>(a)), s);
        }
      break;
    default: throw ConfigError(std::string("unknown figure panel '") + figure + "'");
  }
  std::vector<PanelCondition> out;
  for (const auto& [label, spec] : grid)
    for (int draw = 0; draw < draws; ++draw) {
      ExperimentSpec s = spec;
      s.seed = master_seed + static_cast<std::uint64_t>(draw);
      out.push_back({label, s});
    }
  return out;
}

std::vector<MetricRow> run_conditions(const std::vector<PanelCondition>& conditions, int threads, const LogFn& log) {
  std::vector<std::vector<MetricRow>> per(conditions.size());
  parallel_for(static_cast<int>(conditions.size()), threads, [&](int i) {
    const PanelCondition& c = conditions[i];
    const GroundTruth truth = make_ground_truth(c.spec);
    const std::vector<RegimeDataset> data = generate_datasets(c.spec, truth);
    const LogFn inner = log ? LogFn([&](const std::string& s) { log(c.label + " draw " + std::to_string(c.spec.seed) + ": " + s); })
                            : LogFn{};
    const MultiSeedResult res = train_seeds(c.spec, truth.cbn.graph(), data, 1, inner);
    const SeedRun& best = res.runs[res.selected];
    const Metrics m = evaluate_model(c.spec, best.model, truth, data);
    auto row = [&](const std::string& metric, double v) { per[i].push_back({c.label, c.spec.seed, metric, v}); };
    row("mcc", m.mcc_perm_spearman);
    row("mcc_identity_pearson", m.mcc_identity_pearson);
    row("delta_log_prob", m.delta.mean);
    row("validation_log_prob", best.report.final_validation());
    row("selected_seed", static_cast<double>(best.report.seed));
    if (log) log(c.label + " draw " + std::to_string(c.spec.seed) + ": mcc " + std::to_string(m.mcc_perm_spearman));
  });
  std::vector<MetricRow> out;
  for (auto& p : per) out.insert(out.end(), p.begin(), p.end());
  return out;
}

void write_metric_rows(const std::filesystem::path& file, const std::vector<MetricRow>& rows) {
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + file.string());
  out.precision(17);
  out << "condition,seed,metric,value\n";
  for (const auto& r : rows) out << '"' << r.condition << "\"," << r.seed << ',' << r.metric << ',' << r.value << '\n';
}

}  // namespace cauca
