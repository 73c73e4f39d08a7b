#include "cauca/estimator.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

namespace cauca {
namespace {

std::vector<double> to_std(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vector from_std(const std::vector<double>& v) { return Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size())); }

/// (1/R) Σ_k mean_n log p^k(x_n) for the datasets.
double pooled_mean_log_prob(const EncoderModel& model, const std::vector<RegimeDataset>& data) {
  double total = 0.0;
  for (const auto& ds : data) {
    const std::vector<int> labels(ds.size(), ds.regime);
    total += model.log_prob(ds.x, labels).mean();
  }
  return total / static_cast<double>(data.size());
}

void check_data(const EncoderModel& model, const std::vector<RegimeDataset>& data) {
  if (data.empty()) throw ConfigError("no datasets");
  for (const auto& ds : data) {
    if (ds.size() == 0) throw ConfigError("empty dataset for regime " + std::to_string(ds.regime));
    if (ds.x.cols() != model.dim()) throw ConfigError("dataset dimension does not match the model");
    if (ds.regime < 0 || (!model.base().pooled() && ds.regime > model.base().num_interventions()))
      throw ConfigError("regime " + std::to_string(ds.regime) + " exceeds the model's regimes");
  }
}

}  // namespace

std::string to_string(FreezePolicy p) { return p == FreezePolicy::kNone ? "none" : "default"; }

FreezePolicy freeze_policy_from_string(const std::string& s) {
  if (s == "none") return FreezePolicy::kNone;
  if (s == "default") return FreezePolicy::kDefault;
  throw ConfigError("unknown freeze policy '" + s + "'");
}

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("epochs must be non-negative");
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  if (!(lr_end > 0.0) || !(lr_start >= lr_end)) throw ConfigError("need lr_start >= lr_end > 0");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
    throw ConfigError("validation fraction must lie in (0, 1)");
  if (seeds.empty()) throw ConfigError("at least one seed required");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && eps > 0.0))
    throw ConfigError("invalid Adam hyperparameters");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"epochs", c.epochs},
       {"batch_size", c.batch_size},
       {"lr_start", c.lr_start},
       {"lr_end", c.lr_end},
       {"seeds", c.seeds},
       {"validation_fraction", c.validation_fraction},
       {"freeze_policy", to_string(c.freeze)},
       {"beta1", c.beta1},
       {"beta2", c.beta2},
       {"eps", c.eps},
       {"split_seed", c.split_seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.epochs = j.value("epochs", d.epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.lr_start = j.value("lr_start", d.lr_start);
  c.lr_end = j.value("lr_end", d.lr_end);
  c.seeds = j.value("seeds", d.seeds);
  c.validation_fraction = j.value("validation_fraction", d.validation_fraction);
  c.freeze = freeze_policy_from_string(j.value("freeze_policy", to_string(d.freeze)));
  c.beta1 = j.value("beta1", d.beta1);
  c.beta2 = j.value("beta2", d.beta2);
  c.eps = j.value("eps", d.eps);
  c.split_seed = j.value("split_seed", d.split_seed);
}

double TrainReport::final_validation() const {
  return validation_log_prob.empty() ? -std::numeric_limits<double>::infinity() : validation_log_prob.back();
}

void to_json(nlohmann::json& j, const TrainReport& r) {
  j = {{"seed", r.seed},
       {"train_log_prob", r.train_log_prob},
       {"validation_log_prob", r.validation_log_prob},
       {"final_params", to_std(r.final_params)}};
}

void from_json(const nlohmann::json& j, TrainReport& r) {
  r.seed = j.at("seed");
  r.train_log_prob = j.at("train_log_prob").get<std::vector<double>>();
  r.validation_log_prob = j.at("validation_log_prob").get<std::vector<double>>();
  r.final_params = from_std(j.at("final_params").get<std::vector<double>>());
}

void to_json(nlohmann::json& j, const TrainState& s) {
  j = {{"epoch", s.epoch},
       {"step", s.step},
       {"params", to_std(s.params)},
       {"adam_m", to_std(s.adam_m)},
       {"adam_v", to_std(s.adam_v)},
       {"report", s.report}};
}

void from_json(const nlohmann::json& j, TrainState& s) {
  s.epoch = j.at("epoch");
  s.step = j.at("step");
  s.params = from_std(j.at("params").get<std::vector<double>>());
  s.adam_m = from_std(j.at("adam_m").get<std::vector<double>>());
  s.adam_v = from_std(j.at("adam_v").get<std::vector<double>>());
  s.report = j.at("report").get<TrainReport>();
}

double pooled_nll(const EncoderModel& model, const std::vector<RegimeDataset>& data) {
  check_data(model, data);
  double total = 0.0;
  for (const auto& ds : data) {
    const std::vector<int> labels(ds.size(), ds.regime);
    total -= model.log_prob(ds.x, labels).mean();
  }
  return total;
}

std::vector<char> apply_freeze_policy(EncoderModel& model, FreezePolicy policy) {
  BaseDensity& base = model.base();
  std::fill(base.frozen().begin(), base.frozen().end(), 0);
  if (policy == FreezePolicy::kNone) return base.frozen();
  if (auto* g = dynamic_cast<GaussianCbnBase*>(&base)) {
    const Dag& graph = g->graph();
    for (int i = 0; i < graph.size(); ++i) {
      if (!graph.is_root(i)) continue;
      const Index idx = g->log_std_index(i);
      base.params()(idx) = 0.0;
      base.frozen()[idx] = 1;
    }
    for (int k = 1; k <= g->num_interventions(); ++k)
      for (int node : g->targets()[k - 1]) {
        if (graph.is_root(node)) continue;
        const Index idx = g->intervention_index(k, node) + 1;
        base.params()(idx) = 0.0;
        base.frozen()[idx] = 1;
      }
  }
  // The nonparametric base already fixes intervened and latent noise laws.
  return base.frozen();
}

DataSplit split_datasets(const std::vector<RegimeDataset>& data, double fraction, std::uint64_t seed) {
  DataSplit out;
  for (std::size_t s = 0; s < data.size(); ++s) {
    const RegimeDataset& ds = data[s];
    const Index n = ds.size();
    Index n_val = std::max<Index>(1, std::llround(fraction * static_cast<double>(n)));
    if (n_val >= n) throw ConfigError("dataset too small to split");
    std::vector<Index> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng = derive_rng(seed, 0x5b117000ULL + s);
    std::shuffle(idx.begin(), idx.end(), rng);
    std::sort(idx.begin(), idx.begin() + n_val);
    std::sort(idx.begin() + n_val, idx.end());
    auto take = [&](Index from, Index to) {
      RegimeDataset part;
      part.regime = ds.regime;
      part.targets = ds.targets;
      part.seed = ds.seed;
      part.x.resize(to - from, ds.x.cols());
      if (ds.has_latents()) part.z.resize(to - from, ds.z.cols());
      for (Index r = from; r < to; ++r) {
        part.x.row(r - from) = ds.x.row(idx[r]);
        if (ds.has_latents()) part.z.row(r - from) = ds.z.row(idx[r]);
      }
      return part;
    };
    out.validation.push_back(take(0, n_val));
    out.train.push_back(take(n_val, n));
  }
  return out;
}

TrainReport train(EncoderModel& model, const std::vector<RegimeDataset>& data, const TrainConfig& cfg,
                  std::uint64_t seed, const TrainState* resume, const EpochCallback& on_epoch) {
  cfg.validate();
  check_data(model, data);
  const auto start = std::chrono::steady_clock::now();
  const DataSplit split = split_datasets(data, cfg.validation_fraction, cfg.split_seed);

  const Matrix x = stack_observations(split.train);
  const std::vector<int> labels = regime_labels(split.train);
  const Index n = x.rows();
  const int d = model.dim();
  // Row weights turn the batch mean into an unbiased estimate of (1/R) Σ_k mean_k.
  Vector weight(n);
  {
    Index r = 0;
    const double scale = static_cast<double>(n) / static_cast<double>(split.train.size());
    for (const auto& ds : split.train) {
      weight.segment(r, ds.size()).setConstant(scale / static_cast<double>(ds.size()));
      r += ds.size();
    }
  }

  TrainState state;
  state.params = model.get_params();
  state.adam_m = Vector::Zero(model.num_params());
  state.adam_v = Vector::Zero(model.num_params());
  state.report.seed = seed;
  if (resume) {
    if (resume->params.size() != model.num_params()) throw ConfigError("resume state does not match the model");
    state = *resume;
    model.set_params(state.params);
  }

  const Index steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const double total_steps = static_cast<double>(steps_per_epoch) * cfg.epochs;
  std::vector<Index> order(n);
  Matrix xb;
  Vector wb, grad;
  std::vector<int> lb;
  Vector theta = state.params;

  for (int epoch = state.epoch; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng = derive_rng(seed, 0xe90c0000ULL + static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_sum = 0.0;
    for (Index b = 0; b < steps_per_epoch; ++b) {
      const Index from = b * cfg.batch_size;
      const Index m = std::min<Index>(cfg.batch_size, n - from);
      xb.resize(m, d);
      wb.resize(m);
      lb.resize(m);
      for (Index i = 0; i < m; ++i) {
        const Index r = order[from + i];
        xb.row(i) = x.row(r);
        wb(i) = weight(r);
        lb[i] = labels[r];
      }
      double obj;
      try {
        obj = model.objective_and_gradient(xb, lb, wb, grad);
      } catch (const DivergedTraining&) {
        throw DivergedTraining("non-finite loss at epoch " + std::to_string(epoch + 1), epoch + 1);
      }
      if (!grad.allFinite())
        throw DivergedTraining("non-finite gradient at epoch " + std::to_string(epoch + 1), epoch + 1);
      epoch_sum += obj * static_cast<double>(m);

      const double t = static_cast<double>(state.step);
      const double lr =
          cfg.lr_end + 0.5 * (cfg.lr_start - cfg.lr_end) * (1.0 + std::cos(std::numbers::pi * t / total_steps));
      ++state.step;
      const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
      const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
      state.adam_m = cfg.beta1 * state.adam_m + (1.0 - cfg.beta1) * grad;
      state.adam_v = cfg.beta2 * state.adam_v + (1.0 - cfg.beta2) * grad.cwiseAbs2();
      // Ascent on the log-likelihood.
      theta.array() += lr * (state.adam_m.array() / bc1) / ((state.adam_v.array() / bc2).sqrt() + cfg.eps);
      model.set_params(theta);
    }
    const double val = pooled_mean_log_prob(model, split.validation);
    if (!std::isfinite(val))
      throw DivergedTraining("non-finite validation log-likelihood at epoch " + std::to_string(epoch + 1), epoch + 1);
    state.report.train_log_prob.push_back(epoch_sum / static_cast<double>(n));
    state.report.validation_log_prob.push_back(val);
    state.epoch = epoch + 1;
    state.params = theta;
    if (on_epoch) on_epoch(state);
  }

  state.report.final_params = model.get_params();
  state.report.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return state.report;
}

std::size_t model_select(const std::vector<TrainReport>& reports) {
  if (reports.empty()) throw ConfigError("model_select: no reports");
  std::size_t best = 0;
  for (std::size_t i = 1; i < reports.size(); ++i) {
    const double a = reports[i].final_validation(), b = reports[best].final_validation();
    if (a > b || (a == b && reports[i].seed < reports[best].seed)) best = i;
  }
  return best;
}

}  // namespace cauca
