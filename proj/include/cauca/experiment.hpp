#pragma once

#include "cauca/cbn.hpp"
#include "cauca/core.hpp"
#include "cauca/dataset.hpp"
#include "cauca/diagnostics.hpp"
#include "cauca/estimator.hpp"
#include "cauca/flows.hpp"
#include "cauca/mixing.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace cauca {

enum class GraphMode { kRandom, kEmpty, kFixed };
enum class ScmFamily { kLinearGaussian, kLocationScale };
enum class ModelKind { kCauca, kIcaMisspec, kLinearEncoder, kNaiveIidPooled, kNonparametricBase };
enum class Scale { kDesk, kPaper };

std::string to_string(ModelKind m);
ModelKind model_kind_from_string(const std::string& s);
std::string to_string(Scale s);
Scale scale_from_string(const std::string& s);

/// A custom interventional regime: perfect intervention N(mean, std) on each target.
struct RegimeSpec {
  std::vector<int> targets;  // 0-based
  double mean = 2.0;
  double std = 1.0;
};

struct ExperimentSpec {
  int d = 4;
  GraphMode graph_mode = GraphMode::kRandom;
  double density = 0.5;
  std::vector<Dag::Edge> edges;  // kFixed only, 0-based
  ScmFamily scm = ScmFamily::kLinearGaussian;
  double snr = 1.0;              // linear-Gaussian edge weights ~ U(−snr, snr)
  int mixing_layers = 2;
  Index n_per_regime = 10'000;
  bool per_node_perfect = true;  // otherwise `regimes`
  std::vector<RegimeSpec> regimes;
  ModelKind model = ModelKind::kCauca;
  FlowConfig flow{};
  /// Nonparametric base: conditioner width and spline depth per node.
  int base_hidden = 64;
  int base_depth = 2;
  TrainConfig train{};
  std::uint64_t seed = 0;        // master seed of the ground truth and the data
  double ambiguity_tol = 0.1;    // relative Jacobian threshold for evaluation

  void validate() const;
  int num_regimes() const { return per_node_perfect ? d + 1 : static_cast<int>(regimes.size()) + 1; }
};

void to_json(nlohmann::json& j, const ExperimentSpec& s);
void from_json(const nlohmann::json& j, ExperimentSpec& s);

/// Desk scale changes nothing; paper scale uses 200,000 points per regime,
/// 12 coupling blocks of width 128 and batch 4096.
ExperimentSpec apply_scale(ExperimentSpec spec, Scale scale);

ExperimentSpec read_spec(const std::filesystem::path& file);

struct GroundTruth {
  LatentCbn cbn;
  MixingFunction f;
};

/// Graph, mechanisms, interventions and mixing drawn from independent streams of spec.seed.
GroundTruth make_ground_truth(const ExperimentSpec& spec);
/// One dataset per regime with latents; X = f(Z) row-wise.
std::vector<RegimeDataset> generate_datasets(const ExperimentSpec& spec, const GroundTruth& truth);

void write_ground_truth(const std::filesystem::path& dir, const GroundTruth& truth);
GroundTruth read_ground_truth(const std::filesystem::path& dir);
void write_datasets(const std::filesystem::path& dir, const std::vector<RegimeDataset>& data);
std::vector<RegimeDataset> read_datasets(const std::filesystem::path& dir);

/// Untrained model of kind spec.model; `graph` and `targets` describe the true CBN.
EncoderModel build_model(const ExperimentSpec& spec, const Dag& graph, const std::vector<std::vector<int>>& targets,
                         std::uint64_t init_seed);

/// Targets of regimes 1..K in the datasets (regime 0 excluded).
std::vector<std::vector<int>> intervention_targets(const std::vector<RegimeDataset>& data);

/// Worker count: CAUCA_THREADS if set (≥ 1), else the hardware concurrency.
int worker_threads();
/// Runs fn(0..n−1) on up to `threads` workers; rethrows the first exception.
void parallel_for(int n, int threads, const std::function<void(int)>& fn);

struct SeedRun {
  TrainReport report;
  EncoderModel model;
};

struct MultiSeedResult {
  std::vector<SeedRun> runs;
  std::size_t selected = 0;
};

using LogFn = std::function<void(const std::string&)>;

/// Trains one model per cfg seed (in parallel) and applies model selection.
/// With a checkpoint directory, seed s keeps its state in seed_<s>/state.json
/// after every epoch and continues from it when present.
MultiSeedResult train_seeds(const ExperimentSpec& spec, const Dag& graph, const std::vector<RegimeDataset>& data,
                            int threads, const LogFn& log = {}, const std::filesystem::path& checkpoint_dir = {});

struct Metrics {
  bool has_latents = false;
  double mcc_perm_spearman = 0.0;
  double mcc_perm_pearson = 0.0;
  double mcc_identity_spearman = 0.0;
  double mcc_identity_pearson = 0.0;
  DeltaLogProb delta{};
  double model_log_prob = 0.0;  // mean held-out log-probability
  AmbiguityClass ambiguity;
  std::vector<std::string> flags;
  std::vector<std::string> notices;
};

void to_json(nlohmann::json& j, const Metrics& m);

/// Metrics on the held-out (validation) split defined by spec.train, for an
/// arbitrary encoder x ↦ ẑ and regime-indexed density over x.
Metrics evaluate_encoder(const ExperimentSpec& spec, const std::function<Matrix(const Matrix&)>& encode,
                         const LogProbFn& log_prob, const GroundTruth& truth, const std::vector<RegimeDataset>& data);
Metrics evaluate_model(const ExperimentSpec& spec, const EncoderModel& model, const GroundTruth& truth,
                       const std::vector<RegimeDataset>& data);
/// The true inverse with the true base.
Metrics evaluate_oracle(const ExperimentSpec& spec, const GroundTruth& truth, const std::vector<RegimeDataset>& data);

/// One condition of a figure panel.
struct PanelCondition {
  std::string label;
  ExperimentSpec spec;
};

/// The condition grid of panel `figure` ∈ {a,…,g}; one entry per (condition, draw).
/// Conditions vary the fields of `base` (after apply_scale) that the panel sweeps.
std::vector<PanelCondition> panel_conditions(char figure, Scale scale, std::uint64_t master_seed,
                                             const ExperimentSpec& base = {});

struct MetricRow {
  std::string condition;
  std::uint64_t seed;
  std::string metric;
  double value;
};

/// Generates, trains and evaluates every condition; rows in grid order.
std::vector<MetricRow> run_conditions(const std::vector<PanelCondition>& conditions, int threads,
                                      const LogFn& log = {});
void write_metric_rows(const std::filesystem::path& file, const std::vector<MetricRow>& rows);

}  // namespace cauca
