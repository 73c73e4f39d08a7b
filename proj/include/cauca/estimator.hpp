#pragma once

#include "cauca/core.hpp"
#include "cauca/dataset.hpp"
#include "cauca/flows.hpp"

#include "json.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace cauca {

enum class FreezePolicy { kNone, kDefault };

std::string to_string(FreezePolicy p);
FreezePolicy freeze_policy_from_string(const std::string& s);

struct TrainConfig {
  int epochs = 50;
  int batch_size = 256;
  double lr_start = 5e-3;
  double lr_end = 1e-7;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  double validation_fraction = 0.1;
  FreezePolicy freeze = FreezePolicy::kDefault;
  // Adam
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Seed of the train/validation split; shared by all training seeds so
  /// their validation scores are comparable.
  std::uint64_t split_seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct TrainReport {
  std::uint64_t seed = 0;
  std::vector<double> train_log_prob;       // per epoch, pooled mean
  std::vector<double> validation_log_prob;  // per epoch, pooled mean
  Vector final_params;
  double wall_time_s = 0.0;  // not serialized: outputs must be byte-reproducible

  double final_validation() const;
};

void to_json(nlohmann::json& j, const TrainReport& r);
void from_json(const nlohmann::json& j, TrainReport& r);

/// Everything needed to continue a run bit-exactly.
struct TrainState {
  int epoch = 0;             // completed epochs
  std::int64_t step = 0;     // completed optimizer steps
  Vector params;
  Vector adam_m, adam_v;
  TrainReport report;
};

void to_json(nlohmann::json& j, const TrainState& s);
void from_json(const nlohmann::json& j, TrainState& s);

/// −Σ_k (1/N_k) Σ_n log p^k(x_n) over the given datasets (one per regime).
double pooled_nll(const EncoderModel& model, const std::vector<RegimeDataset>& data);

/// Sets the base's frozen mask (and the frozen values) according to `policy`.
/// Default: observational mechanisms of root nodes are fixed to N(0, 1), the
/// intervened std of non-root targets is fixed to 1. Returns the mask.
std::vector<char> apply_freeze_policy(EncoderModel& model, FreezePolicy policy);

struct DataSplit {
  std::vector<RegimeDataset> train;
  std::vector<RegimeDataset> validation;
};

/// Per-regime random split; the validation part gets round(fraction · N_k) rows (at least 1).
DataSplit split_datasets(const std::vector<RegimeDataset>& data, double fraction, std::uint64_t seed);

using EpochCallback = std::function<void(const TrainState&)>;

/// Maximizes the pooled log-likelihood with Adam and a per-step cosine
/// learning-rate schedule. Deterministic in (seed, cfg, data). With `resume`,
/// continues from a saved state; `on_epoch` sees the state after each epoch.
TrainReport train(EncoderModel& model, const std::vector<RegimeDataset>& data, const TrainConfig& cfg,
                  std::uint64_t seed, const TrainState* resume = nullptr, const EpochCallback& on_epoch = {});

/// Index of the report with the highest final validation log-prob; ties go to the lowest seed.
std::size_t model_select(const std::vector<TrainReport>& reports);

}  // namespace cauca
