#pragma once

#include "cauca/core.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace cauca {

/// Samples of one regime: observations X (n × d), optional latents Z.
struct RegimeDataset {
  int regime = 0;
  std::vector<int> targets;  // 0-based, sorted; empty for regime 0
  Matrix x;
  Matrix z;  // empty when ground truth is unavailable
  std::uint64_t seed = 0;

  Index size() const { return x.rows(); }
  bool has_latents() const { return z.size() > 0; }
};

/// Writes `<stem>.bin` (X then Z, row-major little-endian float64) and the
/// `<stem>.json` sidecar.
void write_dataset(const std::filesystem::path& stem, const RegimeDataset& ds);
RegimeDataset read_dataset(const std::filesystem::path& stem);
/// CSV with header regime,x1..xd[,z1..zd].
void write_dataset_csv(const std::filesystem::path& file, const RegimeDataset& ds);

/// Regime labels for every row of the datasets, in order.
std::vector<int> regime_labels(const std::vector<RegimeDataset>& data);
Matrix stack_observations(const std::vector<RegimeDataset>& data);
Matrix stack_latents(const std::vector<RegimeDataset>& data);

}  // namespace cauca
