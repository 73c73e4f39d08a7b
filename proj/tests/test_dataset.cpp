#include "doctest.h"

#include "cauca/dataset.hpp"

#include "json.hpp"

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

using namespace cauca;

namespace {

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "cauca_dataset_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

RegimeDataset random_dataset(bool latents) {
  Rng rng(2);
  std::normal_distribution<double> n01;
  RegimeDataset ds;
  ds.regime = 2;
  ds.targets = {0, 3};
  ds.seed = 99;
  ds.x.resize(17, 4);
  for (Index i = 0; i < ds.x.size(); ++i) ds.x.data()[i] = n01(rng) * 1e3;
  if (latents) ds.z = ds.x.array().sin().matrix();
  return ds;
}

}  // namespace

TEST_CASE("binary dataset round trip is bit-exact") {
  for (bool latents : {true, false}) {
    const RegimeDataset ds = random_dataset(latents);
    const auto stem = scratch(latents ? "with_z" : "without_z");
    write_dataset(stem, ds);
    const RegimeDataset back = read_dataset(stem);
    CHECK(back.regime == 2);
    CHECK(back.targets == ds.targets);
    CHECK(back.seed == 99);
    CHECK(back.has_latents() == latents);
    CHECK(back.x == ds.x);
    if (latents) CHECK(back.z == ds.z);
    CHECK(std::filesystem::file_size(stem.string() + ".bin") == 17 * 4 * 8 * (latents ? 2u : 1u));
  }
}

TEST_CASE("sidecar uses one-based targets") {
  const auto stem = scratch("sidecar");
  write_dataset(stem, random_dataset(false));
  std::ifstream in(stem.string() + ".json");
  const nlohmann::json meta = nlohmann::json::parse(in);
  CHECK(meta.at("targets") == nlohmann::json({1, 4}));
  CHECK(meta.at("byte_order") == "little");
}

TEST_CASE("truncated payload is rejected") {
  const auto stem = scratch("truncated");
  write_dataset(stem, random_dataset(true));
  std::filesystem::resize_file(stem.string() + ".bin", 100);
  CHECK_THROWS_AS(read_dataset(stem), ConfigError);
  CHECK_THROWS_AS(read_dataset(scratch("missing")), ConfigError);
}

TEST_CASE("csv export") {
  const auto file = scratch("export.csv");
  const RegimeDataset ds = random_dataset(true);
  write_dataset_csv(file, ds);
  std::ifstream in(file);
  std::string header, first;
  std::getline(in, header);
  std::getline(in, first);
  CHECK(header == "regime,x1,x2,x3,x4,z1,z2,z3,z4");
  std::stringstream row(first);
  std::string cell;
  std::getline(row, cell, ',');
  CHECK(cell == "2");
  std::getline(row, cell, ',');
  CHECK(std::stod(cell) == ds.x(0, 0));
}

TEST_CASE("stacking") {
  RegimeDataset a = random_dataset(true), b = random_dataset(false);
  b.regime = 0;
  const std::vector<RegimeDataset> both{a, b};
  CHECK(stack_observations(both).rows() == 34);
  const std::vector<int> labels = regime_labels(both);
  CHECK(labels.front() == 2);
  CHECK(labels.back() == 0);
  CHECK_THROWS_AS(stack_latents(both), ConfigError);
}
