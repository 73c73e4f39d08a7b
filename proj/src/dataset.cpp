#include "cauca/dataset.hpp"

#include "json.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

namespace cauca {
namespace {

constexpr const char* kFormat = "cauca-regime-v1";

void put_le(std::ofstream& out, double v) {
  unsigned char bytes[8];
  std::memcpy(bytes, &v, 8);
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + 8);
  out.write(reinterpret_cast<const char*>(bytes), 8);
}

double get_le(std::ifstream& in) {
  unsigned char bytes[8];
  in.read(reinterpret_cast<char*>(bytes), 8);
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + 8);
  double v;
  std::memcpy(&v, bytes, 8);
  return v;
}

void write_matrix(std::ofstream& out, const Matrix& m) {
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c) put_le(out, m(r, c));
}

Matrix read_matrix(std::ifstream& in, Index rows, Index cols) {
  Matrix m(rows, cols);
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) m(r, c) = get_le(in);
  return m;
}

std::filesystem::path with_ext(const std::filesystem::path& stem, const char* ext) {
  return std::filesystem::path(stem.string() + ext);
}

}  // namespace

void write_dataset(const std::filesystem::path& stem, const RegimeDataset& ds) {
  if (ds.has_latents() && (ds.z.rows() != ds.x.rows() || ds.z.cols() != ds.x.cols()))
    throw ConfigError("write_dataset: latents must match observations in shape");
  std::ofstream bin(with_ext(stem, ".bin"), std::ios::binary | std::ios::trunc);
  if (!bin) throw ConfigError("cannot write " + with_ext(stem, ".bin").string());
  write_matrix(bin, ds.x);
  if (ds.has_latents()) write_matrix(bin, ds.z);
  if (!bin) throw ConfigError("write failed: " + with_ext(stem, ".bin").string());

  std::vector<int> targets;
  for (int t : ds.targets) targets.push_back(t + 1);
  const nlohmann::json meta = {{"format", kFormat},
                               {"regime", ds.regime},
                               {"targets", targets},
                               {"rows", ds.x.rows()},
                               {"cols", ds.x.cols()},
                               {"has_latents", ds.has_latents()},
                               {"seed", ds.seed},
                               {"byte_order", "little"},
                               {"layout", "row-major float64, X then Z"}};
  std::ofstream js(with_ext(stem, ".json"), std::ios::trunc);
  if (!js) throw ConfigError("cannot write " + with_ext(stem, ".json").string());
  js << meta.dump(2) << '\n';
}

RegimeDataset read_dataset(const std::filesystem::path& stem) {
  std::ifstream js(with_ext(stem, ".json"));
  if (!js) throw ConfigError("missing dataset sidecar " + with_ext(stem, ".json").string());
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(js);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed dataset sidecar: " + std::string(e.what()));
  }
  if (meta.value("format", "") != kFormat) throw ConfigError("unknown dataset format");
  RegimeDataset ds;
  ds.regime = meta.at("regime");
  for (int t : meta.at("targets").get<std::vector<int>>()) ds.targets.push_back(t - 1);
  ds.seed = meta.at("seed");
  const Index rows = meta.at("rows"), cols = meta.at("cols");
  const bool latents = meta.at("has_latents");

  const auto bin_path = with_ext(stem, ".bin");
  std::ifstream bin(bin_path, std::ios::binary);
  if (!bin) throw ConfigError("missing dataset payload " + bin_path.string());
  const auto expected = static_cast<std::uintmax_t>(rows * cols * (latents ? 2 : 1) * 8);
  if (std::filesystem::file_size(bin_path) != expected) throw ConfigError("dataset payload size mismatch");
  ds.x = read_matrix(bin, rows, cols);
  if (latents) ds.z = read_matrix(bin, rows, cols);
  return ds;
}

void write_dataset_csv(const std::filesystem::path& file, const RegimeDataset& ds) {
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + file.string());
  out.precision(17);
  out << "regime";
  for (Index c = 0; c < ds.x.cols(); ++c) out << ",x" << c + 1;
  if (ds.has_latents())
    for (Index c = 0; c < ds.z.cols(); ++c) out << ",z" << c + 1;
  out << '\n';
  for (Index r = 0; r < ds.x.rows(); ++r) {
    out << ds.regime;
    for (Index c = 0; c < ds.x.cols(); ++c) out << ',' << ds.x(r, c);
    if (ds.has_latents())
      for (Index c = 0; c < ds.z.cols(); ++c) out << ',' << ds.z(r, c);
    out << '\n';
  }
}

std::vector<int> regime_labels(const std::vector<RegimeDataset>& data) {
  std::vector<int> out;
  for (const auto& ds : data) out.insert(out.end(), ds.size(), ds.regime);
  return out;
}

Matrix stack_observations(const std::vector<RegimeDataset>& data) {
  Index rows = 0;
  for (const auto& ds : data) rows += ds.size();
  Matrix out(rows, data.empty() ? 0 : data.front().x.cols());
  Index r = 0;
  for (const auto& ds : data) {
    out.middleRows(r, ds.size()) = ds.x;
    r += ds.size();
  }
  return out;
}

Matrix stack_latents(const std::vector<RegimeDataset>& data) {
  Index rows = 0;
  for (const auto& ds : data) {
    if (!ds.has_latents()) throw ConfigError("dataset without ground-truth latents");
    rows += ds.size();
  }
  Matrix out(rows, data.empty() ? 0 : data.front().z.cols());
  Index r = 0;
  for (const auto& ds : data) {
    out.middleRows(r, ds.size()) = ds.z;
    r += ds.size();
  }
  return out;
}

}  // namespace cauca
