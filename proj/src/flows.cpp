#include "cauca/flows.hpp"

#include <algorithm>
#include <numeric>

namespace cauca {
namespace {

using ConstMap = Eigen::Map<const Matrix>;
using MutMap = Eigen::Map<Matrix>;

// tanh through the vectorized exp; saturates cleanly to ±1.
void tanh_inplace(RowMatrix& m) { m.array() = 1.0 - 2.0 / ((2.0 * m.array()).exp() + 1.0); }

void init_dense(Eigen::Ref<Vector> w, Index fan_in, Rng& rng) {
  // Uniform(−1/√fan_in, 1/√fan_in), the usual default for dense layers.
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<Index>(fan_in, 1)));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (Index i = 0; i < w.size(); ++i) w(i) = u(rng);
}

nlohmann::json spline_to_json(const SplineConfig& s) {
  return {{"bins", s.bins},
          {"bound", s.bound},
          {"min_width", s.min_width},
          {"min_height", s.min_height},
          {"min_derivative", s.min_derivative}};
}

SplineConfig spline_from_json(const nlohmann::json& j) {
  SplineConfig s;
  s.bins = j.at("bins");
  s.bound = j.at("bound");
  s.min_width = j.at("min_width");
  s.min_height = j.at("min_height");
  s.min_derivative = j.at("min_derivative");
  return s;
}

nlohmann::json targets_to_json(const std::vector<std::vector<int>>& targets) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& t : targets) {
    std::vector<int> one;
    for (int i : t) one.push_back(i + 1);
    out.push_back(one);
  }
  return out;
}

std::vector<std::vector<int>> targets_from_json(const nlohmann::json& j) {
  std::vector<std::vector<int>> out;
  for (const auto& t : j) {
    std::vector<int> one;
    for (int i : t.get<std::vector<int>>()) one.push_back(i - 1);
    out.push_back(one);
  }
  return out;
}

void validate_targets(const std::vector<std::vector<int>>& targets, int d) {
  for (const auto& t : targets) {
    if (t.empty()) throw ConfigError("base density: regime without targets");
    for (int i : t)
      if (i < 0 || i >= d) throw ConfigError("base density: target out of range");
    if (!std::is_sorted(t.begin(), t.end()) || std::adjacent_find(t.begin(), t.end()) != t.end())
      throw ConfigError("base density: targets must be sorted and unique");
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// LuLinear

LuLinear::LuLinear(int d) : d_(d), n_tri_(static_cast<Index>(d) * (d - 1) / 2) {
  if (d < 1) throw ConfigError("LuLinear: d must be positive");
  params_ = Vector::Zero(2 * n_tri_ + 2 * d);
}

Matrix LuLinear::lower() const {
  Matrix l = Matrix::Identity(d_, d_);
  Index idx = 0;
  for (int i = 0; i < d_; ++i)
    for (int j = 0; j < i; ++j) l(i, j) = params_(idx++);
  return l;
}

Matrix LuLinear::upper() const {
  Matrix u = Matrix::Zero(d_, d_);
  Index idx = n_tri_;
  for (int i = 0; i < d_; ++i) {
    for (int j = i + 1; j < d_; ++j) u(i, j) = params_(idx++);
    u(i, i) = std::exp(params_(2 * n_tri_ + i));
  }
  return u;
}

Matrix LuLinear::weight() const { return lower() * upper(); }

void LuLinear::set_weight(const Matrix& w, const Vector& b) {
  if (w.rows() != d_ || w.cols() != d_ || b.size() != d_) throw ConfigError("LuLinear: shape mismatch");
  // Doolittle factorization without pivoting.
  Matrix l = Matrix::Identity(d_, d_), u = Matrix::Zero(d_, d_);
  for (int i = 0; i < d_; ++i) {
    for (int j = i; j < d_; ++j) u(i, j) = w(i, j) - l.row(i).head(i).dot(u.col(j).head(i));
    if (!(u(i, i) > 0.0)) throw ConfigError("LuLinear: leading principal minor not positive");
    for (int j = i + 1; j < d_; ++j) l(j, i) = (w(j, i) - l.row(j).head(i).dot(u.col(i).head(i))) / u(i, i);
  }
  Index idx = 0;
  for (int i = 0; i < d_; ++i)
    for (int j = 0; j < i; ++j) params_(idx++) = l(i, j);
  for (int i = 0; i < d_; ++i) {
    for (int j = i + 1; j < d_; ++j) params_(idx++) = u(i, j);
  }
  for (int i = 0; i < d_; ++i) params_(2 * n_tri_ + i) = std::log(u(i, i));
  params_.tail(d_) = b;
}

void LuLinear::forward(const Matrix& x, Matrix& z, Vector& logdet, LayerCache* cache) const {
  const Matrix w = weight();
  z.noalias() = x * w.transpose();
  z.rowwise() += params_.tail(d_).transpose();
  logdet.array() += params_.segment(2 * n_tri_, d_).sum();
  if (cache) cache->input = x;
}

void LuLinear::backward(const LayerCache& cache, const Matrix& gz, const Vector& glogdet, Matrix& gx,
                        Eigen::Ref<Vector> gparams) const {
  const Matrix l = lower(), u = upper();
  gx.noalias() = gz * (l * u);
  const Matrix gw = gz.transpose() * cache.input;
  const Matrix gl = gw * u.transpose();
  const Matrix gu = l.transpose() * gw;
  Index idx = 0;
  for (int i = 0; i < d_; ++i)
    for (int j = 0; j < i; ++j) gparams(idx++) += gl(i, j);
  for (int i = 0; i < d_; ++i)
    for (int j = i + 1; j < d_; ++j) gparams(idx++) += gu(i, j);
  const double gsum = glogdet.sum();
  for (int i = 0; i < d_; ++i) gparams(2 * n_tri_ + i) += gu(i, i) * u(i, i) + gsum;
  gparams.tail(d_) += gz.colwise().sum().transpose();
}

Matrix LuLinear::inverse(const Matrix& z) const {
  const Matrix l = lower(), u = upper();
  Matrix rhs = (z.rowwise() - params_.tail(d_).transpose()).transpose();
  l.triangularView<Eigen::UnitLower>().solveInPlace(rhs);
  u.triangularView<Eigen::Upper>().solveInPlace(rhs);
  return rhs.transpose();
}

// ---------------------------------------------------------------------------
// Permutation

Permutation::Permutation(std::vector<int> perm) : perm_(std::move(perm)) {
  std::vector<int> sorted = perm_;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i)
    if (sorted[i] != static_cast<int>(i)) throw ConfigError("Permutation: not a permutation");
  params_ = Vector(0);
}

Permutation Permutation::reverse(int d) {
  std::vector<int> p(d);
  for (int i = 0; i < d; ++i) p[i] = d - 1 - i;
  return Permutation(std::move(p));
}

void Permutation::forward(const Matrix& x, Matrix& z, Vector&, LayerCache*) const {
  z.resize(x.rows(), x.cols());
  for (std::size_t i = 0; i < perm_.size(); ++i) z.col(i) = x.col(perm_[i]);
}

void Permutation::backward(const LayerCache&, const Matrix& gz, const Vector&, Matrix& gx,
                           Eigen::Ref<Vector>) const {
  gx.resize(gz.rows(), gz.cols());
  for (std::size_t i = 0; i < perm_.size(); ++i) gx.col(perm_[i]) = gz.col(i);
}

Matrix Permutation::inverse(const Matrix& z) const {
  Matrix x(z.rows(), z.cols());
  for (std::size_t i = 0; i < perm_.size(); ++i) x.col(perm_[i]) = z.col(i);
  return x;
}

// ---------------------------------------------------------------------------
// SplineCoupling

SplineCoupling::SplineCoupling(int d, int hidden, SplineConfig spline)
    : d_(d), n_id_(d / 2), n_tr_(d - d / 2), hidden_(hidden), spline_(spline) {
  if (d < 1 || hidden < 1) throw ConfigError("SplineCoupling: invalid sizes");
  if (spline.bins < 2 || spline.bins > kMaxSplineBins) throw ConfigError("SplineCoupling: bad bin count");
  const Index h = hidden_, p = static_cast<Index>(n_tr_) * spline_.raw_size();
  off_.w1 = 0;
  off_.b1 = off_.w1 + h * n_id_;
  off_.w2 = off_.b1 + h;
  off_.b2 = off_.w2 + h * h;
  off_.w3 = off_.b2 + h;
  off_.b3 = off_.w3 + p * h;
  params_ = Vector::Zero(off_.b3 + p);
}

SplineCoupling::SplineCoupling(int d, int hidden, SplineConfig spline, Rng& rng)
    : SplineCoupling(d, hidden, spline) {
  init_dense(params_.segment(off_.w1, off_.b1 - off_.w1), n_id_, rng);
  init_dense(params_.segment(off_.b1, hidden_), n_id_, rng);
  init_dense(params_.segment(off_.w2, off_.b2 - off_.w2), hidden_, rng);
  init_dense(params_.segment(off_.b2, hidden_), hidden_, rng);
  // Output layer stays zero: uniform bins with unit slopes, i.e. the identity.
}

nlohmann::json SplineCoupling::spec() const {
  return {{"kind", kind()}, {"d", d_}, {"hidden", hidden_}, {"spline", spline_to_json(spline_)}};
}

void SplineCoupling::conditioner(const Matrix& xc, RowMatrix& h1, RowMatrix& h2, RowMatrix& out) const {
  const Index h = hidden_, p = static_cast<Index>(n_tr_) * spline_.raw_size();
  const ConstMap w1(params_.data() + off_.w1, h, n_id_);
  const ConstMap w2(params_.data() + off_.w2, h, h);
  const ConstMap w3(params_.data() + off_.w3, p, h);
  h1.noalias() = xc * w1.transpose();
  h1.rowwise() += params_.segment(off_.b1, h).transpose();
  tanh_inplace(h1);
  h2.noalias() = h1 * w2.transpose();
  h2.rowwise() += params_.segment(off_.b2, h).transpose();
  tanh_inplace(h2);
  out.noalias() = h2 * w3.transpose();
  out.rowwise() += params_.segment(off_.b3, p).transpose();
}

void SplineCoupling::forward(const Matrix& x, Matrix& z, Vector& logdet, LayerCache* cache) const {
  const Index n = x.rows();
  const int raw = spline_.raw_size();
  RowMatrix h1, h2, out;
  conditioner(x.leftCols(n_id_), h1, h2, out);
  z = x;
  for (int j = 0; j < n_tr_; ++j) {
    const Index col = n_id_ + j;
    for (Index r = 0; r < n; ++r) {
      double ld;
      z(r, col) = spline_forward(x(r, col), out.row(r).data() + j * raw, spline_, &ld);
      logdet(r) += ld;
    }
  }
  if (cache) {
    cache->input = x;
    cache->row_mats = {std::move(h1), std::move(h2), std::move(out)};
  }
}

void SplineCoupling::backward(const LayerCache& cache, const Matrix& gz, const Vector& glogdet,
                              Matrix& gx, Eigen::Ref<Vector> gparams) const {
  const Matrix& x = cache.input;
  const RowMatrix& h1 = cache.row_mats[0];
  const RowMatrix& h2 = cache.row_mats[1];
  const RowMatrix& out = cache.row_mats[2];
  const Index n = x.rows(), h = hidden_, p = out.cols();
  const int raw = spline_.raw_size();

  gx = gz;
  RowMatrix gout = RowMatrix::Zero(n, p);
  for (int j = 0; j < n_tr_; ++j) {
    const Index col = n_id_ + j;
    for (Index r = 0; r < n; ++r)
      gx(r, col) = spline_backward(x(r, col), out.row(r).data() + j * raw, spline_, gz(r, col),
                                   glogdet(r), gout.row(r).data() + j * raw);
  }

  const ConstMap w1(params_.data() + off_.w1, h, n_id_);
  const ConstMap w2(params_.data() + off_.w2, h, h);
  const ConstMap w3(params_.data() + off_.w3, p, h);
  MutMap gw1(gparams.data() + off_.w1, h, n_id_);
  MutMap gw2(gparams.data() + off_.w2, h, h);
  MutMap gw3(gparams.data() + off_.w3, p, h);

  gw3.noalias() += gout.transpose() * h2;
  gparams.segment(off_.b3, p) += gout.colwise().sum().transpose();
  RowMatrix ga2 = (gout * w3).array() * (1.0 - h2.array().square());
  gw2.noalias() += ga2.transpose() * h1;
  gparams.segment(off_.b2, h) += ga2.colwise().sum().transpose();
  RowMatrix ga1 = (ga2 * w2).array() * (1.0 - h1.array().square());
  if (n_id_ > 0) {
    gw1.noalias() += ga1.transpose() * x.leftCols(n_id_);
    gx.leftCols(n_id_).noalias() += ga1 * w1;
  }
  gparams.segment(off_.b1, h) += ga1.colwise().sum().transpose();
}

Matrix SplineCoupling::inverse(const Matrix& z) const {
  const Index n = z.rows();
  const int raw = spline_.raw_size();
  RowMatrix h1, h2, out;
  conditioner(z.leftCols(n_id_), h1, h2, out);
  Matrix x = z;
  for (int j = 0; j < n_tr_; ++j) {
    const Index col = n_id_ + j;
    for (Index r = 0; r < n; ++r) {
      double ld;
      x(r, col) = spline_inverse(z(r, col), out.row(r).data() + j * raw, spline_, &ld);
    }
  }
  return x;
}

// ---------------------------------------------------------------------------
// BaseDensity

void BaseDensity::check_regimes(std::span<const int> regimes, Index rows) const {
  if (static_cast<Index>(regimes.size()) != rows) throw ConfigError("base density: one regime label per row");
  if (pooled()) return;
  for (int k : regimes)
    if (k < 0 || k > num_interventions())
      throw ConfigError("regime " + std::to_string(k) + " exceeds the model's regimes");
}

// ---------------------------------------------------------------------------
// GaussianCbnBase

GaussianCbnBase::GaussianCbnBase(Dag graph, std::vector<std::vector<int>> targets, bool pooled)
    : graph_(std::move(graph)), targets_(std::move(targets)), pooled_(pooled) {
  const int d = graph_.size();
  validate_targets(targets_, d);
  n_edges_ = static_cast<Index>(graph_.edge_count());
  parent_edges_.assign(d, {});
  for (std::size_t e = 0; e < graph_.edges().size(); ++e) {
    const auto& [from, to] = graph_.edges()[e];
    parent_edges_[to].emplace_back(from, static_cast<int>(e));
  }
  Index off = n_edges_ + d;
  for (const auto& t : targets_) {
    regime_offset_.push_back(off);
    off += 2 * static_cast<Index>(t.size());
  }
  params_ = Vector::Zero(off);
  frozen_.assign(off, 0);
}

Index GaussianCbnBase::intervention_index(int k, int node) const {
  if (k < 1 || k > num_interventions()) throw ConfigError("intervention_index: regime out of range");
  const auto& t = targets_[k - 1];
  const auto it = std::lower_bound(t.begin(), t.end(), node);
  if (it == t.end() || *it != node) return -1;
  return regime_offset_[k - 1] + 2 * (it - t.begin());
}

double GaussianCbnBase::alpha(int from, int to) const {
  for (const auto& [p, e] : parent_edges_.at(to))
    if (p == from) return params_(e);
  return 0.0;
}

Vector GaussianCbnBase::log_prob(const Matrix& z, std::span<const int> regimes) const {
  check_regimes(regimes, z.rows());
  const int d = dim();
  Vector out(z.rows());
  for (Index r = 0; r < z.rows(); ++r) {
    const int k = pooled_ ? 0 : regimes[r];
    double total = 0.0;
    for (int i = 0; i < d; ++i) {
      const Index slot = k > 0 ? intervention_index(k, i) : -1;
      if (slot >= 0) {
        total += normal_log_pdf(z(r, i), params_(slot), std::exp(params_(slot + 1)));
      } else {
        double mean = 0.0;
        for (const auto& [p, e] : parent_edges_[i]) mean += params_(e) * z(r, p);
        total += normal_log_pdf(z(r, i), mean, std::exp(params_(n_edges_ + i)));
      }
    }
    out(r) = total;
  }
  return out;
}

void GaussianCbnBase::backward(const Matrix& z, std::span<const int> regimes, const Vector& weight,
                               Matrix& gz, Eigen::Ref<Vector> gparams) const {
  check_regimes(regimes, z.rows());
  const int d = dim();
  for (Index r = 0; r < z.rows(); ++r) {
    const int k = pooled_ ? 0 : regimes[r];
    const double w = weight(r);
    for (int i = 0; i < d; ++i) {
      const Index slot = k > 0 ? intervention_index(k, i) : -1;
      if (slot >= 0) {
        const double sd = std::exp(params_(slot + 1));
        const double u = (z(r, i) - params_(slot)) / sd;
        gz(r, i) += -w * u / sd;
        gparams(slot) += w * u / sd;
        gparams(slot + 1) += w * (u * u - 1.0);
      } else {
        double mean = 0.0;
        for (const auto& [p, e] : parent_edges_[i]) mean += params_(e) * z(r, p);
        const double sd = std::exp(params_(n_edges_ + i));
        const double u = (z(r, i) - mean) / sd;
        const double gm = w * u / sd;
        gz(r, i) += -gm;
        for (const auto& [p, e] : parent_edges_[i]) {
          gparams(e) += gm * z(r, p);
          gz(r, p) += gm * params_(e);
        }
        gparams(n_edges_ + i) += w * (u * u - 1.0);
      }
    }
  }
}

nlohmann::json GaussianCbnBase::spec() const {
  return {{"kind", kind()}, {"graph", graph_}, {"targets", targets_to_json(targets_)}, {"pooled", pooled_}};
}

// ---------------------------------------------------------------------------
// CbnBaseFlow

CbnBaseFlow::CbnBaseFlow(Dag graph, std::vector<std::vector<int>> targets, int hidden, int depth,
                         SplineConfig spline)
    : graph_(std::move(graph)), targets_(std::move(targets)), hidden_(hidden), depth_(depth),
      spline_(spline) {
  validate_targets(targets_, graph_.size());
  if (hidden < 1 || depth < 1) throw ConfigError("CbnBaseFlow: invalid sizes");
  init_layout();
}

CbnBaseFlow::CbnBaseFlow(Dag graph, std::vector<std::vector<int>> targets, int hidden, int depth,
                         SplineConfig spline, Rng& rng)
    : CbnBaseFlow(std::move(graph), std::move(targets), hidden, depth, spline) {
  for (const NodeNet& net : nets_) {
    init_dense(params_.segment(net.offset + net.w1, net.b1 - net.w1), net.in, rng);
    init_dense(params_.segment(net.offset + net.b1, hidden_), net.in, rng);
    init_dense(params_.segment(net.offset + net.w2, net.b2 - net.w2), hidden_, rng);
    init_dense(params_.segment(net.offset + net.b2, hidden_), hidden_, rng);
  }
}

void CbnBaseFlow::init_layout() {
  const Index h = hidden_, p = static_cast<Index>(depth_) * spline_.raw_size();
  Index off = 0;
  nets_.clear();
  for (int i = 0; i < graph_.size(); ++i) {
    NodeNet net;
    net.offset = off;
    net.in = static_cast<int>(graph_.parents(i).size());
    net.w1 = 0;
    net.b1 = net.w1 + h * net.in;
    net.w2 = net.b1 + h;
    net.b2 = net.w2 + h * h;
    net.w3 = net.b2 + h;
    net.b3 = net.w3 + p * h;
    off += net.b3 + p;
    nets_.push_back(net);
  }
  params_ = Vector::Zero(off);
  frozen_.assign(off, 0);
}

bool CbnBaseFlow::intervened(int k, int node) const {
  if (k == 0) return false;
  const auto& t = targets_[k - 1];
  return std::binary_search(t.begin(), t.end(), node);
}

void CbnBaseFlow::node_forward(int i, const Matrix& z, RowMatrix& h1, RowMatrix& h2, RowMatrix& out) const {
  const NodeNet& net = nets_[i];
  const Index h = hidden_, p = static_cast<Index>(depth_) * spline_.raw_size();
  const double* base = params_.data() + net.offset;
  const auto& pa = graph_.parents(i);
  Matrix zpa(z.rows(), net.in);
  for (int j = 0; j < net.in; ++j) zpa.col(j) = z.col(pa[j]);
  const ConstMap w1(base + net.w1, h, net.in);
  const ConstMap w2(base + net.w2, h, h);
  const ConstMap w3(base + net.w3, p, h);
  h1.noalias() = zpa * w1.transpose();
  h1.rowwise() += Eigen::Map<const Vector>(base + net.b1, h).transpose();
  tanh_inplace(h1);
  h2.noalias() = h1 * w2.transpose();
  h2.rowwise() += Eigen::Map<const Vector>(base + net.b2, h).transpose();
  tanh_inplace(h2);
  out.noalias() = h2 * w3.transpose();
  out.rowwise() += Eigen::Map<const Vector>(base + net.b3, p).transpose();
}

Vector CbnBaseFlow::transform(const Vector& z) const {
  const Matrix zm = z.transpose();
  Vector u(z.size());
  const int raw = spline_.raw_size();
  for (int i = 0; i < dim(); ++i) {
    RowMatrix h1, h2, out;
    node_forward(i, zm, h1, h2, out);
    double v = z(i), ld;
    for (int l = 0; l < depth_; ++l) v = spline_forward(v, out.row(0).data() + l * raw, spline_, &ld);
    u(i) = v;
  }
  return u;
}

Vector CbnBaseFlow::log_prob(const Matrix& z, std::span<const int> regimes) const {
  check_regimes(regimes, z.rows());
  const int raw = spline_.raw_size();
  Vector out = Vector::Zero(z.rows());
  for (int i = 0; i < dim(); ++i) {
    RowMatrix h1, h2, cond;
    node_forward(i, z, h1, h2, cond);
    for (Index r = 0; r < z.rows(); ++r) {
      if (intervened(regimes[r], i)) {
        out(r) += normal_log_pdf(z(r, i), 0.0, 1.0);
        continue;
      }
      double v = z(r, i), total = 0.0, ld;
      for (int l = 0; l < depth_; ++l) {
        v = spline_forward(v, cond.row(r).data() + l * raw, spline_, &ld);
        total += ld;
      }
      out(r) += total + normal_log_pdf(v, 0.0, 1.0);
    }
  }
  return out;
}

void CbnBaseFlow::backward(const Matrix& z, std::span<const int> regimes, const Vector& weight,
                           Matrix& gz, Eigen::Ref<Vector> gparams) const {
  check_regimes(regimes, z.rows());
  const int raw = spline_.raw_size();
  const Index h = hidden_, p = static_cast<Index>(depth_) * raw;
  std::vector<double> stages(depth_ + 1);
  for (int i = 0; i < dim(); ++i) {
    const NodeNet& net = nets_[i];
    RowMatrix h1, h2, cond;
    node_forward(i, z, h1, h2, cond);
    RowMatrix gcond = RowMatrix::Zero(z.rows(), p);
    for (Index r = 0; r < z.rows(); ++r) {
      const double w = weight(r);
      if (intervened(regimes[r], i)) {
        gz(r, i) += -w * z(r, i);
        continue;
      }
      stages[0] = z(r, i);
      double ld;
      for (int l = 0; l < depth_; ++l)
        stages[l + 1] = spline_forward(stages[l], cond.row(r).data() + l * raw, spline_, &ld);
      double g = -w * stages[depth_];
      for (int l = depth_ - 1; l >= 0; --l)
        g = spline_backward(stages[l], cond.row(r).data() + l * raw, spline_, g, w,
                            gcond.row(r).data() + l * raw);
      gz(r, i) += g;
    }
    const double* base = params_.data() + net.offset;
    double* gbase = gparams.data() + net.offset;
    const ConstMap w1(base + net.w1, h, net.in);
    const ConstMap w2(base + net.w2, h, h);
    const ConstMap w3(base + net.w3, p, h);
    MutMap gw1(gbase + net.w1, h, net.in);
    MutMap gw2(gbase + net.w2, h, h);
    MutMap gw3(gbase + net.w3, p, h);
    gw3.noalias() += gcond.transpose() * h2;
    Eigen::Map<Vector>(gbase + net.b3, p) += gcond.colwise().sum().transpose();
    RowMatrix ga2 = (gcond * w3).array() * (1.0 - h2.array().square());
    gw2.noalias() += ga2.transpose() * h1;
    Eigen::Map<Vector>(gbase + net.b2, h) += ga2.colwise().sum().transpose();
    RowMatrix ga1 = (ga2 * w2).array() * (1.0 - h1.array().square());
    Eigen::Map<Vector>(gbase + net.b1, h) += ga1.colwise().sum().transpose();
    if (net.in > 0) {
      const auto& pa = graph_.parents(i);
      Matrix zpa(z.rows(), net.in);
      for (int j = 0; j < net.in; ++j) zpa.col(j) = z.col(pa[j]);
      gw1.noalias() += ga1.transpose() * zpa;
      const Matrix gzpa = ga1 * w1;
      for (int j = 0; j < net.in; ++j) gz.col(pa[j]) += gzpa.col(j);
    }
  }
}

nlohmann::json CbnBaseFlow::spec() const {
  return {{"kind", kind()},
          {"graph", graph_},
          {"targets", targets_to_json(targets_)},
          {"hidden", hidden_},
          {"depth", depth_},
          {"spline", spline_to_json(spline_)}};
}

// ---------------------------------------------------------------------------
// EncoderModel

EncoderModel::EncoderModel(std::vector<std::unique_ptr<FlowLayer>> layers, std::unique_ptr<BaseDensity> base)
    : layers_(std::move(layers)), base_(std::move(base)) {
  if (!base_) throw ConfigError("EncoderModel: base density required");
  for (const auto& l : layers_)
    if (l->dim() != base_->dim()) throw ConfigError("EncoderModel: layer dimension mismatch");
}

EncoderModel::EncoderModel(const EncoderModel& other) : base_(other.base_ ? other.base_->clone() : nullptr) {
  for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

EncoderModel& EncoderModel::operator=(const EncoderModel& other) {
  if (this != &other) {
    EncoderModel tmp(other);
    *this = std::move(tmp);
  }
  return *this;
}

int EncoderModel::dim() const { return base_->dim(); }

Index EncoderModel::num_params() const {
  Index n = base_->num_params();
  for (const auto& l : layers_) n += l->num_params();
  return n;
}

Vector EncoderModel::get_params() const {
  Vector theta(num_params());
  Index off = 0;
  for (const auto& l : layers_) {
    theta.segment(off, l->num_params()) = l->params();
    off += l->num_params();
  }
  theta.tail(base_->num_params()) = base_->params();
  return theta;
}

void EncoderModel::set_params(const Vector& theta) {
  if (theta.size() != num_params()) throw ConfigError("set_params: size mismatch");
  Index off = 0;
  for (auto& l : layers_) {
    l->params() = theta.segment(off, l->num_params());
    off += l->num_params();
  }
  base_->params() = theta.tail(base_->num_params());
}

std::vector<char> EncoderModel::frozen_mask() const {
  std::vector<char> mask(num_params() - base_->num_params(), 0);
  mask.insert(mask.end(), base_->frozen().begin(), base_->frozen().end());
  return mask;
}

void EncoderModel::encode(const Matrix& x, Matrix& z, Vector& logdet) const {
  if (x.cols() != dim()) throw ConfigError("encode: dimension mismatch");
  logdet = Vector::Zero(x.rows());
  z = x;
  Matrix next;
  for (const auto& l : layers_) {
    l->forward(z, next, logdet, nullptr);
    std::swap(z, next);
  }
}

Matrix EncoderModel::encode(const Matrix& x) const {
  Matrix z;
  Vector ld;
  encode(x, z, ld);
  return z;
}

Matrix EncoderModel::decode(const Matrix& z) const {
  Matrix x = z;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) x = (*it)->inverse(x);
  return x;
}

Vector EncoderModel::log_prob(const Matrix& x, std::span<const int> regimes) const {
  Matrix z;
  Vector ld;
  encode(x, z, ld);
  return ld + base_->log_prob(z, regimes);
}

double EncoderModel::objective_and_gradient(const Matrix& x, std::span<const int> regimes,
                                            const Vector& weight, Vector& grad) const {
  const Index n = x.rows();
  if (n == 0) throw ConfigError("objective_and_gradient: empty batch");
  if (x.cols() != dim()) throw ConfigError("objective_and_gradient: dimension mismatch");
  const Vector w = weight.size() == 0 ? Vector::Ones(n) : weight;
  if (w.size() != n) throw ConfigError("objective_and_gradient: weight size mismatch");

  std::vector<LayerCache> caches(layers_.size());
  Vector logdet = Vector::Zero(n);
  Matrix z = x, next;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    layers_[i]->forward(z, next, logdet, &caches[i]);
    std::swap(z, next);
  }
  const Vector lp = logdet + base_->log_prob(z, regimes);
  const double objective = w.dot(lp) / static_cast<double>(n);
  if (!std::isfinite(objective)) throw DivergedTraining("non-finite log-likelihood", -1);

  grad = Vector::Zero(num_params());
  const Vector gw = w / static_cast<double>(n);
  Matrix gz = Matrix::Zero(n, dim());
  base_->backward(z, regimes, gw, gz, grad.tail(base_->num_params()));
  Index off = num_params() - base_->num_params();
  Matrix gx;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    const Index np = layers_[i]->num_params();
    off -= np;
    layers_[i]->backward(caches[i], gz, gw, gx, grad.segment(off, np));
    std::swap(gz, gx);
  }
  const std::vector<char> mask = frozen_mask();
  for (Index i = 0; i < grad.size(); ++i)
    if (mask[i]) grad(i) = 0.0;
  return objective;
}

std::vector<std::unique_ptr<FlowLayer>> make_spline_flow(int d, const FlowConfig& cfg, Rng& rng) {
  std::vector<std::unique_ptr<FlowLayer>> layers;
  for (int b = 0; b < cfg.blocks; ++b) {
    layers.push_back(std::make_unique<LuLinear>(d));
    layers.push_back(std::make_unique<SplineCoupling>(d, cfg.hidden, cfg.spline, rng));
    layers.push_back(std::make_unique<Permutation>(Permutation::reverse(d)));
  }
  return layers;
}

std::vector<std::unique_ptr<FlowLayer>> make_linear_flow(int d) {
  std::vector<std::unique_ptr<FlowLayer>> layers;
  layers.push_back(std::make_unique<LuLinear>(d));
  return layers;
}

nlohmann::json model_to_json(const EncoderModel& model) {
  auto vec = [](const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : model.layers()) {
    nlohmann::json j = l->spec();
    j["params"] = vec(l->params());
    layers.push_back(j);
  }
  nlohmann::json base = model.base().spec();
  base["params"] = vec(model.base().params());
  std::vector<int> frozen(model.base().frozen().begin(), model.base().frozen().end());
  base["frozen"] = frozen;
  return {{"format", "cauca-model-v1"}, {"layers", layers}, {"base", base}};
}

EncoderModel model_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "cauca-model-v1") throw ConfigError("model JSON: unknown format");
  auto load = [](Vector& dst, const nlohmann::json& src) {
    const auto v = src.get<std::vector<double>>();
    if (static_cast<Index>(v.size()) != dst.size()) throw ConfigError("model JSON: parameter count mismatch");
    dst = Eigen::Map<const Vector>(v.data(), dst.size());
  };
  std::vector<std::unique_ptr<FlowLayer>> layers;
  for (const auto& lj : j.at("layers")) {
    const std::string kind = lj.at("kind");
    std::unique_ptr<FlowLayer> layer;
    if (kind == "lu-linear") layer = std::make_unique<LuLinear>(lj.at("d").get<int>());
    else if (kind == "permutation") layer = std::make_unique<Permutation>(lj.at("perm").get<std::vector<int>>());
    else if (kind == "spline-coupling")
      layer = std::make_unique<SplineCoupling>(lj.at("d").get<int>(), lj.at("hidden").get<int>(),
                                               spline_from_json(lj.at("spline")));
    else throw ConfigError("model JSON: unknown layer kind '" + kind + "'");
    load(layer->params(), lj.at("params"));
    layers.push_back(std::move(layer));
  }
  const auto& bj = j.at("base");
  const std::string kind = bj.at("kind");
  std::unique_ptr<BaseDensity> base;
  if (kind == "gaussian-cbn")
    base = std::make_unique<GaussianCbnBase>(bj.at("graph").get<Dag>(), targets_from_json(bj.at("targets")),
                                             bj.at("pooled").get<bool>());
  else if (kind == "cbn-flow")
    base = std::make_unique<CbnBaseFlow>(bj.at("graph").get<Dag>(), targets_from_json(bj.at("targets")),
                                         bj.at("hidden").get<int>(), bj.at("depth").get<int>(),
                                         spline_from_json(bj.at("spline")));
  else throw ConfigError("model JSON: unknown base kind '" + kind + "'");
  load(base->params(), bj.at("params"));
  const auto frozen = bj.at("frozen").get<std::vector<int>>();
  if (static_cast<Index>(frozen.size()) != base->num_params()) throw ConfigError("model JSON: frozen mask size");
  for (std::size_t i = 0; i < frozen.size(); ++i) base->frozen()[i] = static_cast<char>(frozen[i]);
  return EncoderModel(std::move(layers), std::move(base));
}

}  // namespace cauca
