#include "slc/belief.hpp"

#include <cmath>
#include <numbers>
#include <type_traits>

#include "slc/error.hpp"
#include "slc/knn_entropy.hpp"

namespace slc {

namespace {

constexpr double kLn2 = std::numbers::ln2;

double regularized_condition(const MatrixXd& cov) {
  if (cov.size() == 0) return 1.0;
  const MatrixXd reg = cov + 1e-12 * MatrixXd::Identity(cov.rows(), cov.cols());
  const VectorXd ev = symmetric_eigenvalues(reg);
  if (ev.minCoeff() <= 0.0) return INFINITY;
  return ev.maxCoeff() / ev.minCoeff();
}

}  // namespace

double GridBelief::cell_volume() const {
  return std::abs(basis.determinant());
}

VectorXd GridBelief::center(std::size_t flat) const {
  const Eigen::Index d = dim();
  VectorXd frac(d);
  for (Eigen::Index a = d - 1; a >= 0; --a) {
    const int n = shape[a];
    frac(a) = static_cast<double>(flat % n) + 0.5;
    flat /= n;
  }
  return origin + basis * frac;
}

double ParticleBelief::effective_sample_size() const {
  return 1.0 / weights.squaredNorm();
}

Eigen::Index Belief::dim() const {
  if (const auto* g = std::get_if<GaussianBelief>(&rep)) return g->mean.size();
  return std::visit([](const auto& r) -> Eigen::Index {
    if constexpr (std::is_same_v<std::decay_t<decltype(r)>, GaussianBelief>) {
      return r.mean.size();
    } else {
      return r.dim();
    }
  }, rep);
}

double gaussian_entropy_bits(const MatrixXd& cov) {
  const Eigen::Index n = cov.rows();
  if (n == 0) return 0.0;
  Eigen::LLT<MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) {
    fail(ErrorCode::kSingularCovariance, "Gaussian entropy of a non positive-definite covariance");
  }
  const double log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  return 0.5 * (n * std::log(2.0 * std::numbers::pi * std::numbers::e) + log_det) / kLn2;
}

Moments moments(const Belief& b) {
  Moments m;
  if (const auto* g = std::get_if<GaussianBelief>(&b.rep)) {
    m.mean = g->mean;
    m.cov = g->cov;
  } else if (const auto* grid = std::get_if<GridBelief>(&b.rep)) {
    const Eigen::Index d = grid->dim();
    const double vol = grid->cell_volume();
    m.mean = VectorXd::Zero(d);
    MatrixXd second = MatrixXd::Zero(d, d);
    for (std::size_t i = 0; i < grid->cells(); ++i) {
      const double p = grid->density[i] * vol;
      if (p == 0.0) continue;
      const VectorXd c = grid->center(i);
      m.mean += p * c;
      second.noalias() += p * c * c.transpose();
    }
    // spread of the uniform density inside one cell
    m.cov = second - m.mean * m.mean.transpose() + grid->basis * grid->basis.transpose() / 12.0;
  } else {
    const auto& p = std::get<ParticleBelief>(b.rep);
    m.mean = p.states * p.weights;
    const MatrixXd centered = p.states.colwise() - m.mean;
    m.cov = centered * p.weights.asDiagonal() * centered.transpose();
  }
  m.cond = regularized_condition(m.cov);
  return m;
}

double entropy_bits(const Belief& b) {
  if (b.dim() == 0) return 0.0;
  if (const auto* g = std::get_if<GaussianBelief>(&b.rep)) return gaussian_entropy_bits(g->cov);
  if (const auto* grid = std::get_if<GridBelief>(&b.rep)) {
    const double vol = grid->cell_volume();
    double h = 0.0;
    for (double d : grid->density) {
      if (d > 0.0) h -= d * vol * std::log(d);
    }
    return h / kLn2;
  }
  const auto& p = std::get<ParticleBelief>(b.rep);
  return knn_entropy_nats(p.states, p.weights, p.knn_k) / kLn2;
}

namespace {

nlohmann::json matrix_json(const MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

nlohmann::json vector_json(const VectorXd& v) {
  return nlohmann::json(std::vector<double>(v.data(), v.data() + v.size()));
}

}  // namespace

nlohmann::json to_json(const Belief& b) {
  nlohmann::json j;
  j["t"] = b.t;
  j["kind"] = b.kind == BeliefKind::kPredicted ? "predicted" : "posterior";
  if (const auto* g = std::get_if<GaussianBelief>(&b.rep)) {
    j["representation"] = "gaussian";
    j["mean"] = vector_json(g->mean);
    j["cov"] = matrix_json(g->cov);
  } else if (const auto* grid = std::get_if<GridBelief>(&b.rep)) {
    j["representation"] = "grid";
    j["origin"] = vector_json(grid->origin);
    j["basis"] = matrix_json(grid->basis);
    j["shape"] = grid->shape;
    j["density"] = grid->density;
  } else {
    const auto& p = std::get<ParticleBelief>(b.rep);
    j["representation"] = "particles";
    j["states"] = matrix_json(p.states);
    j["weights"] = vector_json(p.weights);
  }
  const Moments m = moments(b);
  j["moments"] = {{"mean", vector_json(m.mean)}, {"cov", matrix_json(m.cov)}};
  return j;
}

}  // namespace slc
