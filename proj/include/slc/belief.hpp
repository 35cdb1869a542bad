#pragma once

#include <Eigen/Dense>

#include <variant>
#include <vector>

#include "json.hpp"
#include "slc/linalg.hpp"

namespace slc {

struct GaussianBelief {
  VectorXd mean;
  MatrixXd cov;
};

/// Piecewise-constant density on an affine lattice of parallelepiped cells.
/// Cell with multi-index i (last axis fastest) is centred at
/// origin + basis * (i + 0.5). Affine dynamics map a lattice onto a lattice,
/// so prediction is exact.
struct GridBelief {
  VectorXd origin;
  MatrixXd basis;
  std::vector<int> shape;
  std::vector<double> density;

  Eigen::Index dim() const { return origin.size(); }
  std::size_t cells() const { return density.size(); }
  double cell_volume() const;
  VectorXd center(std::size_t flat) const;
};

/// Weighted sample cloud, one particle per column. Weights sum to one.
struct ParticleBelief {
  MatrixXd states;
  VectorXd weights;
  int knn_k = 4;

  Eigen::Index dim() const { return states.rows(); }
  Eigen::Index size() const { return states.cols(); }
  double effective_sample_size() const;
};

enum class BeliefKind { kPredicted, kPosterior };

struct Belief {
  std::variant<GaussianBelief, GridBelief, ParticleBelief> rep;
  int t = 0;
  BeliefKind kind = BeliefKind::kPredicted;

  Eigen::Index dim() const;
  bool is_gaussian() const { return std::holds_alternative<GaussianBelief>(rep); }
  bool is_grid() const { return std::holds_alternative<GridBelief>(rep); }
  bool is_particles() const { return std::holds_alternative<ParticleBelief>(rep); }
};

struct Moments {
  VectorXd mean;
  MatrixXd cov;
  /// Condition number of cov + 1e-12 I.
  double cond = 1.0;
};

Moments moments(const Belief& b);

/// Differential entropy in bits. Grid beliefs use the exact entropy of the
/// piecewise-constant density, particles the weighted kNN estimate.
double entropy_bits(const Belief& b);

double gaussian_entropy_bits(const MatrixXd& cov);

nlohmann::json to_json(const Belief& b);

}  // namespace slc
