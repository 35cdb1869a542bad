#pragma once

#include <optional>
#include <string>

#include "slc/belief.hpp"
#include "slc/channel.hpp"
#include "slc/prior.hpp"
#include "slc/rng.hpp"
#include "slc/system.hpp"

namespace slc {

enum class FilterKind { kKalman, kGrid, kParticle };

FilterKind filter_kind_from_string(const std::string& name);
std::string to_string(FilterKind kind);

struct FilterOptions {
  FilterKind kind = FilterKind::kKalman;
  // grid
  double cells_per_std = 16.0;
  double half_width_std = 8.0;
  std::size_t max_cells = std::size_t{1} << 20;
  // particles
  Eigen::Index particles = Eigen::Index{1} << 14;
  double resample_fraction = 0.5;
  /// Kernel shrinkage h in x <- a x + (1 - a) m + h L xi with a = sqrt(1 - h^2).
  double jitter = 0.3;
  int knn_k = 4;
};

/// Affine map from the unstable coordinates to the state, x = lift z^u + offset,
/// with the stable block held at a nominal value.
struct ObservationMap {
  MatrixXd lift;
  VectorXd offset;
};

ObservationMap observation_map(const ModeDecompositiond& decomp, const VectorXd& stable_block);

struct FilterStep {
  Belief belief_pred;
  Belief belief_post;
  double h_pred = 0.0;
  double h_post = 0.0;
  /// h_pred - h_post, bits.
  double cmi = 0.0;
  double cond = 1.0;
  /// I(Y_t; Z_t | past) for discrete channels, from the predictive pmf.
  std::optional<double> channel_cmi;
  /// Particle filters: effective sample size after reweighting, before any resampling.
  std::optional<double> ess;
  bool resampled = false;
};

Belief initial_belief(const UnstablePrior& prior, const FilterOptions& opt, RandomStream& rng);

/// Push a posterior through z <- A_u z + shift (shift = B_u u).
Belief predict(const Belief& post, const MatrixXd& A_u, const VectorXd& shift);

FilterStep update(const Belief& pred, const ChannelModel& ch, const VectorXd& y,
                  const ObservationMap& map, const FilterOptions& opt, RandomStream& rng);

/// Lattice of cells_per_std cells per standard deviation spanning
/// +-half_width_std around `mean` along the Cholesky axes of `cov`.
GridBelief make_lattice(const VectorXd& mean, const MatrixXd& cov, const FilterOptions& opt);

/// Multilinear interpolation of the grid density between cell centres (0 outside).
double interpolate_density(const GridBelief& g, const VectorXd& z);

}  // namespace slc
