#include "slc/filters.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>

#include "slc/error.hpp"

namespace slc {

FilterKind filter_kind_from_string(const std::string& name) {
  if (name == "kalman") return FilterKind::kKalman;
  if (name == "grid") return FilterKind::kGrid;
  if (name == "particle" || name == "particles") return FilterKind::kParticle;
  fail(ErrorCode::kValidationError, "unknown filter kind '" + name + "'");
}

std::string to_string(FilterKind kind) {
  switch (kind) {
    case FilterKind::kKalman: return "kalman";
    case FilterKind::kGrid: return "grid";
    case FilterKind::kParticle: return "particle";
  }
  return "?";
}

ObservationMap observation_map(const ModeDecompositiond& decomp, const VectorXd& stable_block) {
  ObservationMap m;
  const Eigen::Index nu = decomp.n_u;
  m.lift = decomp.T_inv.leftCols(nu);
  if (decomp.n_s() > 0 && stable_block.size() == decomp.n_s()) {
    m.offset = decomp.T_inv.rightCols(decomp.n_s()) * stable_block;
  } else {
    m.offset = VectorXd::Zero(decomp.n());
  }
  return m;
}

namespace {

MatrixXd robust_cholesky(const MatrixXd& cov) {
  Eigen::LLT<MatrixXd> llt(cov);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  const double scale = std::max(cov.trace() / std::max<Eigen::Index>(cov.rows(), 1), 1e-300);
  for (double eps = 1e-12; eps < 1.0; eps *= 100) {
    llt.compute(cov + eps * scale * MatrixXd::Identity(cov.rows(), cov.cols()));
    if (llt.info() == Eigen::Success) return llt.matrixL();
  }
  fail(ErrorCode::kSingularCovariance, "belief covariance is not positive definite");
}

void normalize_grid(GridBelief& g) {
  double total = 0.0;
  for (double d : g.density) total += d;
  total *= g.cell_volume();
  if (!(total > 0.0) || !std::isfinite(total)) {
    fail(ErrorCode::kDegenerateLikelihood, "grid posterior has no mass");
  }
  for (double& d : g.density) d /= total;
}

// Evaluate pred(z) * exp(loglik(z) - shift) on the centres of `lattice`.
template <typename Prior, typename LogLik>
void fill_lattice(GridBelief& lattice, Prior&& prior_density, LogLik&& loglik) {
  std::vector<double> ll(lattice.cells(), -INFINITY);
  std::vector<double> pd(lattice.cells(), 0.0);
  double top = -INFINITY;
  for (std::size_t i = 0; i < lattice.cells(); ++i) {
    const VectorXd c = lattice.center(i);
    pd[i] = prior_density(c);
    if (pd[i] <= 0.0) continue;
    ll[i] = loglik(c);
    top = std::max(top, ll[i]);
  }
  if (!std::isfinite(top)) fail(ErrorCode::kDegenerateLikelihood, "likelihood vanishes on the grid");
  for (std::size_t i = 0; i < lattice.cells(); ++i) {
    lattice.density[i] = pd[i] > 0.0 ? pd[i] * std::exp(ll[i] - top) : 0.0;
  }
  normalize_grid(lattice);
}

double discrete_entropy_bits(const std::map<std::vector<int>, double>& pmf) {
  double total = 0.0, h = 0.0;
  for (const auto& [code, p] : pmf) total += p;
  for (const auto& [code, p] : pmf) {
    if (p > 0.0) h -= (p / total) * std::log2(p / total);
  }
  return h;
}

std::vector<int> code_key(const VectorXd& code) {
  std::vector<int> key(code.size());
  for (Eigen::Index i = 0; i < code.size(); ++i) key[i] = static_cast<int>(std::lround(code(i)));
  return key;
}

Belief with_time(Belief b, int t, BeliefKind kind) {
  b.t = t;
  b.kind = kind;
  return b;
}

FilterStep kalman_update(const GaussianBelief& g, const ChannelModel& ch, const VectorXd& y,
                         const ObservationMap& map) {
  if (ch.kind() != ChannelKind::kLinearGaussian) {
    fail(ErrorCode::kPreconditionViolated, "Kalman update needs a linear-Gaussian channel");
  }
  const MatrixXd H = ch.C() * map.lift;
  const VectorXd innovation = y - ch.C() * map.offset - H * g.mean;
  const MatrixXd S = H * g.cov * H.transpose() + ch.R();
  const MatrixXd K = S.ldlt().solve(H * g.cov).transpose();
  const Eigen::Index n = g.mean.size();
  const MatrixXd I_KH = MatrixXd::Identity(n, n) - K * H;
  GaussianBelief post;
  post.mean = g.mean + K * innovation;
  post.cov = I_KH * g.cov * I_KH.transpose() + K * ch.R() * K.transpose();
  post.cov = 0.5 * (post.cov + post.cov.transpose());
  FilterStep step;
  step.belief_post.rep = std::move(post);
  return step;
}

FilterStep grid_update(const GridBelief& g, const ChannelModel& ch, const VectorXd& y,
                       const ObservationMap& map, const FilterOptions& opt) {
  auto loglik = [&](const VectorXd& z) { return log_likelihood_value(ch, y, map.offset + map.lift * z); };
  FilterStep step;
  if (ch.support() == Support::kDiscrete) {
    std::map<std::vector<int>, double> pmf;
    for (std::size_t i = 0; i < g.cells(); ++i) {
      if (g.density[i] <= 0.0) continue;
      pmf[code_key(quantize(ch, map.offset + map.lift * g.center(i)))] += g.density[i];
    }
    step.channel_cmi = discrete_entropy_bits(pmf);
  }
  // posterior on the predictive lattice gives the support; refine twice on
  // lattices fitted to the posterior itself
  GridBelief coarse = g;
  {
    std::vector<double> ll(g.cells(), -INFINITY);
    double top = -INFINITY;
    for (std::size_t i = 0; i < g.cells(); ++i) {
      if (g.density[i] <= 0.0) continue;
      ll[i] = loglik(g.center(i));
      top = std::max(top, ll[i]);
    }
    if (!std::isfinite(top)) fail(ErrorCode::kDegenerateLikelihood, "likelihood vanishes on the grid");
    for (std::size_t i = 0; i < g.cells(); ++i) {
      coarse.density[i] = g.density[i] > 0.0 ? g.density[i] * std::exp(ll[i] - top) : 0.0;
    }
    normalize_grid(coarse);
  }
  Belief current{coarse};
  for (int pass = 0; pass < 2; ++pass) {
    const Moments m = moments(current);
    GridBelief lattice = make_lattice(m.mean, m.cov, opt);
    fill_lattice(lattice, [&](const VectorXd& z) { return interpolate_density(g, z); }, loglik);
    current.rep = std::move(lattice);
  }
  step.belief_post = std::move(current);
  return step;
}

void systematic_resample(ParticleBelief& p, RandomStream& rng) {
  const Eigen::Index n = p.size();
  MatrixXd out(p.dim(), n);
  const double u0 = uniform01(rng) / static_cast<double>(n);
  double cum = p.weights(0);
  Eigen::Index j = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double u = u0 + static_cast<double>(i) / static_cast<double>(n);
    while (u > cum && j + 1 < n) cum += p.weights(++j);
    out.col(i) = p.states.col(j);
  }
  p.states = std::move(out);
  p.weights.setConstant(1.0 / static_cast<double>(n));
}

// Affine correction so the equally weighted cloud has exactly the given mean
// and covariance.
void match_moments(ParticleBelief& p, const VectorXd& mean, const MatrixXd& cov) {
  const Moments now = moments(Belief{p});
  const MatrixXd L_now = robust_cholesky(now.cov);
  const MatrixXd L_target = robust_cholesky(cov);
  const MatrixXd M = L_target * L_now.triangularView<Eigen::Lower>().solve(MatrixXd::Identity(p.dim(), p.dim()));
  p.states = (M * (p.states.colwise() - now.mean)).colwise() + mean;
}

FilterStep particle_update(const ParticleBelief& pred, const ChannelModel& ch, const VectorXd& y,
                           const ObservationMap& map, const FilterOptions& opt, RandomStream& rng) {
  FilterStep step;
  const Eigen::Index n = pred.size();
  if (ch.support() == Support::kDiscrete) {
    std::map<std::vector<int>, double> pmf;
    for (Eigen::Index i = 0; i < n; ++i) {
      pmf[code_key(quantize(ch, map.offset + map.lift * pred.states.col(i)))] += pred.weights(i);
    }
    step.channel_cmi = discrete_entropy_bits(pmf);
  }
  ParticleBelief post = pred;
  VectorXd logw(n);
  double top = -INFINITY;
  for (Eigen::Index i = 0; i < n; ++i) {
    logw(i) = pred.weights(i) > 0.0
                  ? std::log(pred.weights(i)) +
                        log_likelihood_value(ch, y, map.offset + map.lift * pred.states.col(i))
                  : -INFINITY;
    top = std::max(top, logw(i));
  }
  if (!std::isfinite(top)) fail(ErrorCode::kDegenerateLikelihood, "all particles have zero likelihood");
  post.weights = (logw.array() - top).exp();
  post.weights /= post.weights.sum();
  step.ess = post.effective_sample_size();
  if (*step.ess < opt.resample_fraction * static_cast<double>(n)) {
    step.resampled = true;
    Belief tmp{post};
    const Moments m = moments(tmp);
    systematic_resample(post, rng);
    if (opt.jitter > 0.0) {
      const double h = opt.jitter;
      const double a = std::sqrt(1.0 - h * h);
      const MatrixXd L = robust_cholesky(m.cov);
      for (Eigen::Index i = 0; i < n; ++i) {
        post.states.col(i) = a * post.states.col(i) + (1.0 - a) * m.mean + h * L * standard_normal(rng, post.dim());
      }
      match_moments(post, m.mean, m.cov);
    }
  }
  step.belief_post.rep = std::move(post);
  return step;
}

}  // namespace

GridBelief make_lattice(const VectorXd& mean, const MatrixXd& cov, const FilterOptions& opt) {
  const Eigen::Index d = mean.size();
  const int per_axis = static_cast<int>(std::ceil(2.0 * opt.half_width_std * opt.cells_per_std));
  const double total = std::pow(static_cast<double>(per_axis), static_cast<double>(d));
  if (total > static_cast<double>(opt.max_cells)) {
    fail(ErrorCode::kGridOverflow, "grid needs " + std::to_string(static_cast<long long>(total)) +
                                       " cells, cap is " + std::to_string(opt.max_cells));
  }
  GridBelief g;
  const MatrixXd L = robust_cholesky(cov);
  g.basis = L / opt.cells_per_std;
  g.origin = mean - L * VectorXd::Constant(d, opt.half_width_std);
  g.shape.assign(d, per_axis);
  g.density.assign(static_cast<std::size_t>(total), 0.0);
  return g;
}

double interpolate_density(const GridBelief& g, const VectorXd& z) {
  const Eigen::Index d = g.dim();
  const VectorXd q = g.basis.lu().solve(z - g.origin).array() - 0.5;
  std::vector<long> base(d);
  std::vector<double> frac(d);
  for (Eigen::Index a = 0; a < d; ++a) {
    const double f = std::floor(q(a));
    if (f < -1 || f > g.shape[a] - 1) return 0.0;
    base[a] = static_cast<long>(f);
    frac[a] = q(a) - f;
  }
  double acc = 0.0;
  for (long corner = 0; corner < (1L << d); ++corner) {
    double w = 1.0;
    std::size_t flat = 0;
    bool inside = true;
    for (Eigen::Index a = 0; a < d; ++a) {
      const long bit = (corner >> (d - 1 - a)) & 1;
      const long idx = base[a] + bit;
      if (idx < 0 || idx >= g.shape[a]) {
        inside = false;
        break;
      }
      w *= bit ? frac[a] : 1.0 - frac[a];
      flat = flat * g.shape[a] + static_cast<std::size_t>(idx);
    }
    if (inside && w > 0.0) acc += w * g.density[flat];
  }
  return acc;
}

Belief initial_belief(const UnstablePrior& prior, const FilterOptions& opt, RandomStream& rng) {
  Belief b;
  b.t = 0;
  b.kind = BeliefKind::kPredicted;
  const Eigen::Index d = prior.dim();
  if (d == 0) {
    b.rep = GaussianBelief{VectorXd(0), MatrixXd(0, 0)};
    return b;
  }
  switch (opt.kind) {
    case FilterKind::kKalman:
      if (!prior.is_gaussian()) {
        fail(ErrorCode::kPreconditionViolated, "Kalman filter needs a Gaussian prior");
      }
      b.rep = GaussianBelief{prior.mean(), prior.covariance()};
      break;
    case FilterKind::kGrid: {
      GridBelief g = make_lattice(prior.mean(), prior.covariance(), opt);
      for (std::size_t i = 0; i < g.cells(); ++i) g.density[i] = std::exp(prior.log_density(g.center(i)));
      normalize_grid(g);
      b.rep = std::move(g);
      break;
    }
    case FilterKind::kParticle: {
      ParticleBelief p;
      p.knn_k = opt.knn_k;
      p.states.resize(d, opt.particles);
      for (Eigen::Index i = 0; i < opt.particles; ++i) p.states.col(i) = prior.sample(rng);
      p.weights = VectorXd::Constant(opt.particles, 1.0 / static_cast<double>(opt.particles));
      if (prior.is_gaussian()) match_moments(p, prior.mean(), prior.covariance());
      b.rep = std::move(p);
      break;
    }
  }
  return b;
}

Belief predict(const Belief& post, const MatrixXd& A_u, const VectorXd& shift) {
  Belief out;
  out.t = post.t + 1;
  out.kind = BeliefKind::kPredicted;
  if (const auto* g = std::get_if<GaussianBelief>(&post.rep)) {
    out.rep = GaussianBelief{A_u * g->mean + shift, A_u * g->cov * A_u.transpose()};
  } else if (const auto* grid = std::get_if<GridBelief>(&post.rep)) {
    GridBelief next = *grid;
    next.origin = A_u * grid->origin + shift;
    next.basis = A_u * grid->basis;
    const double jac = std::abs(A_u.determinant());
    for (double& d : next.density) d /= jac;
    out.rep = std::move(next);
  } else {
    ParticleBelief next = std::get<ParticleBelief>(post.rep);
    next.states = (A_u * next.states).colwise() + shift;
    out.rep = std::move(next);
  }
  return out;
}

FilterStep update(const Belief& pred, const ChannelModel& ch, const VectorXd& y,
                  const ObservationMap& map, const FilterOptions& opt, RandomStream& rng) {
  FilterStep step;
  if (pred.dim() == 0) {
    step.belief_post = pred;
  } else if (const auto* g = std::get_if<GaussianBelief>(&pred.rep)) {
    step = kalman_update(*g, ch, y, map);
  } else if (const auto* grid = std::get_if<GridBelief>(&pred.rep)) {
    step = grid_update(*grid, ch, y, map, opt);
  } else {
    step = particle_update(std::get<ParticleBelief>(pred.rep), ch, y, map, opt, rng);
  }
  step.belief_pred = pred;
  step.belief_post = with_time(std::move(step.belief_post), pred.t, BeliefKind::kPosterior);
  step.h_pred = entropy_bits(step.belief_pred);
  step.h_post = entropy_bits(step.belief_post);
  step.cmi = step.h_pred - step.h_post;
  step.cond = moments(step.belief_post).cond;
  return step;
}

}  // namespace slc
