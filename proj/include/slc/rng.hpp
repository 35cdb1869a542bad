#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Dense>

namespace slc {

using RandomStream = std::mt19937_64;

/// Independent stream for run `run_index` under `master_seed`. Streams depend
/// only on the pair, so scheduling order never changes a run's draws.
inline RandomStream make_run_stream(std::uint64_t master_seed, std::uint64_t run_index) {
  std::seed_seq seq{static_cast<std::uint32_t>(master_seed),
                    static_cast<std::uint32_t>(master_seed >> 32),
                    static_cast<std::uint32_t>(run_index),
                    static_cast<std::uint32_t>(run_index >> 32), 0x5eed5u};
  return RandomStream(seq);
}

inline Eigen::VectorXd standard_normal(RandomStream& rng, Eigen::Index n) {
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = g(rng);
  return v;
}

inline double uniform01(RandomStream& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

}  // namespace slc
