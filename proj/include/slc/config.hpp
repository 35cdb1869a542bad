#pragma once

#include <complex>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "slc/loop.hpp"

namespace slc {

// Experiment configs are JSON documents (comments allowed). Every object
// rejects unknown keys, so a typo is reported with its field path instead of
// silently falling back to a default. Grammar: see README.md.

struct ChannelConfig {
  std::string kind = "linear-gaussian";
  MatrixXd C, R;
  double scale = 1.0;
  double period = 1.0;
  int levels = 2;
  double step = 1.0;
  /// R_t = R gamma^t, only with extensions.time_varying_channel
  std::optional<double> noise_decay;
};

struct PriorConfig {
  std::string family = "gaussian";
  VectorXd mean;
  MatrixXd cov;
  double dof = 4.0;
  double scale = 1.0;
};

struct GainConfig {
  /// lqr | deadbeat | poles | manual | open-loop
  std::string method = "lqr";
  MatrixXd K;
  std::vector<std::complex<double>> poles;
  MatrixXd Q, R;
};

struct AuditConfig {
  int curvature_window = 1;
  /// Hessian scan half-width in posterior standard deviations (0: true state only)
  double scan_radius_std = 4.0;
  double lemma2_c = 0.01;
  double condition_cap = 1e6;
  double sandwich_cap = 1.0;
  double necessity_tol = 0.05;
};

struct SweepConfig {
  /// JSON pointer into the config, e.g. "/system/A/0/0"
  std::string parameter;
  std::vector<double> values;
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::string description;
  MatrixXd A, B;
  bool allow_stable = false;
  ChannelConfig channel;
  bool time_varying_extension = false;
  PriorConfig prior;
  FilterOptions filter;
  TimingMode timing = TimingMode::kPredict;
  GainConfig gain;
  int horizon = 100;
  int runs = 100;
  std::uint64_t seed = 1;
  int tail_window = 20;
  std::optional<double> state_bound, error_bound;
  double zero_threshold = 1e-3;
  AuditConfig audit;
  std::optional<SweepConfig> sweep;
  std::string out_dir;
  std::vector<std::string> formats = {"csv", "json"};
  /// the document as given, used to apply sweep points
  nlohmann::json source;
};

/// ParseError carries line:column; ValidationError carries the field path.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);
/// Same config with the scalar at `pointer` replaced, re-validated.
ExperimentConfig with_parameter(const ExperimentConfig& cfg, const std::string& pointer, double value);

ChannelModel build_channel(const ExperimentConfig& cfg);
Prior build_prior(const ExperimentConfig& cfg);
/// Model, decomposition, channel, prior and gain in one piece.
LoopConfig build_loop(const ExperimentConfig& cfg);

}  // namespace slc
