#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "slc/config.hpp"
#include "slc/loop.hpp"

namespace slc {

inline constexpr int kSchemaVersion = 1;
inline constexpr const char* kRunsCsvHeader =
    "t,run_id,state_norm_sq,err_norm_sq,h_pred_bits,h_post_bits,cmi_bits,di_cum_bits";

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<int> runs;
  std::optional<int> horizon;
};

/// Re-validates the config with top-level seed/runs/horizon replaced.
ExperimentConfig apply_overrides(const ExperimentConfig& cfg, const Overrides& o);

struct PointResult {
  std::optional<double> value;  // sweep value, if any
  ExperimentConfig config;
  LoopConfig loop;
  EnsembleResult ensemble;
  OutcomeClassification outcome;
  NecessityVerdict necessity;
  int halted_by_guard = 0;
  int failed = 0;
  nlohmann::json audits;
  nlohmann::json summary;
};

struct ExperimentResult {
  ExperimentConfig config;
  std::vector<PointResult> points;
  nlohmann::json summary;
  /// any necessity audit failed
  bool invariant_violation = false;
};

/// Assumption audits, Lemma 2 trace and sandwich check on one (rerun) run.
nlohmann::json audit_run(const LoopConfig& loop, const ExperimentConfig& cfg, int run = 0);

PointResult run_point(const ExperimentConfig& cfg, int workers, std::optional<double> value = {});
/// All sweep points when `use_sweep` and a sweep is configured, else the base config.
ExperimentResult run_experiment(const ExperimentConfig& cfg, int workers, bool use_sweep = true);

std::string runs_csv(const std::vector<RunRecord>& runs);
std::string sweep_csv(const ExperimentResult& result);
std::vector<std::pair<std::string, std::string>> render_plots(const ExperimentResult& result);

/// Writes the bundle into `dir` through a sibling temp directory and a rename.
void write_bundle(const ExperimentResult& result, const std::string& dir);

/// Recomputes the headline numbers of an existing bundle from its CSVs,
/// compares them with summary.json and (optionally) re-renders the plots.
nlohmann::json report_bundle(const std::string& dir, bool write_svg = true);

/// 0 ok, 2 acceptance invariant violated.
int exit_code(const ExperimentResult& result);

}  // namespace slc
