#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "excir/common.hpp"
#include "excir/data_io.hpp"

namespace excir {

struct GateThresholds {
  /// Projection-distance ceiling.
  double alpha = 0.05;
  /// MMD p-value floor.
  double beta = 0.05;
  /// KL ceiling.
  double gamma = 0.1;
  /// Risk-gap allowance.
  double eps_acc = 0.03;

  void validate() const;
  static GateThresholds from_json(const nlohmann::json& j);
};

nlohmann::json to_json(const GateThresholds& t);

/// Row indices (ascending) of a uniform or proportionately stratified sample
/// without replacement of llround(fraction * n) rows.
std::vector<Index> subsample_indices(Index n, double fraction, std::uint64_t seed,
                                     std::optional<std::span<const double>> strata = std::nullopt);

std::pair<DataMatrix, OutputBlock> subsample(const DataMatrix& data, const OutputBlock& y, double fraction,
                                             std::uint64_t seed,
                                             std::optional<std::span<const double>> strata = std::nullopt);

struct ProjectionResult {
  /// Scalar alignment; for the multi-output overload alpha is p x p and beta p.
  Matrix alpha;
  Vector beta;
  double d_proj = 0.0;
};

/// ||y - alpha* y' - beta*|| / ||y|| with (alpha*, beta*) by least squares.
ProjectionResult projection_distance(std::span<const double> y_ref, std::span<const double> y_lw);
/// Frobenius analogue with an affine map A* (p x p) and offset b*.
ProjectionResult projection_distance(const Matrix& y_ref, const Matrix& y_lw);

/// Threshold at the given quantile of benign shifts (linear interpolation
/// between order statistics). Used to set alpha from a development split.
double calibrate_threshold(std::span<const double> benign, double quantile = 0.75);

struct MmdOptions {
  /// Fixed bandwidth; median heuristic when unset.
  std::optional<double> bandwidth;
  std::size_t permutations = 200;
  std::uint64_t seed = 42;
  /// Each side is reduced to a seeded subset of at most this many rows.
  std::size_t max_points = 1000;
};

struct MmdResult {
  double mmd2 = 0.0;
  /// Biased (V-statistic) value, reported as a diagnostic.
  double mmd2_biased = 0.0;
  double p_value = 1.0;
  double bandwidth = 1.0;
  std::size_t permutations = 0;
  std::string warning;
};

/// Unbiased MMD^2 with a Gaussian kernel exp(-||u-v||^2 / (2 h^2)) and a
/// label-permutation p-value (1 + #{perm >= observed}) / (permutations + 1).
/// Rows are points.
MmdResult mmd_gate(const Matrix& a, const Matrix& b, const MmdOptions& options = {});

struct KlOptions {
  std::size_t grid_points = 512;
  double bandwidth_scale = 1.06;
};

/// KL(p_a || p_b) between Gaussian KDEs on a shared grid, after standardizing
/// both samples with their pooled mean and sd. Columns are compared one at a
/// time and the divergences summed.
double kl_gate(const Matrix& a, const Matrix& b, const KlOptions& options = {});
double kl_gate(std::span<const double> a, std::span<const double> b, const KlOptions& options = {});

enum class TaskKind { classification, regression };

TaskKind parse_task(std::string_view text);
std::string_view to_string(TaskKind t);

struct RiskGap {
  double risk_full = 0.0;
  double risk_lw = 0.0;
  /// Accuracy ratio (classification) or |risk_lw - risk_full| (regression).
  double ratio = 1.0;
  TaskKind task = TaskKind::classification;
};

/// Predictions are n x C. For classification one column is thresholded at
/// 0.5, several columns use argmax; labels are class indices.
RiskGap risk_gap(std::span<const double> truth, const Matrix& pred_full, const Matrix& pred_lw, TaskKind task);
bool risk_passes(const RiskGap& r, double eps_acc);

struct GateStatistics {
  double d_proj = 0.0;
  double mmd2 = 0.0;
  double mmd_p = 1.0;
  double kl = 0.0;
  RiskGap risk;
};

struct GateVerdict {
  bool proj = false;
  bool mmd = false;
  bool kl = false;
  bool risk = false;
  bool accept = false;
};

GateVerdict decide(const GateStatistics& stats, const GateThresholds& thresholds);

struct SampleSizeBounds {
  double n_proj = 0.0;
  double n_mmd = 0.0;
  double n_kl = 0.0;
  double n_lb = 1.0;
  std::optional<double> n_ub;
  double c_proj = 1.0;
  double k_kernel = 1.0;
  double c_kl = 1.0;
  double delta = 0.05;
  int q = 1;

  bool window_empty() const { return n_ub && n_lb > *n_ub; }
};

struct BoundConstants {
  double c_proj = 1.0;
  double k_kernel = 1.0;
  double c_kl = 1.0;
};

/// Closed-form per-gate requirements (ceilings) and their maximum. A gate
/// whose epsilon is unset contributes nothing.
SampleSizeBounds sample_size_lower_bound(std::optional<double> eps_proj, std::optional<double> eps_mmd,
                                         std::optional<double> eps_kl, double delta, int q,
                                         const BoundConstants& constants = {});

/// n_lb from externally supplied per-gate requirements.
SampleSizeBounds combine_requirements(std::span<const double> per_gate);

/// Largest profiled n whose runtime is within t_max, or 0.
double budget_upper_bound(std::span<const std::pair<double, double>> profile, double t_max);

nlohmann::json to_json(const SampleSizeBounds& b);

struct LightweightReport {
  GateStatistics stats;
  GateVerdict verdict;
  GateThresholds thresholds;
  ProjectionResult projection;
  MmdResult mmd;
  std::optional<SampleSizeBounds> bounds;
  Index n_full = 0;
  Index n_lw = 0;
};

/// Outputs of the full-data and lightweight models. full_outputs / lw_outputs
/// feed the distribution gates; the eval_* blocks are both models evaluated on
/// one common evaluation set and feed the projection and risk gates.
struct GateInputs {
  Matrix full_outputs;
  Matrix lw_outputs;
  Matrix eval_pred_full;
  Matrix eval_pred_lw;
  Vector eval_truth;
  TaskKind task = TaskKind::classification;
};

struct GateOptions {
  MmdOptions mmd;
  KlOptions kl;
};

/// Runs every gate (no short-circuit) and applies the verdict rule.
LightweightReport gate_check(const GateInputs& inputs, const GateThresholds& thresholds,
                             const GateOptions& options = {});

nlohmann::json to_json(const LightweightReport& r);

}  // namespace excir
