#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "excir/cir_core.hpp"
#include "excir/common.hpp"
#include "excir/data_io.hpp"
#include "excir/lightweight_env.hpp"
#include "excir/stability_stats.hpp"

namespace excir {

struct TrainConfig {
  int iterations = 500;
  double step = 0.1;
  double l2 = 1e-3;
};

/// Linear reference model on standardized features: logistic regression by
/// full-batch gradient descent (one logit column for two classes, softmax
/// otherwise) or ridge regression in closed form. With no feature columns it
/// predicts the training majority class (or the training mean).
struct ReferenceModel {
  TaskKind task = TaskKind::classification;
  TrainConfig config;
  StandardizationParams standardization;
  /// k x C
  Matrix weights;
  Vector bias;
  int n_classes = 0;
  /// Majority class (classification) or training mean (regression).
  double fallback = 0.0;

  Index features() const { return weights.rows(); }
  /// Logits (n x C) or regression predictions (n x 1) for raw inputs.
  Matrix decision(const Matrix& x) const;
  /// Same, for inputs already in standardized units.
  Matrix decision_standardized(const Matrix& z) const;
  /// Class probabilities (n x 1 for two classes) or regression predictions.
  Matrix predict_scores(const Matrix& x) const;
  /// Predicted labels or regression predictions.
  Vector predict(const Matrix& x) const;
};

ReferenceModel train_reference(const Matrix& x, std::span<const double> labels, TaskKind task,
                               const TrainConfig& config = {});

/// Accuracy (classification) or R^2 (regression).
double evaluate(const ReferenceModel& model, const Matrix& x, std::span<const double> truth);

/// Slope and intercept of a ridge model in raw feature units.
std::pair<Vector, double> raw_coefficients(const ReferenceModel& model);

Matrix select_columns(const Matrix& x, std::span<const Index> cols);

struct Split {
  Matrix x_train;
  Vector y_train;
  Matrix x_test;
  Vector y_test;
};

/// Seeded shuffle; the first (1 - test_fraction) share becomes training rows.
Split train_test_split(const Matrix& x, std::span<const double> y, double test_fraction, std::uint64_t seed);

std::vector<double> default_fractions();

struct FaithfulnessCurves {
  std::vector<double> fractions;
  std::vector<double> deletion;
  std::vector<double> insertion;
  double aopc_insertion = 0.0;
  double deletion_area = 0.0;
};

/// Masks the top share of ranked features with their training means
/// (deletion), or masks everything except that share (insertion), and
/// re-evaluates the trained model at each fraction.
FaithfulnessCurves faithfulness_curves(const ReferenceModel& model, std::span<const std::size_t> ranking,
                                       const Matrix& x_test, std::span<const double> y_test,
                                       std::vector<double> fractions = default_fractions());

nlohmann::json to_json(const FaithfulnessCurves& c);

/// Retrains on only the top-k columns for each k.
std::vector<double> topk_sufficiency(std::span<const std::size_t> ranking, const Split& split, TaskKind task,
                                     std::span<const std::size_t> ks, const TrainConfig& config = {});

/// Retrains without the top-m columns for each m.
std::vector<double> necessity_curve(std::span<const std::size_t> ranking, const Split& split, TaskKind task,
                                    std::span<const std::size_t> ms, const TrainConfig& config = {});

std::vector<double> precision_at_k(std::span<const std::size_t> ranking, std::span<const std::size_t> truth,
                                   std::span<const std::size_t> ks);

struct NoiseLevelResult {
  double sigma = 0.0;
  std::vector<RankAgreement> reps;
  double median_jaccard = 1.0;
  double mean_tau_full = 1.0;
};

/// Adds N(0, sigma^2) noise to the standardized features and compares each
/// noisy ranking with the noise-free one.
std::vector<NoiseLevelResult> noise_robustness(const Matrix& x, std::span<const double> y,
                                               std::span<const double> sigma_levels, std::size_t reps,
                                               std::uint64_t seed, std::size_t head_k,
                                               CirMode mode = CirMode::correlation);

struct DriftEntry {
  std::size_t feature = 0;
  double delta = 0.0;
};

/// eta_drift - eta_base per feature, sorted by |delta| descending.
std::vector<DriftEntry> drift_delta(std::span<const double> base, std::span<const double> drift);

struct SensitivityResult {
  std::vector<double> slopes;
  double spearman = 0.0;
  std::string flag;
};

/// Mean |g(z + d e_i) - g(z)| / |d| over rows and the delta grid, with g the
/// decision function in standardized units; Spearman against eta.
SensitivityResult sensitivity_probe(const ReferenceModel& model, const Matrix& x, std::span<const double> eta,
                                    std::span<const double> delta_grid);

struct PermutationImportance {
  std::vector<double> mean_drop;
  std::vector<double> standard_error;
  /// reps x k drops, kept for significance tests.
  Matrix drops;
};

PermutationImportance permutation_importance(const ReferenceModel& model, const Matrix& x,
                                             std::span<const double> truth, std::size_t reps, std::uint64_t seed);

}  // namespace excir
