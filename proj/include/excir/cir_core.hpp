#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "excir/common.hpp"
#include "excir/data_io.hpp"

namespace excir {

/// The two CIR forms. `mid_mean` is the alignment-over-scatter ratio about
/// the mid-mean m = (mean(f) + mean(y)) / 2; `correlation` is rho^2 / (1 + rho^2)
/// on the empirical Pearson correlation.
enum class CirMode { mid_mean, correlation };

std::string_view to_string(CirMode mode);
CirMode parse_cir_mode(std::string_view text);

struct CirScore {
  std::size_t feature = 0;
  double eta = 0.0;
  CirMode mode = CirMode::mid_mean;

  double feature_mean = 0.0;
  double output_mean = 0.0;
  double mid_mean = 0.0;
  /// feature_mean - output_mean
  double contrast = 0.0;
  /// Scatter of the feature and of the output about mid_mean.
  double scatter_feature = 0.0;
  double scatter_output = 0.0;
  double numerator = 0.0;
  double denominator = 0.0;
  /// Pearson correlation; only filled in correlation mode.
  double rho = 0.0;

  /// Empty for a regular score; "constant" or "degenerate" otherwise (eta = 0).
  std::string flag;
};

nlohmann::json to_json(const CirScore& score, const std::vector<std::string>& names = {});
nlohmann::json to_json(const std::vector<CirScore>& scores, const std::vector<std::string>& names = {});

/// Running first and second moments for k features and one output.
///
/// Stores S_i = sum x_i, Q_i = sum x_i^2 per feature and S_y, Q_y for the
/// output, which is all the mid-mean CIR needs.
class MomentAccumulator {
 public:
  explicit MomentAccumulator(std::size_t features = 0);

  void add(std::span<const double> row, double output);
  void merge(const MomentAccumulator& other);

  std::size_t features() const { return sum_.size(); }
  std::int64_t count() const { return count_; }
  double feature_sum(std::size_t i) const { return sum_[i]; }
  double feature_sq_sum(std::size_t i) const { return sq_sum_[i]; }
  double output_sum() const { return out_sum_; }
  double output_sq_sum() const { return out_sq_sum_; }

  /// Mid-mean CIR of feature i from the stored moments alone.
  CirScore mid_mean_score(std::size_t i) const;

 private:
  std::vector<double> sum_;
  std::vector<double> sq_sum_;
  double out_sum_ = 0.0;
  double out_sq_sum_ = 0.0;
  std::int64_t count_ = 0;
};

MomentAccumulator accumulate(MomentAccumulator acc, std::span<const double> row, double output);

CirScore cir_midmean(std::span<const double> f, std::span<const double> y);
CirScore cir_correlation(std::span<const double> f, std::span<const double> y);
CirScore cir_score(std::span<const double> f, std::span<const double> y, CirMode mode);

/// Scores every feature against the scalar output in a single pass over the
/// rows (mid_mean) or per-feature two-pass (correlation). Sorted by eta
/// descending, ties by feature index. Constant columns get eta = 0 and the
/// "constant" flag instead of failing the batch.
std::vector<CirScore> score_all_features(const DataMatrix& data, const OutputBlock& y, CirMode mode);
std::vector<CirScore> score_all_features(const Matrix& x, std::span<const double> y, CirMode mode);

/// eta indexed by feature (k entries) from a sorted score list.
Vector eta_by_feature(const std::vector<CirScore>& scores, std::size_t k);
std::vector<std::size_t> ranking_of(const std::vector<CirScore>& scores);

/// Largest |delta eta| (mid-mean) when one output entry, chosen uniformly
/// per trial, is moved by +perturbation and by -perturbation.
double one_point_sensitivity(std::span<const double> f, std::span<const double> y, double perturbation,
                             std::size_t trials, std::uint64_t seed);

struct MiLinkValues {
  double rho = 0.0;
  /// Gaussian mutual information in nats.
  double mutual_information = 0.0;
  double nmi = 0.0;
  double upper_bound = 0.0;
};

MiLinkValues mi_link(double rho);

struct MiBoundCheck {
  double rho = 0.0;
  std::size_t n = 0;
  std::size_t reps = 0;
  double mean_eta = 0.0;
  double standard_error = 0.0;
  double bound = 0.0;
  /// bound + 3 standard errors
  double margin = 0.0;
  bool holds = false;
};

/// Monte-Carlo check of E[mid-mean CIR] <= rho^2 / (2 - rho^2) for
/// bivariate Gaussian pairs with zero means, unit variances and correlation rho.
MiBoundCheck mi_bound_check(double rho, std::size_t n, std::size_t reps, std::uint64_t seed);

nlohmann::json to_json(const MiLinkValues& v);
nlohmann::json to_json(const MiBoundCheck& v);

}  // namespace excir
