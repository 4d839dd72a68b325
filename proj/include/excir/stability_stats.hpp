#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "excir/cir_core.hpp"
#include "excir/data_io.hpp"
#include "excir/group_multi.hpp"

namespace excir {

enum class CiKind { normal, percentile };

struct BootstrapOptions {
  std::size_t replicates = 100;
  std::uint64_t seed = 42;
  CiKind ci = CiKind::normal;
  /// Resample within quartiles of y instead of IID.
  bool quartile_strata = false;
};

/// Maps a resampled (data, y) to one score per unit (feature or block).
using ReplicateScorer = std::function<Vector(const DataMatrix&, const OutputBlock&)>;

ReplicateScorer per_feature_scorer(CirMode mode);
/// Scores blocks in the order of BlockSpec::resolve on the full feature names.
ReplicateScorer block_scorer(BlockSpec blocks, CirMode mode, BlockOptions options = {});

struct BootstrapSummary {
  std::size_t replicates = 0;
  std::size_t excluded = 0;
  Vector mean;
  /// Population (1/B) standard deviation over retained replicates.
  Vector sd;
  Vector ci_lo;
  Vector ci_hi;
  Vector width;
  /// width / |mean|; NaN where the mean is 0.
  Vector relative_width;
  /// Retained replicates x units.
  Matrix scores;
  CiKind ci = CiKind::normal;
};

/// Resamples rows with replacement, replicate b drawing from
/// derive_seed(seed, b). A replicate whose scorer throws a NumericalError is
/// excluded and counted.
BootstrapSummary bootstrap_scores(const DataMatrix& data, const OutputBlock& y, const ReplicateScorer& scorer,
                                  const BootstrapOptions& options = {});

nlohmann::json to_json(const BootstrapSummary& s, const std::vector<std::string>& names = {});

/// Kendall tau-b. NaN when either side is entirely tied.
double kendall_tau_b(std::span<const double> a, std::span<const double> b);
/// Spearman on average ranks. NaN when either side is entirely tied.
double spearman_rho(std::span<const double> a, std::span<const double> b);

/// Indices of the k largest scores (ties by index).
std::vector<std::size_t> top_k(std::span<const double> scores, std::size_t k);

struct RankAgreement {
  double kendall_tau_full = 1.0;
  double kendall_tau_head = 1.0;
  double jaccard_topk = 1.0;
  double spearman_rho = 1.0;
  std::size_t head_k = 0;
  std::string flag;
};

/// Head tau is taken over the union of both top-k sets; a feature missing
/// from one side's top-k is tied there at rank k + 1.
RankAgreement rank_agreement(std::span<const double> a, std::span<const double> b, std::size_t head_k);

nlohmann::json to_json(const RankAgreement& r);

struct BhResult {
  std::vector<double> q_values;
  std::vector<bool> significant;
};

/// Benjamini-Hochberg step-up adjusted values; significant iff q_bh < q.
BhResult bh_fdr(std::span<const double> p_values, double q = 0.1);

double cliffs_delta(std::span<const double> a, std::span<const double> b);

enum class Direction { higher_better, lower_better };

struct SignificanceRecord {
  std::string metric;
  /// mean(a) - mean(b), sign flipped for lower-better metrics so that a
  /// positive value favours a.
  double delta = 0.0;
  double cliffs_delta = 0.0;
  double u_statistic = 0.0;
  double p_value = 1.0;
  bool exact = false;
  double q_bh = 1.0;
  bool significant = false;
};

/// Two-sided Mann-Whitney U. Exact when both sizes <= 12 and no ties,
/// otherwise normal approximation with tie and continuity correction.
SignificanceRecord nonparametric_compare(std::span<const double> a, std::span<const double> b, Direction direction,
                                         std::string metric = {});

/// Fills q_bh and significant over a family of records.
void apply_bh(std::vector<SignificanceRecord>& records, double q = 0.1);

nlohmann::json to_json(const SignificanceRecord& r);

/// For the ranking by column mean, the share of replicates in which the
/// feature at base rank i outscores the one at rank i + 1.
std::vector<double> adjacent_rank_probability(const Matrix& replicate_scores);

}  // namespace excir
