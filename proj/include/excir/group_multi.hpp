#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "excir/cca_engine.hpp"
#include "excir/cir_core.hpp"
#include "excir/data_io.hpp"

namespace excir {

struct FeatureGroup {
  std::string name;
  std::vector<Index> members;
};

/// Named, disjoint feature groups. Features not listed in any group become
/// singleton blocks named after the feature when the spec is resolved.
struct BlockSpec {
  std::vector<FeatureGroup> groups;

  /// Throws ValidationError on empty groups, duplicate names, indices >= k
  /// or overlapping groups.
  void validate(Index k) const;
  /// Explicit groups in declaration order, then singletons by index.
  std::vector<FeatureGroup> resolve(const std::vector<std::string>& feature_names) const;

  /// {"blocks": {"name": [indices...]}}; member entries may also be feature
  /// names when `feature_names` is given.
  static BlockSpec from_json(const nlohmann::json& j, const std::vector<std::string>& feature_names = {});
  static BlockSpec load(const std::filesystem::path& path, const std::vector<std::string>& feature_names = {});
};

enum class Aggregation { sum, max };

struct BlockOptions {
  /// Ridge on both covariance diagonals; default_ridge when unset.
  std::optional<double> ridge;
  /// Number of canonical pairs retained per block (p > 1 only).
  Index pairs = 1;
  Aggregation aggregation = Aggregation::sum;
};

struct GroupScore {
  std::string name;
  std::vector<Index> members;
  /// CIR of the block variate z against the target (y for p = 1, s otherwise).
  CirScore eta;
  CanonicalPair canonical;
  /// Each standardized member scored against the same target.
  std::vector<CirScore> member_etas;
  /// eta.eta for one pair; sum or max over pairs otherwise. Used for ranking.
  double aggregate = 0.0;
};

/// BlockCIR. Members are standardized over the rows given; the output side
/// keeps its location so mid-mean scores stay informative.
std::vector<GroupScore> block_cir(const DataMatrix& data, const OutputBlock& y, const BlockSpec& blocks, CirMode mode,
                                  const BlockOptions& options = {});

nlohmann::json to_json(const GroupScore& g, const std::vector<std::string>& names = {});

enum class ClassSelector { unit_axis, cca_constrained };

ClassSelector parse_class_selector(std::string_view text);
std::string_view to_string(ClassSelector s);

/// Ridge-projected output direction for one feature:
/// w = (Sigma_Y + lambda I)^{-1} cov(Y, f), scaled so Var(Y w) = 1.
/// Returns the zero vector when cov(Y, f) = 0.
Vector ridge_output_direction(const Matrix& y, std::span<const double> f, double lambda);

/// Class-conditioned CIR for class c. unit_axis scores against column c;
/// cca_constrained scores each feature against Y w with w from
/// ridge_output_direction (lambda defaults to 1e-6 * trace(Sigma_Y) / p).
std::vector<CirScore> cc_cir(const DataMatrix& data, const OutputBlock& y, Index c, ClassSelector selector,
                             CirMode mode, std::optional<double> lambda = std::nullopt);

enum class WeightScheme { uniform, per_output_corr, canonical_projection, fixed };

WeightScheme parse_weight_scheme(std::string_view text);
std::string_view to_string(WeightScheme s);

struct WeightVector {
  /// Only read for the fixed scheme; must be nonnegative and sum to 1.
  Vector alpha;
  WeightScheme scheme = WeightScheme::uniform;
};

struct MultiOutputScore {
  std::size_t feature = 0;
  /// Convex combination of per-output CIRs, or the canonical projection
  /// score for that scheme.
  double score = 0.0;
  std::vector<double> per_output;
  Vector alpha;
  /// CIR(f, Y w) with w from ridge_output_direction.
  double canonical_projection = 0.0;
  CirMode mode = CirMode::mid_mean;
  std::string flag;
};

std::vector<MultiOutputScore> mo_excir(const DataMatrix& data, const OutputBlock& y, const WeightVector& weights,
                                       CirMode mode, std::optional<double> lambda = std::nullopt);

nlohmann::json to_json(const MultiOutputScore& s, const std::vector<std::string>& names = {});

/// Y M. Requires condition number of M below 1e6.
OutputBlock remix_outputs(const OutputBlock& y, const Matrix& m);

/// M = Sigma^{-1/2} Q Sigma^{1/2}, which satisfies M^T Sigma M = Sigma.
Matrix sigma_orthonormal_remix(const Matrix& sigma_y, const Matrix& q);

}  // namespace excir
