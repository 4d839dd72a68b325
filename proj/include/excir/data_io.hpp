#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "excir/common.hpp"

namespace excir {

enum class SplitTag { train, validation, test, unsplit };

std::string_view to_string(SplitTag tag);

/// n x k evaluation matrix with named feature columns.
///
/// Invariants (checked on construction): every entry finite, names unique
/// and one per column, at least two rows.
class DataMatrix {
 public:
  DataMatrix(Matrix values, std::vector<std::string> feature_names,
             SplitTag split = SplitTag::unsplit);

  const Matrix& values() const { return values_; }
  const std::vector<std::string>& feature_names() const { return names_; }
  SplitTag split() const { return split_; }
  Index rows() const { return values_.rows(); }
  Index cols() const { return values_.cols(); }

  std::span<const double> column(Index j) const {
    return {values_.col(j).data(), static_cast<std::size_t>(values_.rows())};
  }

  DataMatrix select_rows(std::span<const Index> rows, SplitTag split) const;
  DataMatrix select_rows(std::span<const Index> rows) const { return select_rows(rows, split_); }
  DataMatrix select_columns(std::span<const Index> cols) const;

 private:
  Matrix values_;
  std::vector<std::string> names_;
  SplitTag split_;
};

enum class OutputKind { regression_score, logit, probability };

std::string_view to_string(OutputKind kind);

/// n x p block of model outputs (p = 1 for a scalar prediction).
class OutputBlock {
 public:
  explicit OutputBlock(Matrix values, OutputKind kind = OutputKind::regression_score);
  static OutputBlock scalar(const Vector& y, OutputKind kind = OutputKind::regression_score);

  const Matrix& values() const { return values_; }
  OutputKind kind() const { return kind_; }
  Index rows() const { return values_.rows(); }
  Index dim() const { return values_.cols(); }
  std::span<const double> column(Index l) const {
    return {values_.col(l).data(), static_cast<std::size_t>(values_.rows())};
  }

  OutputBlock select_rows(std::span<const Index> rows) const;

 private:
  Matrix values_;
  OutputKind kind_;
};

/// Per-column mean and population standard deviation, fit on training rows.
struct StandardizationParams {
  Vector mean;
  Vector sd;
  std::vector<bool> constant;

  static StandardizationParams fit(const Matrix& values);
  static StandardizationParams fit(const DataMatrix& data) { return fit(data.values()); }
  Index size() const { return mean.size(); }
};

/// z-scores each column; constant columns map to zeros.
DataMatrix standardize(const DataMatrix& data, const StandardizationParams& params);
Matrix standardize(const Matrix& values, const StandardizationParams& params);

enum class MissingPolicy { reject, impute_median };

struct CsvOptions {
  /// Target column name, or "none". Without a header, columns are named
  /// c0, c1, ... and the target may also be given as a 0-based index.
  std::string target = "none";
  bool has_header = true;
  MissingPolicy missing = MissingPolicy::reject;
  /// Extra non-feature columns to split out (labels, strata, ...).
  std::vector<std::string> aux_columns;
};

struct CsvTable {
  DataMatrix data;
  std::optional<OutputBlock> target;
  std::string target_name;
  std::map<std::string, Vector> aux;
};

CsvTable parse_csv(std::string_view text, const CsvOptions& options);
CsvTable load_csv(const std::filesystem::path& path, const CsvOptions& options);

/// Writes features (and optional trailing columns) with round-trip precision.
std::string format_csv(const DataMatrix& data,
                       const std::vector<std::pair<std::string, Vector>>& extra = {});
void write_csv(const std::filesystem::path& path, const DataMatrix& data,
               const std::vector<std::pair<std::string, Vector>>& extra = {});

inline constexpr std::string_view kSchemaVersion = "1";

/// Stamps "schema_version" and renders with sorted keys (nlohmann's default
/// object type is ordered), so equal reports serialize to identical bytes.
std::string serialize_report(nlohmann::json report);
void write_report(const nlohmann::json& report, const std::filesystem::path& path);

}  // namespace excir
