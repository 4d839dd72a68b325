#include "excir/data_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace excir {

std::string_view to_string(SplitTag tag) {
  switch (tag) {
    case SplitTag::train: return "train";
    case SplitTag::validation: return "validation";
    case SplitTag::test: return "test";
    case SplitTag::unsplit: return "unsplit";
  }
  return "unsplit";
}

std::string_view to_string(OutputKind kind) {
  switch (kind) {
    case OutputKind::regression_score: return "regression_score";
    case OutputKind::logit: return "logit";
    case OutputKind::probability: return "probability";
  }
  return "regression_score";
}

namespace {

void require_finite(const Matrix& m, std::string_view what) {
  for (Index j = 0; j < m.cols(); ++j) {
    for (Index i = 0; i < m.rows(); ++i) {
      if (!std::isfinite(m(i, j))) {
        throw ValidationError(std::string(what) + ": non-finite value at row " + std::to_string(i) +
                              ", column " + std::to_string(j));
      }
    }
  }
}

}  // namespace

DataMatrix::DataMatrix(Matrix values, std::vector<std::string> feature_names, SplitTag split)
    : values_(std::move(values)), names_(std::move(feature_names)), split_(split) {
  if (static_cast<Index>(names_.size()) != values_.cols()) {
    throw ValidationError("DataMatrix: " + std::to_string(names_.size()) + " names for " +
                          std::to_string(values_.cols()) + " columns");
  }
  std::set<std::string> seen;
  for (const auto& name : names_) {
    if (!seen.insert(name).second) throw ValidationError("DataMatrix: duplicate feature name '" + name + "'");
  }
  if (values_.rows() < 2) throw ValidationError("DataMatrix: at least two rows are required");
  require_finite(values_, "DataMatrix");
}

DataMatrix DataMatrix::select_rows(std::span<const Index> rows, SplitTag split) const {
  Matrix out(static_cast<Index>(rows.size()), values_.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] < 0 || rows[r] >= values_.rows()) throw ValidationError("select_rows: row index out of range");
    out.row(static_cast<Index>(r)) = values_.row(rows[r]);
  }
  return DataMatrix(std::move(out), names_, split);
}

DataMatrix DataMatrix::select_columns(std::span<const Index> cols) const {
  Matrix out(values_.rows(), static_cast<Index>(cols.size()));
  std::vector<std::string> names;
  names.reserve(cols.size());
  for (std::size_t c = 0; c < cols.size(); ++c) {
    if (cols[c] < 0 || cols[c] >= values_.cols()) throw ValidationError("select_columns: column index out of range");
    out.col(static_cast<Index>(c)) = values_.col(cols[c]);
    names.push_back(names_[static_cast<std::size_t>(cols[c])]);
  }
  return DataMatrix(std::move(out), std::move(names), split_);
}

OutputBlock::OutputBlock(Matrix values, OutputKind kind) : values_(std::move(values)), kind_(kind) {
  if (values_.cols() < 1) throw ValidationError("OutputBlock: at least one output column is required");
  require_finite(values_, "OutputBlock");
  if (kind_ == OutputKind::probability) {
    for (Index i = 0; i < values_.rows(); ++i) {
      for (Index l = 0; l < values_.cols(); ++l) {
        if (values_(i, l) < 0.0 || values_(i, l) > 1.0) {
          throw ValidationError("OutputBlock: probability outside [0,1] at row " + std::to_string(i));
        }
      }
      if (values_.cols() > 1 && std::abs(values_.row(i).sum() - 1.0) > 1e-9) {
        throw ValidationError("OutputBlock: probability row " + std::to_string(i) + " does not sum to 1");
      }
    }
  }
}

OutputBlock OutputBlock::scalar(const Vector& y, OutputKind kind) {
  Matrix m(y.size(), 1);
  m.col(0) = y;
  return OutputBlock(std::move(m), kind);
}

OutputBlock OutputBlock::select_rows(std::span<const Index> rows) const {
  Matrix out(static_cast<Index>(rows.size()), values_.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Index>(r)) = values_.row(rows[r]);
  return OutputBlock(std::move(out), kind_);
}

StandardizationParams StandardizationParams::fit(const Matrix& values) {
  if (values.rows() < 1) throw ValidationError("standardization: no rows");
  StandardizationParams p;
  const Index k = values.cols();
  p.mean.resize(k);
  p.sd.resize(k);
  p.constant.assign(static_cast<std::size_t>(k), false);
  for (Index j = 0; j < k; ++j) {
    const double m = values.col(j).mean();
    const double var = (values.col(j).array() - m).square().mean();
    const double sd = std::sqrt(var);
    p.mean[j] = m;
    p.sd[j] = sd;
    // Relative cutoff: a column whose spread is at rounding level of its
    // magnitude carries no information.
    if (!(sd > 1e-14 * std::max(1.0, std::abs(m)))) p.constant[static_cast<std::size_t>(j)] = true;
  }
  return p;
}

Matrix standardize(const Matrix& values, const StandardizationParams& params) {
  if (params.size() != values.cols()) {
    throw ValidationError("standardize: params cover " + std::to_string(params.size()) + " columns, data has " +
                          std::to_string(values.cols()));
  }
  Matrix out(values.rows(), values.cols());
  for (Index j = 0; j < values.cols(); ++j) {
    if (params.constant[static_cast<std::size_t>(j)]) {
      out.col(j).setZero();
    } else {
      out.col(j) = (values.col(j).array() - params.mean[j]) / params.sd[j];
    }
  }
  return out;
}

DataMatrix standardize(const DataMatrix& data, const StandardizationParams& params) {
  return DataMatrix(standardize(data.values(), params), data.feature_names(), data.split());
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::string cell_ref(std::size_t line_no, std::size_t col, const std::vector<std::string>& names) {
  std::string ref = "line " + std::to_string(line_no) + ", column " + std::to_string(col);
  if (col < names.size()) ref += " ('" + names[col] + "')";
  return ref;
}

bool is_missing_token(std::string_view s) {
  return s.empty() || s == "NA" || s == "NaN" || s == "nan" || s == "null";
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

CsvTable parse_csv(std::string_view text, const CsvOptions& options) {
  std::vector<std::string_view> lines;
  {
    std::size_t start = 0;
    while (start <= text.size()) {
      std::size_t nl = text.find('\n', start);
      if (nl == std::string_view::npos) nl = text.size();
      std::string_view line = trim(text.substr(start, nl - start));
      if (!line.empty()) lines.push_back(line);
      if (nl == text.size()) break;
      start = nl + 1;
    }
  }
  if (lines.empty()) throw ValidationError("csv: empty file");

  std::vector<std::string> names;
  std::size_t first_data = 0;
  const std::size_t width = split_fields(lines[0]).size();
  if (options.has_header) {
    std::set<std::string> seen;
    for (auto f : split_fields(lines[0])) {
      std::string name(trim(f));
      if (!seen.insert(name).second) throw ValidationError("csv: duplicate header '" + name + "'");
      names.push_back(std::move(name));
    }
    first_data = 1;
  } else {
    for (std::size_t c = 0; c < width; ++c) names.push_back("c" + std::to_string(c));
  }
  const std::size_t n = lines.size() - first_data;
  if (n == 0) throw ValidationError("csv: no data rows");

  // Cells are parsed into a dense row-major buffer; NaN marks missing.
  std::vector<double> cells(n * width);
  std::vector<std::vector<std::size_t>> missing_rows(width);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t line_no = first_data + r + 1;
    const auto fields = split_fields(lines[first_data + r]);
    if (fields.size() != width) {
      throw ValidationError("csv: line " + std::to_string(line_no) + " has " + std::to_string(fields.size()) +
                            " fields, expected " + std::to_string(width));
    }
    for (std::size_t c = 0; c < width; ++c) {
      const std::string_view cell = trim(fields[c]);
      if (is_missing_token(cell)) {
        if (options.missing == MissingPolicy::reject) {
          if (cell.empty()) throw ValidationError("csv: missing value at " + cell_ref(line_no, c, names));
          throw ValidationError("csv: non-finite value '" + std::string(cell) + "' at " + cell_ref(line_no, c, names));
        }
        cells[r * width + c] = std::nan("");
        missing_rows[c].push_back(r);
        continue;
      }
      double v = 0.0;
      const char* begin = cell.data();
      const char* end = cell.data() + cell.size();
      if (*begin == '+') ++begin;
      const auto res = std::from_chars(begin, end, v);
      if (res.ec != std::errc() || res.ptr != end) {
        throw ValidationError("csv: cannot parse '" + std::string(cell) + "' at " + cell_ref(line_no, c, names));
      }
      if (!std::isfinite(v)) {
        throw ValidationError("csv: non-finite value '" + std::string(cell) + "' at " + cell_ref(line_no, c, names));
      }
      cells[r * width + c] = v;
    }
  }

  if (options.missing == MissingPolicy::impute_median) {
    for (std::size_t c = 0; c < width; ++c) {
      if (missing_rows[c].empty()) continue;
      std::vector<double> present;
      for (std::size_t r = 0; r < n; ++r) {
        if (!std::isnan(cells[r * width + c])) present.push_back(cells[r * width + c]);
      }
      if (present.empty()) throw ValidationError("csv: column '" + names[c] + "' has no observed values");
      const double med = median_of(std::move(present));
      for (std::size_t r : missing_rows[c]) cells[r * width + c] = med;
    }
  }

  auto resolve = [&](const std::string& spec) -> std::size_t {
    auto it = std::find(names.begin(), names.end(), spec);
    if (it != names.end()) return static_cast<std::size_t>(it - names.begin());
    if (!options.has_header) {
      std::size_t idx = 0;
      const auto res = std::from_chars(spec.data(), spec.data() + spec.size(), idx);
      if (res.ec == std::errc() && res.ptr == spec.data() + spec.size() && idx < width) return idx;
    }
    throw ValidationError("csv: no column named '" + spec + "'");
  };

  std::optional<std::size_t> target_col;
  if (options.target != "none" && !options.target.empty()) target_col = resolve(options.target);
  std::map<std::string, std::size_t> aux_cols;
  for (const auto& a : options.aux_columns) {
    const std::size_t c = resolve(a);
    if (target_col && *target_col == c) throw ValidationError("csv: column '" + a + "' is both target and auxiliary");
    aux_cols[names[c]] = c;
  }

  std::vector<std::size_t> feature_cols;
  std::vector<std::string> feature_names;
  for (std::size_t c = 0; c < width; ++c) {
    if (target_col && *target_col == c) continue;
    if (aux_cols.count(names[c])) continue;
    feature_cols.push_back(c);
    feature_names.push_back(names[c]);
  }

  Matrix values(static_cast<Index>(n), static_cast<Index>(feature_cols.size()));
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < feature_cols.size(); ++j) {
      values(static_cast<Index>(r), static_cast<Index>(j)) = cells[r * width + feature_cols[j]];
    }
  }
  auto column_vector = [&](std::size_t c) {
    Vector v(static_cast<Index>(n));
    for (std::size_t r = 0; r < n; ++r) v[static_cast<Index>(r)] = cells[r * width + c];
    return v;
  };

  CsvTable table{DataMatrix(std::move(values), std::move(feature_names)), std::nullopt, "", {}};
  if (target_col) {
    table.target = OutputBlock::scalar(column_vector(*target_col));
    table.target_name = names[*target_col];
  }
  for (const auto& [name, c] : aux_cols) table.aux.emplace(name, column_vector(c));
  return table;
}

CsvTable load_csv(const std::filesystem::path& path, const CsvOptions& options) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("csv: cannot open '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_csv(buf.str(), options);
}

namespace {

void append_number(std::string& out, double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, res.ptr);
}

}  // namespace

std::string format_csv(const DataMatrix& data, const std::vector<std::pair<std::string, Vector>>& extra) {
  std::string out;
  bool first = true;
  for (const auto& name : data.feature_names()) {
    if (!first) out += ',';
    out += name;
    first = false;
  }
  for (const auto& [name, col] : extra) {
    if (col.size() != data.rows()) throw ValidationError("format_csv: column '" + name + "' has wrong length");
    if (!first) out += ',';
    out += name;
    first = false;
  }
  out += '\n';
  for (Index i = 0; i < data.rows(); ++i) {
    first = true;
    for (Index j = 0; j < data.cols(); ++j) {
      if (!first) out += ',';
      append_number(out, data.values()(i, j));
      first = false;
    }
    for (const auto& [name, col] : extra) {
      if (!first) out += ',';
      append_number(out, col[i]);
      first = false;
    }
    out += '\n';
  }
  return out;
}

void write_csv(const std::filesystem::path& path, const DataMatrix& data,
               const std::vector<std::pair<std::string, Vector>>& extra) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("csv: cannot write '" + path.string() + "'");
  out << format_csv(data, extra);
  if (!out) throw ValidationError("csv: write failed for '" + path.string() + "'");
}

std::string serialize_report(nlohmann::json report) {
  if (!report.is_object()) {
    nlohmann::json wrapped;
    wrapped["items"] = std::move(report);
    report = std::move(wrapped);
  }
  report["schema_version"] = std::string(kSchemaVersion);
  return report.dump(2) + "\n";
}

void write_report(const nlohmann::json& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("report: cannot write '" + path.string() + "'");
  out << serialize_report(report);
  if (!out) throw ValidationError("report: write failed for '" + path.string() + "'");
}

}  // namespace excir
