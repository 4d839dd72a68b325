#include "excir/cir_core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace excir {

std::string_view to_string(CirMode mode) {
  return mode == CirMode::mid_mean ? "midmean" : "correlation";
}

CirMode parse_cir_mode(std::string_view text) {
  if (text == "midmean" || text == "mid_mean" || text == "mid-mean") return CirMode::mid_mean;
  if (text == "correlation" || text == "corr") return CirMode::correlation;
  throw ValidationError("unknown CIR mode '" + std::string(text) + "' (expected midmean or correlation)");
}

nlohmann::json to_json(const CirScore& s, const std::vector<std::string>& names) {
  nlohmann::json j;
  j["feature"] = s.feature < names.size() ? nlohmann::json(names[s.feature]) : nlohmann::json(s.feature);
  j["index"] = s.feature;
  j["eta"] = s.eta;
  j["mode"] = std::string(to_string(s.mode));
  j["feature_mean"] = s.feature_mean;
  j["output_mean"] = s.output_mean;
  j["mid_mean"] = s.mid_mean;
  j["contrast"] = s.contrast;
  j["scatter_feature"] = s.scatter_feature;
  j["scatter_output"] = s.scatter_output;
  if (s.mode == CirMode::correlation) j["rho"] = s.rho;
  if (!s.flag.empty()) j["flag"] = s.flag;
  return j;
}

nlohmann::json to_json(const std::vector<CirScore>& scores, const std::vector<std::string>& names) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& s : scores) arr.push_back(to_json(s, names));
  return arr;
}

namespace {

void check_pair(std::span<const double> f, std::span<const double> y) {
  if (f.size() != y.size()) {
    throw ValidationError("CIR: feature has " + std::to_string(f.size()) + " rows, output has " +
                          std::to_string(y.size()));
  }
  if (f.size() < 2) throw ValidationError("CIR: at least two observations are required");
}

// Fills the mid-mean diagnostics from means and own-mean scatters.
CirScore mid_mean_from_moments(double n, double f_mean, double y_mean, double f_scatter, double y_scatter) {
  CirScore s;
  s.mode = CirMode::mid_mean;
  s.feature_mean = f_mean;
  s.output_mean = y_mean;
  s.mid_mean = 0.5 * (f_mean + y_mean);
  s.contrast = f_mean - y_mean;
  const double half = 0.5 * s.contrast;
  s.scatter_feature = f_scatter + n * half * half;
  s.scatter_output = y_scatter + n * half * half;
  s.numerator = n * 2.0 * half * half;
  s.denominator = s.scatter_feature + s.scatter_output;
  if (!(s.denominator > 0.0)) {
    throw DegenerateInputError("CIR: zero denominator (feature and output are constant and equal)");
  }
  s.eta = std::clamp(s.numerator / s.denominator, 0.0, 1.0);
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------

MomentAccumulator::MomentAccumulator(std::size_t features) : sum_(features, 0.0), sq_sum_(features, 0.0) {}

void MomentAccumulator::add(std::span<const double> row, double output) {
  if (row.size() != sum_.size()) {
    throw ValidationError("accumulate: row has " + std::to_string(row.size()) + " values, expected " +
                          std::to_string(sum_.size()));
  }
  if (!std::isfinite(output)) throw ValidationError("accumulate: non-finite output");
  for (double v : row) {
    if (!std::isfinite(v)) throw ValidationError("accumulate: non-finite feature value");
  }
  for (std::size_t i = 0; i < row.size(); ++i) {
    sum_[i] += row[i];
    sq_sum_[i] += row[i] * row[i];
  }
  out_sum_ += output;
  out_sq_sum_ += output * output;
  ++count_;
}

void MomentAccumulator::merge(const MomentAccumulator& other) {
  if (other.sum_.size() != sum_.size()) throw ValidationError("merge: feature count mismatch");
  for (std::size_t i = 0; i < sum_.size(); ++i) {
    sum_[i] += other.sum_[i];
    sq_sum_[i] += other.sq_sum_[i];
  }
  out_sum_ += other.out_sum_;
  out_sq_sum_ += other.out_sq_sum_;
  count_ += other.count_;
}

CirScore MomentAccumulator::mid_mean_score(std::size_t i) const {
  if (count_ < 2) throw ValidationError("CIR: at least two observations are required");
  const double n = static_cast<double>(count_);
  const double f_mean = sum_[i] / n;
  const double y_mean = out_sum_ / n;
  const double f_scatter = std::max(0.0, sq_sum_[i] - sum_[i] * f_mean);
  const double y_scatter = std::max(0.0, out_sq_sum_ - out_sum_ * y_mean);
  CirScore s = mid_mean_from_moments(n, f_mean, y_mean, f_scatter, y_scatter);
  s.feature = i;
  return s;
}

MomentAccumulator accumulate(MomentAccumulator acc, std::span<const double> row, double output) {
  acc.add(row, output);
  return acc;
}

// ---------------------------------------------------------------------------

CirScore cir_midmean(std::span<const double> f, std::span<const double> y) {
  check_pair(f, y);
  const double n = static_cast<double>(f.size());
  const double f_mean = mean(f);
  const double y_mean = mean(y);
  const double m = 0.5 * (f_mean + y_mean);

  CirScore s;
  s.mode = CirMode::mid_mean;
  s.feature_mean = f_mean;
  s.output_mean = y_mean;
  s.mid_mean = m;
  s.contrast = f_mean - y_mean;
  for (double v : f) s.scatter_feature += (v - m) * (v - m);
  for (double v : y) s.scatter_output += (v - m) * (v - m);
  s.numerator = n * ((f_mean - m) * (f_mean - m) + (y_mean - m) * (y_mean - m));
  s.denominator = s.scatter_feature + s.scatter_output;
  if (!(s.denominator > 0.0)) {
    throw DegenerateInputError("CIR: zero denominator (feature and output are constant and equal)");
  }
  s.eta = std::clamp(s.numerator / s.denominator, 0.0, 1.0);
  return s;
}

CirScore cir_correlation(std::span<const double> f, std::span<const double> y) {
  check_pair(f, y);
  CirScore s;
  s.mode = CirMode::correlation;
  s.feature_mean = mean(f);
  s.output_mean = mean(y);
  s.mid_mean = 0.5 * (s.feature_mean + s.output_mean);
  s.contrast = s.feature_mean - s.output_mean;
  s.rho = pearson(f, y);
  const double r2 = s.rho * s.rho;
  s.numerator = r2;
  s.denominator = 1.0 + r2;
  s.eta = r2 / (1.0 + r2);
  return s;
}

CirScore cir_score(std::span<const double> f, std::span<const double> y, CirMode mode) {
  return mode == CirMode::mid_mean ? cir_midmean(f, y) : cir_correlation(f, y);
}

// ---------------------------------------------------------------------------

namespace {

bool is_constant(std::span<const double> x) {
  const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
  return *lo == *hi;
}

CirScore flagged(std::size_t feature, CirMode mode, std::string flag) {
  CirScore s;
  s.feature = feature;
  s.mode = mode;
  s.eta = 0.0;
  s.flag = std::move(flag);
  return s;
}

void sort_scores(std::vector<CirScore>& scores) {
  std::stable_sort(scores.begin(), scores.end(), [](const CirScore& a, const CirScore& b) {
    if (a.eta != b.eta) return a.eta > b.eta;
    return a.feature < b.feature;
  });
}

constexpr Index kShardRows = 4096;

}  // namespace

std::vector<CirScore> score_all_features(const Matrix& x, std::span<const double> y, CirMode mode) {
  const Index n = x.rows();
  const std::size_t k = static_cast<std::size_t>(x.cols());
  if (static_cast<std::size_t>(n) != y.size()) {
    throw ValidationError("score_all_features: data has " + std::to_string(n) + " rows, output has " +
                          std::to_string(y.size()));
  }
  if (n < 2) throw ValidationError("score_all_features: at least two rows are required");

  std::vector<CirScore> scores(k);
  const bool y_constant = is_constant(y);

  if (mode == CirMode::mid_mean) {
    // One pass over the rows in shards; shards are merged in order so the
    // result does not depend on how many workers filled them.
    const Index shards = (n + kShardRows - 1) / kShardRows;
    std::vector<MomentAccumulator> partial(static_cast<std::size_t>(shards), MomentAccumulator(k));
    parallel_for(static_cast<std::size_t>(shards), [&](std::size_t s) {
      const Index begin = static_cast<Index>(s) * kShardRows;
      const Index len = std::min(kShardRows, n - begin);
      MomentAccumulator local(k);
      std::vector<double> row(k);
      for (Index i = begin; i < begin + len; ++i) {
        for (std::size_t j = 0; j < k; ++j) row[j] = x(i, static_cast<Index>(j));
        local.add(row, y[static_cast<std::size_t>(i)]);
      }
      partial[s] = std::move(local);
    });
    MomentAccumulator total(k);
    for (const auto& p : partial) total.merge(p);
    for (std::size_t j = 0; j < k; ++j) {
      const auto col = std::span<const double>(x.col(static_cast<Index>(j)).data(), static_cast<std::size_t>(n));
      if (is_constant(col)) {
        scores[j] = flagged(j, mode, "constant");
        continue;
      }
      scores[j] = total.mid_mean_score(j);
    }
  } else {
    parallel_for(k, [&](std::size_t j) {
      const auto col = std::span<const double>(x.col(static_cast<Index>(j)).data(), static_cast<std::size_t>(n));
      if (is_constant(col)) {
        scores[j] = flagged(j, mode, "constant");
      } else if (y_constant) {
        scores[j] = flagged(j, mode, "degenerate");
      } else {
        scores[j] = cir_correlation(col, y);
        scores[j].feature = j;
      }
    });
  }
  sort_scores(scores);
  return scores;
}

std::vector<CirScore> score_all_features(const DataMatrix& data, const OutputBlock& y, CirMode mode) {
  if (y.dim() != 1) throw ValidationError("score_all_features: scalar output expected, got p = " + std::to_string(y.dim()));
  return score_all_features(data.values(), y.column(0), mode);
}

Vector eta_by_feature(const std::vector<CirScore>& scores, std::size_t k) {
  Vector eta = Vector::Zero(static_cast<Index>(k));
  for (const auto& s : scores) {
    if (s.feature >= k) throw ValidationError("eta_by_feature: feature index out of range");
    eta[static_cast<Index>(s.feature)] = s.eta;
  }
  return eta;
}

std::vector<std::size_t> ranking_of(const std::vector<CirScore>& scores) {
  std::vector<std::size_t> order;
  order.reserve(scores.size());
  for (const auto& s : scores) order.push_back(s.feature);
  return order;
}

// ---------------------------------------------------------------------------

double one_point_sensitivity(std::span<const double> f, std::span<const double> y, double perturbation,
                             std::size_t trials, std::uint64_t seed) {
  check_pair(f, y);
  if (trials < 1) throw ValidationError("one_point_sensitivity: trials must be >= 1");
  if (!std::isfinite(perturbation)) throw ValidationError("one_point_sensitivity: non-finite perturbation");
  const double base = cir_midmean(f, y).eta;
  std::vector<double> edited(y.begin(), y.end());
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, y.size() - 1);
  double worst = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t j = pick(rng);
    for (double sign : {1.0, -1.0}) {
      edited[j] = y[j] + sign * perturbation;
      worst = std::max(worst, std::abs(cir_midmean(f, edited).eta - base));
    }
    edited[j] = y[j];
  }
  return worst;
}

MiLinkValues mi_link(double rho) {
  if (!(std::abs(rho) < 1.0)) throw ValidationError("mi_link: |rho| must be < 1");
  MiLinkValues v;
  v.rho = rho;
  const double r2 = rho * rho;
  v.mutual_information = -0.5 * std::log1p(-r2);
  v.nmi = -std::expm1(-2.0 * v.mutual_information);
  v.upper_bound = v.nmi / (2.0 - v.nmi);
  return v;
}

MiBoundCheck mi_bound_check(double rho, std::size_t n, std::size_t reps, std::uint64_t seed) {
  if (!(std::abs(rho) < 1.0)) throw ValidationError("mi_bound_check: |rho| must be < 1");
  if (n < 4) throw ValidationError("mi_bound_check: n must be >= 4");
  if (reps < 2) throw ValidationError("mi_bound_check: reps must be >= 2");

  // Cholesky factor of [[1, rho], [rho, 1]].
  const double l21 = rho;
  const double l22 = std::sqrt(1.0 - rho * rho);
  std::vector<double> etas(reps);
  parallel_for(reps, [&](std::size_t r) {
    std::mt19937_64 rng(derive_seed(seed, r));
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double z1 = normal(rng);
      const double z2 = normal(rng);
      x[i] = z1;
      y[i] = l21 * z1 + l22 * z2;
    }
    etas[r] = cir_midmean(x, y).eta;
  });

  MiBoundCheck out;
  out.rho = rho;
  out.n = n;
  out.reps = reps;
  out.mean_eta = mean(etas);
  out.standard_error = std::sqrt(variance(etas) / static_cast<double>(reps));
  out.bound = rho * rho / (2.0 - rho * rho);
  out.margin = out.bound + 3.0 * out.standard_error;
  out.holds = out.mean_eta <= out.margin;
  return out;
}

nlohmann::json to_json(const MiLinkValues& v) {
  return {{"rho", v.rho}, {"mutual_information", v.mutual_information}, {"nmi", v.nmi}, {"upper_bound", v.upper_bound}};
}

nlohmann::json to_json(const MiBoundCheck& v) {
  return {{"rho", v.rho},     {"n", v.n},           {"reps", v.reps},
          {"mean_eta", v.mean_eta}, {"standard_error", v.standard_error},
          {"bound", v.bound}, {"margin", v.margin}, {"holds", v.holds}};
}

}  // namespace excir
