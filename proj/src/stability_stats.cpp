#include "excir/stability_stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <set>

namespace excir {

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

double quantile_sorted(const std::vector<double>& s, double q) {
  const double pos = q * static_cast<double>(s.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, s.size() - 1);
  return s[lo] + (pos - static_cast<double>(lo)) * (s[hi] - s[lo]);
}
}  // namespace

ReplicateScorer per_feature_scorer(CirMode mode) {
  return [mode](const DataMatrix& data, const OutputBlock& y) {
    return eta_by_feature(score_all_features(data, y, mode), static_cast<std::size_t>(data.cols()));
  };
}

ReplicateScorer block_scorer(BlockSpec blocks, CirMode mode, BlockOptions options) {
  return [blocks = std::move(blocks), mode, options](const DataMatrix& data, const OutputBlock& y) {
    const auto order = blocks.resolve(data.feature_names());
    const auto scored = block_cir(data, y, blocks, mode, options);
    Vector out(static_cast<Index>(order.size()));
    for (std::size_t i = 0; i < order.size(); ++i) {
      const auto it = std::find_if(scored.begin(), scored.end(),
                                   [&](const GroupScore& g) { return g.name == order[i].name; });
      out[static_cast<Index>(i)] = it->aggregate;
    }
    return out;
  };
}

BootstrapSummary bootstrap_scores(const DataMatrix& data, const OutputBlock& y, const ReplicateScorer& scorer,
                                  const BootstrapOptions& options) {
  if (options.replicates < 2) throw ValidationError("bootstrap: B must be >= 2");
  if (data.rows() != y.rows()) throw ValidationError("bootstrap: data and output row counts differ");
  const Index n = data.rows();

  // Strata are the quartiles of the first output column.
  std::vector<std::vector<Index>> strata;
  if (options.quartile_strata) {
    const auto ranks = average_ranks(y.column(0));
    strata.resize(4);
    for (Index i = 0; i < n; ++i) {
      const auto q = std::min<std::size_t>(
          3, static_cast<std::size_t>(4.0 * (ranks[static_cast<std::size_t>(i)] - 1.0) / static_cast<double>(n)));
      strata[q].push_back(i);
    }
    std::erase_if(strata, [](const auto& s) { return s.empty(); });
  } else {
    strata.emplace_back(static_cast<std::size_t>(n));
    std::iota(strata[0].begin(), strata[0].end(), Index{0});
  }

  std::vector<std::optional<Vector>> results(options.replicates);
  parallel_for(options.replicates, [&](std::size_t b) {
    std::mt19937_64 rng(derive_seed(options.seed, b));
    std::vector<Index> rows;
    rows.reserve(static_cast<std::size_t>(n));
    for (const auto& s : strata) {
      std::uniform_int_distribution<std::size_t> pick(0, s.size() - 1);
      for (std::size_t t = 0; t < s.size(); ++t) rows.push_back(s[pick(rng)]);
    }
    try {
      results[b] = scorer(data.select_rows(rows), y.select_rows(rows));
    } catch (const NumericalError&) {
      results[b].reset();
    }
  });

  std::vector<Vector> kept;
  for (auto& r : results) {
    if (r) kept.push_back(std::move(*r));
  }
  BootstrapSummary s;
  s.ci = options.ci;
  s.replicates = kept.size();
  s.excluded = options.replicates - kept.size();
  if (kept.empty()) throw NumericalError("bootstrap: every replicate was degenerate");
  const Index units = kept.front().size();
  s.scores.resize(static_cast<Index>(kept.size()), units);
  for (std::size_t b = 0; b < kept.size(); ++b) {
    if (kept[b].size() != units) throw NumericalError("bootstrap: scorer returned inconsistent lengths");
    s.scores.row(static_cast<Index>(b)) = kept[b].transpose();
  }

  s.mean.resize(units);
  s.sd.resize(units);
  s.ci_lo.resize(units);
  s.ci_hi.resize(units);
  s.width.resize(units);
  s.relative_width.resize(units);
  for (Index j = 0; j < units; ++j) {
    std::vector<double> col = to_std(s.scores.col(j));
    s.mean[j] = mean(col);
    s.sd[j] = std::sqrt(variance(col));
    if (options.ci == CiKind::normal) {
      s.ci_lo[j] = s.mean[j] - 1.96 * s.sd[j];
      s.ci_hi[j] = s.mean[j] + 1.96 * s.sd[j];
    } else {
      std::sort(col.begin(), col.end());
      s.ci_lo[j] = quantile_sorted(col, 0.025);
      s.ci_hi[j] = quantile_sorted(col, 0.975);
    }
    s.width[j] = s.ci_hi[j] - s.ci_lo[j];
    s.relative_width[j] = s.mean[j] != 0.0 ? s.width[j] / std::abs(s.mean[j]) : kNaN;
  }
  return s;
}

nlohmann::json to_json(const BootstrapSummary& s, const std::vector<std::string>& names) {
  nlohmann::json units = nlohmann::json::array();
  for (Index j = 0; j < s.mean.size(); ++j) {
    const auto ju = static_cast<std::size_t>(j);
    units.push_back({{"unit", ju < names.size() ? nlohmann::json(names[ju]) : nlohmann::json(j)},
                     {"mean", s.mean[j]},
                     {"sd", s.sd[j]},
                     {"ci_lo", s.ci_lo[j]},
                     {"ci_hi", s.ci_hi[j]},
                     {"width", s.width[j]},
                     {"relative_width", s.relative_width[j]}});
  }
  return {{"replicates", s.replicates},
          {"excluded", s.excluded},
          {"ci", s.ci == CiKind::normal ? "normal" : "percentile"},
          {"scores", units}};
}

// ---------------------------------------------------------------------------

double kendall_tau_b(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ValidationError("kendall_tau_b: length mismatch");
  if (a.size() < 2) throw ValidationError("kendall_tau_b: at least two items are required");
  double concordant = 0.0, discordant = 0.0, ties_a = 0.0, ties_b = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = i + 1; j < a.size(); ++j) {
      pairs += 1.0;
      const double da = a[i] - a[j];
      const double db = b[i] - b[j];
      if (da == 0.0) ties_a += 1.0;
      if (db == 0.0) ties_b += 1.0;
      if (da == 0.0 || db == 0.0) continue;
      if ((da > 0.0) == (db > 0.0)) {
        concordant += 1.0;
      } else {
        discordant += 1.0;
      }
    }
  }
  const double denom = std::sqrt((pairs - ties_a) * (pairs - ties_b));
  if (!(denom > 0.0)) return kNaN;
  return std::clamp((concordant - discordant) / denom, -1.0, 1.0);
}

double spearman_rho(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ValidationError("spearman_rho: length mismatch");
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  try {
    return pearson(ra, rb);
  } catch (const DegenerateInputError&) {
    return kNaN;
  }
}

std::vector<std::size_t> top_k(std::span<const double> scores, std::size_t k) {
  auto order = descending_order(scores);
  order.resize(std::min(k, order.size()));
  return order;
}

RankAgreement rank_agreement(std::span<const double> a, std::span<const double> b, std::size_t head_k) {
  if (a.size() != b.size()) throw ValidationError("rank_agreement: length mismatch");
  if (a.size() < 2) throw ValidationError("rank_agreement: at least two features are required");
  if (head_k < 1 || head_k > a.size()) throw ValidationError("rank_agreement: head_k must lie in [1, k]");

  RankAgreement r;
  r.head_k = head_k;
  r.kendall_tau_full = kendall_tau_b(a, b);
  r.spearman_rho = spearman_rho(a, b);
  if (std::isnan(r.kendall_tau_full)) r.flag = "degenerate ranking";

  const auto ta = top_k(a, head_k);
  const auto tb = top_k(b, head_k);
  std::set<std::size_t> sa(ta.begin(), ta.end()), sb(tb.begin(), tb.end());
  std::set<std::size_t> uni = sa;
  uni.insert(sb.begin(), sb.end());
  std::size_t inter = 0;
  for (auto f : sa) inter += sb.count(f);
  r.jaccard_topk = static_cast<double>(inter) / static_cast<double>(uni.size());

  if (uni.size() < 2) {
    r.kendall_tau_head = 1.0;
  } else {
    auto rank_in = [&](const std::vector<std::size_t>& top, std::size_t f) {
      const auto it = std::find(top.begin(), top.end(), f);
      return it == top.end() ? static_cast<double>(head_k + 1) : static_cast<double>(it - top.begin() + 1);
    };
    std::vector<double> ra, rb;
    for (auto f : uni) {
      ra.push_back(-rank_in(ta, f));
      rb.push_back(-rank_in(tb, f));
    }
    r.kendall_tau_head = kendall_tau_b(ra, rb);
  }
  return r;
}

nlohmann::json to_json(const RankAgreement& r) {
  nlohmann::json j{{"kendall_tau_full", r.kendall_tau_full},
                   {"kendall_tau_head", r.kendall_tau_head},
                   {"jaccard_topk", r.jaccard_topk},
                   {"spearman_rho", r.spearman_rho},
                   {"head_k", r.head_k}};
  if (!r.flag.empty()) j["flag"] = r.flag;
  return j;
}

// ---------------------------------------------------------------------------

BhResult bh_fdr(std::span<const double> p, double q) {
  for (double v : p) {
    if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("bh_fdr: p-values must lie in [0, 1]");
  }
  const std::size_t m = p.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });
  BhResult r;
  r.q_values.assign(m, 1.0);
  r.significant.assign(m, false);
  double running = 1.0;
  for (std::size_t t = m; t-- > 0;) {
    const double v = static_cast<double>(m) * p[order[t]] / static_cast<double>(t + 1);
    running = std::min(running, v);
    r.q_values[order[t]] = std::clamp(running, 0.0, 1.0);
  }
  for (std::size_t i = 0; i < m; ++i) r.significant[i] = r.q_values[i] < q;
  return r;
}

double cliffs_delta(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw ValidationError("cliffs_delta: both samples must be nonempty");
  double more = 0.0, less = 0.0;
  for (double x : a) {
    for (double y : b) {
      if (x > y) more += 1.0;
      if (x < y) less += 1.0;
    }
  }
  return (more - less) / (static_cast<double>(a.size()) * static_cast<double>(b.size()));
}

namespace {

// Number of arrangements giving each U (count of a > b pairs), sizes m, n.
std::vector<double> exact_u_counts(std::size_t m, std::size_t n) {
  const std::size_t umax = m * n;
  // f[i][j] over u, built row by row.
  std::vector<std::vector<std::vector<double>>> f(m + 1, std::vector<std::vector<double>>(n + 1));
  for (std::size_t i = 0; i <= m; ++i) {
    for (std::size_t j = 0; j <= n; ++j) {
      auto& cur = f[i][j];
      cur.assign(i * j + 1, 0.0);
      if (i == 0 || j == 0) {
        cur[0] = 1.0;
        continue;
      }
      // Largest element is from a (adds j to U) or from b.
      const auto& from_a = f[i - 1][j];
      const auto& from_b = f[i][j - 1];
      for (std::size_t u = 0; u < from_a.size(); ++u) cur[u + j] += from_a[u];
      for (std::size_t u = 0; u < from_b.size(); ++u) cur[u] += from_b[u];
    }
  }
  auto out = f[m][n];
  out.resize(umax + 1, 0.0);
  return out;
}

}  // namespace

SignificanceRecord nonparametric_compare(std::span<const double> a, std::span<const double> b, Direction direction,
                                         std::string metric) {
  if (a.size() < 5 || b.size() < 5) throw ValidationError("nonparametric_compare: at least 5 replicates per side");
  SignificanceRecord r;
  r.metric = std::move(metric);
  r.delta = mean(a) - mean(b);
  if (direction == Direction::lower_better) r.delta = -r.delta;
  r.cliffs_delta = cliffs_delta(a, b);

  const std::size_t m = a.size(), n = b.size();
  double u = 0.0;
  bool ties = false;
  for (double x : a) {
    for (double y : b) {
      if (x > y) u += 1.0;
      if (x == y) {
        u += 0.5;
        ties = true;
      }
    }
  }
  std::vector<double> pooled(a.begin(), a.end());
  pooled.insert(pooled.end(), b.begin(), b.end());
  {
    std::vector<double> sorted = pooled;
    std::sort(sorted.begin(), sorted.end());
    ties = ties || std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end();
  }
  r.u_statistic = u;

  if (m <= 12 && n <= 12 && !ties) {
    r.exact = true;
    const auto counts = exact_u_counts(m, n);
    const double total = std::accumulate(counts.begin(), counts.end(), 0.0);
    const auto ui = static_cast<std::size_t>(std::llround(u));
    double lower = 0.0, upper = 0.0;
    for (std::size_t t = 0; t <= ui; ++t) lower += counts[t];
    for (std::size_t t = ui; t < counts.size(); ++t) upper += counts[t];
    r.p_value = std::min(1.0, 2.0 * std::min(lower, upper) / total);
    return r;
  }

  const double dm = static_cast<double>(m), dn = static_cast<double>(n), big_n = dm + dn;
  std::sort(pooled.begin(), pooled.end());
  double tie_term = 0.0;
  for (std::size_t i = 0; i < pooled.size();) {
    std::size_t j = i;
    while (j < pooled.size() && pooled[j] == pooled[i]) ++j;
    const double t = static_cast<double>(j - i);
    tie_term += t * t * t - t;
    i = j;
  }
  const double var = dm * dn / 12.0 * ((big_n + 1.0) - tie_term / (big_n * (big_n - 1.0)));
  if (!(var > 0.0)) {
    r.p_value = 1.0;
    return r;
  }
  const double dev = std::max(0.0, std::abs(u - dm * dn / 2.0) - 0.5);
  r.p_value = std::min(1.0, std::erfc(dev / std::sqrt(var) / std::sqrt(2.0)));
  return r;
}

void apply_bh(std::vector<SignificanceRecord>& records, double q) {
  std::vector<double> p;
  for (const auto& r : records) p.push_back(r.p_value);
  const auto bh = bh_fdr(p, q);
  for (std::size_t i = 0; i < records.size(); ++i) {
    records[i].q_bh = bh.q_values[i];
    records[i].significant = bh.significant[i];
  }
}

nlohmann::json to_json(const SignificanceRecord& r) {
  return {{"metric", r.metric},   {"delta", r.delta},   {"cliffs_delta", r.cliffs_delta},
          {"u", r.u_statistic},   {"p_value", r.p_value}, {"exact", r.exact},
          {"q_bh", r.q_bh},       {"significant", r.significant}};
}

std::vector<double> adjacent_rank_probability(const Matrix& s) {
  if (s.rows() < 1) throw ValidationError("adjacent_rank_probability: at least one replicate is required");
  if (s.cols() < 2) throw ValidationError("adjacent_rank_probability: at least two features are required");
  const Vector means = s.colwise().mean().transpose();
  const auto order = descending_order(as_span(means));
  std::vector<double> out(order.size() - 1);
  for (std::size_t i = 0; i + 1 < order.size(); ++i) {
    const auto hi = static_cast<Index>(order[i]);
    const auto lo = static_cast<Index>(order[i + 1]);
    out[i] = static_cast<double>((s.col(hi).array() > s.col(lo).array()).count()) / static_cast<double>(s.rows());
  }
  return out;
}

}  // namespace excir
