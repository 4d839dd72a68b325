#include "excir/lightweight_env.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>

namespace excir {

void GateThresholds::validate() const {
  if (!(alpha >= 0.0) || !(gamma >= 0.0) || !(eps_acc >= 0.0)) {
    throw ValidationError("thresholds: alpha, gamma and eps_acc must be >= 0");
  }
  if (!(beta > 0.0 && beta < 1.0)) throw ValidationError("thresholds: beta must lie in (0, 1)");
}

GateThresholds GateThresholds::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("thresholds: JSON object expected");
  GateThresholds t;
  auto read = [&](const char* key, double& field) {
    if (!j.contains(key)) return;
    if (!j[key].is_number()) throw ValidationError(std::string("thresholds: '") + key + "' must be a number");
    field = j[key].get<double>();
  };
  read("alpha", t.alpha);
  read("beta", t.beta);
  read("gamma", t.gamma);
  read("eps_acc", t.eps_acc);
  t.validate();
  return t;
}

nlohmann::json to_json(const GateThresholds& t) {
  return {{"alpha", t.alpha}, {"beta", t.beta}, {"gamma", t.gamma}, {"eps_acc", t.eps_acc}};
}

// ---------------------------------------------------------------------------

std::vector<Index> subsample_indices(Index n, double fraction, std::uint64_t seed,
                                     std::optional<std::span<const double>> strata) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ValidationError("subsample: fraction must lie in (0, 1]");
  if (fraction * static_cast<double>(n) < 2.0) throw ValidationError("subsample: fraction * n must be >= 2");
  const Index m = static_cast<Index>(std::llround(fraction * static_cast<double>(n)));

  std::vector<Index> chosen;
  if (!strata) {
    std::vector<Index> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), Index{0});
    if (m < n) {
      std::mt19937_64 rng(seed);
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(static_cast<std::size_t>(m));
    }
    chosen = std::move(idx);
  } else {
    if (static_cast<Index>(strata->size()) != n) throw ValidationError("subsample: strata length differs from n");
    std::map<double, std::vector<Index>> groups;
    for (Index i = 0; i < n; ++i) groups[(*strata)[static_cast<std::size_t>(i)]].push_back(i);

    // Proportionate allocation, leftover rows by largest remainder.
    std::vector<Index> quota;
    std::vector<std::pair<double, std::size_t>> remainder;
    Index assigned = 0;
    std::size_t g = 0;
    for (const auto& [label, rows] : groups) {
      const double exact = fraction * static_cast<double>(rows.size());
      const Index q = static_cast<Index>(std::floor(exact));
      quota.push_back(q);
      assigned += q;
      remainder.emplace_back(exact - static_cast<double>(q), g++);
    }
    std::stable_sort(remainder.begin(), remainder.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t r = 0; assigned < m && r < remainder.size(); ++r) {
      ++quota[remainder[r].second];
      ++assigned;
    }
    g = 0;
    for (auto& [label, rows] : groups) {
      std::mt19937_64 rng(derive_seed(seed, g));
      std::shuffle(rows.begin(), rows.end(), rng);
      const Index q = std::min<Index>(quota[g], static_cast<Index>(rows.size()));
      chosen.insert(chosen.end(), rows.begin(), rows.begin() + q);
      ++g;
    }
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

std::pair<DataMatrix, OutputBlock> subsample(const DataMatrix& data, const OutputBlock& y, double fraction,
                                             std::uint64_t seed, std::optional<std::span<const double>> strata) {
  if (data.rows() != y.rows()) throw ValidationError("subsample: data and output row counts differ");
  const auto idx = subsample_indices(data.rows(), fraction, seed, strata);
  return {data.select_rows(idx), y.select_rows(idx)};
}

double calibrate_threshold(std::span<const double> benign, double quantile) {
  if (benign.empty()) throw ValidationError("calibrate_threshold: no benign shifts");
  if (!(quantile >= 0.0 && quantile <= 1.0)) throw ValidationError("calibrate_threshold: quantile must lie in [0, 1]");
  std::vector<double> v(benign.begin(), benign.end());
  for (double x : v) {
    if (!std::isfinite(x) || x < 0.0) throw ValidationError("calibrate_threshold: shifts must be finite and >= 0");
  }
  std::sort(v.begin(), v.end());
  const double pos = quantile * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

// ---------------------------------------------------------------------------

ProjectionResult projection_distance(std::span<const double> y_ref, std::span<const double> y_lw) {
  if (y_ref.size() != y_lw.size()) throw ValidationError("projection_distance: length mismatch");
  if (y_ref.size() < 2) throw ValidationError("projection_distance: at least two points are required");
  double norm2 = 0.0;
  for (double v : y_ref) norm2 += v * v;
  if (!(norm2 > 0.0)) throw ValidationError("projection_distance: reference output has zero norm");

  const double mr = mean(y_ref);
  const double ml = mean(y_lw);
  double sll = 0.0, slr = 0.0;
  for (std::size_t i = 0; i < y_ref.size(); ++i) {
    sll += (y_lw[i] - ml) * (y_lw[i] - ml);
    slr += (y_lw[i] - ml) * (y_ref[i] - mr);
  }
  const double a = sll > 0.0 ? slr / sll : 0.0;
  const double b = mr - a * ml;
  double res = 0.0;
  for (std::size_t i = 0; i < y_ref.size(); ++i) {
    const double e = y_ref[i] - a * y_lw[i] - b;
    res += e * e;
  }
  ProjectionResult out;
  out.alpha = Matrix::Constant(1, 1, a);
  out.beta = Vector::Constant(1, b);
  out.d_proj = std::sqrt(res / norm2);
  return out;
}

ProjectionResult projection_distance(const Matrix& y_ref, const Matrix& y_lw) {
  if (y_ref.rows() != y_lw.rows() || y_ref.cols() != y_lw.cols()) {
    throw ValidationError("projection_distance: shape mismatch");
  }
  if (y_ref.cols() == 1) {
    return projection_distance(std::span<const double>(y_ref.data(), static_cast<std::size_t>(y_ref.rows())),
                               std::span<const double>(y_lw.data(), static_cast<std::size_t>(y_lw.rows())));
  }
  const double norm = y_ref.norm();
  if (!(norm > 0.0)) throw ValidationError("projection_distance: reference output has zero norm");
  const Index p = y_ref.cols();
  Matrix design(y_lw.rows(), p + 1);
  design.leftCols(p) = y_lw;
  design.col(p).setOnes();
  const Matrix coef = design.completeOrthogonalDecomposition().solve(y_ref);
  ProjectionResult out;
  out.alpha = coef.topRows(p).transpose();
  out.beta = coef.row(p).transpose();
  out.d_proj = (y_ref - design * coef).norm() / norm;
  return out;
}

// ---------------------------------------------------------------------------

namespace {

Matrix capped_rows(const Matrix& m, std::size_t max_points, std::uint64_t seed) {
  if (static_cast<std::size_t>(m.rows()) <= max_points) return m;
  std::vector<Index> idx(static_cast<std::size_t>(m.rows()));
  std::iota(idx.begin(), idx.end(), Index{0});
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(max_points);
  std::sort(idx.begin(), idx.end());
  Matrix out(static_cast<Index>(max_points), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Index>(i)) = m.row(idx[i]);
  return out;
}

double median_of(std::vector<double> v) {
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lo + hi);
}

// Unbiased and biased MMD^2 for the split given by in_a (true = sample a).
std::pair<double, double> mmd_stat(const Matrix& k, const std::vector<char>& in_a, double m, double n) {
  double saa = 0.0, sbb = 0.0, sab = 0.0, daa = 0.0, dbb = 0.0;
  const Index total = k.rows();
  for (Index j = 0; j < total; ++j) {
    const bool ja = in_a[static_cast<std::size_t>(j)];
    for (Index i = 0; i < total; ++i) {
      const double v = k(i, j);
      const bool ia = in_a[static_cast<std::size_t>(i)];
      if (ia && ja) {
        saa += v;
      } else if (!ia && !ja) {
        sbb += v;
      } else {
        sab += v;
      }
    }
    if (ja) {
      daa += k(j, j);
    } else {
      dbb += k(j, j);
    }
  }
  sab *= 0.5;
  const double unbiased = (saa - daa) / (m * (m - 1.0)) + (sbb - dbb) / (n * (n - 1.0)) - 2.0 * sab / (m * n);
  const double biased = saa / (m * m) + sbb / (n * n) - 2.0 * sab / (m * n);
  return {unbiased, biased};
}

}  // namespace

MmdResult mmd_gate(const Matrix& a_in, const Matrix& b_in, const MmdOptions& options) {
  if (a_in.cols() != b_in.cols()) throw ValidationError("mmd_gate: samples have different dimensions");
  if (a_in.rows() < 2 || b_in.rows() < 2) throw ValidationError("mmd_gate: each sample needs at least 2 points");
  if (options.permutations < 20) throw ValidationError("mmd_gate: permutations must be >= 20");
  if (options.max_points < 2) throw ValidationError("mmd_gate: max_points must be >= 2");
  if (options.bandwidth && !(*options.bandwidth > 0.0)) throw ValidationError("mmd_gate: bandwidth must be > 0");

  const Matrix a = capped_rows(a_in, options.max_points, derive_seed(options.seed, 0xA));
  const Matrix b = capped_rows(b_in, options.max_points, derive_seed(options.seed, 0xB));
  const Index m = a.rows();
  const Index n = b.rows();
  const Index total = m + n;
  Matrix pooled(total, a.cols());
  pooled.topRows(m) = a;
  pooled.bottomRows(n) = b;

  Matrix d2(total, total);
  for (Index j = 0; j < total; ++j) {
    for (Index i = 0; i < total; ++i) d2(i, j) = (pooled.row(i) - pooled.row(j)).squaredNorm();
  }

  MmdResult out;
  if (options.bandwidth) {
    out.bandwidth = *options.bandwidth;
  } else {
    std::vector<double> dists;
    dists.reserve(static_cast<std::size_t>(total * (total - 1) / 2));
    for (Index j = 1; j < total; ++j) {
      for (Index i = 0; i < j; ++i) dists.push_back(std::sqrt(d2(i, j)));
    }
    const double med = median_of(std::move(dists));
    if (med > 0.0) {
      out.bandwidth = med;
    } else {
      out.bandwidth = 1.0;
      out.warning = "median pairwise distance is zero; using bandwidth 1";
    }
  }
  const double inv = 1.0 / (2.0 * out.bandwidth * out.bandwidth);
  const Matrix k = (-d2.array() * inv).exp().matrix();

  std::vector<char> labels(static_cast<std::size_t>(total), 0);
  std::fill(labels.begin(), labels.begin() + m, 1);
  const double dm = static_cast<double>(m);
  const double dn = static_cast<double>(n);
  std::tie(out.mmd2, out.mmd2_biased) = mmd_stat(k, labels, dm, dn);

  std::vector<char> exceed(options.permutations, 0);
  parallel_for(options.permutations, [&](std::size_t r) {
    std::vector<char> perm = labels;
    std::mt19937_64 rng(derive_seed(options.seed, r + 1));
    std::shuffle(perm.begin(), perm.end(), rng);
    exceed[r] = mmd_stat(k, perm, dm, dn).first >= out.mmd2 ? 1 : 0;
  });
  const auto count = std::count(exceed.begin(), exceed.end(), 1);
  out.permutations = options.permutations;
  out.p_value = (1.0 + static_cast<double>(count)) / (static_cast<double>(options.permutations) + 1.0);
  return out;
}

// ---------------------------------------------------------------------------

double kl_gate(std::span<const double> a, std::span<const double> b, const KlOptions& options) {
  if (a.size() < 5 || b.size() < 5) throw ValidationError("kl_gate: each sample needs at least 5 points");
  if (options.grid_points < 64) throw ValidationError("kl_gate: grid_points must be >= 64");
  if (!(options.bandwidth_scale > 0.0)) throw ValidationError("kl_gate: bandwidth_scale must be > 0");

  std::vector<double> pooled(a.begin(), a.end());
  pooled.insert(pooled.end(), b.begin(), b.end());
  const double mu = mean(pooled);
  const double sd = std::sqrt(variance(pooled));
  if (!(sd > 0.0)) return 0.0;

  auto standardized = [&](std::span<const double> x) {
    std::vector<double> z(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) z[i] = (x[i] - mu) / sd;
    return z;
  };
  const auto za = standardized(a);
  const auto zb = standardized(b);
  const double h = options.bandwidth_scale * std::pow(static_cast<double>(std::min(a.size(), b.size())), -0.2);

  const std::size_t g = options.grid_points;
  const double lo = -4.0, hi = 4.0;
  const double dx = (hi - lo) / static_cast<double>(g - 1);
  std::vector<double> pa(g), pb(g);
  const double norm_const = 1.0 / (h * std::sqrt(2.0 * std::acos(-1.0)));
  auto kde = [&](const std::vector<double>& z, std::vector<double>& dens) {
    parallel_for(g, [&](std::size_t t) {
      const double x = lo + dx * static_cast<double>(t);
      double s = 0.0;
      for (double v : z) {
        const double u = (x - v) / h;
        s += std::exp(-0.5 * u * u);
      }
      dens[t] = std::max(1e-12, s * norm_const / static_cast<double>(z.size()));
    });
  };
  kde(za, pa);
  kde(zb, pb);

  auto trapezoid = [&](const std::vector<double>& f) {
    double s = 0.5 * (f.front() + f.back());
    for (std::size_t t = 1; t + 1 < g; ++t) s += f[t];
    return s * dx;
  };
  const double za_mass = trapezoid(pa);
  const double zb_mass = trapezoid(pb);
  std::vector<double> integrand(g);
  for (std::size_t t = 0; t < g; ++t) {
    const double p = pa[t] / za_mass;
    const double q = pb[t] / zb_mass;
    integrand[t] = p * std::log(p / q);
  }
  return std::max(0.0, trapezoid(integrand));
}

double kl_gate(const Matrix& a, const Matrix& b, const KlOptions& options) {
  if (a.cols() != b.cols()) throw ValidationError("kl_gate: samples have different dimensions");
  double total = 0.0;
  for (Index j = 0; j < a.cols(); ++j) {
    total += kl_gate(std::span<const double>(a.col(j).data(), static_cast<std::size_t>(a.rows())),
                     std::span<const double>(b.col(j).data(), static_cast<std::size_t>(b.rows())), options);
  }
  return total;
}

// ---------------------------------------------------------------------------

TaskKind parse_task(std::string_view text) {
  if (text == "classification") return TaskKind::classification;
  if (text == "regression") return TaskKind::regression;
  throw ValidationError("unknown task '" + std::string(text) + "' (expected classification or regression)");
}

std::string_view to_string(TaskKind t) { return t == TaskKind::classification ? "classification" : "regression"; }

namespace {

double accuracy(std::span<const double> truth, const Matrix& pred) {
  std::size_t hits = 0;
  for (Index i = 0; i < pred.rows(); ++i) {
    long decided = 0;
    if (pred.cols() == 1) {
      decided = pred(i, 0) >= 0.5 ? 1 : 0;
    } else {
      Index arg = 0;
      pred.row(i).maxCoeff(&arg);
      decided = static_cast<long>(arg);
    }
    if (decided == std::lround(truth[static_cast<std::size_t>(i)])) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(pred.rows());
}

double mse(std::span<const double> truth, const Matrix& pred) {
  double s = 0.0;
  for (Index i = 0; i < pred.rows(); ++i) {
    const double e = pred(i, 0) - truth[static_cast<std::size_t>(i)];
    s += e * e;
  }
  return s / static_cast<double>(pred.rows());
}

}  // namespace

RiskGap risk_gap(std::span<const double> truth, const Matrix& pred_full, const Matrix& pred_lw, TaskKind task) {
  const auto n = static_cast<Index>(truth.size());
  if (pred_full.rows() != n || pred_lw.rows() != n) throw ValidationError("risk_gap: length mismatch");
  if (n == 0) throw ValidationError("risk_gap: empty evaluation set");
  RiskGap r;
  r.task = task;
  if (task == TaskKind::classification) {
    const double acc_full = accuracy(truth, pred_full);
    const double acc_lw = accuracy(truth, pred_lw);
    r.risk_full = 1.0 - acc_full;
    r.risk_lw = 1.0 - acc_lw;
    if (acc_full > 0.0) {
      r.ratio = acc_lw / acc_full;
    } else {
      r.ratio = acc_lw > 0.0 ? std::numeric_limits<double>::infinity() : 1.0;
    }
  } else {
    if (pred_full.cols() != 1 || pred_lw.cols() != 1) throw ValidationError("risk_gap: regression expects one column");
    r.risk_full = mse(truth, pred_full);
    r.risk_lw = mse(truth, pred_lw);
    r.ratio = std::abs(r.risk_lw - r.risk_full);
  }
  return r;
}

bool risk_passes(const RiskGap& r, double eps_acc) {
  return r.task == TaskKind::classification ? r.ratio >= 1.0 - eps_acc : r.ratio <= eps_acc;
}

GateVerdict decide(const GateStatistics& stats, const GateThresholds& thresholds) {
  GateVerdict v;
  v.proj = stats.d_proj <= thresholds.alpha;
  v.mmd = stats.mmd_p >= thresholds.beta;
  v.kl = stats.kl <= thresholds.gamma;
  v.risk = risk_passes(stats.risk, thresholds.eps_acc);
  v.accept = v.proj && v.mmd && v.kl && v.risk;
  return v;
}

// ---------------------------------------------------------------------------

SampleSizeBounds sample_size_lower_bound(std::optional<double> eps_proj, std::optional<double> eps_mmd,
                                         std::optional<double> eps_kl, double delta, int q,
                                         const BoundConstants& constants) {
  if (!(delta > 0.0 && delta < 1.0)) throw ValidationError("sample size bound: delta must lie in (0, 1)");
  if (q < 1) throw ValidationError("sample size bound: q must be >= 1");
  for (auto e : {eps_proj, eps_mmd, eps_kl}) {
    if (e && !(*e > 0.0)) throw ValidationError("sample size bound: every epsilon must be > 0");
  }
  if (!(constants.c_proj > 0.0 && constants.k_kernel > 0.0 && constants.c_kl > 0.0)) {
    throw ValidationError("sample size bound: constants must be > 0");
  }
  SampleSizeBounds b;
  b.c_proj = constants.c_proj;
  b.k_kernel = constants.k_kernel;
  b.c_kl = constants.c_kl;
  b.delta = delta;
  b.q = q;
  if (eps_proj) {
    b.n_proj = std::ceil(constants.c_proj * constants.c_proj * std::log(3.0 / delta) / (*eps_proj * *eps_proj));
  }
  if (eps_mmd) {
    b.n_mmd = std::ceil(16.0 * constants.k_kernel * constants.k_kernel * std::log(6.0 / delta) / *eps_mmd);
  }
  if (eps_kl) {
    const double exponent = (4.0 + static_cast<double>(q)) / 4.0;
    b.n_kl = std::ceil(std::pow(constants.c_kl * std::log(3.0 / delta) / *eps_kl, exponent));
  }
  b.n_lb = std::max({1.0, b.n_proj, b.n_mmd, b.n_kl});
  return b;
}

SampleSizeBounds combine_requirements(std::span<const double> per_gate) {
  if (per_gate.empty() || per_gate.size() > 3) throw ValidationError("combine_requirements: 1 to 3 gate terms expected");
  SampleSizeBounds b;
  double* slots[] = {&b.n_proj, &b.n_mmd, &b.n_kl};
  for (std::size_t i = 0; i < per_gate.size(); ++i) {
    if (!(per_gate[i] >= 0.0)) throw ValidationError("combine_requirements: requirements must be >= 0");
    *slots[i] = per_gate[i];
  }
  b.n_lb = std::max({1.0, b.n_proj, b.n_mmd, b.n_kl});
  return b;
}

double budget_upper_bound(std::span<const std::pair<double, double>> profile, double t_max) {
  if (profile.empty()) throw ValidationError("budget_upper_bound: empty profile");
  for (std::size_t i = 1; i < profile.size(); ++i) {
    if (!(profile[i].first > profile[i - 1].first)) throw ValidationError("budget_upper_bound: n must be strictly increasing");
    if (profile[i].second < profile[i - 1].second) throw ValidationError("budget_upper_bound: seconds must be nondecreasing");
  }
  double best = 0.0;
  for (const auto& [n, seconds] : profile) {
    if (seconds <= t_max) best = n;
  }
  return best;
}

nlohmann::json to_json(const SampleSizeBounds& b) {
  nlohmann::json j{{"n_proj", b.n_proj}, {"n_mmd", b.n_mmd},   {"n_kl", b.n_kl},
                   {"n_lb", b.n_lb},     {"c_proj", b.c_proj}, {"k_kernel", b.k_kernel},
                   {"c_kl", b.c_kl},     {"delta", b.delta},   {"q", b.q}};
  if (b.n_ub) {
    j["n_ub"] = *b.n_ub;
    j["window_empty"] = b.window_empty();
    if (!b.window_empty()) j["window"] = {b.n_lb, *b.n_ub};
  }
  return j;
}

// ---------------------------------------------------------------------------

LightweightReport gate_check(const GateInputs& in, const GateThresholds& thresholds, const GateOptions& options) {
  thresholds.validate();
  LightweightReport r;
  r.thresholds = thresholds;
  r.n_full = in.full_outputs.rows();
  r.n_lw = in.lw_outputs.rows();

  r.projection = projection_distance(in.eval_pred_full, in.eval_pred_lw);
  r.stats.d_proj = r.projection.d_proj;
  r.mmd = mmd_gate(in.full_outputs, in.lw_outputs, options.mmd);
  r.stats.mmd2 = r.mmd.mmd2;
  r.stats.mmd_p = r.mmd.p_value;
  r.stats.kl = kl_gate(in.full_outputs, in.lw_outputs, options.kl);
  r.stats.risk = risk_gap(as_span(in.eval_truth), in.eval_pred_full, in.eval_pred_lw, in.task);
  r.verdict = decide(r.stats, thresholds);
  return r;
}

nlohmann::json to_json(const LightweightReport& r) {
  nlohmann::json j;
  j["projection"] = {{"d_proj", r.stats.d_proj}, {"pass", r.verdict.proj}};
  j["mmd"] = {{"mmd2", r.stats.mmd2},
              {"mmd2_biased", r.mmd.mmd2_biased},
              {"p_value", r.stats.mmd_p},
              {"bandwidth", r.mmd.bandwidth},
              {"permutations", r.mmd.permutations},
              {"pass", r.verdict.mmd}};
  if (!r.mmd.warning.empty()) j["mmd"]["warning"] = r.mmd.warning;
  j["kl"] = {{"kl", r.stats.kl}, {"pass", r.verdict.kl}};
  j["risk"] = {{"task", std::string(to_string(r.stats.risk.task))},
               {"risk_full", r.stats.risk.risk_full},
               {"risk_lw", r.stats.risk.risk_lw},
               {"ratio", r.stats.risk.ratio},
               {"pass", r.verdict.risk}};
  j["thresholds"] = to_json(r.thresholds);
  j["verdict"] = r.verdict.accept ? "accept" : "reject";
  j["n_full"] = r.n_full;
  j["n_lw"] = r.n_lw;
  if (r.bounds) j["sample_size"] = to_json(*r.bounds);
  return j;
}

}  // namespace excir
