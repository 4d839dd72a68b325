#include "excir/eval_harness.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>

namespace excir {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

Matrix sigmoid(const Matrix& z) { return (1.0 + (-z.array()).exp()).inverse().matrix(); }

Matrix softmax_rows(const Matrix& z) {
  Matrix p = z;
  for (Index i = 0; i < p.rows(); ++i) {
    const double mx = p.row(i).maxCoeff();
    p.row(i) = (p.row(i).array() - mx).exp();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

int label_of(double v) {
  const long l = std::lround(v);
  if (l < 0 || static_cast<double>(l) != v) {
    throw ValidationError("reference model: class labels must be nonnegative integers");
  }
  return static_cast<int>(l);
}

}  // namespace

Matrix ReferenceModel::decision_standardized(const Matrix& z) const {
  if (z.cols() != features()) throw ValidationError("reference model: input has the wrong number of columns");
  Matrix out = z * weights;
  out.rowwise() += bias.transpose();
  return out;
}

Matrix ReferenceModel::decision(const Matrix& x) const {
  if (features() == 0) return decision_standardized(Matrix(x.rows(), 0));
  return decision_standardized(standardize(x, standardization));
}

Matrix ReferenceModel::predict_scores(const Matrix& x) const {
  const Matrix d = decision(x);
  if (task == TaskKind::regression) return d;
  return n_classes == 2 ? sigmoid(d) : softmax_rows(d);
}

Vector ReferenceModel::predict(const Matrix& x) const {
  if (features() == 0) return Vector::Constant(x.rows(), fallback);
  const Matrix d = decision(x);
  if (task == TaskKind::regression) return d.col(0);
  Vector out(d.rows());
  for (Index i = 0; i < d.rows(); ++i) {
    if (n_classes == 2) {
      out[i] = d(i, 0) >= 0.0 ? 1.0 : 0.0;
    } else {
      Index arg = 0;
      d.row(i).maxCoeff(&arg);
      out[i] = static_cast<double>(arg);
    }
  }
  return out;
}

ReferenceModel train_reference(const Matrix& x, std::span<const double> labels, TaskKind task,
                               const TrainConfig& config) {
  const Index n = x.rows();
  const Index k = x.cols();
  if (static_cast<std::size_t>(n) != labels.size()) throw ValidationError("train_reference: label count differs from rows");
  if (n < 2) throw ValidationError("train_reference: at least two rows are required");
  if (config.iterations < 1 || !(config.step > 0.0) || !(config.l2 >= 0.0)) {
    throw ValidationError("train_reference: invalid training configuration");
  }
  ReferenceModel model;
  model.task = task;
  model.config = config;
  const Vector y = to_vector(labels);

  if (task == TaskKind::regression) {
    model.n_classes = 0;
    model.fallback = y.mean();
    model.bias = Vector::Constant(1, model.fallback);
    if (k == 0) {
      model.weights = Matrix(0, 1);
      return model;
    }
    model.standardization = StandardizationParams::fit(x);
    const Matrix z = standardize(x, model.standardization);
    const double dn = static_cast<double>(n);
    const Matrix a = z.transpose() * z / dn + config.l2 * Matrix::Identity(k, k);
    const Vector rhs = z.transpose() * (y.array() - model.fallback).matrix() / dn;
    model.weights = a.ldlt().solve(rhs);
    return model;
  }

  std::map<int, Index> counts;
  int max_label = 0;
  for (double v : labels) {
    const int l = label_of(v);
    ++counts[l];
    max_label = std::max(max_label, l);
  }
  if (counts.size() < 2) throw ValidationError("train_reference: training set has a single class");
  model.n_classes = max_label + 1;
  Index best = -1;
  for (const auto& [label, c] : counts) {
    if (c > best) {
      best = c;
      model.fallback = label;
    }
  }
  const Index cols = model.n_classes == 2 ? 1 : model.n_classes;
  model.weights = Matrix::Zero(k, cols);
  model.bias = Vector::Zero(cols);
  if (k == 0) return model;

  model.standardization = StandardizationParams::fit(x);
  const Matrix z = standardize(x, model.standardization);
  Matrix target = Matrix::Zero(n, cols);
  for (Index i = 0; i < n; ++i) {
    const int l = label_of(labels[static_cast<std::size_t>(i)]);
    if (cols == 1) {
      target(i, 0) = l;
    } else {
      target(i, l) = 1.0;
    }
  }
  const double dn = static_cast<double>(n);
  for (int it = 0; it < config.iterations; ++it) {
    Matrix logits = z * model.weights;
    logits.rowwise() += model.bias.transpose();
    const Matrix resid = (cols == 1 ? sigmoid(logits) : softmax_rows(logits)) - target;
    const Matrix grad_w = z.transpose() * resid / dn + config.l2 * model.weights;
    const Vector grad_b = resid.colwise().mean().transpose();
    model.weights -= config.step * grad_w;
    model.bias -= config.step * grad_b;
  }
  return model;
}

double evaluate(const ReferenceModel& model, const Matrix& x, std::span<const double> truth) {
  if (static_cast<std::size_t>(x.rows()) != truth.size()) throw ValidationError("evaluate: label count differs from rows");
  const Vector pred = model.predict(x);
  const Index n = x.rows();
  if (model.task == TaskKind::classification) {
    Index hits = 0;
    for (Index i = 0; i < n; ++i) hits += pred[i] == truth[static_cast<std::size_t>(i)] ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(n);
  }
  const double m = mean(truth);
  double sse = 0.0, sst = 0.0;
  for (Index i = 0; i < n; ++i) {
    const double t = truth[static_cast<std::size_t>(i)];
    sse += (t - pred[i]) * (t - pred[i]);
    sst += (t - m) * (t - m);
  }
  return sst > 0.0 ? 1.0 - sse / sst : 0.0;
}

std::pair<Vector, double> raw_coefficients(const ReferenceModel& model) {
  if (model.task != TaskKind::regression) throw ValidationError("raw_coefficients: regression model expected");
  const Index k = model.features();
  Vector slope = Vector::Zero(k);
  double intercept = model.bias[0];
  for (Index j = 0; j < k; ++j) {
    if (model.standardization.constant[static_cast<std::size_t>(j)]) continue;
    slope[j] = model.weights(j, 0) / model.standardization.sd[j];
    intercept -= slope[j] * model.standardization.mean[j];
  }
  return {slope, intercept};
}

Matrix select_columns(const Matrix& x, std::span<const Index> cols) {
  Matrix out(x.rows(), static_cast<Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) {
    if (cols[j] < 0 || cols[j] >= x.cols()) throw ValidationError("select_columns: column index out of range");
    out.col(static_cast<Index>(j)) = x.col(cols[j]);
  }
  return out;
}

Split train_test_split(const Matrix& x, std::span<const double> y, double test_fraction, std::uint64_t seed) {
  if (static_cast<std::size_t>(x.rows()) != y.size()) throw ValidationError("train_test_split: length mismatch");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ValidationError("train_test_split: fraction must lie in (0, 1)");
  const Index n = x.rows();
  std::vector<Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Index{0});
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  const Index n_test = static_cast<Index>(std::llround(test_fraction * static_cast<double>(n)));
  if (n_test < 1 || n - n_test < 2) throw ValidationError("train_test_split: split leaves too few rows");
  Split s;
  s.x_train.resize(n - n_test, x.cols());
  s.y_train.resize(n - n_test);
  s.x_test.resize(n_test, x.cols());
  s.y_test.resize(n_test);
  for (Index i = 0; i < n; ++i) {
    const Index src = idx[static_cast<std::size_t>(i)];
    if (i < n - n_test) {
      s.x_train.row(i) = x.row(src);
      s.y_train[i] = y[static_cast<std::size_t>(src)];
    } else {
      s.x_test.row(i - (n - n_test)) = x.row(src);
      s.y_test[i - (n - n_test)] = y[static_cast<std::size_t>(src)];
    }
  }
  return s;
}

// ---------------------------------------------------------------------------

std::vector<double> default_fractions() {
  std::vector<double> f;
  for (int i = 0; i <= 8; ++i) f.push_back(i / 8.0);
  return f;
}

namespace {

double trapezoid(const std::vector<double>& x, const std::vector<double>& y) {
  double area = 0.0;
  for (std::size_t i = 1; i < x.size(); ++i) area += 0.5 * (x[i] - x[i - 1]) * (y[i] + y[i - 1]);
  const double span = x.back() - x.front();
  return span > 0.0 ? area / span : y.front();
}

std::size_t count_for(double fraction, std::size_t k) {
  return static_cast<std::size_t>(std::llround(fraction * static_cast<double>(k)));
}

void check_ranking(std::span<const std::size_t> ranking, Index k) {
  if (ranking.empty()) throw ValidationError("ranking is empty");
  std::vector<bool> seen(static_cast<std::size_t>(k), false);
  for (auto f : ranking) {
    if (f >= static_cast<std::size_t>(k)) throw ValidationError("ranking references a feature out of range");
    if (seen[f]) throw ValidationError("ranking lists a feature twice");
    seen[f] = true;
  }
}

}  // namespace

FaithfulnessCurves faithfulness_curves(const ReferenceModel& model, std::span<const std::size_t> ranking,
                                       const Matrix& x_test, std::span<const double> y_test,
                                       std::vector<double> fractions) {
  const Index k = x_test.cols();
  check_ranking(ranking, k);
  if (model.features() != k) throw ValidationError("faithfulness_curves: model and data disagree on k");
  if (fractions.size() < 2) throw ValidationError("faithfulness_curves: at least two fractions are required");
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    if (!(fractions[i] >= 0.0 && fractions[i] <= 1.0) || (i > 0 && !(fractions[i] > fractions[i - 1]))) {
      throw ValidationError("faithfulness_curves: fractions must increase within [0, 1]");
    }
  }
  const std::size_t kr = ranking.size();
  FaithfulnessCurves c;
  c.fractions = fractions;
  c.deletion.resize(fractions.size());
  c.insertion.resize(fractions.size());
  parallel_for(fractions.size(), [&](std::size_t s) {
    const std::size_t m = count_for(fractions[s], kr);
    Matrix del = x_test;
    Matrix ins = x_test;
    std::vector<bool> top(static_cast<std::size_t>(k), false);
    for (std::size_t t = 0; t < m; ++t) top[ranking[t]] = true;
    for (Index j = 0; j < k; ++j) {
      const double fill = model.standardization.mean.size() ? model.standardization.mean[j] : 0.0;
      if (top[static_cast<std::size_t>(j)]) {
        del.col(j).setConstant(fill);
      } else {
        ins.col(j).setConstant(fill);
      }
    }
    c.deletion[s] = evaluate(model, del, y_test);
    c.insertion[s] = evaluate(model, ins, y_test);
  });
  c.aopc_insertion = trapezoid(c.fractions, c.insertion);
  c.deletion_area = trapezoid(c.fractions, c.deletion);
  return c;
}

nlohmann::json to_json(const FaithfulnessCurves& c) {
  nlohmann::json del = nlohmann::json::array(), ins = nlohmann::json::array();
  for (std::size_t i = 0; i < c.fractions.size(); ++i) {
    del.push_back({c.fractions[i], c.deletion[i]});
    ins.push_back({c.fractions[i], c.insertion[i]});
  }
  return {{"deletion", del},
          {"insertion", ins},
          {"aopc_insertion", c.aopc_insertion},
          {"deletion_area", c.deletion_area}};
}

std::vector<double> topk_sufficiency(std::span<const std::size_t> ranking, const Split& split, TaskKind task,
                                     std::span<const std::size_t> ks, const TrainConfig& config) {
  check_ranking(ranking, split.x_train.cols());
  std::vector<double> out(ks.size());
  parallel_for(ks.size(), [&](std::size_t i) {
    if (ks[i] > ranking.size()) throw ValidationError("topk_sufficiency: k exceeds the ranking length");
    std::vector<Index> cols(ranking.begin(), ranking.begin() + static_cast<std::ptrdiff_t>(ks[i]));
    const auto model = train_reference(select_columns(split.x_train, cols), as_span(split.y_train), task, config);
    out[i] = evaluate(model, select_columns(split.x_test, cols), as_span(split.y_test));
  });
  return out;
}

std::vector<double> necessity_curve(std::span<const std::size_t> ranking, const Split& split, TaskKind task,
                                    std::span<const std::size_t> ms, const TrainConfig& config) {
  const Index k = split.x_train.cols();
  check_ranking(ranking, k);
  std::vector<double> out(ms.size());
  parallel_for(ms.size(), [&](std::size_t i) {
    if (ms[i] > ranking.size()) throw ValidationError("necessity_curve: m exceeds the ranking length");
    std::vector<bool> removed(static_cast<std::size_t>(k), false);
    for (std::size_t t = 0; t < ms[i]; ++t) removed[ranking[t]] = true;
    std::vector<Index> cols;
    for (Index j = 0; j < k; ++j) {
      if (!removed[static_cast<std::size_t>(j)]) cols.push_back(j);
    }
    const auto model = train_reference(select_columns(split.x_train, cols), as_span(split.y_train), task, config);
    out[i] = evaluate(model, select_columns(split.x_test, cols), as_span(split.y_test));
  });
  return out;
}

std::vector<double> precision_at_k(std::span<const std::size_t> ranking, std::span<const std::size_t> truth,
                                   std::span<const std::size_t> ks) {
  if (truth.empty()) throw ValidationError("precision_at_k: ground truth is empty");
  std::vector<double> out;
  for (auto k : ks) {
    if (k < 1 || k > ranking.size()) throw ValidationError("precision_at_k: k must lie in [1, ranking length]");
    std::size_t hits = 0;
    for (std::size_t t = 0; t < k; ++t) {
      hits += std::find(truth.begin(), truth.end(), ranking[t]) != truth.end() ? 1 : 0;
    }
    out.push_back(static_cast<double>(hits) / static_cast<double>(k));
  }
  return out;
}

// ---------------------------------------------------------------------------

std::vector<NoiseLevelResult> noise_robustness(const Matrix& x, std::span<const double> y,
                                               std::span<const double> sigma_levels, std::size_t reps,
                                               std::uint64_t seed, std::size_t head_k, CirMode mode) {
  if (reps < 1) throw ValidationError("noise_robustness: reps must be >= 1");
  for (double s : sigma_levels) {
    if (!(s >= 0.0)) throw ValidationError("noise_robustness: sigma must be >= 0");
  }
  const Matrix z = standardize(x, StandardizationParams::fit(x));
  const auto k = static_cast<std::size_t>(x.cols());
  const Vector base = eta_by_feature(score_all_features(z, y, mode), k);

  std::vector<NoiseLevelResult> out(sigma_levels.size());
  for (std::size_t l = 0; l < sigma_levels.size(); ++l) {
    out[l].sigma = sigma_levels[l];
    out[l].reps.resize(reps);
    parallel_for(reps, [&](std::size_t r) {
      std::mt19937_64 rng(derive_seed(seed, l * reps + r));
      std::normal_distribution<double> noise(0.0, 1.0);
      Matrix noisy = z;
      if (sigma_levels[l] > 0.0) {
        for (Index j = 0; j < noisy.cols(); ++j) {
          for (Index i = 0; i < noisy.rows(); ++i) noisy(i, j) += sigma_levels[l] * noise(rng);
        }
      }
      const Vector scored = eta_by_feature(score_all_features(noisy, y, mode), k);
      out[l].reps[r] = rank_agreement(as_span(base), as_span(scored), head_k);
    });
    std::vector<double> jac, tau;
    for (const auto& a : out[l].reps) {
      jac.push_back(a.jaccard_topk);
      tau.push_back(a.kendall_tau_full);
    }
    std::sort(jac.begin(), jac.end());
    out[l].median_jaccard = jac.size() % 2 ? jac[jac.size() / 2] : 0.5 * (jac[jac.size() / 2 - 1] + jac[jac.size() / 2]);
    out[l].mean_tau_full = mean(tau);
  }
  return out;
}

std::vector<DriftEntry> drift_delta(std::span<const double> base, std::span<const double> drift) {
  if (base.size() != drift.size()) throw ValidationError("drift_delta: length mismatch");
  std::vector<DriftEntry> out(base.size());
  for (std::size_t i = 0; i < base.size(); ++i) out[i] = {i, drift[i] - base[i]};
  std::stable_sort(out.begin(), out.end(), [](const DriftEntry& a, const DriftEntry& b) {
    return std::abs(a.delta) > std::abs(b.delta);
  });
  return out;
}

SensitivityResult sensitivity_probe(const ReferenceModel& model, const Matrix& x, std::span<const double> eta,
                                    std::span<const double> delta_grid) {
  const Index k = x.cols();
  if (model.features() != k || static_cast<std::size_t>(k) != eta.size()) {
    throw ValidationError("sensitivity_probe: model, data and scores disagree on k");
  }
  if (delta_grid.empty()) throw ValidationError("sensitivity_probe: empty delta grid");
  for (double d : delta_grid) {
    if (d == 0.0 || !std::isfinite(d)) throw ValidationError("sensitivity_probe: deltas must be finite and nonzero");
  }
  const Matrix z = standardize(x, model.standardization);
  const Matrix g0 = model.decision_standardized(z);
  SensitivityResult r;
  r.slopes.assign(static_cast<std::size_t>(k), 0.0);
  parallel_for(static_cast<std::size_t>(k), [&](std::size_t i) {
    double total = 0.0;
    for (double d : delta_grid) {
      Matrix zp = z;
      zp.col(static_cast<Index>(i)).array() += d;
      const Matrix g = model.decision_standardized(zp);
      total += ((g - g0).cwiseAbs().rowwise().sum() / static_cast<double>(g.cols())).sum() / std::abs(d);
    }
    r.slopes[i] = total / (static_cast<double>(z.rows()) * static_cast<double>(delta_grid.size()));
  });
  r.spearman = spearman_rho(r.slopes, eta);
  if (std::isnan(r.spearman)) r.flag = "degenerate";
  return r;
}

PermutationImportance permutation_importance(const ReferenceModel& model, const Matrix& x,
                                             std::span<const double> truth, std::size_t reps, std::uint64_t seed) {
  if (reps < 1) throw ValidationError("permutation_importance: reps must be >= 1");
  const Index k = x.cols();
  const double baseline = evaluate(model, x, truth);
  PermutationImportance out;
  out.drops.resize(static_cast<Index>(reps), k);
  parallel_for(static_cast<std::size_t>(k) * reps, [&](std::size_t t) {
    const std::size_t j = t / reps;
    const std::size_t r = t % reps;
    std::vector<Index> order(static_cast<std::size_t>(x.rows()));
    std::iota(order.begin(), order.end(), Index{0});
    std::mt19937_64 rng(derive_seed(seed, t));
    std::shuffle(order.begin(), order.end(), rng);
    Matrix shuffled = x;
    for (Index i = 0; i < x.rows(); ++i) shuffled(i, static_cast<Index>(j)) = x(order[static_cast<std::size_t>(i)], static_cast<Index>(j));
    out.drops(static_cast<Index>(r), static_cast<Index>(j)) = baseline - evaluate(model, shuffled, truth);
  });
  for (Index j = 0; j < k; ++j) {
    const Vector col = out.drops.col(j);
    out.mean_drop.push_back(col.mean());
    out.standard_error.push_back(reps > 1 ? std::sqrt(variance(as_span(col)) / static_cast<double>(reps)) : kNaN);
  }
  return out;
}

}  // namespace excir
