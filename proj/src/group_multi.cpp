#include "excir/group_multi.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

namespace excir {

namespace {

CirScore safe_score(std::span<const double> f, std::span<const double> y, CirMode mode, std::size_t feature) {
  CirScore s;
  try {
    s = cir_score(f, y, mode);
  } catch (const DegenerateInputError&) {
    s = CirScore{};
    s.mode = mode;
    s.flag = "degenerate";
  }
  s.feature = feature;
  return s;
}

std::span<const double> span_of(const Vector& v) { return as_span(v); }

std::span<const double> column_span(const Matrix& m, Index j) {
  return {m.col(j).data(), static_cast<std::size_t>(m.rows())};
}

Matrix block_columns(const Matrix& x, const std::vector<Index>& members) {
  Matrix out(x.rows(), static_cast<Index>(members.size()));
  for (std::size_t j = 0; j < members.size(); ++j) out.col(static_cast<Index>(j)) = x.col(members[j]);
  return out;
}

void sort_by_score(std::vector<CirScore>& scores) {
  std::stable_sort(scores.begin(), scores.end(), [](const CirScore& a, const CirScore& b) {
    if (a.eta != b.eta) return a.eta > b.eta;
    return a.feature < b.feature;
  });
}

double output_ridge(const Matrix& sigma_y) { return 1e-6 * sigma_y.trace() / static_cast<double>(sigma_y.rows()); }

Matrix population_cov(const Matrix& y) {
  const Matrix yc = y.rowwise() - y.colwise().mean();
  return (yc.transpose() * yc) / static_cast<double>(y.rows());
}

}  // namespace

// ---------------------------------------------------------------------------

void BlockSpec::validate(Index k) const {
  std::set<std::string> names;
  std::set<Index> seen;
  for (const auto& g : groups) {
    if (g.members.empty()) throw ValidationError("block spec: group '" + g.name + "' is empty");
    if (!names.insert(g.name).second) throw ValidationError("block spec: duplicate group name '" + g.name + "'");
    for (Index i : g.members) {
      if (i < 0 || i >= k) {
        throw ValidationError("block spec: group '" + g.name + "' references feature " + std::to_string(i) +
                              " but k = " + std::to_string(k));
      }
      if (!seen.insert(i).second) {
        throw ValidationError("block spec: feature " + std::to_string(i) + " appears in more than one group");
      }
    }
  }
}

std::vector<FeatureGroup> BlockSpec::resolve(const std::vector<std::string>& feature_names) const {
  const Index k = static_cast<Index>(feature_names.size());
  validate(k);
  std::vector<FeatureGroup> out = groups;
  std::vector<bool> covered(static_cast<std::size_t>(k), false);
  for (const auto& g : groups) {
    for (Index i : g.members) covered[static_cast<std::size_t>(i)] = true;
  }
  for (Index i = 0; i < k; ++i) {
    if (!covered[static_cast<std::size_t>(i)]) out.push_back({feature_names[static_cast<std::size_t>(i)], {i}});
  }
  return out;
}

BlockSpec BlockSpec::from_json(const nlohmann::json& j, const std::vector<std::string>& feature_names) {
  if (!j.is_object() || !j.contains("blocks") || !j["blocks"].is_object()) {
    throw ValidationError("block spec: expected {\"blocks\": {\"name\": [indices...]}}");
  }
  BlockSpec spec;
  for (const auto& [name, members] : j["blocks"].items()) {
    if (!members.is_array()) throw ValidationError("block spec: members of '" + name + "' must be an array");
    FeatureGroup g{name, {}};
    for (const auto& m : members) {
      if (m.is_number_integer()) {
        g.members.push_back(m.get<Index>());
      } else if (m.is_string()) {
        const auto it = std::find(feature_names.begin(), feature_names.end(), m.get<std::string>());
        if (it == feature_names.end()) {
          throw ValidationError("block spec: unknown feature '" + m.get<std::string>() + "' in '" + name + "'");
        }
        g.members.push_back(static_cast<Index>(it - feature_names.begin()));
      } else {
        throw ValidationError("block spec: member of '" + name + "' is neither an index nor a name");
      }
    }
    spec.groups.push_back(std::move(g));
  }
  if (!feature_names.empty()) spec.validate(static_cast<Index>(feature_names.size()));
  return spec;
}

BlockSpec BlockSpec::load(const std::filesystem::path& path, const std::vector<std::string>& feature_names) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open block spec " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("block spec " + path.string() + ": " + e.what());
  }
  return from_json(j, feature_names);
}

// ---------------------------------------------------------------------------

std::vector<GroupScore> block_cir(const DataMatrix& data, const OutputBlock& y, const BlockSpec& blocks, CirMode mode,
                                  const BlockOptions& options) {
  if (y.rows() != data.rows()) throw ValidationError("block_cir: data and output row counts differ");
  if (options.pairs < 1) throw ValidationError("block_cir: pairs must be >= 1");
  const auto groups = blocks.resolve(data.feature_names());
  const Matrix& yv = y.values();
  std::vector<GroupScore> out(groups.size());

  parallel_for(groups.size(), [&](std::size_t gi) {
    const auto& g = groups[gi];
    GroupScore gs;
    gs.name = g.name;
    gs.members = g.members;
    const Matrix raw = block_columns(data.values(), g.members);
    const Matrix xb = standardize(raw, StandardizationParams::fit(raw));
    const CovarianceBlocks cov = covariance_blocks(xb, yv, options.ridge);

    std::vector<CanonicalPair> pairs;
    if (y.dim() == 1) {
      CanonicalPair pair;
      pair.w = scalar_output_direction(cov);
      pair.u = Vector::Ones(1);
      pair.ridge = cov.ridge;
      const double sd_y = std::sqrt(cov.sigma_y(0, 0) + cov.ridge);
      pair.u[0] = 1.0 / sd_y;
      pair.rho = std::clamp(pair.w.dot(cov.gamma.col(0)) / sd_y, 0.0, 1.0);
      pairs.push_back(pair);
    } else {
      pairs = top_canonical_pairs(cov, std::min<Index>(options.pairs, std::min(xb.cols(), yv.cols())));
    }

    // Target for pair j: y itself for scalar output, s_j = Y u_j otherwise.
    auto target_for = [&](const CanonicalPair& pair) -> Vector {
      if (y.dim() == 1) return yv.col(0);
      return yv * pair.u;
    };

    // Variates are scored at unit sample variance, whatever the ridge did to w.
    auto variate = [&](const CanonicalPair& pair) -> Vector {
      Vector z = xb * pair.w;
      const double sd = std::sqrt((z.array() - z.mean()).square().mean());
      if (sd > 0.0) z /= sd;
      return z;
    };

    const Vector s0 = target_for(pairs.front());
    const Vector z0 = variate(pairs.front());
    gs.eta = safe_score(span_of(z0), span_of(s0), mode, gi);
    gs.canonical = pairs.front();
    gs.aggregate = gs.eta.eta;
    for (std::size_t j = 1; j < pairs.size(); ++j) {
      const Vector s = target_for(pairs[j]);
      const Vector z = variate(pairs[j]);
      const double eta = safe_score(span_of(z), span_of(s), mode, gi).eta;
      gs.aggregate = options.aggregation == Aggregation::sum ? gs.aggregate + eta : std::max(gs.aggregate, eta);
    }
    for (Index j = 0; j < xb.cols(); ++j) {
      gs.member_etas.push_back(
          safe_score(column_span(xb, j), span_of(s0), mode, static_cast<std::size_t>(g.members[static_cast<std::size_t>(j)])));
    }
    out[gi] = std::move(gs);
  });

  std::stable_sort(out.begin(), out.end(),
                   [](const GroupScore& a, const GroupScore& b) { return a.aggregate > b.aggregate; });
  return out;
}

nlohmann::json to_json(const GroupScore& g, const std::vector<std::string>& names) {
  nlohmann::json j;
  j["block"] = g.name;
  j["members"] = g.members;
  j["eta"] = g.eta.eta;
  j["aggregate"] = g.aggregate;
  j["mode"] = std::string(to_string(g.eta.mode));
  j["rho"] = g.canonical.rho;
  j["ridge"] = g.canonical.ridge;
  j["w"] = std::vector<double>(g.canonical.w.data(), g.canonical.w.data() + g.canonical.w.size());
  j["u"] = std::vector<double>(g.canonical.u.data(), g.canonical.u.data() + g.canonical.u.size());
  if (!g.eta.flag.empty()) j["flag"] = g.eta.flag;
  j["member_etas"] = to_json(g.member_etas, names);
  return j;
}

// ---------------------------------------------------------------------------

ClassSelector parse_class_selector(std::string_view text) {
  if (text == "unit_axis" || text == "unit-axis") return ClassSelector::unit_axis;
  if (text == "cca_constrained" || text == "cca-constrained" || text == "cca") return ClassSelector::cca_constrained;
  throw ValidationError("unknown class selector '" + std::string(text) + "' (expected unit_axis or cca_constrained)");
}

std::string_view to_string(ClassSelector s) {
  return s == ClassSelector::unit_axis ? "unit_axis" : "cca_constrained";
}

Vector ridge_output_direction(const Matrix& y, std::span<const double> f, double lambda) {
  if (static_cast<std::size_t>(y.rows()) != f.size()) throw ValidationError("ridge_output_direction: length mismatch");
  if (!(lambda >= 0.0)) throw ValidationError("ridge_output_direction: lambda must be >= 0");
  const double n = static_cast<double>(y.rows());
  const Matrix yc = y.rowwise() - y.colwise().mean();
  const Matrix sigma = (yc.transpose() * yc) / n;
  const double fm = mean(f);
  Vector g = Vector::Zero(y.cols());
  for (Index i = 0; i < y.rows(); ++i) g += yc.row(i).transpose() * (f[static_cast<std::size_t>(i)] - fm);
  g /= n;
  if (g.isZero(0.0)) return Vector::Zero(y.cols());
  const Matrix a = sigma + lambda * Matrix::Identity(y.cols(), y.cols());
  Eigen::LDLT<Matrix> ldlt(a);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
    throw NumericalError("ridge_output_direction: output covariance is not positive definite");
  }
  Vector w = ldlt.solve(g);
  const double var = w.dot(sigma * w);
  if (!(var > 0.0)) throw DegenerateInputError("ridge_output_direction: projected output has zero variance");
  return w / std::sqrt(var);
}

std::vector<CirScore> cc_cir(const DataMatrix& data, const OutputBlock& y, Index c, ClassSelector selector,
                             CirMode mode, std::optional<double> lambda) {
  if (y.rows() != data.rows()) throw ValidationError("cc_cir: data and output row counts differ");
  if (c < 0 || c >= y.dim()) {
    throw ValidationError("cc_cir: class " + std::to_string(c) + " out of range for p = " + std::to_string(y.dim()));
  }
  if (selector == ClassSelector::unit_axis) {
    const auto col = y.column(c);
    const auto [lo, hi] = std::minmax_element(col.begin(), col.end());
    if (*lo == *hi) throw DegenerateInputError("cc_cir: logit column " + std::to_string(c) + " is constant");
    return score_all_features(data.values(), col, mode);
  }
  const Matrix& yv = y.values();
  const double lam = lambda ? *lambda : output_ridge(population_cov(yv));
  const std::size_t k = static_cast<std::size_t>(data.cols());
  std::vector<CirScore> scores(k);
  parallel_for(k, [&](std::size_t i) {
    const auto f = data.column(static_cast<Index>(i));
    const Vector w = ridge_output_direction(yv, f, lam);
    if (w.isZero(0.0)) {
      scores[i] = CirScore{};
      scores[i].feature = i;
      scores[i].mode = mode;
      scores[i].flag = "degenerate";
      return;
    }
    const Vector target = yv * w;
    scores[i] = safe_score(f, span_of(target), mode, i);
  });
  sort_by_score(scores);
  return scores;
}

// ---------------------------------------------------------------------------

WeightScheme parse_weight_scheme(std::string_view text) {
  if (text == "uniform") return WeightScheme::uniform;
  if (text == "per_output_corr" || text == "per-output-corr") return WeightScheme::per_output_corr;
  if (text == "canonical_projection" || text == "canonical-projection" || text == "canonical") {
    return WeightScheme::canonical_projection;
  }
  if (text == "fixed") return WeightScheme::fixed;
  throw ValidationError("unknown weight scheme '" + std::string(text) + "'");
}

std::string_view to_string(WeightScheme s) {
  switch (s) {
    case WeightScheme::uniform: return "uniform";
    case WeightScheme::per_output_corr: return "per_output_corr";
    case WeightScheme::canonical_projection: return "canonical_projection";
    case WeightScheme::fixed: return "fixed";
  }
  return "uniform";
}

std::vector<MultiOutputScore> mo_excir(const DataMatrix& data, const OutputBlock& y, const WeightVector& weights,
                                       CirMode mode, std::optional<double> lambda) {
  if (y.rows() != data.rows()) throw ValidationError("mo_excir: data and output row counts differ");
  const Index p = y.dim();
  if (weights.scheme == WeightScheme::fixed) {
    if (weights.alpha.size() != p) {
      throw ValidationError("mo_excir: weight vector has length " + std::to_string(weights.alpha.size()) +
                            ", expected p = " + std::to_string(p));
    }
    if ((weights.alpha.array() < 0.0).any()) throw ValidationError("mo_excir: weights must be nonnegative");
    if (std::abs(weights.alpha.sum() - 1.0) > 1e-12) throw ValidationError("mo_excir: weights must sum to 1");
  }
  const Matrix& yv = y.values();
  const double lam = lambda ? *lambda : output_ridge(population_cov(yv));
  const std::size_t k = static_cast<std::size_t>(data.cols());
  std::vector<MultiOutputScore> out(k);

  parallel_for(k, [&](std::size_t i) {
    const auto f = data.column(static_cast<Index>(i));
    MultiOutputScore s;
    s.feature = i;
    s.mode = mode;
    s.per_output.resize(static_cast<std::size_t>(p));
    for (Index l = 0; l < p; ++l) {
      const CirScore c = safe_score(f, y.column(l), mode, i);
      s.per_output[static_cast<std::size_t>(l)] = c.eta;
      if (!c.flag.empty()) s.flag = c.flag;
    }

    const Vector w = ridge_output_direction(yv, f, lam);
    if (!w.isZero(0.0)) {
      const Vector target = yv * w;
      s.canonical_projection = safe_score(f, span_of(target), mode, i).eta;
    }

    switch (weights.scheme) {
      case WeightScheme::uniform:
      case WeightScheme::canonical_projection:
        s.alpha = Vector::Constant(p, 1.0 / static_cast<double>(p));
        break;
      case WeightScheme::fixed:
        s.alpha = weights.alpha;
        break;
      case WeightScheme::per_output_corr: {
        s.alpha = Vector::Zero(p);
        for (Index l = 0; l < p; ++l) {
          try {
            const double r = pearson(f, y.column(l));
            s.alpha[l] = r * r;
          } catch (const DegenerateInputError&) {
            s.alpha[l] = 0.0;
          }
        }
        const double total = s.alpha.sum();
        if (total > 0.0) {
          s.alpha /= total;
        } else {
          s.alpha = Vector::Constant(p, 1.0 / static_cast<double>(p));
        }
        break;
      }
    }
    if (weights.scheme == WeightScheme::canonical_projection) {
      s.score = s.canonical_projection;
    } else {
      double acc = 0.0;
      for (Index l = 0; l < p; ++l) acc += s.alpha[l] * s.per_output[static_cast<std::size_t>(l)];
      s.score = acc;
    }
    out[i] = std::move(s);
  });

  std::stable_sort(out.begin(), out.end(), [](const MultiOutputScore& a, const MultiOutputScore& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.feature < b.feature;
  });
  return out;
}

nlohmann::json to_json(const MultiOutputScore& s, const std::vector<std::string>& names) {
  nlohmann::json j;
  j["feature"] = s.feature < names.size() ? nlohmann::json(names[s.feature]) : nlohmann::json(s.feature);
  j["index"] = s.feature;
  j["score"] = s.score;
  j["per_output"] = s.per_output;
  j["alpha"] = std::vector<double>(s.alpha.data(), s.alpha.data() + s.alpha.size());
  j["canonical_projection"] = s.canonical_projection;
  j["mode"] = std::string(to_string(s.mode));
  if (!s.flag.empty()) j["flag"] = s.flag;
  return j;
}

// ---------------------------------------------------------------------------

OutputBlock remix_outputs(const OutputBlock& y, const Matrix& m) {
  if (m.rows() != y.dim() || m.cols() != y.dim()) {
    throw ValidationError("remix_outputs: M must be " + std::to_string(y.dim()) + "x" + std::to_string(y.dim()));
  }
  if (!m.allFinite()) throw ValidationError("remix_outputs: non-finite entry in M");
  Eigen::JacobiSVD<Matrix> svd(m);
  const auto& sv = svd.singularValues();
  const double smallest = sv[sv.size() - 1];
  if (!(smallest > 0.0) || sv[0] / smallest >= 1e6) {
    throw ValidationError("remix_outputs: M is singular or ill-conditioned (condition number >= 1e6)");
  }
  return OutputBlock(y.values() * m, OutputKind::regression_score);
}

Matrix sigma_orthonormal_remix(const Matrix& sigma_y, const Matrix& q) {
  if (q.rows() != q.cols() || q.rows() != sigma_y.rows()) throw ValidationError("sigma_orthonormal_remix: shape mismatch");
  const Matrix gram = q.transpose() * q;
  if ((gram - Matrix::Identity(q.rows(), q.cols())).cwiseAbs().maxCoeff() > 1e-8) {
    throw ValidationError("sigma_orthonormal_remix: Q is not orthogonal");
  }
  return sym_inv_sqrt(sigma_y) * q * sym_sqrt(sigma_y);
}

}  // namespace excir
