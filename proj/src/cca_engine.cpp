#include "excir/cca_engine.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace excir {

namespace {

void check_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) throw ValidationError(std::string("covariance_blocks: non-finite entry in ") + what);
}

Matrix centered(const Matrix& m) { return m.rowwise() - m.colwise().mean(); }

Matrix ridged(const Matrix& m, double ridge) {
  return m + ridge * Matrix::Identity(m.rows(), m.cols());
}

Eigen::SelfAdjointEigenSolver<Matrix> spd_eigen(const Matrix& m, const char* who) {
  if (m.rows() != m.cols() || m.rows() == 0) throw ValidationError(std::string(who) + ": square matrix expected");
  if (!m.allFinite()) throw ValidationError(std::string(who) + ": non-finite entry");
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
    throw ValidationError(std::string(who) + ": matrix is not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (m + m.transpose()));
  if (es.info() != Eigen::Success) throw NumericalError(std::string(who) + ": eigendecomposition failed");
  const double smallest = es.eigenvalues().minCoeff();
  if (!(smallest > 1e-12)) {
    std::ostringstream msg;
    msg << who << ": matrix is not positive definite (smallest eigenvalue " << smallest << ")";
    throw NumericalError(msg.str());
  }
  return es;
}

void first_nonzero_positive(Vector& v, Vector& other) {
  for (Index i = 0; i < v.size(); ++i) {
    if (v[i] != 0.0) {
      if (v[i] < 0.0) {
        v = -v;
        other = -other;
      }
      return;
    }
  }
}

}  // namespace

double default_ridge(const Matrix& sigma_x, const Matrix& sigma_y) {
  const double tx = sigma_x.size() ? sigma_x.trace() / static_cast<double>(sigma_x.rows()) : 0.0;
  const double ty = sigma_y.size() ? sigma_y.trace() / static_cast<double>(sigma_y.rows()) : 0.0;
  return 1e-6 * std::max(tx, ty);
}

CovarianceBlocks covariance_blocks(const Matrix& x, const Matrix& y, std::optional<double> ridge) {
  if (x.rows() != y.rows()) {
    throw ValidationError("covariance_blocks: X has " + std::to_string(x.rows()) + " rows, Y has " +
                          std::to_string(y.rows()));
  }
  if (x.rows() < 2) throw ValidationError("covariance_blocks: n >= 2 required");
  if (x.cols() < 1 || y.cols() < 1) throw ValidationError("covariance_blocks: empty block");
  check_finite(x, "X");
  check_finite(y, "Y");
  const double n = static_cast<double>(x.rows());
  const Matrix xc = centered(x);
  const Matrix yc = centered(y);
  CovarianceBlocks cov;
  cov.n = x.rows();
  cov.sigma_x = (xc.transpose() * xc) / n;
  cov.sigma_y = (yc.transpose() * yc) / n;
  cov.gamma = (xc.transpose() * yc) / n;
  cov.ridge = ridge ? *ridge : default_ridge(cov.sigma_x, cov.sigma_y);
  if (!(cov.ridge >= 0.0)) throw ValidationError("covariance_blocks: ridge must be >= 0");
  return cov;
}

Matrix sym_inv_sqrt(const Matrix& m) {
  const auto es = spd_eigen(m, "sym_inv_sqrt");
  const Vector d = es.eigenvalues().cwiseSqrt().cwiseInverse();
  return es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
}

Matrix sym_sqrt(const Matrix& m) {
  const auto es = spd_eigen(m, "sym_sqrt");
  const Vector d = es.eigenvalues().cwiseSqrt();
  return es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
}

std::vector<CanonicalPair> top_canonical_pairs(const CovarianceBlocks& cov, Index r) {
  const Index kb = cov.sigma_x.rows();
  const Index p = cov.sigma_y.rows();
  if (cov.gamma.rows() != kb || cov.gamma.cols() != p) throw ValidationError("canonical pair: gamma shape mismatch");
  if (r < 1 || r > std::min(kb, p)) {
    throw ValidationError("canonical pair: r must be in [1, " + std::to_string(std::min(kb, p)) + "]");
  }
  const Matrix rx = sym_inv_sqrt(ridged(cov.sigma_x, cov.ridge));
  const Matrix ry = sym_inv_sqrt(ridged(cov.sigma_y, cov.ridge));
  const Matrix m = rx * cov.gamma * ry;
  Eigen::JacobiSVD<Matrix> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);

  std::vector<CanonicalPair> pairs;
  for (Index j = 0; j < r; ++j) {
    double rho = svd.singularValues()[j];
    if (rho > 1.0 + 1e-8) {
      std::ostringstream msg;
      msg << "canonical pair: canonical correlation " << rho << " exceeds 1";
      throw NumericalError(msg.str());
    }
    rho = std::clamp(rho, 0.0, 1.0);
    CanonicalPair pair;
    pair.w = rx * svd.matrixU().col(j);
    pair.u = ry * svd.matrixV().col(j);
    pair.rho = rho;
    pair.ridge = cov.ridge;
    if (rho > 0.0) {
      first_nonzero_positive(pair.u, pair.w);
    } else {
      first_nonzero_positive(pair.w, pair.u);
    }
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

CanonicalPair top_canonical_pair(const CovarianceBlocks& cov) { return top_canonical_pairs(cov, 1).front(); }

Vector scalar_output_direction(const CovarianceBlocks& cov) {
  if (cov.sigma_y.rows() != 1) throw ValidationError("scalar_output_direction: p = 1 required");
  const Matrix sx = ridged(cov.sigma_x, cov.ridge);
  spd_eigen(sx, "scalar_output_direction");
  const Vector gamma = cov.gamma.col(0);
  Vector w = sx.ldlt().solve(gamma);
  const double var = w.dot(sx * w);
  if (!(var > 0.0)) return top_canonical_pair(cov).w;
  return w / std::sqrt(var);
}

}  // namespace excir
