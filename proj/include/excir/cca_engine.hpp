#pragma once

#include <optional>
#include <vector>

#include "excir/common.hpp"

namespace excir {

/// Population covariances of a feature block X (n x kb) and outputs Y (n x p).
/// The ridge is stored, not added; inversion paths use sigma + ridge * I.
struct CovarianceBlocks {
  Matrix sigma_x;
  Matrix sigma_y;
  /// kb x p cross-covariance.
  Matrix gamma;
  double ridge = 0.0;
  Index n = 0;
};

/// 1e-6 * trace / dim, taking the larger of the two sides.
double default_ridge(const Matrix& sigma_x, const Matrix& sigma_y);

CovarianceBlocks covariance_blocks(const Matrix& x, const Matrix& y, std::optional<double> ridge = std::nullopt);

/// M^{-1/2} and M^{1/2} through a symmetric eigendecomposition. Throws
/// NumericalError when the smallest eigenvalue is <= 1e-12.
Matrix sym_inv_sqrt(const Matrix& m);
Matrix sym_sqrt(const Matrix& m);

struct CanonicalPair {
  Vector w;
  Vector u;
  double rho = 0.0;
  double ridge = 0.0;
};

/// Leading canonical pair. w and u have unit (ridged) variance and
/// Cov(z, s) >= 0. When rho > 0 the first nonzero entry of u is positive;
/// when rho == 0 the first nonzero entry of w is.
CanonicalPair top_canonical_pair(const CovarianceBlocks& cov);

/// The first r pairs, r <= min(kb, p).
std::vector<CanonicalPair> top_canonical_pairs(const CovarianceBlocks& cov, Index r);

/// p = 1 closed form (sigma_x + ridge I)^{-1} gamma, scaled to unit variance.
Vector scalar_output_direction(const CovarianceBlocks& cov);

}  // namespace excir
