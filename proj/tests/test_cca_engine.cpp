#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "excir/cca_engine.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace excir;

namespace {
CovarianceBlocks manual(const Matrix& sx, const Matrix& sy, const Matrix& g) {
  CovarianceBlocks c;
  c.sigma_x = sx;
  c.sigma_y = sy;
  c.gamma = g;
  c.ridge = 0.0;
  c.n = 100;
  return c;
}

Matrix random_spd(Index k, std::mt19937_64& rng) {
  const Matrix a = testutil::gaussian_matrix(k, k, rng);
  return a * a.transpose() + 0.5 * Matrix::Identity(k, k);
}

double corr(const Vector& a, const Vector& b) { return oracle::pearson(testutil::vec(a), testutil::vec(b)); }
}  // namespace

TEST_SUITE("cca_engine") {
  TEST_CASE("covariance blocks by hand") {
    Matrix x(3, 1), y(3, 1);
    x << 1, 2, 3;
    y << 2, 4, 6;
    const auto c = covariance_blocks(x, y, 0.0);
    CHECK(c.sigma_x(0, 0) == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
    CHECK(c.sigma_y(0, 0) == doctest::Approx(8.0 / 3.0).epsilon(1e-14));
    CHECK(c.gamma(0, 0) == doctest::Approx(4.0 / 3.0).epsilon(1e-14));
    CHECK(c.ridge == 0.0);
  }

  TEST_CASE("independent columns give small cross-covariance") {
    std::mt19937_64 rng(1);
    const Index n = 20000;
    const Matrix x = testutil::gaussian_matrix(n, 3, rng), y = testutil::gaussian_matrix(n, 2, rng);
    const auto c = covariance_blocks(x, y);
    CHECK(c.gamma.cwiseAbs().maxCoeff() < 5.0 / std::sqrt(double(n)));
    CHECK(c.ridge == doctest::Approx(default_ridge(c.sigma_x, c.sigma_y)));
  }

  TEST_CASE("constant column without ridge is not positive definite") {
    std::mt19937_64 rng(2);
    Matrix x = testutil::gaussian_matrix(50, 2, rng);
    x.col(1).setConstant(4.0);
    const Matrix y = testutil::gaussian_matrix(50, 1, rng);
    CHECK_THROWS_AS(top_canonical_pair(covariance_blocks(x, y, 0.0)), NumericalError);
    CHECK_THROWS_AS(covariance_blocks(x, y, -1.0), ValidationError);
  }

  TEST_CASE("inverse square root") {
    CHECK(sym_inv_sqrt(Matrix::Identity(3, 3)).isApprox(Matrix::Identity(3, 3), 1e-14));
    Matrix d = Matrix::Zero(2, 2);
    d(0, 0) = 4;
    d(1, 1) = 9;
    const Matrix r = sym_inv_sqrt(d);
    CHECK(r(0, 0) == doctest::Approx(0.5));
    CHECK(r(1, 1) == doctest::Approx(1.0 / 3.0));
    CHECK(std::abs(r(0, 1)) < 1e-15);
    std::mt19937_64 rng(3);
    for (int t = 0; t < 20; ++t) {
      const Matrix m = random_spd(3, rng);
      const Matrix ri = sym_inv_sqrt(m);
      CHECK((ri * m * ri - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff() <= 1e-8);
      const Matrix s = sym_sqrt(m);
      CHECK((s * s - m).cwiseAbs().maxCoeff() <= 1e-8);
    }
    Matrix asym(2, 2);
    asym << 1, 2, 0, 1;
    CHECK_THROWS_AS(sym_inv_sqrt(asym), ValidationError);
  }

  TEST_CASE("scalar canonical correlation") {
    const auto p = top_canonical_pair(manual(Matrix::Constant(1, 1, 4), Matrix::Constant(1, 1, 9), Matrix::Constant(1, 1, 5)));
    CHECK(p.rho == doctest::Approx(5.0 / 6.0).epsilon(1e-12));
    CHECK(p.u[0] > 0);
    CHECK(p.w[0] * 4 * p.w[0] == doctest::Approx(1.0));

    const auto z = top_canonical_pair(manual(Matrix::Identity(2, 2), Matrix::Identity(2, 2), Matrix::Zero(2, 2)));
    CHECK(z.rho == 0.0);
    CHECK(z.w.norm() == doctest::Approx(1.0));
    CHECK(z.u.norm() == doctest::Approx(1.0));
  }

  TEST_CASE("canonical rho matches the 3600-direction grid search") {
    std::mt19937_64 rng(4);
    for (int t = 0; t < 50; ++t) {
      const Index n = 200;
      const Matrix x = testutil::gaussian_matrix(n, 2, rng) * testutil::well_conditioned(2, rng, 20);
      Vector y = 0.7 * x.col(0) - 0.4 * x.col(1) + 0.8 * Vector(testutil::gaussian_matrix(n, 1, rng));
      const auto p = top_canonical_pair(covariance_blocks(x, Matrix(y), 0.0));
      const double grid = oracle::grid_cca_rho(x, testutil::vec(y));
      CHECK(std::abs(p.rho - grid) <= 1e-3);
    }
  }

  TEST_CASE("scalar closed-form direction") {
    Matrix g(3, 1);
    g << 1.0, -2.0, 0.5;
    const Vector wi = scalar_output_direction(manual(Matrix::Identity(3, 3), Matrix::Identity(1, 1), g));
    CHECK(std::abs(std::abs(wi.normalized().dot(g.col(0).normalized())) - 1.0) < 1e-12);

    Matrix d = Matrix::Zero(3, 3);
    d.diagonal() << 2.0, 4.0, 0.5;
    const Vector wd = scalar_output_direction(manual(d, Matrix::Identity(1, 1), g));
    const Vector want = g.col(0).cwiseQuotient(d.diagonal());
    CHECK(std::abs(std::abs(wd.normalized().dot(want.normalized())) - 1.0) < 1e-12);

    std::mt19937_64 rng(5);
    for (int t = 0; t < 20; ++t) {
      const Index n = 400;
      const Matrix x = testutil::gaussian_matrix(n, 2, rng) * testutil::well_conditioned(2, rng, 10);
      const Vector y = x.col(0) + 0.5 * x.col(1) + Vector(testutil::gaussian_matrix(n, 1, rng));
      const auto cov = covariance_blocks(x, Matrix(y), 0.0);
      const Vector w = scalar_output_direction(cov);
      // closed form against Sigma^{-1} gamma
      const Vector direct = cov.sigma_x.inverse() * cov.gamma.col(0);
      CHECK(std::abs(std::abs(w.normalized().dot(direct.normalized())) - 1.0) <= 1e-8);
      double angle = 0;
      oracle::grid_cca_rho(x, testutil::vec(y), &angle);
      const Vector grid_dir = Eigen::Vector2d(std::cos(angle), std::sin(angle));
      CHECK(std::acos(std::min(1.0, std::abs(w.normalized().dot(grid_dir)))) < 1e-2);
      CHECK(w.dot(cov.sigma_x * w) == doctest::Approx(1.0).epsilon(1e-10));
    }
  }

  TEST_CASE("property: maximality over random directions") {
    std::mt19937_64 rng(6);
    const Index n = 300;
    const Matrix x = testutil::gaussian_matrix(n, 3, rng);
    const Matrix y = x.leftCols(2) * testutil::gaussian_matrix(2, 2, rng) + testutil::gaussian_matrix(n, 2, rng);
    const auto p = top_canonical_pair(covariance_blocks(x, y, 0.0));
    for (int t = 0; t < 100; ++t) {
      const Vector w = testutil::gaussian_matrix(3, 1, rng);
      const Vector u = testutil::gaussian_matrix(2, 1, rng);
      const double c = corr(x * w, y * u);
      CHECK(c * c <= p.rho * p.rho + 1e-8);
    }
    CHECK(corr(x * p.w, y * p.u) == doctest::Approx(p.rho).epsilon(1e-10));
  }

  TEST_CASE("property: canonical variate is invariant to block reparameterization") {
    std::mt19937_64 rng(7);
    for (int t = 0; t < 20; ++t) {
      const Index n = 150;
      const Matrix x = testutil::gaussian_matrix(n, 3, rng);
      const Matrix y = x * testutil::gaussian_matrix(3, 2, rng) + 2.0 * testutil::gaussian_matrix(n, 2, rng);
      const Matrix a = testutil::well_conditioned(3, rng);
      const auto p = top_canonical_pair(covariance_blocks(x, y, 0.0));
      const auto q = top_canonical_pair(covariance_blocks(x * a, y, 0.0));
      const Vector z1 = x * p.w, z2 = x * a * q.w;
      CHECK((z1 - z2).cwiseAbs().maxCoeff() <= 1e-6);
      CHECK(std::abs(p.rho - q.rho) <= 1e-10);

      Matrix perm = x;
      perm.col(0) = x.col(2);
      perm.col(2) = x.col(0);
      CHECK(top_canonical_pair(covariance_blocks(perm, y, 0.0)).rho == doctest::Approx(p.rho).epsilon(1e-12));
    }
  }

  TEST_CASE("several pairs are ordered and bounded") {
    std::mt19937_64 rng(8);
    const Matrix x = testutil::gaussian_matrix(200, 4, rng);
    const Matrix y = x.leftCols(3) + testutil::gaussian_matrix(200, 3, rng);
    const auto pairs = top_canonical_pairs(covariance_blocks(x, y), 3);
    REQUIRE(pairs.size() == 3);
    CHECK(pairs[0].rho >= pairs[1].rho);
    CHECK(pairs[1].rho >= pairs[2].rho);
    CHECK(pairs[0].rho <= 1.0);
    CHECK_THROWS_AS(top_canonical_pairs(covariance_blocks(x, y), 4), ValidationError);
  }
}
