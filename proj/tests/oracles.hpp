// Independent reference computations for the tests. Deliberately naive:
// plain loops, long double accumulation, no calls into the library.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <random>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

using Vec = std::vector<double>;

inline long double sum(const Vec& v) {
  long double s = 0;
  for (double x : v) s += x;
  return s;
}

inline double pearson(const Vec& a, const Vec& b) {
  const long double ma = sum(a) / a.size(), mb = sum(b) / b.size();
  long double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return static_cast<double>(sab / std::sqrt(saa * sbb));
}

// Mid-mean CIR straight from its definition:
// n[(f-m)^2 + (y-m)^2] / (sum (f_i-m)^2 + sum (y_i-m)^2), m = (f+y)/2.
inline double midmean_eta(const Vec& f, const Vec& y) {
  const long double n = f.size();
  const long double mf = sum(f) / n, my = sum(y) / n, m = (mf + my) / 2;
  long double den = 0;
  for (std::size_t i = 0; i < f.size(); ++i) den += (f[i] - m) * (f[i] - m) + (y[i] - m) * (y[i] - m);
  const long double num = n * ((mf - m) * (mf - m) + (my - m) * (my - m));
  return static_cast<double>(num / den);
}

// Kendall tau-b by counting every pair.
inline double kendall_tau_b(const Vec& a, const Vec& b) {
  long long conc = 0, disc = 0, ta = 0, tb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = i + 1; j < a.size(); ++j) {
      const double da = a[i] - a[j], db = b[i] - b[j];
      if (da == 0 && db == 0) continue;
      if (da == 0) {
        ++ta;
      } else if (db == 0) {
        ++tb;
      } else if ((da > 0) == (db > 0)) {
        ++conc;
      } else {
        ++disc;
      }
    }
  }
  const double n0 = static_cast<double>(conc + disc);
  return (conc - disc) / std::sqrt((n0 + ta) * (n0 + tb));
}

// max over 3600 unit directions of |corr(cos t x0 + sin t x1, y)|.
inline double grid_cca_rho(const Eigen::MatrixXd& x, const Vec& y, double* best_angle = nullptr) {
  double best = -1.0;
  for (int i = 0; i < 3600; ++i) {
    const double t = 2.0 * std::numbers::pi * i / 3600.0;
    Vec z(static_cast<std::size_t>(x.rows()));
    for (Eigen::Index r = 0; r < x.rows(); ++r) z[static_cast<std::size_t>(r)] = std::cos(t) * x(r, 0) + std::sin(t) * x(r, 1);
    const double c = std::abs(pearson(z, y));
    if (c > best) {
      best = c;
      if (best_angle) *best_angle = t;
    }
  }
  return best;
}

inline Eigen::MatrixXd matmul(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(a.rows(), b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.cols(); ++j)
      for (Eigen::Index k = 0; k < a.cols(); ++k) c(i, j) += a(i, k) * b(k, j);
  return c;
}

// Simple regression y ~ a x + b by the 2x2 normal equations.
struct Line {
  double slope, intercept, sse;
};
inline Line normal_equations(const Vec& x, const Vec& y) {
  long double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const long double n = x.size();
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  const long double det = n * sxx - sx * sx;
  const long double a = (n * sxy - sx * sy) / det;
  const long double b = (sy - a * sx) / n;
  long double sse = 0;
  for (std::size_t i = 0; i < x.size(); ++i) sse += (y[i] - a * x[i] - b) * (y[i] - a * x[i] - b);
  return {static_cast<double>(a), static_cast<double>(b), static_cast<double>(sse)};
}

// Unbiased MMD^2 with a 1-d Gaussian kernel, summed by hand.
inline double mmd2_unbiased(const Vec& a, const Vec& b, double h) {
  auto k = [h](double u, double v) { return std::exp(-(u - v) * (u - v) / (2 * h * h)); };
  long double saa = 0, sbb = 0, sab = 0;
  const double m = a.size(), n = b.size();
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a.size(); ++j)
      if (i != j) saa += k(a[i], a[j]);
  for (std::size_t i = 0; i < b.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j)
      if (i != j) sbb += k(b[i], b[j]);
  for (double u : a)
    for (double v : b) sab += k(u, v);
  return static_cast<double>(saa / (m * (m - 1)) + sbb / (n * (n - 1)) - 2 * sab / (m * n));
}

// KL(N(m1, s1^2) || N(m2, s2^2)) by trapezoid quadrature on the true densities.
inline double gaussian_kl_quadrature(double m1, double s1, double m2, double s2) {
  auto pdf = [](double x, double m, double s) {
    return std::exp(-0.5 * (x - m) * (x - m) / (s * s)) / (s * std::sqrt(2 * std::numbers::pi));
  };
  const double lo = std::min(m1, m2) - 12, hi = std::max(m1, m2) + 12;
  const int steps = 200000;
  const double dx = (hi - lo) / steps;
  long double acc = 0;
  for (int i = 0; i <= steps; ++i) {
    const double x = lo + i * dx;
    const double p = pdf(x, m1, s1), q = pdf(x, m2, s2);
    const double v = p > 0 ? p * std::log(p / q) : 0.0;
    acc += (i == 0 || i == steps ? 0.5 : 1.0) * v;
  }
  return static_cast<double>(acc * dx);
}

// Benjamini-Hochberg: q_i = min_{j >= rank(i)} m p_(j) / j, capped at 1.
inline Vec bh(const Vec& p) {
  const std::size_t m = p.size();
  std::vector<std::size_t> idx(m);
  for (std::size_t i = 0; i < m; ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return p[a] < p[b]; });
  Vec q(m);
  for (std::size_t r = 0; r < m; ++r) {
    double best = 1.0;
    for (std::size_t j = r; j < m; ++j) best = std::min(best, p[idx[j]] * m / (j + 1.0));
    q[idx[r]] = best;
  }
  return q;
}

inline double cliffs_delta(const Vec& a, const Vec& b) {
  long long gt = 0, lt = 0;
  for (double x : a)
    for (double y : b) {
      gt += x > y;
      lt += x < y;
    }
  return static_cast<double>(gt - lt) / (static_cast<double>(a.size()) * b.size());
}

inline double binomial(int n, int k) {
  long double r = 1;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return static_cast<double>(r);
}

inline Vec gaussian(std::size_t n, std::mt19937_64& rng, double mu = 0.0, double sd = 1.0) {
  std::normal_distribution<double> d(mu, sd);
  Vec v(n);
  for (double& x : v) x = d(rng);
  return v;
}

}  // namespace oracle
