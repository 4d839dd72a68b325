#pragma once

#include <cstddef>
#include <cstdint>
#include <exception>
#include <mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

namespace excir {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad input: shapes, parse failures, out-of-range parameters.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A computation could not be carried out on otherwise valid input
/// (singular matrix, zero denominator, ...).
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Inputs that make a score undefined, e.g. a zero-variance column.
class DegenerateInputError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// Derives an independent 64-bit seed for stream `stream` of a base seed
/// (splitmix64 finalizer). Used so replicate i always sees the same stream
/// regardless of which worker runs it.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

unsigned default_threads();
void set_default_threads(unsigned threads);

/// Runs body(i) for i in [0, count). Work is split into contiguous chunks;
/// the first exception thrown by any worker is rethrown on the caller.
template <class Body>
void parallel_for(std::size_t count, Body&& body, unsigned threads = default_threads()) {
  if (threads <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  const std::size_t workers = std::min<std::size_t>(threads, count);
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = count * w / workers;
    const std::size_t end = count * (w + 1) / workers;
    pool.emplace_back([&, begin, end] {
      try {
        for (std::size_t i = begin; i < end; ++i) body(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

inline std::span<const double> as_span(const Vector& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

inline Vector to_vector(std::span<const double> s) {
  Vector v(static_cast<Index>(s.size()));
  for (std::size_t i = 0; i < s.size(); ++i) v[static_cast<Index>(i)] = s[i];
  return v;
}

double mean(std::span<const double> x);
/// Population (1/n) variance.
double variance(std::span<const double> x);
/// Pearson correlation by the centered two-pass formula. Throws
/// DegenerateInputError when either input has zero variance.
double pearson(std::span<const double> x, std::span<const double> y);

/// Average ranks (1-based), ties share the mean of their positions.
std::vector<double> average_ranks(std::span<const double> x);

/// Indices sorted by descending value, ties broken by ascending index.
std::vector<std::size_t> descending_order(std::span<const double> x);

}  // namespace excir
