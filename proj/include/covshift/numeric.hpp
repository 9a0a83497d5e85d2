#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <vector>

namespace covshift {

// Covariates are stored row-major so that a row binds to CovRef without a copy.
using Covariates = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CovRef = Eigen::Ref<const Eigen::VectorXd>;
using Index = Eigen::Index;

inline auto row(const Covariates& x, Index i) { return x.row(i).transpose(); }

/// Counts of evaluations that hit a clipping bound.
struct ClipStats {
  std::size_t clipped = 0;
  std::size_t total = 0;

  double fraction() const {
    return total == 0 ? 0.0 : static_cast<double>(clipped) / static_cast<double>(total);
  }
  ClipStats& operator+=(const ClipStats& o) {
    clipped += o.clipped;
    total += o.total;
    return *this;
  }
};

double clip(double v, double lo, double hi, ClipStats* stats = nullptr);
inline double clip_below(double v, double lo, ClipStats* stats = nullptr) {
  return clip(v, lo, std::numeric_limits<double>::infinity(), stats);
}

/// Compensated (Neumaier) summation.
double compensated_sum(std::span<const double> values);

/// Mean whose value does not depend on the order of `values`: the terms are
/// sorted before compensated summation. Takes the vector by value.
double order_free_mean(std::vector<double> values);

/// Unbiased sample variance, computed order-free.
double order_free_variance(std::vector<double> values);

double normal_cdf(double x);

/// Gaussian kernel density estimate on a scalar sample, Silverman bandwidth.
class KernelDensity {
 public:
  explicit KernelDensity(std::vector<double> sample, double bandwidth = 0.0);
  double operator()(double x) const;
  double bandwidth() const { return bandwidth_; }

 private:
  std::vector<double> sample_;
  double bandwidth_;
};

/// Counter-based stream derivation: stream (rep, tag) of a master seed is
/// reproducible without generating any other stream.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t replication, std::uint64_t tag = 0);
std::mt19937_64 make_stream(std::uint64_t master, std::uint64_t replication, std::uint64_t tag = 0);

/// Runs body(i) for i in [0, n) on up to `threads` workers (0 = hardware).
/// Each index is processed exactly once; callers write results by index.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body, unsigned threads = 0);

/// Equispaced grid of `points` values over [lo, hi].
std::vector<double> linspace(double lo, double hi, std::size_t points);

}  // namespace covshift
