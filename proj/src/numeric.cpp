#include "covshift/numeric.hpp"

#include "covshift/errors.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

namespace covshift {

double clip(double v, double lo, double hi, ClipStats* stats) {
  double out = v;
  if (v < lo) out = lo;
  if (v > hi) out = hi;
  if (stats) {
    ++stats->total;
    if (out != v) ++stats->clipped;
  }
  return out;
}

double compensated_sum(std::span<const double> values) {
  double sum = 0.0;
  double comp = 0.0;
  for (double v : values) {
    const double t = sum + v;
    if (std::abs(sum) >= std::abs(v)) {
      comp += (sum - t) + v;
    } else {
      comp += (v - t) + sum;
    }
    sum = t;
  }
  return sum + comp;
}

double order_free_mean(std::vector<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  return compensated_sum(values) / static_cast<double>(values.size());
}

double order_free_variance(std::vector<double> values) {
  const std::size_t n = values.size();
  if (n < 2) return 0.0;
  const double m = order_free_mean(values);
  for (double& v : values) v = (v - m) * (v - m);
  std::sort(values.begin(), values.end());
  return compensated_sum(values) / static_cast<double>(n - 1);
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

KernelDensity::KernelDensity(std::vector<double> sample, double bandwidth)
    : sample_(std::move(sample)), bandwidth_(bandwidth) {
  if (sample_.size() < 2) throw InvalidDataError("kernel density needs at least two points");
  if (bandwidth_ <= 0.0) {
    const double sd = std::sqrt(order_free_variance(sample_));
    std::vector<double> sorted = sample_;
    std::sort(sorted.begin(), sorted.end());
    const auto q = [&](double f) { return sorted[static_cast<std::size_t>(f * (sorted.size() - 1))]; };
    const double iqr = q(0.75) - q(0.25);
    double spread = std::min(sd, iqr / 1.34);
    if (spread <= 0.0) spread = sd > 0.0 ? sd : 1.0;
    bandwidth_ = 0.9 * spread * std::pow(static_cast<double>(sample_.size()), -0.2);
  }
}

double KernelDensity::operator()(double x) const {
  const double inv = 1.0 / bandwidth_;
  double acc = 0.0;
  for (double s : sample_) {
    const double z = (x - s) * inv;
    acc += std::exp(-0.5 * z * z);
  }
  return acc * inv / (std::sqrt(2.0 * M_PI) * static_cast<double>(sample_.size()));
}

namespace {
std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}
}  // namespace

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t replication, std::uint64_t tag) {
  return splitmix64(splitmix64(splitmix64(master) ^ replication) ^ (tag * 0xD1B54A32D192ED03ULL));
}

std::mt19937_64 make_stream(std::uint64_t master, std::uint64_t replication, std::uint64_t tag) {
  return std::mt19937_64(derive_seed(master, replication, tag));
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body, unsigned threads) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, n));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (unsigned t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

std::vector<double> linspace(double lo, double hi, std::size_t points) {
  std::vector<double> out(points);
  if (points == 0) return out;
  if (points == 1) {
    out[0] = lo;
    return out;
  }
  for (std::size_t i = 0; i < points; ++i) {
    out[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(points - 1);
  }
  out.back() = hi;
  return out;
}

}  // namespace covshift
