#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <complex>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace lyapan {

/// Runs body(i) for i in [0, count) on up to `threads` workers (0 means
/// hardware concurrency). Callers write results into per-index slots and
/// reduce in index order, which keeps outputs independent of the worker count.
template <class Body>
void parallel_for(std::size_t count, unsigned threads, Body&& body) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  const std::size_t workers = std::min<std::size_t>(threads, count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

/// Running mean and squared deviation of complex samples, mergeable in a fixed order.
struct ComplexAccumulator {
  double count = 0.0;
  std::complex<double> mean{};
  double m2 = 0.0;

  void add(std::complex<double> x) {
    count += 1.0;
    const auto delta = x - mean;
    mean += delta / count;
    m2 += std::real(delta * std::conj(x - mean));
  }
  void merge(const ComplexAccumulator& o) {
    if (o.count == 0.0) return;
    if (count == 0.0) {
      *this = o;
      return;
    }
    const double n = count + o.count;
    const auto delta = o.mean - mean;
    mean += delta * (o.count / n);
    m2 += o.m2 + std::norm(delta) * count * o.count / n;
    count = n;
  }
  /// Unbiased sample variance of the complex samples (sum of the real and imaginary variances).
  double variance() const { return count > 1.0 ? std::max(0.0, m2 / (count - 1.0)) : 0.0; }
  double standard_error() const { return count > 0.0 ? std::sqrt(variance() / count) : 0.0; }
};

}  // namespace lyapan
