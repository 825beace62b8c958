#include "rdg/kernels.hpp"

#include <algorithm>
#include <cassert>
#include <cstdint>

namespace rdg::kernels {

namespace serial {

void gemv(std::span<const double> W, std::size_t rows, std::size_t cols,
          std::span<const double> x, std::span<double> y) {
  assert(W.size() == rows * cols && x.size() == cols && y.size() == rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* w = W.data() + r * cols;
    double acc = y[r];
    for (std::size_t c = 0; c < cols; ++c) acc += w[c] * x[c];
    y[r] = acc;
  }
}

void gemv_transposed(std::span<const double> W, std::size_t rows, std::size_t cols,
                     std::span<const double> x, std::span<double> y) {
  assert(W.size() == rows * cols && x.size() == rows && y.size() == cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* w = W.data() + r * cols;
    const double xr = x[r];
    for (std::size_t c = 0; c < cols; ++c) y[c] += w[c] * xr;
  }
}

void rank1_update(std::span<double> W, std::size_t rows, std::size_t cols,
                  std::span<const double> a, std::span<const double> b, double scale) {
  assert(W.size() == rows * cols && a.size() == rows && b.size() == cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const double ar = scale * a[r];
    if (ar == 0.0) continue;
    double* w = W.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) w[c] += ar * b[c];
  }
}

}  // namespace serial

namespace omp {

void gemv(std::span<const double> W, std::size_t rows, std::size_t cols,
          std::span<const double> x, std::span<double> y) {
  assert(W.size() == rows * cols && x.size() == cols && y.size() == rows);
  const auto n = static_cast<std::int64_t>(rows);
#pragma omp parallel for schedule(static) if (rows * cols >= kParallelThreshold)
  for (std::int64_t r = 0; r < n; ++r) {
    const double* w = W.data() + r * cols;
    double acc = y[r];
    for (std::size_t c = 0; c < cols; ++c) acc += w[c] * x[c];
    y[r] = acc;
  }
}

void gemv_transposed(std::span<const double> W, std::size_t rows, std::size_t cols,
                     std::span<const double> x, std::span<double> y) {
  assert(W.size() == rows * cols && x.size() == rows && y.size() == cols);
  if (rows * cols < kParallelThreshold) {
    serial::gemv_transposed(W, rows, cols, x, y);
    return;
  }
  // Column blocks per thread; each y[c] still sums rows in ascending order.
  constexpr std::int64_t kBlock = 64;
  const auto n_blocks = static_cast<std::int64_t>((cols + kBlock - 1) / kBlock);
#pragma omp parallel for schedule(static)
  for (std::int64_t blk = 0; blk < n_blocks; ++blk) {
    const std::size_t c0 = static_cast<std::size_t>(blk * kBlock);
    const std::size_t c1 = std::min(cols, c0 + kBlock);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* w = W.data() + r * cols;
      const double xr = x[r];
      for (std::size_t c = c0; c < c1; ++c) y[c] += w[c] * xr;
    }
  }
}

void rank1_update(std::span<double> W, std::size_t rows, std::size_t cols,
                  std::span<const double> a, std::span<const double> b, double scale) {
  assert(W.size() == rows * cols && a.size() == rows && b.size() == cols);
  const auto n = static_cast<std::int64_t>(rows);
#pragma omp parallel for schedule(static) if (rows * cols >= kParallelThreshold)
  for (std::int64_t r = 0; r < n; ++r) {
    const double ar = scale * a[r];
    if (ar == 0.0) continue;
    double* w = W.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) w[c] += ar * b[c];
  }
}

}  // namespace omp

}  // namespace rdg::kernels
