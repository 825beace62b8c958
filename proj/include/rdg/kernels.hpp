#pragma once

// Dense kernels behind the recurrent network. Each kernel exists as a serial
// reference and an OpenMP version; both accumulate every output element in
// the same order, so their results are bitwise identical.

#include <cstddef>
#include <span>

namespace rdg::kernels {

/// Work size (rows * cols) below which the OpenMP kernels stay serial.
inline constexpr std::size_t kParallelThreshold = 1 << 15;

// W is row-major rows x cols.
namespace serial {
/// y += W x
void gemv(std::span<const double> W, std::size_t rows, std::size_t cols,
          std::span<const double> x, std::span<double> y);
/// y += W^T x
void gemv_transposed(std::span<const double> W, std::size_t rows, std::size_t cols,
                     std::span<const double> x, std::span<double> y);
/// W += scale * a b^T
void rank1_update(std::span<double> W, std::size_t rows, std::size_t cols,
                  std::span<const double> a, std::span<const double> b, double scale = 1.0);
}  // namespace serial

namespace omp {
void gemv(std::span<const double> W, std::size_t rows, std::size_t cols,
          std::span<const double> x, std::span<double> y);
void gemv_transposed(std::span<const double> W, std::size_t rows, std::size_t cols,
                     std::span<const double> x, std::span<double> y);
void rank1_update(std::span<double> W, std::size_t rows, std::size_t cols,
                  std::span<const double> a, std::span<const double> b, double scale = 1.0);
}  // namespace omp

using omp::gemv;
using omp::gemv_transposed;
using omp::rank1_update;

}  // namespace rdg::kernels
