#pragma once

#include <cstddef>

// Compute kernels behind the autodiff engine. Every kernel exists twice:
// `abf::kernels::*` is the OpenMP-parallel version used by the engine and
// `abf::kernels::reference::*` is a plain serial loop nest kept as a test
// oracle and benchmark baseline.
//
// Parallel kernels partition work only along independent output rows, so
// each output element is accumulated in the same order regardless of the
// thread count or of which other rows share the batch.
namespace abf::kernels {

// Dense weights are stored [in, out].
//   y[n, out] = x[n, in] * w[in, out] + b[out]
void dense_forward(const double* x, const double* w, const double* b, double* y,
                   std::size_t n, std::size_t in, std::size_t out);
//   dx[n, in] = dy[n, out] * w^T
void dense_backward_input(const double* dy, const double* w, double* dx,
                          std::size_t n, std::size_t in, std::size_t out);
//   dw[in, out] += x^T * dy ; db[out] += sum_n dy[n, :]
void dense_backward_params(const double* x, const double* dy, double* dw, double* db,
                           std::size_t n, std::size_t in, std::size_t out);

struct ConvGeometry {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t filters = 0;
  std::size_t kernel = 3;
  bool same_padding = true;

  std::size_t pad() const { return same_padding ? kernel / 2 : 0; }
  std::size_t out_height() const { return same_padding ? height : height - kernel + 1; }
  std::size_t out_width() const { return same_padding ? width : width - kernel + 1; }
  std::size_t in_size() const { return channels * height * width; }
  std::size_t out_size() const { return filters * out_height() * out_width(); }
};

// Stride-1 cross-correlation, CHW layout, weights [filters, channels, k, k].
void conv2d_forward(const double* x, const double* w, const double* b, double* y,
                    std::size_t n, const ConvGeometry& g);
void conv2d_backward_input(const double* dy, const double* w, double* dx,
                           std::size_t n, const ConvGeometry& g);
void conv2d_backward_params(const double* x, const double* dy, double* dw, double* db,
                            std::size_t n, const ConvGeometry& g);

int max_threads();

namespace reference {

void dense_forward(const double* x, const double* w, const double* b, double* y,
                   std::size_t n, std::size_t in, std::size_t out);
void dense_backward_input(const double* dy, const double* w, double* dx,
                          std::size_t n, std::size_t in, std::size_t out);
void dense_backward_params(const double* x, const double* dy, double* dw, double* db,
                           std::size_t n, std::size_t in, std::size_t out);
void conv2d_forward(const double* x, const double* w, const double* b, double* y,
                    std::size_t n, const ConvGeometry& g);
void conv2d_backward_input(const double* dy, const double* w, double* dx,
                           std::size_t n, const ConvGeometry& g);
void conv2d_backward_params(const double* x, const double* dy, double* dw, double* db,
                            std::size_t n, const ConvGeometry& g);

}  // namespace reference
}  // namespace abf::kernels
