#include <omp.h>

#include <algorithm>
#include <cstring>

#include "abf/kernels.hpp"

namespace abf::kernels {

int max_threads() { return omp_get_max_threads(); }

namespace {
// Below this many multiply-adds the thread fork costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 15;
}

void dense_forward(const double* x, const double* w, const double* b, double* y,
                   std::size_t n, std::size_t in, std::size_t out) {
  const long rows = static_cast<long>(n);
#pragma omp parallel for schedule(static) if (n * in * out > kParallelWork)
  for (long r = 0; r < rows; ++r) {
    double* yr = y + r * out;
    const double* xr = x + r * in;
    std::memcpy(yr, b, out * sizeof(double));
    for (std::size_t i = 0; i < in; ++i) {
      const double xi = xr[i];
      // Zero inputs are common (image background, ReLU outputs).
      if (xi == 0.0) continue;
      const double* wi = w + i * out;
#pragma omp simd
      for (std::size_t o = 0; o < out; ++o) yr[o] += xi * wi[o];
    }
  }
}

void dense_backward_input(const double* dy, const double* w, double* dx,
                          std::size_t n, std::size_t in, std::size_t out) {
  const long rows = static_cast<long>(n);
#pragma omp parallel for schedule(static) if (n * in * out > kParallelWork)
  for (long r = 0; r < rows; ++r) {
    const double* dyr = dy + r * out;
    double* dxr = dx + r * in;
    for (std::size_t i = 0; i < in; ++i) {
      const double* wi = w + i * out;
      double s = 0.0;
#pragma omp simd reduction(+ : s)
      for (std::size_t o = 0; o < out; ++o) s += dyr[o] * wi[o];
      dxr[i] = s;
    }
  }
}

void dense_backward_params(const double* x, const double* dy, double* dw, double* db,
                           std::size_t n, std::size_t in, std::size_t out) {
  const long inputs = static_cast<long>(in);
#pragma omp parallel for schedule(static) if (n * in * out > kParallelWork)
  for (long i = 0; i < inputs; ++i) {
    double* dwi = dw + i * out;
    for (std::size_t r = 0; r < n; ++r) {
      const double xi = x[r * in + i];
      if (xi == 0.0) continue;
      const double* dyr = dy + r * out;
#pragma omp simd
      for (std::size_t o = 0; o < out; ++o) dwi[o] += xi * dyr[o];
    }
  }
  for (std::size_t r = 0; r < n; ++r) {
    const double* dyr = dy + r * out;
    for (std::size_t o = 0; o < out; ++o) db[o] += dyr[o];
  }
}

namespace {

// Valid output range [lo, hi) along one axis for kernel tap `kk`.
inline void tap_range(std::size_t extent, std::size_t out_extent, std::size_t pad,
                      std::size_t kk, std::size_t& lo, std::size_t& hi) {
  // input index = o + kk - pad must lie in [0, extent)
  lo = kk < pad ? pad - kk : 0;
  const long h = static_cast<long>(extent) + static_cast<long>(pad) - static_cast<long>(kk);
  hi = static_cast<std::size_t>(std::clamp<long>(h, 0, static_cast<long>(out_extent)));
  if (lo > hi) lo = hi;
}

}  // namespace

void conv2d_forward(const double* x, const double* w, const double* b, double* y,
                    std::size_t n, const ConvGeometry& g) {
  const std::size_t oh = g.out_height(), ow = g.out_width(), k = g.kernel, pad = g.pad();
  const long work = static_cast<long>(n * g.filters);
#pragma omp parallel for schedule(static) if (n * g.out_size() * g.channels * k * k > kParallelWork)
  for (long job = 0; job < work; ++job) {
    const std::size_t r = static_cast<std::size_t>(job) / g.filters;
    const std::size_t f = static_cast<std::size_t>(job) % g.filters;
    double* yf = y + r * g.out_size() + f * oh * ow;
    std::fill(yf, yf + oh * ow, b[f]);
    for (std::size_t c = 0; c < g.channels; ++c) {
      const double* xc = x + r * g.in_size() + c * g.height * g.width;
      for (std::size_t ky = 0; ky < k; ++ky) {
        std::size_t y0, y1;
        tap_range(g.height, oh, pad, ky, y0, y1);
        for (std::size_t kx = 0; kx < k; ++kx) {
          std::size_t x0, x1;
          tap_range(g.width, ow, pad, kx, x0, x1);
          const double wv = w[((f * g.channels + c) * k + ky) * k + kx];
          for (std::size_t oy = y0; oy < y1; ++oy) {
            const double* xrow = xc + (oy + ky - pad) * g.width;
            double* yrow = yf + oy * ow;
            for (std::size_t ox = x0; ox < x1; ++ox) yrow[ox] += wv * xrow[ox + kx - pad];
          }
        }
      }
    }
  }
}

void conv2d_backward_input(const double* dy, const double* w, double* dx,
                           std::size_t n, const ConvGeometry& g) {
  const std::size_t oh = g.out_height(), ow = g.out_width(), k = g.kernel, pad = g.pad();
  const long rows = static_cast<long>(n);
#pragma omp parallel for schedule(static) if (n * g.out_size() * g.channels * k * k > kParallelWork)
  for (long rr = 0; rr < rows; ++rr) {
    const std::size_t r = static_cast<std::size_t>(rr);
    double* dxr = dx + r * g.in_size();
    std::fill(dxr, dxr + g.in_size(), 0.0);
    for (std::size_t f = 0; f < g.filters; ++f) {
      const double* dyf = dy + r * g.out_size() + f * oh * ow;
      for (std::size_t c = 0; c < g.channels; ++c) {
        double* dxc = dxr + c * g.height * g.width;
        for (std::size_t ky = 0; ky < k; ++ky) {
          std::size_t y0, y1;
          tap_range(g.height, oh, pad, ky, y0, y1);
          for (std::size_t kx = 0; kx < k; ++kx) {
            std::size_t x0, x1;
            tap_range(g.width, ow, pad, kx, x0, x1);
            const double wv = w[((f * g.channels + c) * k + ky) * k + kx];
            for (std::size_t oy = y0; oy < y1; ++oy) {
              double* xrow = dxc + (oy + ky - pad) * g.width;
              const double* yrow = dyf + oy * ow;
              for (std::size_t ox = x0; ox < x1; ++ox) xrow[ox + kx - pad] += wv * yrow[ox];
            }
          }
        }
      }
    }
  }
}

void conv2d_backward_params(const double* x, const double* dy, double* dw, double* db,
                            std::size_t n, const ConvGeometry& g) {
  const std::size_t oh = g.out_height(), ow = g.out_width(), k = g.kernel, pad = g.pad();
  const long filters = static_cast<long>(g.filters);
#pragma omp parallel for schedule(static) if (n * g.out_size() * g.channels * k * k > kParallelWork)
  for (long ff = 0; ff < filters; ++ff) {
    const std::size_t f = static_cast<std::size_t>(ff);
    for (std::size_t r = 0; r < n; ++r) {
      const double* dyf = dy + r * g.out_size() + f * oh * ow;
      double s = 0.0;
      for (std::size_t i = 0; i < oh * ow; ++i) s += dyf[i];
      db[f] += s;
      for (std::size_t c = 0; c < g.channels; ++c) {
        const double* xc = x + r * g.in_size() + c * g.height * g.width;
        for (std::size_t ky = 0; ky < k; ++ky) {
          std::size_t y0, y1;
          tap_range(g.height, oh, pad, ky, y0, y1);
          for (std::size_t kx = 0; kx < k; ++kx) {
            std::size_t x0, x1;
            tap_range(g.width, ow, pad, kx, x0, x1);
            double acc = 0.0;
            for (std::size_t oy = y0; oy < y1; ++oy) {
              const double* xrow = xc + (oy + ky - pad) * g.width;
              const double* yrow = dyf + oy * ow;
              for (std::size_t ox = x0; ox < x1; ++ox) acc += yrow[ox] * xrow[ox + kx - pad];
            }
            dw[((f * g.channels + c) * k + ky) * k + kx] += acc;
          }
        }
      }
    }
  }
}

}  // namespace abf::kernels
