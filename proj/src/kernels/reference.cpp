#include "abf/kernels.hpp"

namespace abf::kernels::reference {

void dense_forward(const double* x, const double* w, const double* b, double* y,
                   std::size_t n, std::size_t in, std::size_t out) {
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t o = 0; o < out; ++o) {
      double s = b[o];
      for (std::size_t i = 0; i < in; ++i) s += x[r * in + i] * w[i * out + o];
      y[r * out + o] = s;
    }
}

void dense_backward_input(const double* dy, const double* w, double* dx,
                          std::size_t n, std::size_t in, std::size_t out) {
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t i = 0; i < in; ++i) {
      double s = 0.0;
      for (std::size_t o = 0; o < out; ++o) s += dy[r * out + o] * w[i * out + o];
      dx[r * in + i] = s;
    }
}

void dense_backward_params(const double* x, const double* dy, double* dw, double* db,
                           std::size_t n, std::size_t in, std::size_t out) {
  for (std::size_t i = 0; i < in; ++i)
    for (std::size_t o = 0; o < out; ++o) {
      double s = 0.0;
      for (std::size_t r = 0; r < n; ++r) s += x[r * in + i] * dy[r * out + o];
      dw[i * out + o] += s;
    }
  for (std::size_t o = 0; o < out; ++o) {
    double s = 0.0;
    for (std::size_t r = 0; r < n; ++r) s += dy[r * out + o];
    db[o] += s;
  }
}

namespace {

// Returns false when the tap falls into the zero padding.
inline bool tap(const ConvGeometry& g, std::size_t oy, std::size_t ox, std::size_t ky,
                std::size_t kx, std::size_t& iy, std::size_t& ix) {
  const long yy = static_cast<long>(oy + ky) - static_cast<long>(g.pad());
  const long xx = static_cast<long>(ox + kx) - static_cast<long>(g.pad());
  if (yy < 0 || xx < 0 || yy >= static_cast<long>(g.height) || xx >= static_cast<long>(g.width))
    return false;
  iy = static_cast<std::size_t>(yy);
  ix = static_cast<std::size_t>(xx);
  return true;
}

}  // namespace

void conv2d_forward(const double* x, const double* w, const double* b, double* y,
                    std::size_t n, const ConvGeometry& g) {
  const std::size_t oh = g.out_height(), ow = g.out_width(), k = g.kernel;
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t f = 0; f < g.filters; ++f)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          double s = b[f];
          for (std::size_t c = 0; c < g.channels; ++c)
            for (std::size_t ky = 0; ky < k; ++ky)
              for (std::size_t kx = 0; kx < k; ++kx) {
                std::size_t iy, ix;
                if (!tap(g, oy, ox, ky, kx, iy, ix)) continue;
                s += w[((f * g.channels + c) * k + ky) * k + kx] *
                     x[r * g.in_size() + (c * g.height + iy) * g.width + ix];
              }
          y[r * g.out_size() + (f * oh + oy) * ow + ox] = s;
        }
}

void conv2d_backward_input(const double* dy, const double* w, double* dx,
                           std::size_t n, const ConvGeometry& g) {
  const std::size_t oh = g.out_height(), ow = g.out_width(), k = g.kernel;
  for (std::size_t i = 0; i < n * g.in_size(); ++i) dx[i] = 0.0;
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t f = 0; f < g.filters; ++f)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          const double d = dy[r * g.out_size() + (f * oh + oy) * ow + ox];
          for (std::size_t c = 0; c < g.channels; ++c)
            for (std::size_t ky = 0; ky < k; ++ky)
              for (std::size_t kx = 0; kx < k; ++kx) {
                std::size_t iy, ix;
                if (!tap(g, oy, ox, ky, kx, iy, ix)) continue;
                dx[r * g.in_size() + (c * g.height + iy) * g.width + ix] +=
                    d * w[((f * g.channels + c) * k + ky) * k + kx];
              }
        }
}

void conv2d_backward_params(const double* x, const double* dy, double* dw, double* db,
                            std::size_t n, const ConvGeometry& g) {
  const std::size_t oh = g.out_height(), ow = g.out_width(), k = g.kernel;
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t f = 0; f < g.filters; ++f)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          const double d = dy[r * g.out_size() + (f * oh + oy) * ow + ox];
          db[f] += d;
          for (std::size_t c = 0; c < g.channels; ++c)
            for (std::size_t ky = 0; ky < k; ++ky)
              for (std::size_t kx = 0; kx < k; ++kx) {
                std::size_t iy, ix;
                if (!tap(g, oy, ox, ky, kx, iy, ix)) continue;
                dw[((f * g.channels + c) * k + ky) * k + kx] +=
                    d * x[r * g.in_size() + (c * g.height + iy) * g.width + ix];
              }
        }
}

}  // namespace abf::kernels::reference
