#include <algorithm>
#include <cstddef>

#include "adrm/kernels.hpp"

namespace adrm::kernels::reference {

namespace {

using Index = std::ptrdiff_t;

// Input coordinate read by output (oy, ox) at kernel offset (ky, kx), or -1
// when it falls in the zero padding.
Index source_index(const ConvGeometry& g, std::size_t oy, std::size_t ox, std::size_t ky, std::size_t kx) {
  const Index iy = static_cast<Index>(oy * g.stride + ky) - static_cast<Index>(g.padding);
  const Index ix = static_cast<Index>(ox * g.stride + kx) - static_cast<Index>(g.padding);
  if (iy < 0 || ix < 0 || iy >= static_cast<Index>(g.height) || ix >= static_cast<Index>(g.width)) return -1;
  return iy * static_cast<Index>(g.width) + ix;
}

}  // namespace

void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
               std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[j * k + p];
      c[i * n + j] = acc;
    }
}

void matmul_nn(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
               std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      c[i * n + j] = acc;
    }
}

void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
               std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a[p * m + i] * b[p * n + j];
      c[i * n + j] = acc;
    }
}

void conv2d_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                    std::span<const double> bias, std::span<double> y) {
  const std::size_t ho = g.out_height(), wo = g.out_width(), k = g.kernel, hw = g.height * g.width;
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t co = 0; co < g.out_channels; ++co)
      for (std::size_t oy = 0; oy < ho; ++oy)
        for (std::size_t ox = 0; ox < wo; ++ox) {
          double acc = bias.empty() ? 0.0 : bias[co];
          for (std::size_t ci = 0; ci < g.in_channels; ++ci)
            for (std::size_t ky = 0; ky < k; ++ky)
              for (std::size_t kx = 0; kx < k; ++kx) {
                const Index src = source_index(g, oy, ox, ky, kx);
                if (src < 0) continue;
                acc += w[((co * g.in_channels + ci) * k + ky) * k + kx] * x[(n * g.in_channels + ci) * hw + src];
              }
          y[((n * g.out_channels + co) * ho + oy) * wo + ox] = acc;
        }
}

void conv2d_backward_input(const ConvGeometry& g, std::span<const double> dy, std::span<const double> w,
                           std::span<double> dx) {
  const std::size_t ho = g.out_height(), wo = g.out_width(), k = g.kernel, hw = g.height * g.width;
  std::fill(dx.begin(), dx.begin() + static_cast<Index>(g.input_size()), 0.0);
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t co = 0; co < g.out_channels; ++co)
      for (std::size_t oy = 0; oy < ho; ++oy)
        for (std::size_t ox = 0; ox < wo; ++ox) {
          const double grad = dy[((n * g.out_channels + co) * ho + oy) * wo + ox];
          for (std::size_t ci = 0; ci < g.in_channels; ++ci)
            for (std::size_t ky = 0; ky < k; ++ky)
              for (std::size_t kx = 0; kx < k; ++kx) {
                const Index src = source_index(g, oy, ox, ky, kx);
                if (src < 0) continue;
                dx[(n * g.in_channels + ci) * hw + src] += w[((co * g.in_channels + ci) * k + ky) * k + kx] * grad;
              }
        }
}

void conv2d_backward_params(const ConvGeometry& g, std::span<const double> x, std::span<const double> dy,
                            std::span<double> dw, std::span<double> db) {
  const std::size_t ho = g.out_height(), wo = g.out_width(), k = g.kernel, hw = g.height * g.width;
  std::fill(dw.begin(), dw.begin() + static_cast<Index>(g.weight_size()), 0.0);
  if (!db.empty()) std::fill(db.begin(), db.begin() + static_cast<Index>(g.out_channels), 0.0);
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t co = 0; co < g.out_channels; ++co)
      for (std::size_t oy = 0; oy < ho; ++oy)
        for (std::size_t ox = 0; ox < wo; ++ox) {
          const double grad = dy[((n * g.out_channels + co) * ho + oy) * wo + ox];
          if (!db.empty()) db[co] += grad;
          for (std::size_t ci = 0; ci < g.in_channels; ++ci)
            for (std::size_t ky = 0; ky < k; ++ky)
              for (std::size_t kx = 0; kx < k; ++kx) {
                const Index src = source_index(g, oy, ox, ky, kx);
                if (src < 0) continue;
                dw[((co * g.in_channels + ci) * k + ky) * k + kx] += grad * x[(n * g.in_channels + ci) * hw + src];
              }
        }
}

void maxpool2_forward(std::size_t planes, std::size_t height, std::size_t width, std::span<const double> x,
                      std::span<double> y, std::span<std::size_t> argmax) {
  const std::size_t ho = height / 2, wo = width / 2;
  for (std::size_t pl = 0; pl < planes; ++pl)
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox) {
        std::size_t best = pl * height * width + 2 * oy * width + 2 * ox;
        for (std::size_t idx : {best, best + 1, best + width, best + width + 1})
          if (x[idx] > x[best]) best = idx;
        y[(pl * ho + oy) * wo + ox] = x[best];
        argmax[(pl * ho + oy) * wo + ox] = best;
      }
}

}  // namespace adrm::kernels::reference
