#include "adrm/kernels.hpp"

#include <algorithm>
#include <cstddef>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace adrm::kernels {

namespace {

using Index = std::ptrdiff_t;

// Number of partial sums used by the batch reduction in
// conv2d_backward_params. Fixed so the summation order never depends on how
// many threads run.
constexpr std::size_t kReductionChunks = 8;

void im2col(const ConvGeometry& g, const double* x, double* cols) {
  const std::size_t ho = g.out_height(), wo = g.out_width(), k = g.kernel;
  const auto h = static_cast<Index>(g.height), w = static_cast<Index>(g.width);
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    const double* plane = x + c * g.height * g.width;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        double* row = cols + ((c * k + ky) * k + kx) * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const Index iy = static_cast<Index>(oy * g.stride + ky) - static_cast<Index>(g.padding);
          double* out = row + oy * wo;
          if (iy < 0 || iy >= h) {
            std::fill(out, out + wo, 0.0);
            continue;
          }
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const Index ix = static_cast<Index>(ox * g.stride + kx) - static_cast<Index>(g.padding);
            out[ox] = (ix < 0 || ix >= w) ? 0.0 : plane[iy * w + ix];
          }
        }
      }
    }
  }
}

void col2im_add(const ConvGeometry& g, const double* cols, double* x) {
  const std::size_t ho = g.out_height(), wo = g.out_width(), k = g.kernel;
  const auto h = static_cast<Index>(g.height), w = static_cast<Index>(g.width);
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    double* plane = x + c * g.height * g.width;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const double* row = cols + ((c * k + ky) * k + kx) * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const Index iy = static_cast<Index>(oy * g.stride + ky) - static_cast<Index>(g.padding);
          if (iy < 0 || iy >= h) continue;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const Index ix = static_cast<Index>(ox * g.stride + kx) - static_cast<Index>(g.padding);
            if (ix >= 0 && ix < w) plane[iy * w + ix] += row[oy * wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace

int max_threads() noexcept {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
               std::size_t n, std::size_t k) {
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < static_cast<Index>(m); ++i) {
    const double* ai = a.data() + i * k;
    double* ci = c.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b.data() + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
      ci[j] = acc;
    }
  }
}

void matmul_nn(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
               std::size_t n, std::size_t k) {
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < static_cast<Index>(m); ++i) {
    double* ci = c.data() + i * n;
    std::fill(ci, ci + n, 0.0);
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* bp = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
               std::size_t n, std::size_t k) {
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < static_cast<Index>(m); ++i) {
    double* ci = c.data() + i * n;
    std::fill(ci, ci + n, 0.0);
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[p * m + i];
      if (av == 0.0) continue;
      const double* bp = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

void conv2d_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                    std::span<const double> bias, std::span<double> y) {
  const std::size_t spatial = g.out_height() * g.out_width();
  const std::size_t patch = g.patch_size();
  const std::size_t in_stride = g.in_channels * g.height * g.width;
#pragma omp parallel
  {
    std::vector<double> cols(patch * spatial);
#pragma omp for schedule(static)
    for (Index n = 0; n < static_cast<Index>(g.batch); ++n) {
      im2col(g, x.data() + n * in_stride, cols.data());
      double* yn = y.data() + n * g.out_channels * spatial;
      for (std::size_t co = 0; co < g.out_channels; ++co) {
        double* out = yn + co * spatial;
        std::fill(out, out + spatial, bias.empty() ? 0.0 : bias[co]);
        const double* wrow = w.data() + co * patch;
        for (std::size_t j = 0; j < patch; ++j) {
          const double wv = wrow[j];
          const double* crow = cols.data() + j * spatial;
          for (std::size_t p = 0; p < spatial; ++p) out[p] += wv * crow[p];
        }
      }
    }
  }
}

void conv2d_backward_input(const ConvGeometry& g, std::span<const double> dy, std::span<const double> w,
                           std::span<double> dx) {
  const std::size_t spatial = g.out_height() * g.out_width();
  const std::size_t patch = g.patch_size();
  const std::size_t in_stride = g.in_channels * g.height * g.width;
#pragma omp parallel
  {
    std::vector<double> dcols(patch * spatial);
#pragma omp for schedule(static)
    for (Index n = 0; n < static_cast<Index>(g.batch); ++n) {
      const double* dyn = dy.data() + n * g.out_channels * spatial;
      std::fill(dcols.begin(), dcols.end(), 0.0);
      for (std::size_t co = 0; co < g.out_channels; ++co) {
        const double* grad = dyn + co * spatial;
        const double* wrow = w.data() + co * patch;
        for (std::size_t j = 0; j < patch; ++j) {
          const double wv = wrow[j];
          double* drow = dcols.data() + j * spatial;
          for (std::size_t p = 0; p < spatial; ++p) drow[p] += wv * grad[p];
        }
      }
      double* dxn = dx.data() + n * in_stride;
      std::fill(dxn, dxn + in_stride, 0.0);
      col2im_add(g, dcols.data(), dxn);
    }
  }
}

void conv2d_backward_params(const ConvGeometry& g, std::span<const double> x, std::span<const double> dy,
                            std::span<double> dw, std::span<double> db) {
  const std::size_t spatial = g.out_height() * g.out_width();
  const std::size_t patch = g.patch_size();
  const std::size_t in_stride = g.in_channels * g.height * g.width;
  const std::size_t chunks = std::max<std::size_t>(1, std::min(kReductionChunks, g.batch));
  const std::size_t wsize = g.weight_size();
  std::vector<double> partial_w(chunks * wsize, 0.0);
  std::vector<double> partial_b(chunks * g.out_channels, 0.0);
#pragma omp parallel
  {
    std::vector<double> cols(patch * spatial);
#pragma omp for schedule(static)
    for (Index chunk = 0; chunk < static_cast<Index>(chunks); ++chunk) {
      const std::size_t begin = g.batch * chunk / chunks;
      const std::size_t end = g.batch * (chunk + 1) / chunks;
      double* pw = partial_w.data() + chunk * wsize;
      double* pb = partial_b.data() + chunk * g.out_channels;
      for (std::size_t n = begin; n < end; ++n) {
        im2col(g, x.data() + n * in_stride, cols.data());
        const double* dyn = dy.data() + n * g.out_channels * spatial;
        for (std::size_t co = 0; co < g.out_channels; ++co) {
          const double* grad = dyn + co * spatial;
          double* wrow = pw + co * patch;
          double bsum = 0.0;
          for (std::size_t p = 0; p < spatial; ++p) bsum += grad[p];
          pb[co] += bsum;
          for (std::size_t j = 0; j < patch; ++j) {
            const double* crow = cols.data() + j * spatial;
            double acc = 0.0;
            for (std::size_t p = 0; p < spatial; ++p) acc += grad[p] * crow[p];
            wrow[j] += acc;
          }
        }
      }
    }
  }
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < static_cast<Index>(wsize); ++i) {
    double acc = 0.0;
    for (std::size_t c = 0; c < chunks; ++c) acc += partial_w[c * wsize + i];
    dw[i] = acc;
  }
  if (!db.empty()) {
    for (std::size_t co = 0; co < g.out_channels; ++co) {
      double acc = 0.0;
      for (std::size_t c = 0; c < chunks; ++c) acc += partial_b[c * g.out_channels + co];
      db[co] = acc;
    }
  }
}

void maxpool2_forward(std::size_t planes, std::size_t height, std::size_t width, std::span<const double> x,
                      std::span<double> y, std::span<std::size_t> argmax) {
  const std::size_t ho = height / 2, wo = width / 2;
#pragma omp parallel for schedule(static)
  for (Index pl = 0; pl < static_cast<Index>(planes); ++pl) {
    const std::size_t in_base = pl * height * width;
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        std::size_t best = in_base + 2 * oy * width + 2 * ox;
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = in_base + (2 * oy + dy) * width + 2 * ox + dx;
            if (x[idx] > x[best]) best = idx;
          }
        }
        const std::size_t out = (pl * ho + oy) * wo + ox;
        y[out] = x[best];
        argmax[out] = best;
      }
    }
  }
}

void maxpool2_backward(std::span<const double> dy, std::span<const std::size_t> argmax, std::span<double> dx) {
  std::fill(dx.begin(), dx.end(), 0.0);
  // Pooling windows do not overlap, so each input receives at most one write.
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < static_cast<Index>(dy.size()); ++i) dx[argmax[i]] += dy[i];
}

}  // namespace adrm::kernels
