#pragma once

// Numeric kernels behind the model layers. The functions in adrm::kernels are
// OpenMP-parallel and are what the layers call. adrm::kernels::reference holds
// straightforward serial versions (direct convolution, naive matmul) that the
// tests compare against and the benchmark times.
//
// Every parallel kernel partitions work so that each output element is summed
// in a fixed order, so results do not depend on the thread count.

#include <cstddef>
#include <span>

namespace adrm::kernels {

struct ConvGeometry {
  std::size_t batch = 1;
  std::size_t in_channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t out_channels = 1;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t padding = 1;

  std::size_t out_height() const noexcept { return (height + 2 * padding - kernel) / stride + 1; }
  std::size_t out_width() const noexcept { return (width + 2 * padding - kernel) / stride + 1; }
  std::size_t patch_size() const noexcept { return in_channels * kernel * kernel; }
  std::size_t input_size() const noexcept { return batch * in_channels * height * width; }
  std::size_t output_size() const noexcept { return batch * out_channels * out_height() * out_width(); }
  std::size_t weight_size() const noexcept { return out_channels * patch_size(); }
};

int max_threads() noexcept;

// c[m, n] = sum_k a[m, k] * b[n, k]
void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
               std::size_t n, std::size_t k);
// c[m, n] = sum_k a[m, k] * b[k, n]
void matmul_nn(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
               std::size_t n, std::size_t k);
// c[m, n] = sum_k a[k, m] * b[k, n]
void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
               std::size_t n, std::size_t k);

// bias may be empty.
void conv2d_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                    std::span<const double> bias, std::span<double> y);
void conv2d_backward_input(const ConvGeometry& g, std::span<const double> dy, std::span<const double> w,
                           std::span<double> dx);
// Overwrites dw (and db when non-empty).
void conv2d_backward_params(const ConvGeometry& g, std::span<const double> x, std::span<const double> dy,
                            std::span<double> dw, std::span<double> db);

// 2x2 max pooling with stride 2 over `planes` planes of height x width.
// argmax receives the flat input index of each selected element.
void maxpool2_forward(std::size_t planes, std::size_t height, std::size_t width, std::span<const double> x,
                      std::span<double> y, std::span<std::size_t> argmax);
void maxpool2_backward(std::span<const double> dy, std::span<const std::size_t> argmax, std::span<double> dx);

namespace reference {

void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
               std::size_t n, std::size_t k);
void matmul_nn(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
               std::size_t n, std::size_t k);
void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
               std::size_t n, std::size_t k);
void conv2d_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                    std::span<const double> bias, std::span<double> y);
void conv2d_backward_input(const ConvGeometry& g, std::span<const double> dy, std::span<const double> w,
                           std::span<double> dx);
void conv2d_backward_params(const ConvGeometry& g, std::span<const double> x, std::span<const double> dy,
                            std::span<double> dw, std::span<double> db);
void maxpool2_forward(std::size_t planes, std::size_t height, std::size_t width, std::span<const double> x,
                      std::span<double> y, std::span<std::size_t> argmax);

}  // namespace reference

}  // namespace adrm::kernels
