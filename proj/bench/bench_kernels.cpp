// Times the parallel kernels against the serial reference versions on
// shapes taken from the desk and full-scale models, and reports the largest
// elementwise difference between the two.
//
//   bench_kernels [--repeat N]

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "adrm/kernels.hpp"

namespace k = adrm::kernels;

namespace {

std::vector<double> noise(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  std::vector<double> v(n);
  for (auto& x : v) x = g(rng);
  return v;
}

double best_ms(int repeat, const std::function<void()>& f) {
  double best = 1e300;
  for (int r = 0; r < repeat; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    const auto t1 = std::chrono::steady_clock::now();
    best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return best;
}

double max_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

void row(const std::string& name, double serial, double parallel, double diff) {
  std::printf("%-34s %10.3f %10.3f %8.2fx %10.2e\n", name.c_str(), serial, parallel, serial / parallel, diff);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"parallel vs reference kernel timings"};
  int repeat = 5;
  app.add_option("--repeat", repeat, "timed repetitions per kernel (best is reported)");
  CLI11_PARSE(app, argc, argv);

  std::printf("threads: %d\n", k::max_threads());
  std::printf("%-34s %10s %10s %9s %10s\n", "kernel", "ref ms", "par ms", "speedup", "max diff");

  for (auto [m, n, kk] : {std::array<std::size_t, 3>{64, 10, 512}, {256, 256, 256}, {512, 64, 1024}}) {
    const auto a = noise(m * kk, 1), b = noise(n * kk, 2), bt = noise(kk * n, 3), at = noise(kk * m, 4);
    std::vector<double> c1(m * n), c2(m * n);
    const std::string shape = std::to_string(m) + "x" + std::to_string(n) + "x" + std::to_string(kk);
    double s = best_ms(repeat, [&] { k::reference::matmul_nt(a, b, c1, m, n, kk); });
    double p = best_ms(repeat, [&] { k::matmul_nt(a, b, c2, m, n, kk); });
    row("matmul_nt " + shape, s, p, max_diff(c1, c2));
    s = best_ms(repeat, [&] { k::reference::matmul_nn(a, bt, c1, m, n, kk); });
    p = best_ms(repeat, [&] { k::matmul_nn(a, bt, c2, m, n, kk); });
    row("matmul_nn " + shape, s, p, max_diff(c1, c2));
    s = best_ms(repeat, [&] { k::reference::matmul_tn(at, bt, c1, m, n, kk); });
    p = best_ms(repeat, [&] { k::matmul_tn(at, bt, c2, m, n, kk); });
    row("matmul_tn " + shape, s, p, max_diff(c1, c2));
  }

  // small-cnn layers at batch 64 on 16x16, and a resnet32 stage at batch 32 on 32x32
  std::vector<std::pair<std::string, k::ConvGeometry>> convs = {
      {"conv 64x3x16x16 -> 32", {64, 3, 16, 16, 32, 3, 1, 1}},
      {"conv 64x32x8x8 -> 64", {64, 32, 8, 8, 64, 3, 1, 1}},
      {"conv 32x16x32x32 -> 16", {32, 16, 32, 32, 16, 3, 1, 1}},
      {"conv 32x32x16x16 -> 64 s2", {32, 32, 16, 16, 64, 3, 2, 1}},
  };
  for (const auto& [name, g] : convs) {
    const auto x = noise(g.input_size(), 5), w = noise(g.weight_size(), 6), bias = noise(g.out_channels, 7);
    const auto dy = noise(g.output_size(), 8);
    std::vector<double> y1(g.output_size()), y2(g.output_size());
    double s = best_ms(repeat, [&] { k::reference::conv2d_forward(g, x, w, bias, y1); });
    double p = best_ms(repeat, [&] { k::conv2d_forward(g, x, w, bias, y2); });
    row(name + " fwd", s, p, max_diff(y1, y2));
    std::vector<double> dx1(g.input_size()), dx2(g.input_size());
    s = best_ms(repeat, [&] { k::reference::conv2d_backward_input(g, dy, w, dx1); });
    p = best_ms(repeat, [&] { k::conv2d_backward_input(g, dy, w, dx2); });
    row(name + " bwd-in", s, p, max_diff(dx1, dx2));
    std::vector<double> dw1(g.weight_size()), dw2(g.weight_size()), db1(g.out_channels), db2(g.out_channels);
    s = best_ms(repeat, [&] { k::reference::conv2d_backward_params(g, x, dy, dw1, db1); });
    p = best_ms(repeat, [&] { k::conv2d_backward_params(g, x, dy, dw2, db2); });
    row(name + " bwd-w", s, p, std::max(max_diff(dw1, dw2), max_diff(db1, db2)));
  }
  return 0;
}
