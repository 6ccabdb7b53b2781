#include <cmath>
#include <numeric>

#include "adrm/error.hpp"
#include "adrm/model.hpp"
#include "doctest.h"
#include "gradcheck.hpp"
#include "random_data.hpp"

using namespace adrm;

namespace {

const InputShape kTiny{3, 8, 8};

Tensor duplicate_first_row(const Tensor& x) {
  std::vector<std::size_t> idx{0, 1, 0};
  return x.gather_rows(idx);
}

}  // namespace

TEST_CASE("init_model is deterministic in the seed") {
  for (const auto& arch : supported_architectures()) {
    CAPTURE(arch);
    const auto a = init_model(arch, 10, 42, kTiny);
    const auto b = init_model(arch, 10, 42, kTiny);
    const auto c = init_model(arch, 10, 43, kTiny);
    CHECK(a.params == b.params);
    CHECK_FALSE(a.params == c.params);
    CHECK(a.params.all_finite());
  }
}

TEST_CASE("init_model rejects bad arguments") {
  CHECK_THROWS_AS(init_model("vgg", 10, 0), Error);
  try {
    init_model("vgg", 10, 0);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::unsupported_architecture);
  }
  CHECK_THROWS_AS(init_model("mlp", 1, 0), Error);
}

TEST_CASE("small-cnn produces [B, 10] logits") {
  const auto model = init_model("small-cnn", 10, 1, {3, 16, 16});
  const auto out = forward(model, testing::random_images(5, 3, 16, 16, 2));
  CHECK(out.logits.shape() == Shape{5, 10});
  CHECK(out.features.shape() == Shape{5, model.feature_dim()});
  CHECK(model.feature_dim() == 64);
}

TEST_CASE("Xavier init matches the fan-based variance on a 64x128 layer") {
  // linear model on 1x8x8 inputs with 128 classes: head weight is [128, 64]
  const auto model = init_model("linear", 128, 5, {1, 8, 8});
  const auto w = model.params.view("head.weight");
  REQUIRE(w.size() == 64 * 128);
  const double mean = std::accumulate(w.begin(), w.end(), 0.0) / static_cast<double>(w.size());
  double var = 0.0;
  for (double v : w) var += (v - mean) * (v - mean);
  var /= static_cast<double>(w.size() - 1);
  const double expected = 2.0 / (64.0 + 128.0);
  CHECK(std::abs(var - expected) / expected < 0.10);
  for (double b : model.params.view("head.bias")) CHECK(b == 0.0);
}

TEST_CASE("forward is batch independent and deterministic") {
  for (const auto& arch : supported_architectures()) {
    CAPTURE(arch);
    const auto model = init_model(arch, 4, 3, kTiny);
    const auto x = testing::random_images(2, 3, 8, 8, 4);
    const auto out = forward(model, duplicate_first_row(x));
    for (std::size_t j = 0; j < 4; ++j) CHECK(out.logits[j] == out.logits[2 * 4 + j]);
    const auto again = forward(model, duplicate_first_row(x));
    CHECK(out.logits == again.logits);
    CHECK(out.features == again.features);
  }
}

TEST_CASE("all-zero mlp weights give all-zero logits") {
  auto model = init_model("mlp", 10, 0, kTiny);
  std::ranges::fill(model.params.flat(), 0.0);
  const auto out = forward(model, testing::random_images(3, 3, 8, 8, 1));
  for (double v : out.logits.values()) CHECK(v == 0.0);
}

TEST_CASE("linear model computes x W^T and exposes the flattened input as features") {
  auto model = init_model("linear", 3, 0, {1, 2, 2});
  const std::vector<double> w{1, 2, 3, 4, -1, 0, 0.5, 2, 0, 0, -3, 1};
  std::ranges::copy(w, model.params.view("head.weight").begin());
  std::ranges::fill(model.params.view("head.bias"), 0.0);
  const Tensor x({2, 1, 2, 2}, {0.1, 0.2, 0.3, 0.4, 1.0, 0.0, 0.5, 0.25});
  const auto out = forward(model, x);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t k = 0; k < 3; ++k) {
      double expect = 0.0;
      for (std::size_t d = 0; d < 4; ++d) expect += x[i * 4 + d] * w[k * 4 + d];
      CHECK(out.logits[i * 3 + k] == doctest::Approx(expect).epsilon(1e-14));
    }
  CHECK(out.features.storage() == x.storage());
}

TEST_CASE("uniform logits give ln K loss") {
  auto model = init_model("linear", 10, 0, kTiny);
  std::ranges::fill(model.params.flat(), 0.0);
  const auto x = testing::random_images(4, 3, 8, 8, 2);
  const std::vector<int> labels{0, 3, 9, 5};
  const auto g = loss_and_grads(model, x, labels);
  CHECK(g.loss == doctest::Approx(std::log(10.0)).epsilon(1e-12));
  CHECK(std::log(10.0) == doctest::Approx(2.3026).epsilon(1e-4));
}

TEST_CASE("saturated correct logits give vanishing loss and gradients") {
  auto model = init_model("linear", 2, 0, {1, 1, 1});
  const std::vector<double> w{200.0, -200.0};
  std::ranges::copy(w, model.params.view("head.weight").begin());
  const Tensor x({1, 1, 1, 1}, {1.0});
  const std::vector<int> labels{0};
  const auto g = loss_and_grads(model, x, labels);
  CHECK(g.loss < 1e-100);
  for (double v : g.param_grads.flat()) CHECK(std::abs(v) < 1e-100);
  CHECK(std::abs(g.input_grads[0]) < 1e-100);
}

TEST_CASE("softmax rows sum to one") {
  const auto logits = testing::random_normal({6, 7}, 3, 5.0);
  const auto p = softmax(logits);
  for (std::size_t i = 0; i < 6; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 7; ++j) s += p[i * 7 + j];
    CHECK(std::abs(s - 1.0) < 1e-6);
  }
}

TEST_CASE("shape mismatches and bad labels are rejected") {
  const auto model = init_model("small-cnn", 10, 0, {3, 16, 16});
  CHECK_THROWS_AS(forward(model, testing::random_images(1, 3, 8, 8, 0)), Error);
  const std::vector<int> bad{10};
  CHECK_THROWS_AS(loss_and_grads(model, testing::random_images(1, 3, 16, 16, 0), bad), Error);
}

TEST_CASE("analytic gradients match central finite differences") {
  for (const char* arch : {"linear", "mlp", "small-cnn"}) {
    CAPTURE(arch);
    const auto model = init_model(arch, 5, 11, kTiny);
    const auto x = testing::random_images(3, 3, 8, 8, 12);
    const auto y = testing::random_labels(3, 5, 13);
    const auto in = testing::check_input_grads(model, x, y, 100, 14);
    const auto par = testing::check_param_grads(model, x, y, 100, 15);
    CHECK(in.checked == 100);
    CHECK(par.checked == 100);
    CHECK(in.max_rel_error < 1e-2);
    CHECK(par.max_rel_error < 1e-2);
  }
}

// A 32-layer ReLU stack has kinks almost everywhere at h = 1e-3, so this
// check probes with a much smaller step.
TEST_CASE("resnet32 batch-norm gradients match finite differences in train mode") {
  const auto model = init_model("resnet32", 4, 21, {3, 8, 8});
  const auto x = testing::random_images(4, 3, 8, 8, 22);
  const auto y = testing::random_labels(4, 4, 23);
  const GradRequest train{.params = true, .inputs = true, .mode = Mode::train};
  const auto g = loss_and_grads(model, x, y, train);
  auto train_loss = [&](const ModelState& m, const Tensor& imgs) {
    return loss_and_grads(m, imgs, y, {.params = false, .inputs = false, .mode = Mode::train}).loss;
  };
  Tensor xs = x;
  const auto in = testing::check_coordinates(xs.values(), g.input_grads.values(), [&] { return train_loss(model, xs); },
                                             20, 24, 1e-5);
  ModelState perturbed = model;
  const auto par = testing::check_coordinates(perturbed.params.flat(), g.param_grads.flat(),
                                              [&] { return train_loss(perturbed, x); }, 20, 25, 1e-5);
  CHECK(in.checked == 20);
  CHECK(par.checked == 20);
  CHECK(in.max_rel_error < 1e-2);
  CHECK(par.max_rel_error < 1e-2);
  // train mode moves the running statistics, inference mode does not
  CHECK_FALSE(g.updated_buffers == model.buffers);
  CHECK(loss_and_grads(model, x, y).updated_buffers == model.buffers);
}

TEST_CASE("grow_head keeps existing class logits and adds fresh rows") {
  const auto model = init_model("small-cnn", 2, 7, {3, 8, 8});
  const auto grown = grow_head(model, 5);
  CHECK(grown.n_classes() == 5);
  const auto x = testing::random_images(3, 3, 8, 8, 8);
  const auto before = forward(model, x).logits;
  const auto after = forward(grown, x).logits;
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t k = 0; k < 2; ++k) CHECK(before[i * 2 + k] == after[i * 5 + k]);
  CHECK(grow_head(model, 5).params == grown.params);
  CHECK_THROWS_AS(grow_head(grown, 3), Error);
}
