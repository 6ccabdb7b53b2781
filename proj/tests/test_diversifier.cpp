#include <algorithm>
#include <cmath>
#include <set>

#include "adrm/diversifier.hpp"
#include "adrm/error.hpp"
#include "doctest.h"
#include "random_data.hpp"

using namespace adrm;

namespace {

const InputShape kTiny{3, 8, 8};

Batch random_batch(std::size_t n, int k, std::uint64_t seed) {
  return {testing::random_images(n, 3, 8, 8, seed), testing::random_labels(n, k, seed + 1)};
}

Batch rows_of(std::size_t n, double v, int label) {
  Batch b{Tensor({n, 1, 1, 1}, v), std::vector<int>(n, label)};
  return b;
}

DiversifiedBatch fake_split(std::size_t n_fooled, std::size_t n_resisted) {
  DiversifiedBatch d;
  d.fooled = rows_of(n_fooled, 0.1, 1);
  d.resisted = rows_of(n_resisted, 0.9, 2);
  return d;
}

}  // namespace

TEST_CASE("zero epsilon reproduces the clean-prediction partition") {
  const auto model = init_model("mlp", 10, 3, kTiny);
  const auto batch = random_batch(40, 10, 5);
  const auto d = diversify(model, batch, {0.5, 0.0, 0.0, 1});
  CHECK(d.perturbed == batch.images);
  const auto pred = predict(model, batch.images);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const bool fooled = std::ranges::count(d.fooled_idx, i) == 1;
    CHECK(fooled == (pred[i] != batch.labels[i]));
  }
}

TEST_CASE("unbeatable margins leave nothing fooled") {
  auto model = init_model("linear", 3, 0, kTiny);
  std::ranges::fill(model.params.flat(), 0.0);
  model.params.view("head.bias")[2] = 100.0;
  Batch batch{testing::random_images(12, 3, 8, 8, 1), std::vector<int>(12, 2)};
  const auto d = diversify(model, batch, {});
  CHECK(d.fooled_idx.empty());
  CHECK(d.resisted_idx.size() == 12);
}

TEST_CASE("one-dimensional boundary crossings match a hand enumeration") {
  // logit_1 = x - 0.5, logit_0 = 0: the boundary sits at x = 0.5 and a tie
  // goes to class 0.
  auto model = init_model("linear", 2, 0, {1, 1, 1});
  std::ranges::fill(model.params.flat(), 0.0);
  model.params.view("head.weight")[1] = 1.0;
  model.params.view("head.bias")[1] = -0.5;

  const std::vector<double> xs{0.53, 0.51, 0.47, 0.40};
  const std::vector<int> ys{1, 1, 0, 0};
  const Batch batch{Tensor({4, 1, 1, 1}, xs), ys};
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const DiversificationSpec spec{0.1, 1.0 / 255, 16.0 / 255, seed};
    const auto d = diversify(model, batch, spec);
    for (std::size_t i = 0; i < 4; ++i) {
      // FGSM pushes each sample toward the other side by its epsilon.
      const double moved = ys[i] == 1 ? xs[i] - d.epsilons[i] : xs[i] + d.epsilons[i];
      const int predicted = moved - 0.5 > 0.0 ? 1 : 0;
      CHECK((std::ranges::count(d.fooled_idx, i) == 1) == (predicted != ys[i]));
    }
  }
}

TEST_CASE("partition, label and epsilon properties on random models") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto arch = seed % 2 ? "mlp" : "small-cnn";
    const auto model = init_model(arch, 5, seed, kTiny);
    const auto batch = random_batch(1 + seed % 17, 5, seed * 7);
    const DiversificationSpec spec{0.25, 1.0 / 255, 16.0 / 255, seed};
    const auto d = diversify(model, batch, spec);

    std::set<std::size_t> all(d.fooled_idx.begin(), d.fooled_idx.end());
    for (auto i : d.resisted_idx) CHECK(all.insert(i).second);
    CHECK(all.size() == batch.size());
    CHECK(d.fooled.size() + d.resisted.size() == batch.size());
    for (std::size_t j = 0; j < d.fooled_idx.size(); ++j) CHECK(d.fooled.labels[j] == batch.labels[d.fooled_idx[j]]);
    for (std::size_t j = 0; j < d.resisted_idx.size(); ++j)
      CHECK(d.resisted.labels[j] == batch.labels[d.resisted_idx[j]]);
    CHECK(d.originals.images == batch.images);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      CHECK(d.epsilons[i] >= 1.0 / 255);
      CHECK(d.epsilons[i] <= 16.0 / 255);
      const auto a = d.perturbed.row(i), b = batch.images.row(i);
      for (std::size_t k = 0; k < a.size(); ++k) CHECK(std::abs(a[k] - b[k]) <= d.epsilons[i] + 1e-12);
    }
  }
}

TEST_CASE("diversify input validation") {
  const auto model = init_model("mlp", 5, 0, kTiny);
  CHECK_THROWS_AS(diversify(model, Batch{Tensor({0, 3, 8, 8}), {}}, {}), Error);
  CHECK_THROWS_AS(diversify(model, random_batch(2, 5, 0), {0.1, 0.2, 0.1, 0}), Error);
}

TEST_CASE("mixing counts") {
  Rng rng(1);
  SUBCASE("ratio zero returns the memory batch and leaves the rng alone") {
    const auto mem = rows_of(20, 0.5, 0);
    const Rng before = rng;
    const auto out = mix_rehearsal(mem, fake_split(5, 5), 0.0, rng);
    CHECK(out.images == mem.images);
    CHECK(out.labels == mem.labels);
    CHECK(rng == before);
  }
  SUBCASE("ratio one with full subsets triples the batch") {
    const auto out = mix_rehearsal(rows_of(8, 0.5, 0), fake_split(8, 8), 1.0, rng);
    CHECK(out.size() == 24);
  }
  SUBCASE("a short subset contributes what it has") {
    MixCounts counts;
    const auto out = mix_rehearsal(rows_of(20, 0.5, 0), fake_split(1, 7), 0.1, rng, &counts);
    CHECK(counts.fooled == 1);
    CHECK(counts.resisted == 2);
    CHECK(out.size() == 23);
    CHECK(out.labels == std::vector<int>{0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 2, 2});
  }
  SUBCASE("size bound over random cases") {
    for (int t = 0; t < 200; ++t) {
      const std::size_t b = 1 + rng() % 40, f = rng() % 50, r = rng() % 50;
      const double ratio = static_cast<double>(rng() % 101) / 100.0;
      const auto out = mix_rehearsal(rows_of(b, 0.5, 0), fake_split(f, r), ratio, rng);
      CHECK(out.size() <= static_cast<double>(b) * (1 + 2 * ratio) + 1e-9);
      CHECK(out.size() >= b);
    }
  }
  SUBCASE("bad ratio") { CHECK_THROWS_AS(mix_rehearsal(rows_of(4, 0.5, 0), fake_split(1, 1), 1.5, rng), Error); }
  CHECK(diversified_quota(0.57, 100) == 57);
}
