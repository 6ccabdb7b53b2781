#include <algorithm>
#include <cmath>
#include <set>

#include "adrm/data_streams.hpp"
#include "adrm/error.hpp"
#include "doctest.h"
#include "random_data.hpp"

using namespace adrm;

namespace {

LabeledData labeled(std::size_t k, std::size_t per_class) {
  LabeledData d;
  for (auto* h : {&d.train, &d.test}) {
    h->name = "toy";
    h->n_classes = k;
    h->images = testing::random_images(k * per_class, 1, 4, 4, 7);
    for (std::size_t i = 0; i < k * per_class; ++i) h->labels.push_back(static_cast<int>(i % k));
  }
  d.test.split = Split::test;
  return d;
}

std::vector<std::size_t> counts_of(const TaskStream& s) {
  std::vector<std::size_t> out;
  for (const auto& t : s.tasks) out.push_back(t.class_ids.size());
  return out;
}

Tensor filled(Shape shape, double v) {
  Tensor t(std::move(shape));
  std::ranges::fill(t.values(), v);
  return t;
}

double l2(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("class counts for the standard splits") {
  const auto data = labeled(10, 3);
  CHECK(counts_of(make_task_stream(data, 2, 0)) == std::vector<std::size_t>{5, 5});
  CHECK(counts_of(make_task_stream(data, 1, 0)) == std::vector<std::size_t>{10});
  CHECK(counts_of(make_task_stream(data, 5, 0)) == std::vector<std::size_t>{2, 2, 2, 2, 2});

  // Brute force: among all compositions of 10 into 9 positive parts, the one
  // with 1s everywhere after the first is the unique remainder-first split.
  std::vector<std::size_t> expected(9, 1);
  expected[0] = 2;
  CHECK(counts_of(make_task_stream(data, 9, 0)) == expected);
}

TEST_CASE("task streams partition the classes and the examples") {
  const auto data = labeled(10, 4);
  for (auto order : {ClassOrder::natural, ClassOrder::shuffled}) {
    const auto s = make_task_stream(data, 3, 99, order);
    std::set<int> seen;
    std::size_t n_train = 0, n_test = 0;
    for (const auto& t : s.tasks) {
      for (int c : t.class_ids) CHECK(seen.insert(c).second);
      for (auto i : t.train_subset)
        CHECK(std::ranges::count(t.class_ids, data.train.labels[i]) == 1);
      for (auto i : t.test_subset) CHECK(std::ranges::count(t.class_ids, data.test.labels[i]) == 1);
      n_train += t.train_subset.size();
      n_test += t.test_subset.size();
    }
    CHECK(seen.size() == 10);
    CHECK(n_train == data.train.size());
    CHECK(n_test == data.test.size());
  }
}

TEST_CASE("task streams are deterministic in the seed") {
  const auto data = labeled(10, 2);
  const auto a = make_task_stream(data, 5, 3, ClassOrder::shuffled);
  const auto b = make_task_stream(data, 5, 3, ClassOrder::shuffled);
  const auto c = make_task_stream(data, 5, 4, ClassOrder::shuffled);
  CHECK(a.class_order == b.class_order);
  for (std::size_t t = 0; t < 5; ++t) CHECK(a.tasks[t].train_subset == b.tasks[t].train_subset);
  CHECK(a.class_order != c.class_order);
  CHECK(make_task_stream(data, 5, 3).class_order == std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
}

TEST_CASE("bad split requests") {
  const auto data = labeled(10, 1);
  try {
    make_task_stream(data, 11, 0);
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::invalid_split);
  }
  try {
    make_task_stream(data, 0, 0);
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::invalid_argument);
  }
}

TEST_CASE("relabeling maps labels to arrival rank") {
  auto data = labeled(6, 2);
  auto s = make_task_stream(data, 3, 11, ClassOrder::shuffled);
  const auto order = s.class_order;
  const auto old_labels = data.train.labels;
  relabel_in_stream_order(data, s);
  for (std::size_t i = 0; i < old_labels.size(); ++i)
    CHECK(order[static_cast<std::size_t>(data.train.labels[i])] == old_labels[i]);
  CHECK(s.tasks[0].class_ids == std::vector<int>{0, 1});
  CHECK(s.tasks[2].class_ids == std::vector<int>{4, 5});
}

TEST_CASE("merge_tasks yields a single joint task") {
  const auto data = labeled(10, 2);
  const auto joint = merge_tasks(make_task_stream(data, 5, 0));
  REQUIRE(joint.tasks.size() == 1);
  CHECK(joint.tasks[0].class_ids.size() == 10);
  CHECK(joint.tasks[0].train_subset.size() == data.train.size());
}

TEST_CASE("dataset validation") {
  auto data = labeled(3, 2);
  CHECK_NOTHROW(data.train.validate());
  data.train.labels[0] = 3;
  CHECK_THROWS_AS(data.train.validate(), Error);
  data.train.labels[0] = 0;
  data.train.images[0] = 1.5;
  CHECK_THROWS_AS(data.train.validate(), Error);
}

TEST_CASE("augmentation") {
  const auto x = testing::random_images(6, 3, 5, 7, 1);

  SUBCASE("disabled config is the identity") { CHECK(augment_batch(x, AugmentConfig::disabled(), 5) == x); }

  SUBCASE("certain flip reverses the width axis") {
    auto cfg = AugmentConfig::disabled();
    cfg.flip_prob = 1.0;
    const auto y = augment_batch(x, cfg, 5);
    for (std::size_t n = 0; n < 6; ++n)
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t h = 0; h < 5; ++h)
          for (std::size_t w = 0; w < 7; ++w)
            CHECK(y[((n * 3 + c) * 5 + h) * 7 + w] == x[((n * 3 + c) * 5 + h) * 7 + (6 - w)]);
  }

  SUBCASE("brightness clips at one") {
    auto cfg = AugmentConfig::disabled();
    cfg.brightness_prob = 1.0;
    cfg.brightness_low = cfg.brightness_high = 0.2;
    const auto y = augment_batch(filled({2, 3, 4, 4}, 0.9), cfg, 0);
    for (double v : y.values()) CHECK(v == 1.0);
  }

  SUBCASE("default config stays in range and is seeded") {
    const AugmentConfig cfg;
    const auto a = augment_batch(x, cfg, 17);
    CHECK(a.shape() == x.shape());
    CHECK(a == augment_batch(x, cfg, 17));
    CHECK_FALSE(a == augment_batch(x, cfg, 18));
    for (double v : a.values()) CHECK((v >= 0.0 && v <= 1.0));
  }

  SUBCASE("non-finite input is rejected") {
    auto bad = x;
    bad[3] = std::nan("");
    CHECK_THROWS_AS(augment_batch(bad, AugmentConfig{}, 0), Error);
  }
}

TEST_CASE("corruption catalogue") {
  CHECK(corruption_kinds().size() >= 10);
  for (const char* k : {"gaussian_noise", "shot_noise", "impulse_noise", "defocus_blur", "motion_blur",
                        "brightness", "contrast", "fog", "pixelate", "jpeg_compression"})
    CHECK(is_corruption_kind(k));
  try {
    corrupt(testing::random_images(1, 1, 4, 4, 0), {"snow_storm", 1}, 0);
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::unsupported_corruption);
  }
  CHECK_THROWS_AS(corrupt(testing::random_images(1, 1, 4, 4, 0), {"fog", 6}, 0), Error);
}

TEST_CASE("severity zero is the identity and outputs stay in range") {
  const auto x = testing::random_images(3, 3, 16, 16, 2);
  for (const auto& kind : corruption_kinds()) {
    CAPTURE(kind);
    CHECK(corrupt(x, {kind, 0}, 9) == x);
    for (int s = 1; s <= kMaxSeverity; ++s) {
      const auto y = corrupt(x, {kind, s}, 9);
      CHECK(y.shape() == x.shape());
      CHECK(std::ranges::all_of(y.values(), [](double v) { return v >= 0.0 && v <= 1.0; }));
      CHECK(y == corrupt(x, {kind, s}, 9));
    }
  }
}

TEST_CASE("gaussian noise on a flat grey image is unbiased") {
  const auto grey = filled({1, 1, 100, 100}, 0.5);
  for (int s = 1; s <= kMaxSeverity; ++s) {
    const double sigma = corruption_table()[0].values[static_cast<std::size_t>(s - 1)];
    const auto y = corrupt(grey, {"gaussian_noise", s}, 123 + static_cast<std::uint64_t>(s));
    double mean = 0.0;
    for (double v : y.values()) mean += v;
    mean /= static_cast<double>(y.size());
    CHECK(std::abs(mean - 0.5) < 3.0 * sigma / 100.0);
  }
}

TEST_CASE("strongest contrast lowers the per-image spread") {
  const auto x = testing::random_images(4, 3, 8, 8, 5);
  const auto y = corrupt(x, {"contrast", 5}, 0);
  auto stddev = [](std::span<const double> v) {
    double m = 0.0, s = 0.0;
    for (double a : v) m += a;
    m /= static_cast<double>(v.size());
    for (double a : v) s += (a - m) * (a - m);
    return std::sqrt(s / static_cast<double>(v.size()));
  };
  for (std::size_t i = 0; i < 4; ++i) CHECK(stddev(y.row(i)) < stddev(x.row(i)));
}

TEST_CASE("mean distortion grows with severity for every kind") {
  const auto x = testing::random_images(1, 3, 16, 16, 31);
  for (const auto& kind : corruption_kinds()) {
    CAPTURE(kind);
    double previous = 0.0;
    for (int s = 1; s <= kMaxSeverity; ++s) {
      double total = 0.0;
      for (std::uint64_t seed = 0; seed < 100; ++seed) total += l2(corrupt(x, {kind, s}, seed), x);
      const double mean = total / 100.0;
      CAPTURE(s);
      CHECK(mean >= previous);
      previous = mean;
    }
    CHECK(previous > 0.0);
  }
}
