#include <fstream>

#include "adrm/dataset_io.hpp"
#include "adrm/error.hpp"
#include "doctest.h"
#include "json.hpp"
#include "random_data.hpp"

using namespace adrm;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("adrm_test_io_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("sha256 known vectors") {
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("npy round trip and header layout") {
  const auto dir = scratch_dir("npy");
  const auto x = testing::random_normal({2, 3, 4}, 5);
  write_npy(dir / "x.npy", x);
  CHECK(read_npy(dir / "x.npy") == x);

  const std::string bytes = read_text(dir / "x.npy");
  CHECK(bytes.substr(1, 5) == "NUMPY");
  CHECK((10 + static_cast<unsigned char>(bytes[8])) % 64 == 0);
  CHECK(bytes.find("'shape': (2, 3, 4)") != std::string::npos);
  CHECK(bytes.size() == 10 + static_cast<unsigned char>(bytes[8]) + 24 * 8);

  write_npy_labels(dir / "y.npy", {3, 0, 7});
  CHECK(read_npy_labels(dir / "y.npy") == std::vector<int>{3, 0, 7});
  CHECK(read_text(dir / "y.npy").find("'shape': (3,)") != std::string::npos);

  std::ofstream(dir / "bad.npy") << "not numpy";
  CHECK_THROWS_AS(read_npy(dir / "bad.npy"), Error);
}

TEST_CASE("synthetic data is valid and seeded") {
  SyntheticSpec spec;
  spec.train_per_class = 5;
  spec.test_per_class = 2;
  const auto a = make_synthetic(spec);
  a.train.validate();
  a.test.validate();
  CHECK(a.train.images.shape() == Shape{50, 3, 16, 16});
  CHECK(a.test.size() == 20);
  CHECK(make_synthetic(spec).train.images == a.train.images);
  spec.seed = 1;
  CHECK_FALSE(make_synthetic(spec).train.images == a.train.images);
  // Train and test draw from separate streams.
  CHECK_FALSE(a.train.images.row(0)[0] == a.test.images.row(0)[0]);
}

TEST_CASE("image directory loader") {
  const auto dir = scratch_dir("images");
  {
    std::ofstream f(dir / "a.ppm", std::ios::binary);
    f << "P6\n# comment\n2 1\n255\n";
    const unsigned char px[] = {255, 0, 0, 0, 51, 255};
    f.write(reinterpret_cast<const char*>(px), 6);
  }
  write_npy(dir / "b.npy", Tensor({3, 1, 2}, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6}));
  std::ofstream(dir / "labels.csv") << "path,label,split\na.ppm,1,train\nb.npy,0,test\n";
  const auto d = load_image_directory(dir);
  CHECK(d.train.images.shape() == Shape{1, 3, 1, 2});
  CHECK(d.train.n_classes == 2);
  CHECK(d.train.images[0] == 1.0);   // R of pixel 0
  CHECK(d.train.images[3] == 0.2);   // G of pixel 1
  CHECK(d.train.images[5] == 1.0);   // B of pixel 1
  CHECK(d.test.labels == std::vector<int>{0});

  std::ofstream(dir / "labels.csv") << "path,label,split\na.ppm,1,validation\n";
  CHECK_THROWS_AS(load_image_directory(dir), Error);
  CHECK_THROWS_AS(load_image_directory(dir / "missing"), Error);
}

TEST_CASE("cifar loader reports missing files") {
  try {
    load_cifar10_binary(scratch_dir("cifar"));
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::artifact_not_found);
  }
}

TEST_CASE("corruption export writes arrays and a checksummed manifest") {
  const auto dir = scratch_dir("export");
  DatasetHandle d;
  d.name = "toy";
  d.n_classes = 2;
  d.images = testing::random_images(4, 3, 8, 8, 3);
  d.labels = {0, 1, 0, 1};
  const auto rows = export_corruptions(d, {"gaussian_noise", "fog"}, {0, 3}, 11, dir);
  CHECK(rows.size() == 4);
  const auto manifest = nlohmann::json::parse(read_text(dir / "manifest.json"));
  REQUIRE(manifest["entries"].size() == 4);
  for (const auto& e : manifest["entries"]) {
    const fs::path file = dir / e["file"].get<std::string>();
    CHECK(sha256_file(file) == e["sha256"].get<std::string>());
    const auto arr = read_npy(file);
    CHECK(arr.shape() == d.images.shape());
    if (e["severity"] == 0) CHECK(arr == d.images);
    CHECK(arr == corrupt(d.images, {e["kind"].get<std::string>(), e["severity"].get<int>()},
                         e["seed"].get<std::uint64_t>()));
  }
  CHECK_THROWS_AS(export_corruptions(d, {"rain"}, {1}, 0, dir), Error);
}
