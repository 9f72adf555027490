#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "plforge/bundle.hpp"

using namespace plforge;
namespace fs = std::filesystem;

namespace {

FeatureBundle tiny_bundle() {
  FeatureBundle b;
  b.features = MatF::Zero(1, 1);
  b.logits = MatF::Zero(1, 2);
  b.ids = {0};
  return b;
}

FeatureBundle random_bundle(std::mt19937 &gen, bool with_labels) {
  std::uniform_int_distribution<int> nd(1, 12), dd(1, 5), cd(2, 4);
  std::normal_distribution<float> val(0.0f, 2.0f);
  FeatureBundle b;
  const int n = nd(gen), d = dd(gen), c = cd(gen);
  b.features.resize(n, d);
  b.logits.resize(n, c);
  for (int r = 0; r < n; ++r) {
    for (int j = 0; j < d; ++j) b.features(r, j) = val(gen);
    for (int j = 0; j < c; ++j) b.logits(r, j) = val(gen);
  }
  if (with_labels) {
    b.labels.emplace(n);
    for (int r = 0; r < n; ++r) (*b.labels)[r] = r % c;
  }
  b.ids.resize(n);
  for (int r = 0; r < n; ++r) b.ids[r] = static_cast<std::uint32_t>(r * 7 + 1);
  return b;
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("plforge_io_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

bool bundles_equal(const FeatureBundle &a, const FeatureBundle &b) {
  if (a.features != b.features || a.logits != b.logits || a.ids != b.ids)
    return false;
  if (a.labels.has_value() != b.labels.has_value()) return false;
  return !a.labels || *a.labels == *b.labels;
}

}  // namespace

TEST_CASE("file layout byte counts") {
  TempDir tmp;
  const auto path = tmp.path / "tiny.fbun";
  save_bundle(tiny_bundle(), path);
  // header: magic(4) + version(4) + N,D,C (12) + label flag (1) = 21 bytes
  // payload: features 4 + logits 8 + ids 4 = 16, checksum 8
  CHECK(fs::file_size(path) == 45);
}

TEST_CASE("save rejects non-finite values before writing") {
  TempDir tmp;
  auto b = tiny_bundle();
  b.features(0, 0) = std::numeric_limits<float>::quiet_NaN();
  const auto path = tmp.path / "bad.fbun";
  CHECK_THROWS_WITH_AS(save_bundle(b, path), "non-finite value at row 0, col 0",
                       ConfigError);
  CHECK(!fs::exists(path));
}

TEST_CASE("round trip is bit exact") {
  TempDir tmp;
  std::mt19937 gen(1234);
  for (int rep = 0; rep < 25; ++rep) {
    const auto b = random_bundle(gen, rep % 2 == 0);
    const auto path = tmp.path / "r.fbun";
    save_bundle(b, path, "roundtrip");
    CHECK(bundles_equal(b, load_bundle(path)));
    const auto m = load_manifest(path);
    CHECK(m.n_samples == b.n());
    CHECK(m.has_labels == b.labels.has_value());
    CHECK(m.domain_name == "roundtrip");
  }
}

TEST_CASE("bad magic is rejected") {
  TempDir tmp;
  const auto path = tmp.path / "m.fbun";
  save_bundle(tiny_bundle(), path);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.put('X');
  }
  CHECK_THROWS_AS(load_bundle(path), IoError);
}

TEST_CASE("truncation is rejected") {
  TempDir tmp;
  const auto path = tmp.path / "t.fbun";
  save_bundle(tiny_bundle(), path);
  const auto full = fs::file_size(path);
  fs::resize_file(path, full - 10);
  CHECK_THROWS_AS(load_bundle(path), IoError);
}

TEST_CASE("every single-byte payload corruption is detected") {
  TempDir tmp;
  std::mt19937 gen(99);
  const auto b = random_bundle(gen, true);
  const auto path = tmp.path / "c.fbun";
  save_bundle(b, path);

  std::ifstream is(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(is)),
                    std::istreambuf_iterator<char>());
  is.close();

  const auto corrupt = tmp.path / "corrupt.fbun";
  int detected = 0;
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    std::string flipped = bytes;
    flipped[i] = static_cast<char>(flipped[i] ^ 0x5a);
    std::ofstream os(corrupt, std::ios::binary);
    os.write(flipped.data(), static_cast<std::streamsize>(flipped.size()));
    os.close();
    bool caught = false;
    try {
      const auto loaded = load_bundle(corrupt);
      // a flip in the header region can still change the parse; require
      // the result to differ from the original if no error fired
      caught = !bundles_equal(loaded, b);
    } catch (const std::exception &) {
      caught = true;
    }
    if (caught) ++detected;
  }
  CHECK(detected == static_cast<int>(bytes.size()));
}

TEST_CASE("import_csv happy path") {
  TempDir tmp;
  const auto fpath = tmp.path / "f.csv";
  const auto lpath = tmp.path / "l.csv";
  std::ofstream(fpath) << "0.5,0.5\n";
  std::ofstream(lpath) << "1.0,0.0\n";
  const auto b = import_csv(fpath, lpath);
  CHECK(b.n() == 1);
  CHECK(b.dim() == 2);
  CHECK(b.n_classes() == 2);
  CHECK(b.ids == std::vector<std::uint32_t>{0});
}

TEST_CASE("import_csv error paths") {
  TempDir tmp;
  const auto fpath = tmp.path / "f.csv";
  const auto lpath = tmp.path / "l.csv";

  SUBCASE("row-count mismatch") {
    std::ofstream(fpath) << "1,2\n3,4\n";
    std::ofstream(lpath) << "1,0\n0,1\n1,0\n";
    CHECK_THROWS_WITH_AS(import_csv(fpath, lpath),
                         doctest::Contains("row-count mismatch"), ConfigError);
  }
  SUBCASE("non-numeric cell names row and column") {
    std::ofstream(fpath) << "1,abc\n";
    std::ofstream(lpath) << "1,0\n";
    CHECK_THROWS_WITH_AS(import_csv(fpath, lpath),
                         doctest::Contains("row 1, column 2"), ConfigError);
  }
  SUBCASE("ragged rows") {
    std::ofstream(fpath) << "1,2\n3\n";
    std::ofstream(lpath) << "1,0\n0,1\n";
    CHECK_THROWS_WITH_AS(import_csv(fpath, lpath),
                         doctest::Contains("ragged"), ConfigError);
  }
}

TEST_CASE("validate catches bundle invariant violations") {
  auto b = tiny_bundle();
  SUBCASE("duplicate ids") {
    b.features = MatF::Zero(2, 1);
    b.logits = MatF::Zero(2, 2);
    b.ids = {3, 3};
    CHECK_THROWS_AS(b.validate(), ConfigError);
  }
  SUBCASE("label out of range") {
    b.labels = std::vector<std::int32_t>{5};
    CHECK_THROWS_AS(b.validate(), ConfigError);
  }
  SUBCASE("too few classes") {
    b.logits = MatF::Zero(1, 1);
    CHECK_THROWS_AS(b.validate(), ConfigError);
  }
}
