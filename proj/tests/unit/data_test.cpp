#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "darht/data.hpp"
#include "darht/errors.hpp"

using namespace darht;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) {
  // One directory per test so ctest -j runs cannot collide.
  const fs::path dir =
      fs::temp_directory_path() / "darht_data_test" / ::testing::UnitTest::GetInstance()->current_test_info()->name();
  fs::create_directories(dir);
  return dir / name;
}

void write_bytes(const fs::path& p, const std::vector<unsigned char>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

// Two 2x2 images: [0,255;255,0] and [255,255;0,0], labels 1 and 0.
std::vector<unsigned char> fixture_images() {
  return {0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2, 0, 255, 255, 0, 255, 255, 0, 0};
}
std::vector<unsigned char> fixture_labels() { return {0, 0, 8, 1, 0, 0, 0, 2, 1, 0}; }

}  // namespace

TEST(Synthetic, ClassBalance) {
  for (auto kind : {SyntheticKind::Blobs, SyntheticKind::Rings, SyntheticKind::Textures})
    for (std::size_t n : {3u, 10u, 301u}) {
      SyntheticConfig cfg;
      cfg.kind = kind;
      cfg.count = n;
      cfg.classes = 3;
      const auto ds = generate_synthetic(cfg);
      ds.validate();
      const auto counts = ds.class_counts();
      const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
      EXPECT_LE(*hi - *lo, 1u);
    }
}

TEST(Synthetic, DeterministicPerSeed) {
  for (auto kind : {SyntheticKind::Blobs, SyntheticKind::Rings, SyntheticKind::Textures}) {
    SyntheticConfig cfg;
    cfg.kind = kind;
    cfg.seed = 17;
    const auto a = generate_synthetic(cfg), b = generate_synthetic(cfg);
    EXPECT_TRUE(a.inputs.identical(b.inputs));
    EXPECT_EQ(a.labels, b.labels);
    cfg.seed = 18;
    EXPECT_FALSE(a.inputs.identical(generate_synthetic(cfg).inputs));
  }
}

TEST(Synthetic, TexturesAreSingleChannelImages) {
  SyntheticConfig cfg;
  cfg.kind = SyntheticKind::Textures;
  cfg.classes = 4;
  cfg.count = 40;
  const auto ds = generate_synthetic(cfg);
  EXPECT_EQ(ds.example_shape(), (Shape{1, 8, 8}));
}

TEST(Synthetic, NearestCentroidOracle) {
  SyntheticConfig cfg;
  cfg.noise = 0.1f;
  cfg.separation = 3.0f;
  cfg.count = 3000;
  const auto ds = generate_synthetic(cfg);
  const auto centres = blob_centroids(cfg);
  // Adjacent centres sit 2 * 3 sigma apart.
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t b = a + 1; b < 3; ++b)
      EXPECT_NEAR(std::hypot(centres[a][0] - centres[b][0], centres[a][1] - centres[b][1]), 0.6, 1e-7);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    std::size_t best = 0;
    double best_d = 1e9;
    for (std::size_t k = 0; k < 3; ++k) {
      const double d = std::hypot(ds.inputs.at(i, 0) - centres[k][0], ds.inputs.at(i, 1) - centres[k][1]);
      if (d < best_d) {
        best_d = d;
        best = k;
      }
    }
    correct += best == ds.labels[i];
  }
  EXPECT_GT(static_cast<double>(correct) / ds.size(), 0.95);
}

TEST(Synthetic, RejectsInvalidSizes) {
  SyntheticConfig cfg;
  cfg.count = 2;
  EXPECT_THROW(generate_synthetic(cfg), UsageError);
  cfg = {};
  cfg.noise = -1.0f;
  EXPECT_THROW(generate_synthetic(cfg), UsageError);
  cfg = {};
  cfg.kind = SyntheticKind::Rings;
  cfg.dims = 1;
  EXPECT_THROW(generate_synthetic(cfg), UsageError);
  EXPECT_THROW(parse_synthetic_kind("spirals"), UsageError);
}

TEST(Split, DisjointAndExhaustive) {
  SyntheticConfig cfg;
  cfg.count = 101;
  const auto ds = generate_synthetic(cfg);
  for (double frac : {0.1, 0.25, 0.5, 0.9}) {
    const auto s = train_test_split(ds, frac, 3);
    std::set<std::size_t> seen(s.train_index.begin(), s.train_index.end());
    for (std::size_t i : s.test_index) EXPECT_TRUE(seen.insert(i).second);
    EXPECT_EQ(seen.size(), ds.size());
    EXPECT_EQ(s.train.size() + s.test.size(), ds.size());
    EXPECT_EQ(s.test.split, Split::Test);
  }
  EXPECT_THROW(train_test_split(ds, 0.0, 3), UsageError);
  EXPECT_THROW(train_test_split(ds, 1.0, 3), UsageError);
}

TEST(Normalize, IdempotentAndInRange) {
  Dataset ds;
  ds.inputs = Tensor({3, 2}, {0.2f, 0.4f, 0.3f, 0.6f, 0.25f, 0.5f});
  ds.labels = {0, 1, 0};
  ds.classes = 2;
  const auto once = normalize(ds);
  const auto twice = normalize(once);
  EXPECT_TRUE(once.inputs.identical(twice.inputs));
  EXPECT_FLOAT_EQ(once.inputs[0], 0.0f);
  EXPECT_FLOAT_EQ(once.inputs[3], 1.0f);
  once.validate();
  ds.inputs = Tensor::filled({3, 2}, 0.7f);
  EXPECT_TRUE(normalize(normalize(ds)).inputs.identical(normalize(ds).inputs));
}

TEST(Idx, HandCraftedFixture) {
  write_bytes(temp_path("fx-images"), fixture_images());
  write_bytes(temp_path("fx-labels"), fixture_labels());
  const auto ds = load_idx(temp_path("fx-images"), temp_path("fx-labels"));
  EXPECT_EQ(ds.inputs.shape(), (Shape{2, 1, 2, 2}));
  const std::vector<float> expected{0, 1, 1, 0, 1, 1, 0, 0};
  for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_EQ(ds.inputs[i], expected[i]);
  EXPECT_EQ(ds.labels, (std::vector<std::size_t>{1, 0}));
  EXPECT_EQ(ds.classes, 2u);
}

TEST(Idx, WrongMagic) {
  auto bytes = fixture_images();
  bytes[3] = 0x01;
  write_bytes(temp_path("bad-images"), bytes);
  write_bytes(temp_path("fx-labels"), fixture_labels());
  EXPECT_THROW(load_idx(temp_path("bad-images"), temp_path("fx-labels")), FormatError);
  write_bytes(temp_path("fx-images"), fixture_images());
  auto lab = fixture_labels();
  lab[3] = 0x03;
  write_bytes(temp_path("bad-labels"), lab);
  EXPECT_THROW(load_idx(temp_path("fx-images"), temp_path("bad-labels")), FormatError);
}

TEST(Idx, Truncated) {
  auto bytes = fixture_images();
  bytes.pop_back();
  write_bytes(temp_path("short-images"), bytes);
  write_bytes(temp_path("fx-labels"), fixture_labels());
  EXPECT_THROW(load_idx(temp_path("short-images"), temp_path("fx-labels")), FormatError);
  write_bytes(temp_path("stub"), {0, 0, 8});
  EXPECT_THROW(load_idx(temp_path("stub"), temp_path("fx-labels")), FormatError);
}

TEST(Idx, RoundTrip) {
  write_bytes(temp_path("fx-images"), fixture_images());
  write_bytes(temp_path("fx-labels"), fixture_labels());
  const auto ds = load_idx(temp_path("fx-images"), temp_path("fx-labels"));
  write_idx(ds, temp_path("rt-images"), temp_path("rt-labels"));
  const auto back = load_idx(temp_path("rt-images"), temp_path("rt-labels"));
  EXPECT_TRUE(back.inputs.identical(ds.inputs));
  EXPECT_EQ(back.labels, ds.labels);
  EXPECT_EQ(back.classes, ds.classes);

  SyntheticConfig cfg;
  cfg.kind = SyntheticKind::Textures;
  cfg.count = 12;
  write_idx(generate_synthetic(cfg), temp_path("tx-images"), temp_path("tx-labels"));
  const auto quantized = load_idx(temp_path("tx-images"), temp_path("tx-labels"));
  write_idx(quantized, temp_path("tx2-images"), temp_path("tx2-labels"));
  EXPECT_TRUE(load_idx(temp_path("tx2-images"), temp_path("tx2-labels")).inputs.identical(quantized.inputs));
}
