#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <vector>

#include "dpseq/preprocess.hpp"
#include "dpseq/stain.hpp"
#include "dpseq/tiling.hpp"

using namespace dpseq;

namespace {

// pixels drawn from a two-stain Beer-Lambert model with known directions
ImageU8 synthetic_he_tile(const std::array<std::array<double, 2>, 3>& m, std::size_t edge,
                          std::uint64_t seed) {
  ImageU8 tile(edge, edge);
  Rng rng(seed);
  for (std::size_t y = 0; y < edge; ++y)
    for (std::size_t x = 0; x < edge; ++x) {
      const double ch = rng.uniform(0.0, 1.5);
      const double ce = rng.uniform(0.0, 1.5);
      for (std::size_t c = 0; c < 3; ++c) {
        const double od = m[c][0] * ch + m[c][1] * ce;
        const double v = 255.0 * std::pow(10.0, -od);
        tile.at(y, x, c) = static_cast<std::uint8_t>(std::clamp(v + 0.5, 0.0, 255.0));
      }
    }
  return tile;
}

std::array<std::array<double, 2>, 3> unit_columns(std::array<std::array<double, 2>, 3> m) {
  for (std::size_t j = 0; j < 2; ++j) {
    double n = 0.0;
    for (std::size_t c = 0; c < 3; ++c) n += m[c][j] * m[c][j];
    n = std::sqrt(n);
    for (std::size_t c = 0; c < 3; ++c) m[c][j] /= n;
  }
  return m;
}

double column_angle(const std::array<std::array<double, 2>, 3>& a,
                    const std::array<std::array<double, 2>, 3>& b, std::size_t j) {
  double dot = 0.0;
  for (std::size_t c = 0; c < 3; ++c) dot += a[c][j] * b[c][j];
  return std::acos(std::clamp(dot, -1.0, 1.0));
}

const std::array<std::array<double, 2>, 3> kTrueStains =
    unit_columns({{{0.65, 0.07}, {0.70, 0.99}, {0.29, 0.11}}});

}  // namespace

TEST_CASE("tessellate grid counts and placement") {
  TileSpec spec;
  spec.tile_edge = 512;
  spec.target_mpp = 0.5;

  ImageU8 big(1024, 1024, 200);
  // distinct value per quadrant so tiles can be traced to their region
  for (std::size_t y = 0; y < 1024; ++y)
    for (std::size_t x = 0; x < 1024; ++x)
      big.at(y, x, 0) = static_cast<std::uint8_t>((y / 512) * 2 + (x / 512) + 10);

  std::vector<Tile> tiles = tessellate(big, 0.5, spec);
  REQUIRE(tiles.size() == 4);
  for (const Tile& t : tiles) {
    CHECK(t.image.height == 512);
    CHECK(t.image.width == 512);
    const std::uint8_t tag = static_cast<std::uint8_t>(t.grid_row * 2 + t.grid_col + 10);
    CHECK(t.image.at(0, 0, 0) == tag);
    CHECK(t.image.at(511, 511, 0) == tag);
  }

  // partial edge tiles are dropped
  CHECK(tessellate(ImageU8(1000, 1000), 0.5, spec).size() == 1);

  // finer source resolution is resampled down before cutting
  std::vector<Tile> resampled = tessellate(ImageU8(2048, 2048), 0.25, spec);
  CHECK(resampled.size() == 4);

  CHECK_THROWS_AS(tessellate(ImageU8(256, 256), 0.5, spec), ImageError);
}

TEST_CASE("optical density endpoints and round trip") {
  CHECK(od_from_u8(255) == 0.0);
  CHECK(od_from_u8(1) == doctest::Approx(std::log10(255.0)).epsilon(1e-12));
  CHECK(od_from_u8(0) == od_from_u8(1));  // clamp keeps the OD finite
  // OD(26) just misses 1.0: -log10(26/255)
  CHECK(od_from_u8(26) == doctest::Approx(-std::log10(26.0 / 255.0)).epsilon(1e-12));

  for (int v = 1; v <= 255; ++v)
    CHECK(u8_from_od(od_from_u8(static_cast<std::uint8_t>(v))) == v);

  ImageU8 img(2, 1);
  img.at(0, 0, 0) = 100;
  img.at(1, 0, 2) = 30;
  std::vector<double> od = od_transform(img);
  REQUIRE(od.size() == 6);
  CHECK(od[0] == doctest::Approx(-std::log10(100.0 / 255.0)));
  ImageU8 back = od_inverse(od, 2, 1);
  CHECK(back.pixels == img.pixels);
}

TEST_CASE("estimate_stains recovers a generative model") {
  ImageU8 tile = synthetic_he_tile(kTrueStains, 70, 11);
  StainProfile p = estimate_stains(tile);

  for (std::size_t j = 0; j < 2; ++j) {
    double norm = 0.0;
    for (std::size_t c = 0; c < 3; ++c) {
      CHECK(p.stain_matrix[c][j] >= 0.0);
      norm += p.stain_matrix[c][j] * p.stain_matrix[c][j];
    }
    CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(column_angle(p.stain_matrix, kTrueStains, j) < 0.05);
  }
  // hematoxylin first: larger blue-channel density
  CHECK(p.stain_matrix[2][0] > p.stain_matrix[2][1]);
  CHECK(p.max_concentration[0] > 0.0);
  CHECK(p.max_concentration[1] > 0.0);

  // a background-only tile has no pixels above the OD threshold
  CHECK_THROWS_AS(estimate_stains(ImageU8(64, 64, 250)), InsufficientTissueError);
}

TEST_CASE("estimate_stains is insensitive to pixel duplication") {
  ImageU8 tile = synthetic_he_tile(kTrueStains, 48, 12);
  ImageU8 doubled(48, 96);
  for (std::size_t y = 0; y < 48; ++y)
    for (std::size_t x = 0; x < 48; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        doubled.at(y, x, c) = tile.at(y, x, c);
        doubled.at(y, x + 48, c) = tile.at(y, x, c);
      }
  StainProfile a = estimate_stains(tile);
  StainProfile b = estimate_stains(doubled);
  for (std::size_t j = 0; j < 2; ++j)
    CHECK(column_angle(a.stain_matrix, b.stain_matrix, j) < 5e-3);
}

TEST_CASE("macenko self-normalization is near identity") {
  ImageU8 tile = synthetic_he_tile(kTrueStains, 64, 13);
  StainProfile p = estimate_stains(tile);
  ImageU8 out = macenko_normalize(tile, p, p);
  REQUIRE(out.pixels.size() == tile.pixels.size());
  double mae = 0.0;
  for (std::size_t i = 0; i < out.pixels.size(); ++i)
    mae += std::abs(static_cast<double>(out.pixels[i]) - static_cast<double>(tile.pixels[i]));
  mae /= static_cast<double>(out.pixels.size());
  CHECK(mae < 2.0);
}

TEST_CASE("macenko normalization moves a tile onto the reference stains") {
  const auto other = unit_columns({{{0.55, 0.20}, {0.75, 0.90}, {0.40, 0.05}}});
  ImageU8 src_tile = synthetic_he_tile(kTrueStains, 64, 14);
  ImageU8 ref_tile = synthetic_he_tile(other, 64, 15);
  StainProfile src = estimate_stains(src_tile);
  StainProfile ref = estimate_stains(ref_tile);

  ImageU8 out = macenko_normalize(src_tile, src, ref);
  StainProfile result = estimate_stains(out);
  for (std::size_t j = 0; j < 2; ++j)
    CHECK(column_angle(result.stain_matrix, ref.stain_matrix, j) < 0.1);
}

TEST_CASE("stain profile serialization round trip") {
  ImageU8 tile = synthetic_he_tile(kTrueStains, 48, 16);
  StainProfile p = estimate_stains(tile);
  const auto path = std::filesystem::temp_directory_path() / "dpseq_test_profile.json";
  save_stain_profile(path, p);
  StainProfile q = load_stain_profile(path);
  std::filesystem::remove(path);

  CHECK(q.version == p.version);
  CHECK(q.beta == p.beta);
  CHECK(q.alpha == p.alpha);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t j = 0; j < 2; ++j)
      CHECK(q.stain_matrix[c][j] == doctest::Approx(p.stain_matrix[c][j]).epsilon(1e-12));
  CHECK(q.max_concentration[0] == doctest::Approx(p.max_concentration[0]).epsilon(1e-12));
}

TEST_CASE("tile_to_tensor standardization") {
  ModelConfig cfg;
  cfg.image_edge = 8;
  cfg.patch_edge = 2;

  Tensor<float> white = tile_to_tensor<float>(ImageU8(8, 8, 255), cfg);
  REQUIRE(white.shape() == Shape{8, 8, 3});
  for (float v : white.values()) CHECK(v == doctest::Approx(1.0f));

  Tensor<float> black = tile_to_tensor<float>(ImageU8(8, 8, 0), cfg);
  for (float v : black.values()) CHECK(v == doctest::Approx(-1.0f));

  // constant image survives the resize path unchanged
  Tensor<float> resized = tile_to_tensor<float>(ImageU8(16, 16, 128), cfg);
  REQUIRE(resized.shape() == Shape{8, 8, 3});
  for (float v : resized.values())
    CHECK(v == doctest::Approx((128.0 / 255.0 - 0.5) / 0.5).epsilon(1e-6));
}

TEST_CASE("tumor probability and filter") {
  ModelConfig cfg;
  cfg.depths = {1, 1, 1, 1};
  cfg.embed_dims = {8, 8, 8, 8};
  cfg.hidden_dims = {4, 4, 4, 4};
  cfg.downsample = {false, false, false};
  cfg.patch_edge = 2;
  cfg.image_edge = 8;
  cfg.head_dims = {8, 4};
  cfg.n_classes = 9;
  cfg.mlp_ratio = 2;
  cfg.dropout = 0.0;
  DpseqModel<float> model = init_model<float>(cfg, 3);

  Rng rng(4);
  std::vector<Tensor<float>> tiles;
  for (int i = 0; i < 5; ++i) {
    std::vector<float> v(8 * 8 * 3);
    for (auto& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
    tiles.emplace_back(Shape{8, 8, 3}, std::move(v));
  }

  for (const auto& t : tiles) {
    const double p = tumor_probability(model, t);
    CHECK(p > 0.0);
    CHECK(p < 1.0);
    Tensor<float> probs = softmax(forward(model, t));
    CHECK(p == doctest::Approx(static_cast<double>(probs.values()[kTumorClass])).epsilon(1e-12));
  }

  CHECK(tumor_filter(model, tiles, 0.0).size() == 5);
  CHECK(tumor_filter(model, tiles, 1.0).empty());
  const double p0 = tumor_probability(model, tiles[0]);
  auto kept = tumor_filter(model, tiles, p0);  // strict: tile 0 itself is excluded
  for (const auto& [idx, score] : kept) CHECK(idx != 0);

  DpseqModel<float> binary = init_model<float>(cfg, 3);
  replace_head(binary, 2, 0);
  CHECK_THROWS_AS(tumor_probability(binary, tiles[0]), std::invalid_argument);
}

TEST_CASE("tile sampling cap") {
  CHECK(sample_tile_indices(3, 500, 0) == std::vector<std::size_t>{0, 1, 2});
  CHECK(sample_tile_indices(500, 500, 0).size() == 500);

  std::vector<std::size_t> a = sample_tile_indices(2000, 500, 7);
  CHECK(a.size() == 500);
  CHECK(std::is_sorted(a.begin(), a.end()));
  CHECK(std::adjacent_find(a.begin(), a.end()) == a.end());
  for (std::size_t i : a) CHECK(i < 2000);
  CHECK(a == sample_tile_indices(2000, 500, 7));
  CHECK(a != sample_tile_indices(2000, 500, 8));

  // every index is picked at roughly cap/n frequency across seeds
  const std::size_t n = 10, cap = 5, trials = 2000;
  std::vector<std::size_t> counts(n, 0);
  for (std::uint64_t s = 0; s < trials; ++s)
    for (std::size_t i : sample_tile_indices(n, cap, s)) ++counts[i];
  for (std::size_t c : counts) {
    CHECK(c > trials * cap / n * 0.9);
    CHECK(c < trials * cap / n * 1.1);
  }

  CHECK_THROWS_AS(sample_tile_indices(10, 0, 0), std::invalid_argument);
}
