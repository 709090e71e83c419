#include <cmath>

#include "test_support.hpp"

using namespace clcagan;
using testing_support::random_cube;

TEST(Sam, KnownValues) {
  const std::vector<double> a = {1, 0, 0};
  const std::vector<double> b = {0, 1, 0};
  const std::vector<double> c = {2, 0, 0};
  EXPECT_DOUBLE_EQ(sam_similarity(a, b), 0.0);
  EXPECT_DOUBLE_EQ(sam_similarity(a, c), 1.0);
  const std::vector<double> d = {1, 1, 0};
  EXPECT_NEAR(sam_similarity(a, d), 1.0 / std::sqrt(2.0), 1e-15);
}

TEST(Sam, SymmetricAndScaleInvariant) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1, 1);
  std::uniform_real_distribution<double> s(0.1, 10);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> a(6), b(6);
    for (auto& v : a) v = u(rng);
    for (auto& v : b) v = u(rng);
    const double k = s(rng);
    std::vector<double> ka = a;
    for (auto& v : ka) v *= k;
    const double sim = sam_similarity(a, b);
    EXPECT_DOUBLE_EQ(sim, sam_similarity(b, a));
    EXPECT_NEAR(sim, sam_similarity(ka, b), 1e-12);
    EXPECT_LE(std::abs(sim), 1.0);
  }
}

TEST(Sam, Errors) {
  const std::vector<double> z = {0, 0};
  const std::vector<double> a = {1, 2};
  const std::vector<double> b = {1, 2, 3};
  EXPECT_ERROR_CODE(sam_similarity(z, a), ErrorCode::ZeroVector);
  EXPECT_ERROR_CODE(sam_similarity(a, b), ErrorCode::ShapeMismatch);
}

TEST(Cbm, UniformSceneIsAllBackground) {
  HsiCube cube(4, 5, 3, std::vector<float>(60, 0.5f));
  const auto m = build_cbm(cube);
  EXPECT_EQ(m.flagged_count(), 0u);
}

TEST(Cbm, ComparesWithRightNeighbourAndLastColumnWithLeft) {
  // Row 0: A A B ; row 1: A A A
  std::vector<float> v = {1, 0, 1, 0, 0, 1, 1, 0, 1, 0, 1, 0};
  HsiCube cube(2, 3, 2, v);
  const auto m = build_cbm(cube, 0.99);
  EXPECT_EQ(m.at(0, 0), 0);
  EXPECT_EQ(m.at(0, 1), 1);  // right neighbour differs
  EXPECT_EQ(m.at(0, 2), 1);  // left neighbour differs
  EXPECT_EQ(m.at(1, 0), 0);
  EXPECT_EQ(m.at(1, 1), 0);
  EXPECT_EQ(m.at(1, 2), 0);
}

TEST(Cbm, ZeroPixelIsFlagged) {
  std::vector<float> v = {0, 0, 1, 1, 1, 1, 1, 1};
  const auto m = build_cbm(HsiCube(2, 2, 2, v));
  EXPECT_EQ(m.at(0, 0), 1);
  EXPECT_EQ(m.at(0, 1), 1);
  EXPECT_EQ(m.at(1, 0), 0);
}

TEST(Cbm, BetaMonotone) {
  const auto cube = random_cube(10, 10, 5, 4);
  std::size_t last = 0;
  for (double beta : {0.5, 0.8, 0.9, 0.95, 0.99, 1.0}) {
    const auto n = build_cbm(cube, beta).flagged_count();
    EXPECT_GE(n, last);
    last = n;
  }
  EXPECT_ERROR_CODE(build_cbm(cube, 0.0), ErrorCode::InvalidArgument);
  EXPECT_ERROR_CODE(build_cbm(cube, 1.5), ErrorCode::InvalidArgument);
}

TEST(Cbm, FlagsSyntheticAnomalies) {
  const auto scene = generate_synthetic_scene(7, 64, 64, 32, 5, 0.3);
  const auto m = build_cbm(normalize_bands(scene.cube));
  std::size_t caught = 0;
  for (std::size_t p = 0; p < m.flags.size(); ++p) caught += m.flags[p] && scene.truth.labels()[p];
  EXPECT_GT(caught, scene.truth.anomaly_count() / 2);
  EXPECT_LT(m.flagged_count(), m.flags.size() / 10);
}

TEST(LocalMean, ConstantCubeIsUnchanged) {
  HsiCube cube(5, 4, 2, std::vector<float>(40, 0.25f));
  const auto m = local_mean(cube, 3);
  EXPECT_LT((m.array() - 0.25).abs().maxCoeff(), 1e-15);
}

TEST(LocalMean, ReplicatePaddingAtCorner) {
  // 3x3 single band, values 0..8
  std::vector<float> v(9);
  for (int k = 0; k < 9; ++k) v[static_cast<std::size_t>(k)] = static_cast<float>(k);
  const auto m = local_mean(HsiCube(3, 3, 1, v), 3);
  // corner (0,0): rows {0,0,1} x cols {0,0,1}
  const double corner = (0 + 0 + 1 + 0 + 0 + 1 + 3 + 3 + 4) / 9.0;
  EXPECT_NEAR(m(0, 0), corner, 1e-15);
  EXPECT_NEAR(m(4, 0), 4.0, 1e-15);
}

TEST(LocalMean, WindowOneIsIdentity) {
  const auto cube = random_cube(4, 6, 3, 8);
  const auto m = local_mean(cube, 1);
  for (std::size_t p = 0; p < cube.pixel_count(); ++p)
    for (std::size_t c = 0; c < 3; ++c)
      EXPECT_EQ(m(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(c)), cube.values()[p * 3 + c]);
}

TEST(LocalMean, WindowErrors) {
  const auto cube = random_cube(4, 6, 3, 8);
  EXPECT_ERROR_CODE(local_mean(cube, 2), ErrorCode::EvenWindow);
  EXPECT_ERROR_CODE(local_mean(cube, 5), ErrorCode::InvalidArgument);
}

TEST(Features, LayoutIsSpectrumThenMean) {
  const auto cube = random_cube(6, 5, 4, 12);
  const auto f = ss_features(cube, 3);
  const auto m = local_mean(cube, 3);
  EXPECT_EQ(f.dim(), 8u);
  EXPECT_EQ(f.pixel_count(), 30u);
  for (std::size_t p = 0; p < 30; ++p) {
    for (std::size_t c = 0; c < 4; ++c) {
      const auto r = static_cast<Eigen::Index>(p);
      EXPECT_EQ(f.vectors(r, static_cast<Eigen::Index>(c)), cube.values()[p * 4 + c]);
      EXPECT_EQ(f.vectors(r, static_cast<Eigen::Index>(4 + c)), m(r, static_cast<Eigen::Index>(c)));
    }
  }
}

TEST(Split, PartitionsRowsInOrder) {
  const auto cube = random_cube(4, 4, 2, 2);
  const auto f = ss_features(cube, 3);
  CbmMask mask = all_background_mask(4, 4);
  mask.flags[5] = 1;
  mask.flags[10] = 1;
  const auto s = split_samples(f, mask);
  EXPECT_EQ(s.background.rows(), 14);
  EXPECT_EQ(s.anomaly.rows(), 2);
  EXPECT_EQ(s.anomaly_coords[0], (PixelCoord{1, 1}));
  EXPECT_EQ(s.anomaly_coords[1], (PixelCoord{2, 2}));
  EXPECT_TRUE(s.anomaly.row(1).isApprox(f.vectors.row(10)));
  EXPECT_TRUE(s.background.row(5).isApprox(f.vectors.row(6)));
}

TEST(Split, Errors) {
  const auto f = ss_features(random_cube(4, 4, 2, 2), 3);
  CbmMask all = all_background_mask(4, 4);
  std::fill(all.flags.begin(), all.flags.end(), std::uint8_t{1});
  EXPECT_ERROR_CODE(split_samples(f, all), ErrorCode::EmptyBackground);
  EXPECT_ERROR_CODE(split_samples(f, all_background_mask(4, 5)), ErrorCode::ShapeMismatch);
}

TEST(Cbm, SaveUsesMaskContainer) {
  testing_support::TempDir dir("cbm");
  CbmMask m = all_background_mask(3, 3);
  m.flags[4] = 1;
  save_cbm(m, dir / "c.msk");
  const auto back = load_mask(dir / "c.msk");
  EXPECT_EQ(std::vector<std::uint8_t>(back.labels().begin(), back.labels().end()), m.flags);
}
