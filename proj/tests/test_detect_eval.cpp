#include <cmath>
#include <fstream>

#include "clcagan/detect_eval.hpp"
#include "clcagan/binary_io.hpp"
#include "test_support.hpp"

using namespace clcagan;
using testing_support::TempDir;

namespace {

struct PrintedRow {
  double df, dtau, ftau, td, bs, tdbs, snpr, odp;
};

// Reference rows for the RX and GAED detectors.
constexpr PrintedRow kRx{0.9884, 0.0893, 0.0115, 1.0777, 0.9769, 0.0778, 7.7652, 1.0662};
constexpr PrintedRow kGaed{0.9931, 0.0321, 0.0004, 1.0252, 0.9927, 0.0317, 80.2500, 1.0248};

std::pair<std::vector<double>, std::vector<std::uint8_t>> random_instance(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> size(2, 20);
  const auto n = static_cast<std::size_t>(size(rng));
  std::vector<double> s(n);
  std::vector<std::uint8_t> l(n);
  std::uniform_int_distribution<int> coarse(0, 4);
  std::uniform_real_distribution<double> u(0, 1);
  const bool tied = rng() % 2 == 0;
  for (auto& v : s) v = tied ? coarse(rng) / 4.0 : u(rng);
  for (auto& v : l) v = static_cast<std::uint8_t>(rng() % 2);
  l[0] = 0;
  l[1] = 1;
  return {s, l};
}

}  // namespace

TEST(AucArithmetic, ReproducesReferenceRows) {
  for (const auto& row : {kRx, kGaed}) {
    const auto r = auc_from_bases(row.df, row.dtau, row.ftau);
    EXPECT_NEAR(r.auc_td, row.td, 1e-4);
    EXPECT_NEAR(r.auc_bs, row.bs, 1e-4);
    EXPECT_NEAR(r.auc_tdbs, row.tdbs, 1e-4);
    EXPECT_NEAR(r.auc_snpr, row.snpr, 1e-2);
    EXPECT_NEAR(r.auc_odp, row.odp, 1e-4);
    EXPECT_LT(r.identity_residual(), 1e-9);
  }
}

TEST(AucArithmetic, ZeroFalseAlarmIntegralGivesInfiniteSnpr) {
  EXPECT_TRUE(std::isinf(auc_from_bases(0.9, 0.1, 0.0).auc_snpr));
}

TEST(Roc, PerfectSeparation) {
  const std::vector<double> s = {0.0, 0.1, 0.2, 0.9, 1.0};
  const std::vector<std::uint8_t> l = {0, 0, 0, 1, 1};
  const auto r = auc_suite(roc_3d(s, l, 512));
  EXPECT_DOUBLE_EQ(r.auc_df, 1.0);
}

TEST(Roc, InvertedScores) {
  const std::vector<double> s = {1.0, 0.9, 0.1, 0.0};
  const std::vector<std::uint8_t> l = {0, 0, 1, 1};
  EXPECT_DOUBLE_EQ(auc_suite(roc_3d(s, l, 512)).auc_df, 0.0);
}

TEST(Roc, ConstantScoresGiveHalf) {
  const std::vector<double> s(6, 0.5);
  const std::vector<std::uint8_t> l = {0, 1, 0, 1, 0, 0};
  EXPECT_DOUBLE_EQ(auc_suite(roc_3d(s, l, 512)).auc_df, 0.5);
}

TEST(Roc, MatchesMannWhitneyOnSmallInstances) {
  std::mt19937_64 rng(20);
  for (int t = 0; t < 200; ++t) {
    const auto [s, l] = random_instance(rng);
    const auto r = auc_suite(roc_3d(s, l, 512));
    EXPECT_NEAR(r.auc_df, oracle::mann_whitney(s, l), 1e-9) << "instance " << t;
    EXPECT_LT(r.identity_residual(), 1e-9);
  }
}

TEST(Roc, CurveProperties) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<double> s(3000);
  std::vector<std::uint8_t> l(3000);
  for (std::size_t i = 0; i < s.size(); ++i) {
    l[i] = i % 10 == 0;
    s[i] = std::min(1.0, u(rng) * (l[i] ? 1.5 : 1.0));
  }
  const auto roc = roc_3d(s, l, 512);
  EXPECT_LE(roc.size(), 512u + 3u);
  EXPECT_EQ(roc.front().pd, 1.0);
  EXPECT_EQ(roc.front().pf, 1.0);
  EXPECT_EQ(roc.back().pd, 0.0);
  EXPECT_EQ(roc.back().pf, 0.0);
  bool has_zero = false, has_one = false;
  for (std::size_t k = 0; k < roc.size(); ++k) {
    has_zero |= roc[k].tau == 0.0;
    has_one |= roc[k].tau == 1.0;
    if (k == 0) continue;
    EXPECT_GT(roc[k].tau, roc[k - 1].tau);
    EXPECT_LE(roc[k].pd, roc[k - 1].pd);
    EXPECT_LE(roc[k].pf, roc[k - 1].pf);
  }
  EXPECT_TRUE(has_zero && has_one);
  const auto r = auc_suite(roc);
  for (double v : {r.auc_df, r.auc_dtau, r.auc_ftau}) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_LT(r.identity_residual(), 1e-9);
  // a subsampled curve stays close to the exact statistic
  EXPECT_NEAR(r.auc_df, oracle::mann_whitney(s, l), 5e-3);
}

TEST(Roc, PerfectDetectionStaysInUnitRange) {
  std::vector<double> s(2304);
  std::vector<std::uint8_t> l(2304, 0);
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = 0.3 * static_cast<double>(i % 977) / 977.0;
  for (std::size_t i = 0; i < 40; ++i) {
    l[i * 50] = 1;
    s[i * 50] = 0.9 + 0.001 * static_cast<double>(i);
  }
  const auto r = auc_suite(roc_3d(s, l, 512));
  EXPECT_LE(r.auc_df, 1.0);
  EXPECT_NEAR(r.auc_df, 1.0, 1e-12);
}

TEST(Roc, Errors) {
  const std::vector<double> s = {0.1, 0.2};
  const std::vector<std::uint8_t> one = {1, 1};
  const std::vector<std::uint8_t> ok = {0, 1};
  const std::vector<std::uint8_t> shorter = {0};
  EXPECT_ERROR_CODE(roc_3d(s, one, 512), ErrorCode::SingleClassTruth);
  EXPECT_ERROR_CODE(roc_3d(s, shorter, 512), ErrorCode::ShapeMismatch);
  EXPECT_ERROR_CODE(auc_suite({RocPoint{1, 1, 0}}), ErrorCode::TooFewPoints);
  EXPECT_NO_THROW(roc_3d(s, ok, 2));
}

TEST(Roc, MapAndTruthGridsMustAgree) {
  ScoreMap m{2, 3, std::vector<double>(6, 0.1), false};
  GroundTruthMask t(3, 2, {0, 1, 0, 0, 0, 0});
  EXPECT_ERROR_CODE(roc_3d(m, t, 512), ErrorCode::ShapeMismatch);
}

TEST(Scores, NormalizationAndRanking) {
  ScoreMap m{1, 4, {3.0, 1.0, 5.0, 1.0}, false};
  const auto n = normalize_scores(m);
  EXPECT_EQ(n.scores, (std::vector<double>{0.5, 0.0, 1.0, 0.0}));
  EXPECT_TRUE(n.normalized);
  ScoreMap flat{1, 3, {2.0, 2.0, 2.0}, false};
  EXPECT_EQ(normalize_scores(flat).scores, (std::vector<double>{0, 0, 0}));
}

TEST(Scores, ReconstructionErrorPerPixel) {
  FeatureMatrix f;
  f.height = 2;
  f.width = 2;
  f.vectors = RowMatrix::Zero(4, 2);
  f.vectors(2, 0) = 3.0;
  f.vectors(2, 1) = 4.0;
  // identity-minus-shift reconstruction: error is the constant shift
  const auto m = score_map([](const Matrix& b) { return Matrix(b.array() * 0.0); }, f, false, 3);
  EXPECT_EQ(m.scores, (std::vector<double>{0, 0, 25, 0}));
  EXPECT_ERROR_CODE(score_map([](const Matrix& b) { return b; }, f, false, 0), ErrorCode::InvalidArgument);
}

TEST(Metrics, AccAndBwt) {
  AucMatrix m = {{0.9, std::nullopt}, {0.7, 0.8}};
  const auto r = cl_metrics(m);
  EXPECT_NEAR(r.acc, 0.75, 1e-15);
  EXPECT_NEAR(r.bwt_value(), -0.2, 1e-15);
  const auto single = cl_metrics({{0.8}});
  EXPECT_FALSE(single.bwt.has_value());
  EXPECT_ERROR_CODE(single.bwt_value(), ErrorCode::BwtUndefined);
  EXPECT_ERROR_CODE(cl_metrics({{1.2}}), ErrorCode::InvalidArgument);
  EXPECT_ERROR_CODE(cl_metrics({{0.9, std::nullopt}, {0.7}}), ErrorCode::InvalidArgument);
}

TEST(Metrics, NoForgettingMeansZeroBwt) {
  AucMatrix m = {{0.9}, {0.9, 0.8}, {0.9, 0.8, 0.7}};
  EXPECT_NEAR(cl_metrics(m).bwt_value(), 0.0, 1e-15);
  EXPECT_NEAR(cl_metrics(m).acc, 0.8, 1e-15);
}

TEST(Rx, FindsPlantedOutlier) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0, 0.05);
  std::vector<float> v;
  for (int p = 0; p < 100; ++p) {
    for (int c = 0; c < 4; ++c) v.push_back(static_cast<float>(0.5 + n(rng)));
  }
  for (int c = 0; c < 4; ++c) v[static_cast<std::size_t>(37 * 4 + c)] = c % 2 ? 0.9f : 0.1f;
  const auto scores = rx_baseline(HsiCube(10, 10, 4, v));
  const auto top = std::max_element(scores.scores.begin(), scores.scores.end()) - scores.scores.begin();
  EXPECT_EQ(top, 37);
}

TEST(Rx, ConstantCubeScoresZero) {
  const auto s = rx_baseline(HsiCube(3, 3, 2, std::vector<float>(18, 0.4f)));
  for (double v : s.scores) EXPECT_EQ(v, 0.0);
}

TEST(Rx, DetectsSyntheticAnomalies) {
  const auto scene = generate_synthetic_scene(7, 64, 64, 32, 5, 0.3);
  const auto auc = auc_suite(roc_3d(rx_baseline(scene.cube), scene.truth, 512)).auc_df;
  EXPECT_GT(auc, 0.9);
}

TEST(ScoreFiles, BinaryRoundTripAndText) {
  TempDir dir("scm");
  ScoreMap m{2, 3, {0.0, 0.125, 1.0 / 3.0, 0.5, 0.75, 1.0}, true};
  save_score_map(m, dir / "s.scm");
  EXPECT_EQ(load_score_map(dir / "s.scm"), m);
  save_score_grid(m, dir / "s.txt");
  std::ifstream in(dir / "s.txt");
  std::size_t h = 0, w = 0;
  in >> h >> w;
  EXPECT_EQ(h, 2u);
  EXPECT_EQ(w, 3u);
  std::vector<double> back(6);
  for (auto& v : back) in >> v;
  EXPECT_EQ(back, m.scores);
  auto bytes = io::read_file(dir / "s.scm");
  bytes.pop_back();
  io::write_file(dir / "t.scm", bytes);
  EXPECT_ERROR_CODE(load_score_map(dir / "t.scm"), ErrorCode::TruncatedPayload);
}
