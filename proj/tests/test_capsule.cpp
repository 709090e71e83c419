#include <cmath>

#include "fd_cases.hpp"
#include "test_support.hpp"

using namespace clcagan;

namespace {

ArchConfig default_arch(std::size_t feature_dim) {
  ArchConfig a;
  a.feature_dim = feature_dim;
  return a;
}

}  // namespace

TEST(Squash, KnownNorms) {
  EXPECT_EQ(squash(Eigen::VectorXd::Zero(4)), Eigen::VectorXd::Zero(4));
  Eigen::VectorXd u(2);
  u << 0.6, 0.8;
  EXPECT_NEAR(squash(u).norm(), 0.5, 1e-15);
  EXPECT_NEAR(squash(3 * u).norm(), 0.9, 1e-15);
}

TEST(Squash, NormBelowOneAndDirectionKept) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0, 1);
  std::uniform_real_distribution<double> scale(-6, 6);
  for (int t = 0; t < 10000; ++t) {
    Eigen::VectorXd u(1 + t % 9);
    const double s = std::pow(10.0, scale(rng));
    for (Eigen::Index k = 0; k < u.size(); ++k) u(k) = s * n(rng);
    const auto v = squash(u);
    ASSERT_LT(v.norm(), 1.0);
    ASSERT_NEAR(v.dot(u) / (v.norm() * u.norm()), 1.0, 1e-12);
    std::vector<double> uv(u.data(), u.data() + u.size());
    const auto o = oracle::squash(uv);
    for (Eigen::Index k = 0; k < u.size(); ++k) ASSERT_NEAR(v(k), o[static_cast<std::size_t>(k)], 1e-12 * (1 + std::abs(o[static_cast<std::size_t>(k)])));
  }
}

TEST(Routing, MatchesScriptedUnrolling) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 50; ++t) {
    const auto votes = testing_support::random_matrix(3 + t % 4, 2 + t % 5, 100 + static_cast<std::uint64_t>(t), -2, 2);
    const int iters = 1 + t % 4;
    const auto r = route_votes(votes, iters);
    const auto o = oracle::scripted_routing(testing_support::to_mat(votes), iters);
    ASSERT_EQ(r.couplings.size(), o.couplings.size());
    for (std::size_t it = 0; it < o.couplings.size(); ++it) {
      for (std::size_t j = 0; j < o.couplings[it].size(); ++j)
        EXPECT_NEAR(r.couplings[it](static_cast<Eigen::Index>(j)), o.couplings[it][j], 1e-12);
    }
    for (std::size_t k = 0; k < o.output.size(); ++k) EXPECT_NEAR(r.output(static_cast<Eigen::Index>(k)), o.output[k], 1e-12);
  }
}

TEST(Routing, CouplingsAreADistributionEveryIteration) {
  for (std::uint64_t s = 0; s < 100; ++s) {
    const auto votes = testing_support::random_matrix(8, 4, s, -5, 5);
    const auto r = route_votes(votes, 5);
    for (const auto& c : r.couplings) {
      EXPECT_NEAR(c.sum(), 1.0, 1e-12);
      EXPECT_GE(c.minCoeff(), 0.0);
    }
  }
}

TEST(Routing, SingleCapsuleIsSquashOfVote) {
  const auto u = testing_support::random_matrix(1, 3, 4);
  const auto w = testing_support::random_matrix(1, 5 * 3, 5);
  Eigen::Map<const Matrix> wj(w.data(), 5, 3);
  const Eigen::VectorXd vote = wj * u.row(0).transpose();
  for (int iters : {1, 2, 3, 7}) {
    const auto r = route_capsules(u, w, iters);
    EXPECT_EQ(r.output, squash(vote));
  }
}

TEST(Routing, EqualVotesGiveSquashOfVote) {
  Matrix votes(4, 3);
  for (int j = 0; j < 4; ++j) votes.row(j) << 0.3, -1.2, 0.5;
  for (int iters : {1, 3, 6}) {
    const auto r = route_votes(votes, iters);
    EXPECT_LT((r.output - squash(votes.row(0).transpose())).cwiseAbs().maxCoeff(), 1e-15);
    for (const auto& b : r.logits) EXPECT_EQ(b.maxCoeff(), b.minCoeff());
  }
}

TEST(Routing, Errors) {
  EXPECT_ERROR_CODE(route_votes(Matrix::Ones(2, 2), 0), ErrorCode::InvalidArgument);
  EXPECT_ERROR_CODE(route_capsules(Matrix::Ones(2, 3), Matrix::Ones(3, 6), 3), ErrorCode::ShapeMismatch);
  EXPECT_ERROR_CODE(route_capsules(Matrix::Ones(2, 3), Matrix::Ones(2, 7), 3), ErrorCode::ShapeMismatch);
}

TEST(Routing, RawLogitsStayAtOrigin) {
  const auto r = route_votes(testing_support::random_matrix(4, 3, 1), 3, CouplingMode::RawLogits);
  EXPECT_EQ(r.output, Eigen::VectorXd::Zero(3));
}

TEST(Arch, DefaultsAndValidation) {
  const auto a = default_arch(64);
  EXPECT_NO_THROW(a.validate());
  EXPECT_EQ(a.generator_spec().capsules(), 32u);
  EXPECT_EQ(a.discriminator_spec().capsule_dim, 3u * 16u * 64u / 32u);
  EXPECT_ERROR_CODE(default_arch(7).validate(), ErrorCode::InvalidArgument);
  auto bad = default_arch(2);
  bad.conv_channels = 1;
  EXPECT_ERROR_CODE(bad.validate(), ErrorCode::ShapeMismatch);
  auto iters = default_arch(64);
  iters.routing_iters = 0;
  EXPECT_ERROR_CODE(iters.validate(), ErrorCode::InvalidArgument);
}

TEST(Networks, ShapesAndRanges) {
  std::mt19937_64 rng(3);
  const auto arch = default_arch(16);
  const auto g = init_generator(arch, rng);
  const auto d = init_discriminator(arch, rng);
  const auto x = testing_support::random_matrix(6, 16, 7, 0, 1);
  const auto y = generator_forward(g, x);
  EXPECT_EQ(y.rows(), 6);
  EXPECT_EQ(y.cols(), 16);
  EXPECT_GT(y.minCoeff(), 0.0);
  EXPECT_LT(y.maxCoeff(), 1.0);
  const auto s = discriminator_forward(d, x);
  EXPECT_EQ(s.rows(), 6);
  EXPECT_EQ(s.cols(), 1);
  EXPECT_GE(s.minCoeff(), 0.0);
  EXPECT_LT(s.maxCoeff(), 1.0);
  EXPECT_ERROR_CODE(generator_forward(g, testing_support::random_matrix(2, 8, 1)), ErrorCode::ShapeMismatch);
  EXPECT_ERROR_CODE(discriminator_forward(d, testing_support::random_matrix(2, 8, 1)), ErrorCode::ShapeMismatch);
}

TEST(Networks, ConvKernelWidths) {
  std::mt19937_64 rng(3);
  const auto d = init_discriminator(default_arch(8), rng);
  for (int s = 0; s < 3; ++s) EXPECT_EQ(d.conv_k[s].shape.back(), kConvWidths[s]);
  EXPECT_EQ(kConvWidths[0], 1u);
  EXPECT_EQ(kConvWidths[1], 3u);
  EXPECT_EQ(kConvWidths[2], 5u);
}

TEST(Networks, PureAndRowIndependent) {
  std::mt19937_64 rng(4);
  const auto arch = default_arch(12);
  const auto g = init_generator(arch, rng);
  const auto d = init_discriminator(arch, rng);
  auto x = testing_support::random_matrix(5, 12, 9, 0, 1);
  x.row(3) = x.row(1);
  const auto y1 = generator_forward(g, x);
  const auto y2 = generator_forward(g, x);
  EXPECT_EQ(y1, y2);
  EXPECT_EQ(y1.row(3), y1.row(1));
  const auto s = discriminator_forward(d, x);
  EXPECT_EQ(s(3, 0), s(1, 0));
  const Matrix single = x.row(2);
  EXPECT_LT((generator_forward(g, single) - y1.row(2)).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Networks, UntrainedDiscriminatorScoresAreConcentrated) {
  const auto scene = generate_synthetic_scene(7, 32, 32, 16, 2, 0.3, testing_support::blobs_up_to(2));
  const auto f = ss_features(normalize_bands(scene.cube), 3);
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    std::mt19937_64 rng(seed);
    const auto d = init_discriminator(default_arch(32), rng);
    const auto s = discriminator_forward(d, f.vectors);
    EXPECT_LT(s.maxCoeff() - s.minCoeff(), 0.2) << "seed " << seed;
  }
}

TEST(Networks, InitIsDeterministicAndNamed) {
  std::mt19937_64 a(11), b(11);
  const auto ga = init_generator(default_arch(8), a);
  const auto gb = init_generator(default_arch(8), b);
  const auto ta = ga.tensors();
  const auto tb = gb.tensors();
  ASSERT_EQ(ta.size(), 9u);
  for (std::size_t k = 0; k < ta.size(); ++k) {
    EXPECT_EQ(ta[k]->data, tb[k]->data);
    EXPECT_EQ(ta[k]->name.substr(0, 2), "g.");
  }
  EXPECT_EQ(ga.primary_b1.data.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Augment, IdentitySpecIsExact) {
  std::mt19937_64 rng(5);
  const auto x = testing_support::random_matrix(4, 6, 1, 0, 1);
  EXPECT_EQ(augment(AugmentSpec::identity(), x, rng), x);
  EXPECT_TRUE(AugmentSpec::identity().is_identity());
  EXPECT_FALSE(AugmentSpec{}.is_identity());
}

TEST(Augment, BrightnessOnlyShift) {
  AugmentDraw d{Eigen::VectorXd::Ones(1), Eigen::VectorXd::Constant(1, 0.1), Eigen::VectorXd::Ones(1)};
  const Matrix x = Matrix::Constant(1, 5, 0.5);
  EXPECT_LT((apply_augment(x, d).array() - 0.6).abs().maxCoeff(), 1e-15);
}

TEST(Augment, MatchesFormula) {
  std::mt19937_64 rng(6);
  const auto x = testing_support::random_matrix(3, 4, 2, 0, 1);
  const auto draw = draw_augment(AugmentSpec{}, 3, rng);
  const auto y = apply_augment(x, draw);
  Matrix z(3, 4);
  for (int b = 0; b < 3; ++b) {
    const double m = x.row(b).mean();
    for (int k = 0; k < 4; ++k) z(b, k) = draw.gamma(b) * (x(b, k) - m) + m + draw.delta(b);
  }
  const Eigen::RowVectorXd band = z.colwise().mean();
  for (int b = 0; b < 3; ++b)
    for (int k = 0; k < 4; ++k) EXPECT_NEAR(y(b, k), draw.lambda(b) * z(b, k) + (1 - draw.lambda(b)) * band(k), 1e-14);
}

TEST(Augment, AffineSoJacobianIsInputIndependent) {
  std::mt19937_64 rng(7);
  const auto draw = draw_augment(AugmentSpec{}, 3, rng);
  const auto a = testing_support::random_matrix(3, 4, 3);
  const auto b = testing_support::random_matrix(3, 4, 4);
  // f(a + b) - f(b) == f(a) - f(0) for an affine map
  const Matrix zero = Matrix::Zero(3, 4);
  const Matrix lhs = apply_augment(a + b, draw) - apply_augment(b, draw);
  const Matrix rhs = apply_augment(a, draw) - apply_augment(zero, draw);
  EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Augment, GradientMatchesFiniteDifferencesTightly) {
  fd_cases::Builder b(8);
  const auto draw = draw_augment(AugmentSpec{}, 4, b.rng());
  b.scalarize(augment_graph(b.tape, b.leaf("x", 4, 6, 0, 1), draw));
  EXPECT_LT(b.check(1e-5, 1e-6).max_rel_error, 1e-6);
}

TEST(Augment, DrawIsSeededAndIdentityConsumesNothing) {
  std::mt19937_64 a(1), b(1);
  const auto da = draw_augment(AugmentSpec{}, 5, a);
  const auto db = draw_augment(AugmentSpec{}, 5, b);
  EXPECT_EQ(da.gamma, db.gamma);
  std::mt19937_64 c(1), d(1);
  draw_augment(AugmentSpec::identity(), 5, c);
  EXPECT_EQ(c(), d());
  AugmentSpec bad;
  bad.contrast_lo = 1.5;
  EXPECT_ERROR_CODE(bad.validate(), ErrorCode::InvalidArgument);
}

TEST(RoutingGraph, ForwardEqualsRouteVotes) {
  const auto votes = testing_support::random_matrix(3, 4 * 5, 10);
  Tape t;
  const auto n = routing_sum(t, t.constant(votes), 4, 5, 3, CouplingMode::Softmax);
  t.evaluate();
  for (Eigen::Index b = 0; b < 3; ++b) {
    Eigen::Map<const Matrix> v(votes.row(b).data(), 4, 5);
    EXPECT_LT((t.value(n).row(b).transpose() - route_votes(v, 3).weighted_sum).cwiseAbs().maxCoeff(), 1e-15);
  }
}
