#include <numeric>
#include <set>

#include "test_support.hpp"
#include "clcagan/binary_io.hpp"
#include "clcagan/replay.hpp"

using namespace clcagan;
using testing_support::random_matrix;
using testing_support::TempDir;

namespace {

RowMatrix three_blobs(std::size_t per, std::uint64_t seed, std::vector<std::size_t>& truth) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0, 0.1);
  const double centres[3][2] = {{0, 0}, {5, 5}, {-5, 5}};
  RowMatrix m(static_cast<Eigen::Index>(3 * per), 2);
  truth.clear();
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < per; ++i) {
      const auto r = static_cast<Eigen::Index>(c * per + i);
      m(r, 0) = centres[c][0] + n(rng);
      m(r, 1) = centres[c][1] + n(rng);
      truth.push_back(c);
    }
  }
  return m;
}

std::vector<Exemplar> tagged(std::size_t count, std::size_t dim, std::uint32_t task) {
  std::vector<Exemplar> out;
  for (std::size_t i = 0; i < count; ++i) {
    out.push_back({std::vector<double>(dim, static_cast<double>(task) + 0.01 * static_cast<double>(i)), task, 0});
  }
  return out;
}

}  // namespace

TEST(KMeans, RecoversSeparatedBlobs) {
  std::vector<std::size_t> truth;
  const auto m = three_blobs(20, 1, truth);
  const auto r = kmeans_cluster(m, 3, 7);
  EXPECT_EQ(oracle::best_labeling_agreement(r.assignments, truth, 3), 60u);
  EXPECT_EQ(r.k(), 3u);
  std::size_t total = 0;
  for (std::size_t c = 0; c < 3; ++c) total += r.cluster_size(c);
  EXPECT_EQ(total, 60u);
}

TEST(KMeans, AssignmentsAreNearestCentres) {
  const auto m = random_matrix(80, 3, 5);
  const auto r = kmeans_cluster(m, 4, 2);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const auto own = (m.row(i) - r.centers.row(static_cast<Eigen::Index>(r.assignments[static_cast<std::size_t>(i)]))).squaredNorm();
    for (Eigen::Index c = 0; c < 4; ++c) EXPECT_LE(own, (m.row(i) - r.centers.row(c)).squaredNorm() + 1e-12);
  }
}

TEST(KMeans, IndependentOfRowOrder) {
  const auto m = random_matrix(50, 4, 9);
  std::vector<Eigen::Index> perm(50);
  std::iota(perm.begin(), perm.end(), Eigen::Index{0});
  std::shuffle(perm.begin(), perm.end(), std::mt19937_64(3));
  RowMatrix p(50, 4);
  for (Eigen::Index i = 0; i < 50; ++i) p.row(i) = m.row(perm[static_cast<std::size_t>(i)]);
  const auto a = kmeans_cluster(m, 3, 1);
  const auto b = kmeans_cluster(p, 3, 1);
  EXPECT_EQ(a.centers, b.centers);
  for (Eigen::Index i = 0; i < 50; ++i)
    EXPECT_EQ(b.assignments[static_cast<std::size_t>(i)], a.assignments[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])]);
}

TEST(KMeans, Errors) {
  EXPECT_ERROR_CODE(kmeans_cluster(random_matrix(2, 3, 1), 3, 1), ErrorCode::TooFewSamples);
  EXPECT_ERROR_CODE(kmeans_cluster(random_matrix(5, 3, 1), 0, 1), ErrorCode::InvalidArgument);
  auto bad = random_matrix(5, 3, 1);
  bad(2, 1) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_ERROR_CODE(kmeans_cluster(bad, 2, 1), ErrorCode::NonFiniteValue);
}

TEST(Exemplars, MatchFullSortOracle) {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> rows(6, 80), dims(1, 5), ks(1, 4);
  for (int t = 0; t < 100; ++t) {
    const auto n = static_cast<std::size_t>(rows(rng));
    const auto k = std::min<std::size_t>(static_cast<std::size_t>(ks(rng)), n);
    const auto m = random_matrix(static_cast<Eigen::Index>(n), dims(rng), 1000 + static_cast<std::uint64_t>(t));
    const auto clusters = kmeans_cluster(m, k, static_cast<std::uint64_t>(t));
    const std::size_t K = std::uniform_int_distribution<std::size_t>(1, n)(rng);
    testing_support::WarningCapture quiet;
    const auto got = select_exemplars(clusters, K, n);
    const auto want = oracle::exemplars_by_full_sort(testing_support::to_mat(m), testing_support::to_mat(clusters.centers),
                                                     clusters.assignments, K);
    EXPECT_EQ(got, want) << "instance " << t;
    std::size_t quota = 0;
    for (std::size_t c = 0; c < k; ++c) quota += K * clusters.cluster_size(c) / n;
    EXPECT_EQ(got.size(), quota);
    EXPECT_EQ(exemplar_quota(clusters, K, n), quota);
    EXPECT_LE(got.size(), K);
  }
}

TEST(Exemplars, TinyQuotaWarnsAndReturnsNothing) {
  std::vector<std::size_t> truth;
  const auto m = three_blobs(10, 2, truth);
  const auto c = kmeans_cluster(m, 3, 1);
  testing_support::WarningCapture w;
  EXPECT_TRUE(select_exemplars(c, 2, 30).empty());
  EXPECT_FALSE(w.messages.empty());
}

TEST(Exemplars, Errors) {
  const auto c = kmeans_cluster(random_matrix(10, 2, 1), 2, 1);
  EXPECT_ERROR_CODE(select_exemplars(c, 0, 10), ErrorCode::InvalidArgument);
  EXPECT_ERROR_CODE(select_exemplars(c, 5, 11), ErrorCode::InvalidArgument);
}

TEST(Buffer, AppendOnlyAcrossFiveTasks) {
  ReplayBuffer buffer(6);
  std::vector<ReplayBuffer> history{buffer};
  for (std::uint32_t task = 0; task < 5; ++task) {
    const auto m = random_matrix(40, 3, task);
    const auto c = kmeans_cluster(m, 3, task);
    const auto sel = select_exemplars(c, 6, 40);
    buffer = update_buffer(buffer, make_exemplars(m, c, sel, task), task);
    const auto& prev = history.back();
    ASSERT_GE(buffer.size(), prev.size());
    for (std::size_t i = 0; i < prev.size(); ++i) EXPECT_EQ(buffer.exemplars()[i], prev.exemplars()[i]);
    EXPECT_EQ(buffer.count_for(task), sel.size());
    EXPECT_TRUE(buffer.has_task(task));
    history.push_back(buffer);
  }
  EXPECT_EQ(buffer.tasks(), (std::vector<std::uint32_t>{0, 1, 2, 3, 4}));
  EXPECT_EQ(buffer.matrix().rows(), static_cast<Eigen::Index>(buffer.size()));
}

TEST(Buffer, ExemplarsCarryTheirRows) {
  const auto m = random_matrix(30, 4, 3);
  const auto c = kmeans_cluster(m, 3, 4);
  const auto sel = select_exemplars(c, 9, 30);
  const auto ex = make_exemplars(m, c, sel, 2);
  ASSERT_EQ(ex.size(), sel.size());
  for (std::size_t i = 0; i < ex.size(); ++i) {
    const auto row = m.row(static_cast<Eigen::Index>(sel[i]));
    EXPECT_EQ(ex[i].values, std::vector<double>(row.data(), row.data() + row.size()));
    EXPECT_EQ(ex[i].cluster, c.assignments[sel[i]]);
    EXPECT_EQ(ex[i].task, 2u);
  }
}

TEST(Buffer, Errors) {
  ReplayBuffer b(3);
  b = update_buffer(b, tagged(2, 4, 0), 0);
  EXPECT_ERROR_CODE(update_buffer(b, tagged(1, 4, 0), 0), ErrorCode::DuplicateTask);
  EXPECT_ERROR_CODE(update_buffer(b, tagged(4, 4, 1), 1), ErrorCode::InvalidArgument);
  EXPECT_ERROR_CODE(update_buffer(b, tagged(1, 4, 2), 1), ErrorCode::InvalidArgument);
  EXPECT_ERROR_CODE(update_buffer(b, tagged(1, 5, 1), 1), ErrorCode::ShapeMismatch);
  const auto with_empty = update_buffer(b, {}, 1);
  EXPECT_TRUE(with_empty.has_task(1));
  EXPECT_EQ(with_empty.size(), 2u);
}

TEST(Buffer, FileRoundTrip) {
  TempDir dir("rply");
  ReplayBuffer b(4);
  b = update_buffer(b, tagged(3, 5, 0), 0);
  b = update_buffer(b, {}, 1);
  b = update_buffer(b, tagged(2, 5, 2), 2);
  save_buffer(b, dir / "b.rply");
  EXPECT_EQ(load_buffer(dir / "b.rply"), b);
  save_buffer(ReplayBuffer(7), dir / "e.rply");
  EXPECT_EQ(load_buffer(dir / "e.rply"), ReplayBuffer(7));
}

TEST(Buffer, CorruptFiles) {
  TempDir dir("rply");
  ReplayBuffer b(4);
  b = update_buffer(b, tagged(3, 5, 0), 0);
  save_buffer(b, dir / "b.rply");
  auto bytes = io::read_file(dir / "b.rply");
  auto cut = bytes;
  cut.resize(cut.size() - 3);
  io::write_file(dir / "cut.rply", cut);
  EXPECT_ERROR_CODE(load_buffer(dir / "cut.rply"), ErrorCode::TruncatedPayload);
  auto extra = bytes;
  extra.push_back(0);
  io::write_file(dir / "extra.rply", extra);
  EXPECT_ERROR_CODE(load_buffer(dir / "extra.rply"), ErrorCode::TruncatedPayload);
  bytes[0] = 'X';
  io::write_file(dir / "magic.rply", bytes);
  EXPECT_ERROR_CODE(load_buffer(dir / "magic.rply"), ErrorCode::BadMagic);
  EXPECT_ERROR_CODE(load_buffer(dir / "none.rply"), ErrorCode::MissingFile);
}
