#include "clcagan/replay.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <random>
#include <cmath>
#include <string>
#include <string_view>

#include "clcagan/binary_io.hpp"
#include "clcagan/error.hpp"
#include "clcagan/log.hpp"

namespace clcagan {

namespace {

bool row_less(const RowMatrix& m, std::size_t a, std::size_t b) {
  const auto ra = m.row(static_cast<Eigen::Index>(a));
  const auto rb = m.row(static_cast<Eigen::Index>(b));
  return std::lexicographical_compare(ra.data(), ra.data() + ra.size(), rb.data(), rb.data() + rb.size());
}

std::size_t nearest(const RowMatrix& centers, const Eigen::Ref<const Eigen::RowVectorXd>& x, double& dist2) {
  std::size_t best = 0;
  dist2 = std::numeric_limits<double>::infinity();
  for (Eigen::Index c = 0; c < centers.rows(); ++c) {
    const double d = (centers.row(c) - x).squaredNorm();
    if (d < dist2) {
      dist2 = d;
      best = static_cast<std::size_t>(c);
    }
  }
  return best;
}

}  // namespace

ClusterResult kmeans_cluster(const RowMatrix& samples, std::size_t k, std::uint64_t seed, int max_iters) {
  if (k < 1) throw Error(ErrorCode::InvalidArgument, "k must be at least 1");
  if (max_iters < 1) throw Error(ErrorCode::InvalidArgument, "max_iters must be at least 1");
  const auto n = static_cast<std::size_t>(samples.rows());
  if (n < k) {
    throw Error(ErrorCode::TooFewSamples, std::to_string(n) + " samples for " + std::to_string(k) + " clusters");
  }
  if (!samples.allFinite()) throw Error(ErrorCode::NonFiniteValue, "non-finite sample");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return row_less(samples, a, b); });
  RowMatrix x(samples.rows(), samples.cols());
  for (std::size_t p = 0; p < n; ++p) x.row(static_cast<Eigen::Index>(p)) = samples.row(static_cast<Eigen::Index>(order[p]));

  // k-means++ seeding
  std::mt19937_64 rng(seed);
  RowMatrix centers(static_cast<Eigen::Index>(k), x.cols());
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  centers.row(0) = x.row(static_cast<Eigen::Index>(pick(rng)));
  std::vector<double> d2(n);
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < c; ++j) {
        best = std::min(best, (centers.row(static_cast<Eigen::Index>(j)) - x.row(static_cast<Eigen::Index>(i))).squaredNorm());
      }
      d2[i] = best;
      total += best;
    }
    std::size_t chosen = 0;
    if (total > 0) {
      double u = std::uniform_real_distribution<double>(0.0, total)(rng);
      chosen = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        if (u < d2[i]) {
          chosen = i;
          break;
        }
        u -= d2[i];
      }
    } else {
      chosen = pick(rng);
    }
    centers.row(static_cast<Eigen::Index>(c)) = x.row(static_cast<Eigen::Index>(chosen));
  }

  std::vector<std::size_t> assign(n, k);
  int it = 0;
  for (; it < max_iters; ++it) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      double dist = 0;
      const auto c = nearest(centers, x.row(static_cast<Eigen::Index>(i)), dist);
      d2[i] = dist;
      if (c != assign[i]) {
        assign[i] = c;
        changed = true;
      }
    }
    if (!changed) break;
    RowMatrix sums = RowMatrix::Zero(centers.rows(), centers.cols());
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      sums.row(static_cast<Eigen::Index>(assign[i])) += x.row(static_cast<Eigen::Index>(i));
      ++counts[assign[i]];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] > 0) {
        centers.row(static_cast<Eigen::Index>(c)) = sums.row(static_cast<Eigen::Index>(c)) / static_cast<double>(counts[c]);
      } else {
        // re-seed an empty cluster at the point farthest from its centre
        const auto far = static_cast<std::size_t>(std::max_element(d2.begin(), d2.end()) - d2.begin());
        centers.row(static_cast<Eigen::Index>(c)) = x.row(static_cast<Eigen::Index>(far));
        d2[far] = 0;
      }
    }
  }

  ClusterResult r;
  r.iterations = it;
  r.centers = centers;
  r.assignments.resize(n);
  r.within_cluster_order.assign(k, {});
  r.within_cluster_distance.assign(k, {});
  std::vector<std::vector<std::pair<double, std::size_t>>> members(k);
  for (std::size_t p = 0; p < n; ++p) {
    const auto c = assign[p];
    r.assignments[order[p]] = c;
    const double dist = (x.row(static_cast<Eigen::Index>(p)) - centers.row(static_cast<Eigen::Index>(c))).norm();
    members[c].emplace_back(dist, p);
  }
  for (std::size_t c = 0; c < k; ++c) {
    std::sort(members[c].begin(), members[c].end());
    for (const auto& [dist, p] : members[c]) {
      r.within_cluster_order[c].push_back(order[p]);
      r.within_cluster_distance[c].push_back(dist);
    }
  }
  return r;
}

std::size_t exemplar_quota(const ClusterResult& clusters, std::size_t K, std::size_t n_total) {
  if (n_total == 0) return 0;
  std::size_t total = 0;
  for (std::size_t c = 0; c < clusters.k(); ++c) {
    total += std::min(clusters.cluster_size(c), K * clusters.cluster_size(c) / n_total);
  }
  return total;
}

std::vector<std::size_t> select_exemplars(const ClusterResult& clusters, std::size_t K, std::size_t n_total) {
  if (K < 1) throw Error(ErrorCode::InvalidArgument, "K must be at least 1");
  std::size_t sized = 0;
  for (std::size_t c = 0; c < clusters.k(); ++c) sized += clusters.cluster_size(c);
  if (n_total != sized) {
    throw Error(ErrorCode::InvalidArgument, "N_t = " + std::to_string(n_total) + " but clusters hold " +
                                                std::to_string(sized) + " samples");
  }
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < clusters.k(); ++c) {
    // K > N_t would ask for more rows than a cluster holds
    const auto take = std::min(clusters.cluster_size(c), K * clusters.cluster_size(c) / n_total);
    const auto& ord = clusters.within_cluster_order[c];
    out.insert(out.end(), ord.begin(), ord.begin() + static_cast<std::ptrdiff_t>(take));
  }
  if (out.empty()) {
    log::warn("exemplar selection is empty: K=" + std::to_string(K) + " is too small for " +
              std::to_string(clusters.k()) + " clusters over " + std::to_string(n_total) + " samples");
  }
  return out;
}

std::vector<std::uint32_t> ReplayBuffer::tasks() const { return tasks_; }

bool ReplayBuffer::has_task(std::uint32_t task) const {
  return std::find(tasks_.begin(), tasks_.end(), task) != tasks_.end();
}

std::size_t ReplayBuffer::count_for(std::uint32_t task) const {
  return static_cast<std::size_t>(
      std::count_if(entries_.begin(), entries_.end(), [&](const Exemplar& e) { return e.task == task; }));
}

RowMatrix ReplayBuffer::matrix() const {
  std::vector<std::size_t> all(entries_.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return rows(all);
}

RowMatrix ReplayBuffer::rows(const std::vector<std::size_t>& idx) const {
  RowMatrix m(static_cast<Eigen::Index>(idx.size()), static_cast<Eigen::Index>(dim()));
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const auto& v = entries_.at(idx[r]).values;
    m.row(static_cast<Eigen::Index>(r)) = Eigen::Map<const Eigen::RowVectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
  }
  return m;
}

ReplayBuffer update_buffer(const ReplayBuffer& buffer, std::vector<Exemplar> new_exemplars, std::uint32_t task) {
  if (buffer.has_task(task)) throw Error(ErrorCode::DuplicateTask, "task " + std::to_string(task) + " already buffered");
  if (new_exemplars.size() > buffer.capacity_per_task()) {
    throw Error(ErrorCode::InvalidArgument, std::to_string(new_exemplars.size()) + " exemplars exceed K = " +
                                                std::to_string(buffer.capacity_per_task()));
  }
  std::size_t dim = buffer.dim();
  for (const auto& e : new_exemplars) {
    if (e.task != task) throw Error(ErrorCode::InvalidArgument, "exemplar tagged with another task");
    if (dim == 0) dim = e.values.size();
    if (e.values.size() != dim || dim == 0) {
      throw Error(ErrorCode::ShapeMismatch, "exemplar dim " + std::to_string(e.values.size()) + " vs buffer dim " +
                                                std::to_string(dim));
    }
  }
  ReplayBuffer out = buffer;
  out.entries_.insert(out.entries_.end(), std::make_move_iterator(new_exemplars.begin()),
                      std::make_move_iterator(new_exemplars.end()));
  out.tasks_.push_back(task);
  return out;
}

std::vector<Exemplar> make_exemplars(const RowMatrix& samples, const ClusterResult& clusters,
                                     const std::vector<std::size_t>& selected, std::uint32_t task) {
  std::vector<Exemplar> out;
  out.reserve(selected.size());
  for (const auto i : selected) {
    const auto row = samples.row(static_cast<Eigen::Index>(i));
    out.push_back({std::vector<double>(row.data(), row.data() + row.size()), task,
                   static_cast<std::uint32_t>(clusters.assignments.at(i))});
  }
  return out;
}

// RPLY layout: magic, u8 version, 3 pad bytes, u32 K, u32 task count, u32
// task ids, u32 entry count, u32 dim, then per entry u32 task, u32 cluster,
// dim f64 values.
namespace {
constexpr std::string_view kReplayMagic = "RPLY";
constexpr std::uint8_t kReplayVersion = 1;
}  // namespace

void save_buffer(const ReplayBuffer& buffer, const std::filesystem::path& path) {
  io::ByteWriter w;
  w.magic(kReplayMagic);
  w.u8(kReplayVersion);
  w.u8(0);
  w.u8(0);
  w.u8(0);
  w.u32(static_cast<std::uint32_t>(buffer.capacity_per_task()));
  const auto tasks = buffer.tasks();
  w.u32(static_cast<std::uint32_t>(tasks.size()));
  for (const auto t : tasks) w.u32(t);
  w.u32(static_cast<std::uint32_t>(buffer.size()));
  w.u32(static_cast<std::uint32_t>(buffer.dim()));
  for (const auto& e : buffer.exemplars()) {
    w.u32(e.task);
    w.u32(e.cluster);
    for (const double v : e.values) w.f64(v);
  }
  io::write_file(path, w.buffer());
}

ReplayBuffer load_buffer(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  io::ByteReader r(bytes);
  r.expect_magic(kReplayMagic);
  if (r.u8() != kReplayVersion) throw Error(ErrorCode::BadMagic, "unsupported RPLY version");
  r.take(3);
  ReplayBuffer b(r.u32());
  const auto n_tasks = r.u32();
  for (std::uint32_t t = 0; t < n_tasks; ++t) b.tasks_.push_back(r.u32());
  const auto count = r.u32();
  const auto dim = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    Exemplar e;
    e.task = r.u32();
    e.cluster = r.u32();
    e.values.resize(dim);
    for (auto& v : e.values) {
      v = r.f64();
      if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteValue, "non-finite exemplar value in " + path.string());
    }
    b.entries_.push_back(std::move(e));
  }
  if (r.remaining() != 0) throw Error(ErrorCode::TruncatedPayload, "trailing bytes in " + path.string());
  return b;
}

}  // namespace clcagan
