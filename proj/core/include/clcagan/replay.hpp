#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "clcagan/preprocess.hpp"

namespace clcagan {

inline constexpr std::size_t kDefaultClusters = 3;
inline constexpr std::size_t kDefaultReplayCapacity = 500;

struct ClusterResult {
  std::vector<std::size_t> assignments;  // per sample, in [0, k)
  RowMatrix centers;                     // k x dim
  // Per cluster: sample indices sorted by ascending distance to the centre,
  // ties broken by lexicographic order of the sample vectors.
  std::vector<std::vector<std::size_t>> within_cluster_order;
  std::vector<std::vector<double>> within_cluster_distance;
  int iterations = 0;

  std::size_t k() const { return within_cluster_order.size(); }
  std::size_t cluster_size(std::size_t c) const { return within_cluster_order.at(c).size(); }
};

/// Lloyd iteration with k-means++ seeding on the rows of `samples`. Runs on a
/// canonical (lexicographically sorted) ordering of the rows, so the result
/// does not depend on the input order. Throws TooFewSamples / InvalidArgument.
ClusterResult kmeans_cluster(const RowMatrix& samples, std::size_t k, std::uint64_t seed, int max_iters = 100);

/// Takes floor(K * N_i / N_t) nearest-to-centre samples from each cluster,
/// cluster by cluster. Warns when the result is empty.
std::vector<std::size_t> select_exemplars(const ClusterResult& clusters, std::size_t K, std::size_t n_total);

/// Number of exemplars select_exemplars will return.
std::size_t exemplar_quota(const ClusterResult& clusters, std::size_t K, std::size_t n_total);

struct Exemplar {
  std::vector<double> values;
  std::uint32_t task = 0;
  std::uint32_t cluster = 0;
  bool operator==(const Exemplar&) const = default;
};

class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity_per_task = kDefaultReplayCapacity) : capacity_(capacity_per_task) {}

  std::size_t capacity_per_task() const { return capacity_; }
  const std::vector<Exemplar>& exemplars() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  std::size_t dim() const { return entries_.empty() ? 0 : entries_.front().values.size(); }
  std::vector<std::uint32_t> tasks() const;
  bool has_task(std::uint32_t task) const;
  std::size_t count_for(std::uint32_t task) const;

  /// All exemplar vectors as rows.
  RowMatrix matrix() const;
  /// Selected rows (indices into exemplars()).
  RowMatrix rows(const std::vector<std::size_t>& idx) const;

  bool operator==(const ReplayBuffer&) const = default;

 private:
  friend ReplayBuffer update_buffer(const ReplayBuffer&, std::vector<Exemplar>, std::uint32_t);
  friend ReplayBuffer load_buffer(const std::filesystem::path&);

  std::size_t capacity_;
  std::vector<Exemplar> entries_;
  std::vector<std::uint32_t> tasks_;  // in append order, including tasks with no exemplars
};

/// Appends the exemplars of `task` (all must carry that task index). Prior
/// entries are copied unchanged. Throws DuplicateTask, InvalidArgument
/// (over capacity or wrong task tag), ShapeMismatch.
ReplayBuffer update_buffer(const ReplayBuffer& buffer, std::vector<Exemplar> new_exemplars, std::uint32_t task);

/// Clusters `samples`, selects exemplars and packages them for `task`.
std::vector<Exemplar> make_exemplars(const RowMatrix& samples, const ClusterResult& clusters,
                                     const std::vector<std::size_t>& selected, std::uint32_t task);

void save_buffer(const ReplayBuffer& buffer, const std::filesystem::path& path);
ReplayBuffer load_buffer(const std::filesystem::path& path);

}  // namespace clcagan
