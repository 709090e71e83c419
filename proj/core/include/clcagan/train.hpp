#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "clcagan/capsule.hpp"
#include "clcagan/detect_eval.hpp"
#include "clcagan/hsi_data.hpp"
#include "clcagan/preprocess.hpp"
#include "clcagan/replay.hpp"

namespace clcagan {

enum class TrainMode { Full, FineTune, DistillOnly, ReplayOnly, Joint, Isolated };

std::string to_string(TrainMode mode);
/// Accepts full, fine_tune, distill_only, replay_only, joint, isolated. Throws ConfigError.
TrainMode parse_train_mode(const std::string& text);

inline constexpr double kLossEpsilon = 1e-7;

// Append keeps every earlier exemplar. Reselect (re-clustering the old buffer
// together with the new task) is reserved and rejected by validate().
enum class ReplayPolicy { Append, Reselect };

struct TrainConfig {
  int epochs = 50;
  std::size_t batch_size = 64;
  double lr_g = 1e-4;
  double lr_d = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double csd_weight = 1.0;
  double replay_mix_ratio = 0.25;
  bool replay_as_real = true;   // buffer rows also count as real samples for D
  std::size_t csd_batch = 64;   // exemplars drawn for each self-distillation term
  AugmentSpec augment;
  std::uint64_t seed = 7;
  TrainMode mode = TrainMode::Full;

  // preprocessing, replay and evaluation
  bool use_cbm = true;
  double cbm_beta = kDefaultCbmBeta;
  std::size_t window = kDefaultWindow;
  std::size_t pca_dim = 64;
  std::size_t replay_capacity = kDefaultReplayCapacity;  // 0 disables buffer updates
  ReplayPolicy replay_policy = ReplayPolicy::Append;
  std::size_t clusters = kDefaultClusters;
  int kmeans_iters = 100;
  std::size_t roc_thresholds = kDefaultRocThresholds;

  ArchConfig arch;  // feature_dim is filled in from the data

  void validate() const;  // ConfigError
  bool operator==(const TrainConfig&) const = default;
};

struct NetworkParams {
  GeneratorParams generator;
  DiscriminatorParams discriminator;
  std::uint32_t task_stage = 0;
};

/// Fresh networks for `arch`, drawn from (seed, stream).
NetworkParams init_network(const ArchConfig& arch, std::uint64_t seed, std::uint64_t stream = 0);

bool bitwise_equal(const NetworkParams& a, const NetworkParams& b);

struct Task {
  std::string name;
  HsiCube cube;
  std::optional<GroundTruthMask> truth;
};

class TaskStream {
 public:
  TaskStream() = default;
  explicit TaskStream(std::vector<Task> tasks);  // validates
  void add(Task task);  // validates, leaving the stream unchanged on error
  const std::vector<Task>& tasks() const { return tasks_; }
  std::size_t size() const { return tasks_.size(); }
  /// Throws InvalidArgument when empty, names repeat, or a truth grid differs from its cube.
  void validate() const;

 private:
  std::vector<Task> tasks_;
};

// ---------------------------------------------------------------------------
// Losses. Value forms take plain matrices; graph forms record onto a tape.

double loss_reconstruction(const Matrix& b_hat, const Matrix& b);
double loss_generator(const Matrix& fake_scores, double recon_loss);
double loss_discriminator(const Matrix& real_scores, const Matrix& fake_scores);
/// Mean over exemplar rows of ||G_cur(e) - G_frozen(e)||^2. Returns 0 and
/// warns when `exemplars` has no rows.
double loss_csd(const GeneratorParams& current, const GeneratorParams& frozen, const Matrix& exemplars);

NodeId loss_reconstruction(Tape& tape, NodeId b_hat, NodeId b);
NodeId loss_generator(Tape& tape, NodeId fake_scores, NodeId recon_loss);
NodeId loss_discriminator(Tape& tape, NodeId real_scores, NodeId fake_scores);
/// `current_out` is G_cur applied to the exemplars; `frozen_out` the frozen
/// generator's outputs, a constant leaf.
NodeId loss_csd(Tape& tape, NodeId current_out, NodeId frozen_out);

// ---------------------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected adaptive-moment updates from ParamTensor::grad.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(AdamConfig config) : cfg_(config) {}
  /// Throws NonFiniteGradient (naming the tensor) before touching any value.
  void step(const std::vector<ParamTensor*>& params);
  void reset();
  long steps() const { return t_; }

 private:
  AdamConfig cfg_;
  long t_ = 0;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
};

// ---------------------------------------------------------------------------

struct EpochLoss {
  int epoch = 0;
  double d_loss = 0;
  double g_adv = 0;
  double g_recon = 0;
  double g_csd = 0;
  std::size_t batches = 0;
};

/// Buffer usage for one task, resolved from the mode.
struct ReplayWiring {
  double mix_ratio = 0;   // share of each minibatch drawn from the buffer
  double csd_weight = 0;  // applied only when a frozen generator exists
};

ReplayWiring wiring_for(const TrainConfig& config);

/// Trains on prepared background rows. `stage` selects the random stream.
/// With epochs == 0 nothing changes. Throws NonFiniteLoss with the epoch.
std::vector<EpochLoss> train_on_samples(NetworkParams& params, const RowMatrix& background,
                                        const TrainConfig& config, const ReplayBuffer& buffer,
                                        const GeneratorParams* frozen, std::uint32_t stage);

struct PreparedScene {
  HsiCube cube;  // unified and normalised
  FeatureMatrix features;
  CbmMask mask;
  SampleSplit split;
};

/// Normalises a cube, first reducing it by PCA when its band count differs
/// from `target_dim`. Throws DimensionMismatch when the cube has fewer bands.
HsiCube unify_cube(const HsiCube& cube, std::size_t target_dim);
PreparedScene prepare_scene(const HsiCube& cube, std::size_t target_dim, const TrainConfig& config);
/// Common band count for a stream: min(pca_dim, smallest C).
std::size_t unified_dim(const TaskStream& stream, std::size_t pca_dim);

/// Preprocesses the scene (mask, features, split) and trains on its
/// background set. Uses the cube as given; call unify_cube first if needed.
std::vector<EpochLoss> train_task(NetworkParams& params, const HsiCube& scene, const TrainConfig& config,
                                  const ReplayBuffer& buffer, const GeneratorParams* frozen, std::uint32_t stage);

/// AUC_(D,F) of the generator's detection map on a prepared scene.
AucReport evaluate_scene(const GeneratorParams& generator, const PreparedScene& scene,
                         const GroundTruthMask& truth, std::size_t n_thresholds);

struct StageLog {
  std::uint32_t stage = 0;  // 1-based
  std::string task;
  std::vector<EpochLoss> epochs;
  std::vector<std::optional<double>> auc_row;
  std::size_t buffer_size = 0;
  std::size_t background_count = 0;
  std::size_t exemplars_added = 0;
};

struct StreamState {
  NetworkParams params;
  ReplayBuffer buffer;
  AucMatrix auc_matrix;
  std::vector<StageLog> stages;
  std::size_t completed = 0;
};

struct StreamResult {
  NetworkParams final_params;
  std::vector<NetworkParams> checkpoints;  // one per stage trained in this call
  ReplayBuffer buffer;
  AucMatrix auc_matrix;
  std::vector<StageLog> stages;
  std::size_t feature_dim = 0;
};

using StageCallback = std::function<void(const StageLog&, const NetworkParams&, const ReplayBuffer&)>;

/// Continual training over the stream. `resume` continues after its
/// completed stages; the result then holds the full matrix and logs.
StreamResult train_stream(const TaskStream& stream, const TrainConfig& config,
                          const StreamState* resume = nullptr, const StageCallback& on_stage = {});

// ---------------------------------------------------------------------------
// "CAPS" checkpoints

void save_checkpoint(const NetworkParams& params, const std::filesystem::path& path);
NetworkParams load_checkpoint(const std::filesystem::path& path);

}  // namespace clcagan
