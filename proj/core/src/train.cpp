#include "clcagan/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <random>
#include <set>
#include <utility>

#include "clcagan/binary_io.hpp"
#include "clcagan/error.hpp"
#include "clcagan/log.hpp"

namespace clcagan {

namespace {

constexpr std::uint32_t kInitStream = 0x1417;
constexpr std::uint32_t kTrainStream = 0x7a11;
constexpr std::uint32_t kClusterStream = 0xc1u;

std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t a, std::uint32_t tag) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32), tag};
  return std::mt19937_64(seq);
}

bool uses_buffer(TrainMode m) {
  return m == TrainMode::Full || m == TrainMode::DistillOnly || m == TrainMode::ReplayOnly;
}

bool carries_model(TrainMode m) { return m != TrainMode::Joint && m != TrainMode::Isolated; }

}  // namespace

std::string to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::Full: return "full";
    case TrainMode::FineTune: return "fine_tune";
    case TrainMode::DistillOnly: return "distill_only";
    case TrainMode::ReplayOnly: return "replay_only";
    case TrainMode::Joint: return "joint";
    case TrainMode::Isolated: return "isolated";
  }
  return "?";
}

TrainMode parse_train_mode(const std::string& text) {
  for (auto m : {TrainMode::Full, TrainMode::FineTune, TrainMode::DistillOnly, TrainMode::ReplayOnly,
                 TrainMode::Joint, TrainMode::Isolated}) {
    if (to_string(m) == text) return m;
  }
  throw Error(ErrorCode::ConfigError, "unknown mode '" + text +
                                          "' (full, fine_tune, distill_only, replay_only, joint, isolated)");
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::ConfigError, msg); };
  if (epochs < 0) fail("epochs must be >= 0");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (!(lr_g > 0) || !(lr_d > 0)) fail("learning rates must be > 0");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) fail("moment coefficients must be in [0,1)");
  if (!(adam_eps > 0)) fail("adam_eps must be > 0");
  if (!(csd_weight >= 0)) fail("csd_weight must be >= 0");
  if (!(replay_mix_ratio >= 0 && replay_mix_ratio <= 1)) fail("replay_mix_ratio must be in [0,1]");
  if (csd_batch < 1) fail("csd_batch must be >= 1");
  if (!(cbm_beta > 0 && cbm_beta <= 1)) fail("cbm_beta must be in (0,1]");
  if (window < 1 || window % 2 == 0) fail("window must be odd");
  if (pca_dim < 1) fail("pca_dim must be >= 1");
  if (clusters < 1) fail("clusters must be >= 1");
  if (kmeans_iters < 1) fail("kmeans_iters must be >= 1");
  if (roc_thresholds < 2) fail("roc_thresholds must be >= 2");
  if (replay_policy != ReplayPolicy::Append) fail("replay_policy 'reselect' is not implemented");
  try {
    augment.validate();
  } catch (const Error& e) {
    fail(e.what());
  }
}

NetworkParams init_network(const ArchConfig& arch, std::uint64_t seed, std::uint64_t stream) {
  auto rng = make_rng(seed, stream, kInitStream);
  NetworkParams p;
  p.generator = init_generator(arch, rng);
  p.discriminator = init_discriminator(arch, rng);
  return p;
}

namespace {

bool same_tensor(const ParamTensor& a, const ParamTensor& b) {
  return a.name == b.name && a.shape == b.shape && a.data.rows() == b.data.rows() && a.data.cols() == b.data.cols() &&
         std::memcmp(a.data.data(), b.data.data(), sizeof(double) * static_cast<std::size_t>(a.data.size())) == 0;
}

template <typename P>
bool same_tensors(const P& a, const P& b) {
  const auto ta = a.tensors();
  const auto tb = b.tensors();
  if (ta.size() != tb.size()) return false;
  for (std::size_t k = 0; k < ta.size(); ++k) {
    if (!same_tensor(*ta[k], *tb[k])) return false;
  }
  return a.arch == b.arch;
}

}  // namespace

bool bitwise_equal(const NetworkParams& a, const NetworkParams& b) {
  return a.task_stage == b.task_stage && same_tensors(a.generator, b.generator) &&
         same_tensors(a.discriminator, b.discriminator);
}

TaskStream::TaskStream(std::vector<Task> tasks) : tasks_(std::move(tasks)) { validate(); }

void TaskStream::add(Task task) {
  tasks_.push_back(std::move(task));
  try {
    validate();
  } catch (...) {
    tasks_.pop_back();
    throw;
  }
}

void TaskStream::validate() const {
  if (tasks_.empty()) throw Error(ErrorCode::InvalidArgument, "task stream is empty");
  std::set<std::string> names;
  for (const auto& t : tasks_) {
    if (!names.insert(t.name).second) throw Error(ErrorCode::InvalidArgument, "duplicate task name '" + t.name + "'");
    if (t.truth && !t.truth->matches(t.cube)) {
      throw Error(ErrorCode::InvalidArgument, "truth grid of task '" + t.name + "' differs from its cube");
    }
  }
}

// ---------------------------------------------------------------------------
// Losses

namespace {

void same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(ErrorCode::ShapeMismatch, std::string(what) + ": " + std::to_string(a.rows()) + "x" +
                                              std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                                              std::to_string(b.cols()));
  }
}

double clamp_score(double s) { return std::clamp(s, kLossEpsilon, 1.0 - kLossEpsilon); }

}  // namespace

double loss_reconstruction(const Matrix& b_hat, const Matrix& b) {
  same_shape(b_hat, b, "reconstruction loss");
  if (b.size() == 0) throw Error(ErrorCode::ShapeMismatch, "reconstruction loss of an empty batch");
  return (b_hat - b).squaredNorm() / static_cast<double>(b.size());
}

double loss_generator(const Matrix& fake_scores, double recon_loss) {
  if (fake_scores.size() == 0) throw Error(ErrorCode::ShapeMismatch, "no scores");
  double s = 0;
  for (Eigen::Index k = 0; k < fake_scores.size(); ++k) s += std::log(1.0 - clamp_score(fake_scores.data()[k]));
  return s / static_cast<double>(fake_scores.size()) + recon_loss;
}

double loss_discriminator(const Matrix& real_scores, const Matrix& fake_scores) {
  if (real_scores.size() == 0 || fake_scores.size() == 0) throw Error(ErrorCode::ShapeMismatch, "no scores");
  double r = 0;
  for (Eigen::Index k = 0; k < real_scores.size(); ++k) r += std::log(clamp_score(real_scores.data()[k]));
  double f = 0;
  for (Eigen::Index k = 0; k < fake_scores.size(); ++k) f += std::log(1.0 - clamp_score(fake_scores.data()[k]));
  return -(r / static_cast<double>(real_scores.size()) + f / static_cast<double>(fake_scores.size()));
}

double loss_csd(const GeneratorParams& current, const GeneratorParams& frozen, const Matrix& exemplars) {
  if (exemplars.rows() == 0) {
    log::warn(std::string(to_string(ErrorCode::EmptyBuffer)) + ": no exemplars for self-distillation, term is 0");
    return 0.0;
  }
  const Matrix a = generator_forward(current, exemplars);
  const Matrix b = generator_forward(frozen, exemplars);
  same_shape(a, b, "self-distillation");
  return (a - b).squaredNorm() / static_cast<double>(exemplars.rows());
}

NodeId loss_reconstruction(Tape& tape, NodeId b_hat, NodeId b) {
  const auto d = tape.sub(b_hat, b);
  return tape.mean(tape.mul(d, d));
}

NodeId loss_generator(Tape& tape, NodeId fake_scores, NodeId recon_loss) {
  const auto s = tape.clamp(fake_scores, kLossEpsilon, 1.0 - kLossEpsilon);
  const auto adv = tape.mean(tape.log(tape.scale_shift(s, -1.0, 1.0)));
  return tape.add(adv, recon_loss);
}

NodeId loss_discriminator(Tape& tape, NodeId real_scores, NodeId fake_scores) {
  const auto r = tape.mean(tape.log(tape.clamp(real_scores, kLossEpsilon, 1.0 - kLossEpsilon)));
  const auto f = tape.clamp(fake_scores, kLossEpsilon, 1.0 - kLossEpsilon);
  const auto fl = tape.mean(tape.log(tape.scale_shift(f, -1.0, 1.0)));
  return tape.scale_shift(tape.add(r, fl), -1.0, 0.0);
}

NodeId loss_csd(Tape& tape, NodeId current_out, NodeId frozen_out) {
  // mean over all entries times the row width gives the mean squared row norm;
  // the targets are a leaf, so their width is known before evaluation
  const auto width = static_cast<double>(tape.value(frozen_out).cols());
  if (width == 0) throw Error(ErrorCode::ShapeMismatch, "self-distillation targets must be a non-empty leaf");
  const auto d = tape.sub(current_out, frozen_out);
  return tape.scale_shift(tape.mean(tape.mul(d, d)), width, 0.0);
}

// ---------------------------------------------------------------------------
// Optimizer

void AdamOptimizer::step(const std::vector<ParamTensor*>& params) {
  for (const auto* p : params) {
    if (p->grad.rows() != p->data.rows() || p->grad.cols() != p->data.cols()) {
      throw Error(ErrorCode::ShapeMismatch, "gradient of " + p->name + " has the wrong shape");
    }
    if (!p->grad.allFinite()) throw Error(ErrorCode::NonFiniteGradient, "gradient of " + p->name);
  }
  if (m_.empty()) {
    for (const auto* p : params) {
      m_.push_back(Matrix::Zero(p->data.rows(), p->data.cols()));
      v_.push_back(Matrix::Zero(p->data.rows(), p->data.cols()));
    }
  } else if (m_.size() != params.size()) {
    throw Error(ErrorCode::InvalidArgument, "optimizer called with a different parameter set");
  }
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = *params[k];
    m_[k] = cfg_.beta1 * m_[k] + (1.0 - cfg_.beta1) * p.grad;
    v_[k] = cfg_.beta2 * v_[k] + (1.0 - cfg_.beta2) * p.grad.cwiseAbs2();
    p.data.array() -= cfg_.lr * (m_[k].array() / c1) / ((v_[k].array() / c2).sqrt() + cfg_.eps);
  }
}

void AdamOptimizer::reset() {
  t_ = 0;
  m_.clear();
  v_.clear();
}

// ---------------------------------------------------------------------------
// Single-task training

ReplayWiring wiring_for(const TrainConfig& config) {
  switch (config.mode) {
    case TrainMode::Full: return {config.replay_mix_ratio, config.csd_weight};
    case TrainMode::DistillOnly: return {0.0, config.csd_weight};
    case TrainMode::ReplayOnly: return {config.replay_mix_ratio, 0.0};
    case TrainMode::FineTune:
    case TrainMode::Joint:
    case TrainMode::Isolated: return {0.0, 0.0};
  }
  return {};
}

namespace {

void zero_grads(const std::vector<ParamTensor*>& ts) {
  for (auto* t : ts) t->zero_grad();
}

double finite_loss(double v, const char* what, int epoch) {
  if (!std::isfinite(v)) {
    throw Error(ErrorCode::NonFiniteLoss, std::string(what) + " loss is not finite at epoch " + std::to_string(epoch));
  }
  return v;
}

}  // namespace

std::vector<EpochLoss> train_on_samples(NetworkParams& params, const RowMatrix& background,
                                        const TrainConfig& config, const ReplayBuffer& buffer,
                                        const GeneratorParams* frozen, std::uint32_t stage) {
  config.validate();
  if (config.epochs == 0) return {};
  const auto dim = params.generator.arch.feature_dim;
  if (static_cast<std::size_t>(background.cols()) != dim) {
    throw Error(ErrorCode::ShapeMismatch, "networks expect feature dim " + std::to_string(dim) + ", samples have " +
                                              std::to_string(background.cols()));
  }
  if (background.rows() == 0) throw Error(ErrorCode::EmptyBackground, "no background samples to train on");
  if (!buffer.empty() && buffer.dim() != dim) {
    throw Error(ErrorCode::DimensionMismatch, "buffer dim " + std::to_string(buffer.dim()) + " vs network dim " +
                                                  std::to_string(dim));
  }

  const auto wiring = wiring_for(config);
  const bool mix = !buffer.empty() && wiring.mix_ratio > 0;
  const bool csd = frozen != nullptr && wiring.csd_weight > 0 && !buffer.empty();
  if (frozen != nullptr && wiring.csd_weight > 0 && buffer.empty()) {
    log::warn(std::string(to_string(ErrorCode::EmptyBuffer)) + ": no exemplars for self-distillation at stage " +
              std::to_string(stage) + ", term is 0");
  }
  if (csd && frozen->arch != params.generator.arch) {
    throw Error(ErrorCode::ShapeMismatch, "frozen generator architecture differs");
  }

  const std::size_t batch = config.batch_size;
  std::size_t n_rep = 0;
  if (mix) {
    n_rep = static_cast<std::size_t>(std::llround(static_cast<double>(batch) * wiring.mix_ratio));
    n_rep = std::min(n_rep, batch - 1);
  }
  const std::size_t n_cur = batch - n_rep;

  const RowMatrix buffer_rows = (mix || csd) ? buffer.matrix() : RowMatrix();
  const Matrix frozen_out = csd ? generator_forward(*frozen, buffer_rows) : Matrix();
  const auto n_buf = static_cast<std::size_t>(buffer_rows.rows());

  auto rng = make_rng(config.seed, stage, kTrainStream);
  AdamOptimizer opt_g({config.lr_g, config.beta1, config.beta2, config.adam_eps});
  AdamOptimizer opt_d({config.lr_d, config.beta1, config.beta2, config.adam_eps});
  const auto g_tensors = params.generator.tensors();
  const auto d_tensors = params.discriminator.tensors();
  const bool aug = !config.augment.is_identity();

  const auto n = static_cast<std::size_t>(background.rows());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<std::size_t> pool(n_buf);
  std::iota(pool.begin(), pool.end(), std::size_t{0});

  std::vector<EpochLoss> history;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    EpochLoss log_e;
    log_e.epoch = epoch;
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < n; start += n_cur) {
      const std::size_t cur = std::min(n_cur, n - start);
      const std::size_t rep = mix ? n_rep : 0;
      Matrix x(static_cast<Eigen::Index>(cur + rep), static_cast<Eigen::Index>(dim));
      for (std::size_t r = 0; r < cur; ++r) {
        x.row(static_cast<Eigen::Index>(r)) = background.row(static_cast<Eigen::Index>(order[start + r]));
      }
      if (rep > 0) {
        std::uniform_int_distribution<std::size_t> pick(0, n_buf - 1);
        for (std::size_t r = 0; r < rep; ++r) {
          x.row(static_cast<Eigen::Index>(cur + r)) = buffer_rows.row(static_cast<Eigen::Index>(pick(rng)));
        }
      }
      const Matrix real = config.replay_as_real ? x : Matrix(x.topRows(static_cast<Eigen::Index>(cur)));

      // discriminator step
      {
        const Matrix fake = generator_forward(params.generator, x);
        const auto draw_r = draw_augment(config.augment, static_cast<std::size_t>(real.rows()), rng);
        const auto draw_f = draw_augment(config.augment, static_cast<std::size_t>(fake.rows()), rng);
        Tape tape;
        auto r = tape.constant_ref(real);
        auto f = tape.constant_ref(fake);
        if (aug) {
          r = augment_graph(tape, r, draw_r);
          f = augment_graph(tape, f, draw_f);
        }
        const auto sr = discriminator_graph(tape, params.discriminator, r);
        const auto sf = discriminator_graph(tape, params.discriminator, f);
        loss_discriminator(tape, sr, sf);
        log_e.d_loss += finite_loss(tape.forward_eval(), "discriminator", epoch);
        zero_grads(d_tensors);
        tape.backprop();
        opt_d.step(d_tensors);
      }

      // generator step
      {
        const auto draw_g = draw_augment(config.augment, static_cast<std::size_t>(x.rows()), rng);
        Matrix ex;
        Matrix ex_target;
        if (csd) {
          const std::size_t take = std::min(config.csd_batch, n_buf);
          for (std::size_t k = 0; k < take; ++k) {
            std::uniform_int_distribution<std::size_t> pick(k, n_buf - 1);
            std::swap(pool[k], pool[pick(rng)]);
          }
          ex.resize(static_cast<Eigen::Index>(take), static_cast<Eigen::Index>(dim));
          ex_target.resize(static_cast<Eigen::Index>(take), frozen_out.cols());
          for (std::size_t k = 0; k < take; ++k) {
            ex.row(static_cast<Eigen::Index>(k)) = buffer_rows.row(static_cast<Eigen::Index>(pool[k]));
            ex_target.row(static_cast<Eigen::Index>(k)) = frozen_out.row(static_cast<Eigen::Index>(pool[k]));
          }
        }
        Tape tape;
        const auto xin = tape.constant_ref(x);
        const auto g = generator_graph(tape, params.generator, xin);
        const auto gin = aug ? augment_graph(tape, g, draw_g) : g;
        const auto s = discriminator_graph(tape, std::as_const(params.discriminator), gin);
        const auto recon = loss_reconstruction(tape, g, xin);
        auto total = loss_generator(tape, s, recon);
        NodeId csd_node{};
        if (csd) {
          const auto ge = generator_graph(tape, params.generator, tape.constant_ref(ex));
          csd_node = loss_csd(tape, ge, tape.constant_ref(ex_target));
          total = tape.add(total, tape.scale_shift(csd_node, wiring.csd_weight, 0.0));
        }
        const double value = finite_loss(tape.forward_eval(), "generator", epoch);
        const double rv = tape.value(recon)(0, 0);
        const double cv = csd ? tape.value(csd_node)(0, 0) : 0.0;
        log_e.g_recon += rv;
        log_e.g_csd += cv;
        log_e.g_adv += value - rv - (csd ? wiring.csd_weight * cv : 0.0);
        zero_grads(g_tensors);
        tape.backprop();
        opt_g.step(g_tensors);
      }
      ++log_e.batches;
    }
    const auto nb = static_cast<double>(log_e.batches);
    log_e.d_loss /= nb;
    log_e.g_adv /= nb;
    log_e.g_recon /= nb;
    log_e.g_csd /= nb;
    history.push_back(log_e);
  }
  return history;
}

HsiCube unify_cube(const HsiCube& cube, std::size_t target_dim) {
  if (target_dim < 1) throw Error(ErrorCode::InvalidArgument, "target dimension must be positive");
  if (cube.channels() < target_dim) {
    throw Error(ErrorCode::DimensionMismatch, "cube has " + std::to_string(cube.channels()) + " bands, model needs " +
                                                  std::to_string(target_dim));
  }
  if (cube.channels() == target_dim) return normalize_bands(cube);
  return normalize_bands(pca_fit_reduce(cube, target_dim).second);
}

namespace {

PreparedScene prepare_unified(HsiCube unified, const TrainConfig& config) {
  auto mask = config.use_cbm ? build_cbm(unified, config.cbm_beta)
                             : all_background_mask(unified.height(), unified.width());
  auto features = ss_features(unified, config.window);
  auto split = split_samples(features, mask);
  return {std::move(unified), std::move(features), std::move(mask), std::move(split)};
}

}  // namespace

PreparedScene prepare_scene(const HsiCube& cube, std::size_t target_dim, const TrainConfig& config) {
  return prepare_unified(unify_cube(cube, target_dim), config);
}

std::size_t unified_dim(const TaskStream& stream, std::size_t pca_dim) {
  std::size_t d = pca_dim;
  for (const auto& t : stream.tasks()) d = std::min(d, t.cube.channels());
  return d;
}

std::vector<EpochLoss> train_task(NetworkParams& params, const HsiCube& scene, const TrainConfig& config,
                                  const ReplayBuffer& buffer, const GeneratorParams* frozen, std::uint32_t stage) {
  const auto prepared = prepare_scene(scene, scene.channels(), config);
  return train_on_samples(params, prepared.split.background, config, buffer, frozen, stage);
}

AucReport evaluate_scene(const GeneratorParams& generator, const PreparedScene& scene,
                         const GroundTruthMask& truth, std::size_t n_thresholds) {
  const auto map = score_map(generator, scene.features, true);
  return auc_suite(roc_3d(map, truth, n_thresholds));
}

// ---------------------------------------------------------------------------
// Continual stream

StreamResult train_stream(const TaskStream& stream, const TrainConfig& config, const StreamState* resume,
                          const StageCallback& on_stage) {
  stream.validate();
  config.validate();
  const auto& tasks = stream.tasks();
  const auto t_count = tasks.size();
  const auto mode = config.mode;
  const bool isolated = mode == TrainMode::Isolated;

  std::vector<PreparedScene> scenes;
  scenes.reserve(t_count);
  const auto common = unified_dim(stream, config.pca_dim);
  for (const auto& t : tasks) {
    const auto target = isolated ? std::min(config.pca_dim, t.cube.channels()) : common;
    scenes.push_back(prepare_scene(t.cube, target, config));
  }

  ArchConfig arch = config.arch;
  arch.feature_dim = 2 * common;

  StreamResult res;
  res.feature_dim = arch.feature_dim;
  NetworkParams params;
  ReplayBuffer buffer(config.replay_capacity);
  std::size_t start = 0;
  if (resume != nullptr) {
    start = resume->completed;
    if (start > t_count) throw Error(ErrorCode::InvalidArgument, "resume state is past the end of the stream");
    params = resume->params;
    buffer = resume->buffer;
    res.auc_matrix = resume->auc_matrix;
    res.auc_matrix.resize(start);
    res.stages = resume->stages;
    res.stages.resize(std::min(res.stages.size(), start));
    if (start > 0 && carries_model(mode) && params.generator.arch.feature_dim != arch.feature_dim) {
      throw Error(ErrorCode::DimensionMismatch, "resumed model has feature dim " +
                                                    std::to_string(params.generator.arch.feature_dim) +
                                                    ", stream needs " + std::to_string(arch.feature_dim));
    }
  }
  if (start == 0 && carries_model(mode)) params = init_network(arch, config.seed, 0);

  for (std::size_t r = start; r < t_count; ++r) {
    const auto stage = static_cast<std::uint32_t>(r + 1);
    StageLog log_s;
    log_s.stage = stage;
    log_s.task = tasks[r].name;
    const RowMatrix* train_rows = &scenes[r].split.background;
    RowMatrix pooled;

    if (carries_model(mode)) {
      std::optional<GeneratorParams> frozen;
      if (r > 0) frozen = params.generator;
      log_s.epochs = train_on_samples(params, *train_rows, config, buffer, frozen ? &*frozen : nullptr, stage);
    } else if (mode == TrainMode::Joint) {
      Eigen::Index rows = 0;
      for (std::size_t i = 0; i <= r; ++i) rows += scenes[i].split.background.rows();
      pooled.resize(rows, static_cast<Eigen::Index>(arch.feature_dim));
      Eigen::Index at = 0;
      for (std::size_t i = 0; i <= r; ++i) {
        const auto& b = scenes[i].split.background;
        pooled.middleRows(at, b.rows()) = b;
        at += b.rows();
      }
      train_rows = &pooled;
      params = init_network(arch, config.seed, stage);
      log_s.epochs = train_on_samples(params, pooled, config, ReplayBuffer(0), nullptr, stage);
    } else {
      ArchConfig own = config.arch;
      own.feature_dim = scenes[r].features.dim();
      params = init_network(own, config.seed, stage);
      log_s.epochs = train_on_samples(params, *train_rows, config, ReplayBuffer(0), nullptr, stage);
    }
    params.task_stage = stage;
    log_s.background_count = static_cast<std::size_t>(train_rows->rows());

    std::vector<std::optional<double>> row(r + 1);
    for (std::size_t i = 0; i <= r; ++i) {
      if (!tasks[i].truth) continue;
      if (isolated && i < r) {
        row[i] = res.auc_matrix.at(i).at(i);
      } else {
        row[i] = evaluate_scene(params.generator, scenes[i], *tasks[i].truth, config.roc_thresholds).auc_df;
      }
    }
    res.auc_matrix.push_back(row);
    log_s.auc_row = row;

    if (uses_buffer(mode) && config.replay_capacity > 0) {
      const auto& bg = scenes[r].split.background;
      auto seed_rng = make_rng(config.seed, stage, kClusterStream);
      const auto clusters = kmeans_cluster(bg, config.clusters, seed_rng(), config.kmeans_iters);
      const auto selected = select_exemplars(clusters, config.replay_capacity, static_cast<std::size_t>(bg.rows()));
      buffer = update_buffer(buffer, make_exemplars(bg, clusters, selected, stage), stage);
      log_s.exemplars_added = selected.size();
    }
    log_s.buffer_size = buffer.size();

    res.stages.push_back(log_s);
    res.checkpoints.push_back(params);
    if (on_stage) on_stage(log_s, params, buffer);
  }
  res.final_params = params;
  res.buffer = buffer;
  return res;
}

// ---------------------------------------------------------------------------
// Checkpoints. Layout: "CAPS", u8 version, 3 pad, u32 stage, architecture
// (12 u32 sizes, u8 coupling, f64 leaky slope), u32 tensor count, then per
// tensor: name (u32 length + bytes), u32 ndim, ndim u32 dims, f64 values.

namespace {

constexpr std::uint8_t kCapsVersion = 1;

void write_arch(io::ByteWriter& w, const ArchConfig& a) {
  for (const std::size_t v : {a.feature_dim, a.g_hidden, a.g_groups, a.g_per_group, a.g_capsule_dim, a.latent_dim,
                              a.dec_hidden, a.d_groups, a.d_per_group, a.d_out, a.conv_channels}) {
    w.u32(static_cast<std::uint32_t>(v));
  }
  w.u32(static_cast<std::uint32_t>(a.routing_iters));
  w.u8(a.coupling == CouplingMode::Softmax ? 0 : 1);
  w.f64(a.leaky_slope);
}

ArchConfig read_arch(io::ByteReader& r) {
  ArchConfig a;
  for (std::size_t* v : {&a.feature_dim, &a.g_hidden, &a.g_groups, &a.g_per_group, &a.g_capsule_dim, &a.latent_dim,
                         &a.dec_hidden, &a.d_groups, &a.d_per_group, &a.d_out, &a.conv_channels}) {
    *v = r.u32();
  }
  a.routing_iters = static_cast<int>(r.u32());
  const auto c = r.u8();
  if (c > 1) throw Error(ErrorCode::BadMagic, "unknown coupling mode in checkpoint");
  a.coupling = c == 0 ? CouplingMode::Softmax : CouplingMode::RawLogits;
  a.leaky_slope = r.f64();
  return a;
}

}  // namespace

void save_checkpoint(const NetworkParams& params, const std::filesystem::path& path) {
  if (params.generator.arch != params.discriminator.arch) {
    throw Error(ErrorCode::InvalidArgument, "generator and discriminator architectures differ");
  }
  io::ByteWriter w;
  w.magic("CAPS");
  w.u8(kCapsVersion);
  w.u8(0);
  w.u8(0);
  w.u8(0);
  w.u32(params.task_stage);
  write_arch(w, params.generator.arch);
  auto tensors = params.generator.tensors();
  for (const auto* t : params.discriminator.tensors()) tensors.push_back(t);
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto* t : tensors) {
    w.str(t->name);
    w.u32(static_cast<std::uint32_t>(t->shape.size()));
    for (const auto d : t->shape) w.u32(static_cast<std::uint32_t>(d));
    for (Eigen::Index k = 0; k < t->data.size(); ++k) w.f64(t->data.data()[k]);
  }
  io::write_file(path, w.buffer());
}

NetworkParams load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  io::ByteReader r(bytes);
  r.expect_magic("CAPS");
  if (const auto v = r.u8(); v != kCapsVersion) {
    throw Error(ErrorCode::BadMagic, "unsupported CAPS version " + std::to_string(v));
  }
  r.take(3);
  const auto stage = r.u32();
  const auto arch = read_arch(r);
  try {
    arch.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::BadMagic, std::string("checkpoint architecture is invalid: ") + e.what());
  }
  NetworkParams p = init_network(arch, 0, 0);
  p.task_stage = stage;
  auto tensors = p.generator.tensors();
  for (auto* t : p.discriminator.tensors()) tensors.push_back(t);
  if (r.u32() != tensors.size()) throw Error(ErrorCode::BadMagic, "unexpected tensor count in " + path.string());
  for (auto* t : tensors) {
    const auto name = r.str();
    if (name != t->name) throw Error(ErrorCode::BadMagic, "expected tensor " + t->name + ", found " + name);
    const auto ndim = r.u32();
    std::vector<std::size_t> shape;
    for (std::uint32_t k = 0; k < ndim; ++k) shape.push_back(r.u32());
    if (shape != t->shape) throw Error(ErrorCode::ShapeMismatch, "tensor " + name + " has an unexpected shape");
    for (Eigen::Index k = 0; k < t->data.size(); ++k) {
      const double v = r.f64();
      if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteValue, "non-finite value in tensor " + name);
      t->data.data()[k] = v;
    }
  }
  if (r.remaining() != 0) throw Error(ErrorCode::TruncatedPayload, "trailing bytes in " + path.string());
  return p;
}

}  // namespace clcagan
