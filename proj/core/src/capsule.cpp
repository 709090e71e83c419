#include "clcagan/capsule.hpp"

#include <cmath>
#include <string>

#include "clcagan/error.hpp"

namespace clcagan {

void CapsuleLayerSpec::validate() const {
  if (groups * per_group < 1 || capsule_dim < 2 || routing_iters < 1) {
    throw Error(ErrorCode::InvalidArgument, "capsule layer needs Z*K >= 1, d >= 2, routing_iters >= 1");
  }
}

CapsuleLayerSpec ArchConfig::generator_spec() const {
  return {g_groups, g_per_group, g_capsule_dim, routing_iters};
}

CapsuleLayerSpec ArchConfig::discriminator_spec() const {
  const std::size_t caps = d_groups * d_per_group;
  const std::size_t total = 3 * conv_channels * feature_dim;
  return {d_groups, d_per_group, caps > 0 ? total / caps : 0, routing_iters};
}

void ArchConfig::validate() const {
  if (feature_dim < 2 || feature_dim % 2 != 0) {
    throw Error(ErrorCode::InvalidArgument, "feature dim must be an even 2C >= 2");
  }
  if (g_hidden < 1 || dec_hidden < 1 || latent_dim < 2 || d_out < 2 || conv_channels < 1) {
    throw Error(ErrorCode::InvalidArgument, "layer widths must be positive (latent, d_out >= 2)");
  }
  generator_spec().validate();
  const std::size_t caps = d_groups * d_per_group;
  if (caps == 0 || (3 * conv_channels * feature_dim) % caps != 0) {
    throw Error(ErrorCode::ShapeMismatch, "discriminator feature maps (" +
                                              std::to_string(3 * conv_channels * feature_dim) +
                                              " values) do not split into " + std::to_string(caps) + " capsules");
  }
  discriminator_spec().validate();
}

std::vector<ParamTensor*> GeneratorParams::tensors() {
  return {&primary_w1, &primary_b1, &primary_w2, &primary_b2, &capsule_w,
          &decoder_w1, &decoder_b1, &decoder_w2, &decoder_b2};
}
std::vector<const ParamTensor*> GeneratorParams::tensors() const {
  return {&primary_w1, &primary_b1, &primary_w2, &primary_b2, &capsule_w,
          &decoder_w1, &decoder_b1, &decoder_w2, &decoder_b2};
}
std::vector<ParamTensor*> DiscriminatorParams::tensors() {
  return {&conv_k[0], &conv_b[0], &conv_k[1], &conv_b[1], &conv_k[2], &conv_b[2], &capsule_w};
}
std::vector<const ParamTensor*> DiscriminatorParams::tensors() const {
  return {&conv_k[0], &conv_b[0], &conv_k[1], &conv_b[1], &conv_k[2], &conv_b[2], &capsule_w};
}

namespace {

void fill_uniform(ParamTensor& p, double limit, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(-limit, limit);
  for (Eigen::Index k = 0; k < p.data.size(); ++k) p.data.data()[k] = d(rng);
}

ParamTensor dense_weight(const std::string& name, std::size_t out, std::size_t in, std::mt19937_64& rng) {
  auto p = ParamTensor::make(name, {out, in}, static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in));
  fill_uniform(p, std::sqrt(6.0 / static_cast<double>(in + out)), rng);
  return p;
}

ParamTensor bias(const std::string& name, std::size_t n) {
  return ParamTensor::make(name, {n}, 1, static_cast<Eigen::Index>(n));
}

ParamTensor capsule_weight(const std::string& name, std::size_t caps, std::size_t out, std::size_t in,
                           std::mt19937_64& rng) {
  auto p = ParamTensor::make(name, {caps, out, in}, static_cast<Eigen::Index>(caps),
                             static_cast<Eigen::Index>(out * in));
  fill_uniform(p, std::sqrt(6.0 / static_cast<double>(in + out)), rng);
  return p;
}

}  // namespace

GeneratorParams init_generator(const ArchConfig& arch, std::mt19937_64& rng) {
  arch.validate();
  const auto spec = arch.generator_spec();
  GeneratorParams g;
  g.arch = arch;
  g.primary_w1 = dense_weight("g.primary.w1", arch.g_hidden, arch.feature_dim, rng);
  g.primary_b1 = bias("g.primary.b1", arch.g_hidden);
  g.primary_w2 = dense_weight("g.primary.w2", spec.capsules() * spec.capsule_dim, arch.g_hidden, rng);
  g.primary_b2 = bias("g.primary.b2", spec.capsules() * spec.capsule_dim);
  g.capsule_w = capsule_weight("g.capsule.w", spec.capsules(), arch.latent_dim, spec.capsule_dim, rng);
  g.decoder_w1 = dense_weight("g.decoder.w1", arch.dec_hidden, arch.latent_dim, rng);
  g.decoder_b1 = bias("g.decoder.b1", arch.dec_hidden);
  g.decoder_w2 = dense_weight("g.decoder.w2", arch.feature_dim, arch.dec_hidden, rng);
  g.decoder_b2 = bias("g.decoder.b2", arch.feature_dim);
  return g;
}

DiscriminatorParams init_discriminator(const ArchConfig& arch, std::mt19937_64& rng) {
  arch.validate();
  const auto spec = arch.discriminator_spec();
  DiscriminatorParams d;
  d.arch = arch;
  for (int s = 0; s < 3; ++s) {
    const auto w = kConvWidths[s];
    const auto tag = std::to_string(w);
    d.conv_k[s] = ParamTensor::make("d.conv" + tag + ".k", {arch.conv_channels, 1, w},
                                    static_cast<Eigen::Index>(arch.conv_channels), static_cast<Eigen::Index>(w));
    fill_uniform(d.conv_k[s], std::sqrt(3.0 / static_cast<double>(w)), rng);
    d.conv_b[s] = bias("d.conv" + tag + ".b", arch.conv_channels);
  }
  d.capsule_w = capsule_weight("d.capsule.w", spec.capsules(), arch.d_out, spec.capsule_dim, rng);
  return d;
}

// ---------------------------------------------------------------------------
// Squashing and routing

Eigen::VectorXd squash(const Eigen::VectorXd& u) {
  const double n2 = u.squaredNorm();
  if (n2 == 0.0) return Eigen::VectorXd::Zero(u.size());
  const double n = std::sqrt(n2);
  return (n / (1.0 + n2)) * u;
}

namespace {

Eigen::VectorXd couple(const Eigen::VectorXd& logits, CouplingMode mode) {
  if (mode == CouplingMode::RawLogits) return logits;
  const double top = logits.maxCoeff();
  Eigen::VectorXd e = (logits.array() - top).exp().matrix();
  return e / e.sum();
}

}  // namespace

RoutingResult route_votes(const Matrix& votes, int iters, CouplingMode mode) {
  if (iters < 1) throw Error(ErrorCode::InvalidArgument, "routing needs at least one iteration");
  if (votes.rows() < 1 || votes.cols() < 1) throw Error(ErrorCode::ShapeMismatch, "routing with no votes");
  RoutingResult r;
  Eigen::VectorXd logits = Eigen::VectorXd::Zero(votes.rows());
  for (int it = 0; it < iters; ++it) {
    r.logits.push_back(logits);
    const Eigen::VectorXd c = couple(logits, mode);
    r.couplings.push_back(c);
    r.weighted_sum = votes.transpose() * c;
    r.output = squash(r.weighted_sum);
    logits += votes * r.output;
  }
  return r;
}

RoutingResult route_capsules(const Matrix& inputs, const Matrix& weights, int iters, CouplingMode mode) {
  const auto caps = inputs.rows();
  const auto din = inputs.cols();
  if (weights.rows() != caps || din == 0 || weights.cols() % din != 0) {
    throw Error(ErrorCode::ShapeMismatch, "routing weights do not match the input capsules");
  }
  const auto dout = weights.cols() / din;
  Matrix votes(caps, dout);
  for (Eigen::Index j = 0; j < caps; ++j) {
    Eigen::Map<const Matrix> wj(weights.row(j).data(), dout, din);
    votes.row(j) = (wj * inputs.row(j).transpose()).transpose();
  }
  return route_votes(votes, iters, mode);
}

namespace {

class RoutingSumOp final : public grad::Op {
 public:
  RoutingSumOp(std::size_t caps, std::size_t dim, int iters, CouplingMode mode)
      : caps_(static_cast<Eigen::Index>(caps)), dim_(static_cast<Eigen::Index>(dim)), iters_(iters), mode_(mode) {}

  const char* name() const override { return "routing_sum"; }

  Matrix forward(std::span<const Matrix* const> in) override {
    const Matrix& votes = *in[0];
    if (votes.cols() != caps_ * dim_) {
      throw Error(ErrorCode::ShapeMismatch, "routing expects " + std::to_string(caps_ * dim_) + " columns, got " +
                                                std::to_string(votes.cols()));
    }
    Matrix out(votes.rows(), dim_);
    if (held_ && coupling_.rows() == votes.rows()) {
      for (Eigen::Index b = 0; b < votes.rows(); ++b) {
        Eigen::Map<const Matrix> v(votes.row(b).data(), caps_, dim_);
        out.row(b) = coupling_.row(b) * v;
      }
      return out;
    }
    coupling_.resize(votes.rows(), caps_);
    for (Eigen::Index b = 0; b < votes.rows(); ++b) {
      Eigen::Map<const Matrix> v(votes.row(b).data(), caps_, dim_);
      const auto r = route_votes(v, iters_, mode_);
      coupling_.row(b) = r.couplings.back().transpose();
      out.row(b) = r.weighted_sum.transpose();
    }
    return out;
  }

  void backward(std::span<const Matrix* const>, const Matrix&, const Matrix& gy,
                std::span<Matrix* const> g) const override {
    if (!g[0]) return;
    for (Eigen::Index b = 0; b < gy.rows(); ++b) {
      for (Eigen::Index j = 0; j < caps_; ++j) {
        g[0]->row(b).segment(j * dim_, dim_) += coupling_(b, j) * gy.row(b);
      }
    }
  }

  void hold_state(bool hold) override { held_ = hold; }

 private:
  Eigen::Index caps_;
  Eigen::Index dim_;
  int iters_;
  CouplingMode mode_;
  Matrix coupling_;
  bool held_ = false;
};

class AugmentOp final : public grad::Op {
 public:
  explicit AugmentOp(AugmentDraw draw) : draw_(std::move(draw)) {}
  const char* name() const override { return "augment"; }

  Matrix forward(std::span<const Matrix* const> in) override {
    if (in[0]->rows() != draw_.gamma.size()) {
      throw Error(ErrorCode::ShapeMismatch, "augmentation draw does not match the batch");
    }
    return apply_augment(*in[0], draw_);
  }

  void backward(std::span<const Matrix* const> in, const Matrix&, const Matrix& gz,
                std::span<Matrix* const> g) const override {
    if (!g[0]) return;
    const auto rows = static_cast<double>(in[0]->rows());
    const auto cols = static_cast<double>(in[0]->cols());
    // z = lambda*y + (1-lambda)*colmean(y)
    Eigen::RowVectorXd mix = Eigen::RowVectorXd::Zero(gz.cols());
    for (Eigen::Index b = 0; b < gz.rows(); ++b) mix += (1.0 - draw_.lambda(b)) * gz.row(b);
    mix /= rows;
    for (Eigen::Index b = 0; b < gz.rows(); ++b) {
      const Eigen::RowVectorXd gy = draw_.lambda(b) * gz.row(b) + mix;
      // y = gamma*(x - rowmean(x)) + rowmean(x) + delta
      g[0]->row(b) += draw_.gamma(b) * gy;
      g[0]->row(b).array() += (1.0 - draw_.gamma(b)) * gy.sum() / cols;
    }
  }

 private:
  AugmentDraw draw_;
};

template <typename G>
NodeId generator_graph_impl(Tape& tape, G& params, NodeId x) {
  const auto& a = params.arch;
  const auto spec = a.generator_spec();
  auto h = tape.affine(x, tape.param(params.primary_w1), tape.param(params.primary_b1));
  h = tape.leaky_relu(h, a.leaky_slope);
  auto prim = tape.affine(h, tape.param(params.primary_w2), tape.param(params.primary_b2));
  prim = tape.squash(prim, spec.capsule_dim);
  auto votes = tape.capsule_transform(prim, tape.param(params.capsule_w), spec.capsule_dim, a.latent_dim);
  auto latent = routing_sum(tape, votes, spec.capsules(), a.latent_dim, spec.routing_iters, a.coupling);
  latent = tape.squash(latent, a.latent_dim);
  auto d = tape.affine(latent, tape.param(params.decoder_w1), tape.param(params.decoder_b1));
  d = tape.leaky_relu(d, a.leaky_slope);
  d = tape.affine(d, tape.param(params.decoder_w2), tape.param(params.decoder_b2));
  return tape.sigmoid(d);
}

template <typename D>
NodeId discriminator_graph_impl(Tape& tape, D& params, NodeId x) {
  const auto& a = params.arch;
  const auto spec = a.discriminator_spec();
  std::vector<NodeId> maps;
  for (int s = 0; s < 3; ++s) {
    auto m = tape.conv1d(x, tape.param(params.conv_k[s]), tape.param(params.conv_b[s]), 1, kConvWidths[s]);
    maps.push_back(tape.leaky_relu(m, a.leaky_slope));
  }
  auto prim = tape.squash(tape.concat(std::move(maps)), spec.capsule_dim);
  auto votes = tape.capsule_transform(prim, tape.param(params.capsule_w), spec.capsule_dim, a.d_out);
  auto out = routing_sum(tape, votes, spec.capsules(), a.d_out, spec.routing_iters, a.coupling);
  out = tape.squash(out, a.d_out);
  return tape.group_l2norm(out, a.d_out);
}

void check_batch(const Matrix& batch, std::size_t feature_dim, const char* who) {
  if (static_cast<std::size_t>(batch.cols()) != feature_dim) {
    throw Error(ErrorCode::ShapeMismatch, std::string(who) + " expects feature dim " + std::to_string(feature_dim) +
                                              ", batch has " + std::to_string(batch.cols()));
  }
}

}  // namespace

NodeId routing_sum(Tape& tape, NodeId votes, std::size_t capsules, std::size_t dim, int iters, CouplingMode mode) {
  return tape.apply(std::make_unique<RoutingSumOp>(capsules, dim, iters, mode), {votes});
}

NodeId generator_graph(Tape& tape, GeneratorParams& params, NodeId x) {
  return generator_graph_impl(tape, params, x);
}
NodeId generator_graph(Tape& tape, const GeneratorParams& params, NodeId x) {
  return generator_graph_impl(tape, params, x);
}
NodeId discriminator_graph(Tape& tape, DiscriminatorParams& params, NodeId x) {
  return discriminator_graph_impl(tape, params, x);
}
NodeId discriminator_graph(Tape& tape, const DiscriminatorParams& params, NodeId x) {
  return discriminator_graph_impl(tape, params, x);
}

Matrix generator_forward(const GeneratorParams& params, const Matrix& batch) {
  check_batch(batch, params.arch.feature_dim, "generator");
  Tape tape;
  const auto out = generator_graph(tape, params, tape.constant_ref(batch));
  tape.evaluate();
  return tape.value(out);
}

Matrix discriminator_forward(const DiscriminatorParams& params, const Matrix& batch) {
  check_batch(batch, params.arch.feature_dim, "discriminator");
  Tape tape;
  const auto out = discriminator_graph(tape, params, tape.constant_ref(batch));
  tape.evaluate();
  return tape.value(out);
}

// ---------------------------------------------------------------------------
// Augmentation

bool AugmentSpec::is_identity() const {
  return brightness == 0.0 && contrast_lo == 1.0 && contrast_hi == 1.0 && saturation_lo == 1.0 &&
         saturation_hi == 1.0;
}

void AugmentSpec::validate() const {
  if (brightness < 0 || contrast_lo > contrast_hi || saturation_lo > saturation_hi || contrast_lo < 0 ||
      saturation_lo < 0) {
    throw Error(ErrorCode::InvalidArgument, "augmentation ranges must be ordered and non-negative");
  }
}

AugmentDraw draw_augment(const AugmentSpec& spec, std::size_t rows, std::mt19937_64& rng) {
  spec.validate();
  const auto n = static_cast<Eigen::Index>(rows);
  AugmentDraw d{Eigen::VectorXd::Ones(n), Eigen::VectorXd::Zero(n), Eigen::VectorXd::Ones(n)};
  if (spec.is_identity()) return d;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (Eigen::Index b = 0; b < n; ++b) {
    d.gamma(b) = spec.contrast_lo + (spec.contrast_hi - spec.contrast_lo) * unit(rng);
    d.delta(b) = spec.brightness * (2.0 * unit(rng) - 1.0);
    d.lambda(b) = spec.saturation_lo + (spec.saturation_hi - spec.saturation_lo) * unit(rng);
  }
  return d;
}

Matrix apply_augment(const Matrix& batch, const AugmentDraw& draw) {
  if (batch.rows() != draw.gamma.size()) {
    throw Error(ErrorCode::ShapeMismatch, "augmentation draw does not match the batch");
  }
  Matrix y(batch.rows(), batch.cols());
  for (Eigen::Index b = 0; b < batch.rows(); ++b) {
    const double m = batch.row(b).mean();
    y.row(b) = (draw.gamma(b) * (batch.row(b).array() - m) + m + draw.delta(b)).matrix();
  }
  const Eigen::RowVectorXd band_mean = y.colwise().mean();
  for (Eigen::Index b = 0; b < batch.rows(); ++b) {
    y.row(b) = draw.lambda(b) * y.row(b) + (1.0 - draw.lambda(b)) * band_mean;
  }
  return y;
}

Matrix augment(const AugmentSpec& spec, const Matrix& batch, std::mt19937_64& rng) {
  if (spec.is_identity()) return batch;
  return apply_augment(batch, draw_augment(spec, static_cast<std::size_t>(batch.rows()), rng));
}

NodeId augment_graph(Tape& tape, NodeId x, const AugmentDraw& draw) {
  return tape.apply(std::make_unique<AugmentOp>(draw), {x});
}

}  // namespace clcagan
