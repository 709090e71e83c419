#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "clcagan/grad.hpp"

namespace clcagan {

using grad::Matrix;
using grad::NodeId;
using grad::ParamTensor;
using grad::Tape;

/// How routing turns logits into coupling weights. Softmax is the default;
/// RawLogits multiplies votes by the logits directly and is kept only for
/// comparison (with zero-initialised logits it never leaves the origin).
enum class CouplingMode { Softmax, RawLogits };

struct CapsuleLayerSpec {
  std::size_t groups = 8;      // Z
  std::size_t per_group = 4;   // K
  std::size_t capsule_dim = 8; // d
  int routing_iters = 3;

  std::size_t capsules() const { return groups * per_group; }
  void validate() const;  // InvalidArgument
};

/// Layer sizes for both networks. feature_dim is 2C of the current task.
struct ArchConfig {
  std::size_t feature_dim = 0;
  std::size_t g_hidden = 256;
  std::size_t g_groups = 8;
  std::size_t g_per_group = 4;
  std::size_t g_capsule_dim = 8;
  std::size_t latent_dim = 16;
  std::size_t dec_hidden = 256;
  std::size_t d_groups = 8;
  std::size_t d_per_group = 4;
  std::size_t d_out = 4;
  std::size_t conv_channels = 16;
  int routing_iters = 3;
  CouplingMode coupling = CouplingMode::Softmax;
  double leaky_slope = 0.2;

  CapsuleLayerSpec generator_spec() const;
  /// Discriminator primary capsules split the concatenated conv maps
  /// (3 * conv_channels * feature_dim values) into Z_D * K_D equal parts.
  CapsuleLayerSpec discriminator_spec() const;
  void validate() const;  // InvalidArgument / ShapeMismatch
  bool operator==(const ArchConfig&) const = default;
};

inline constexpr std::size_t kConvWidths[3] = {1, 3, 5};

struct GeneratorParams {
  ArchConfig arch;
  ParamTensor primary_w1, primary_b1, primary_w2, primary_b2;  // 2C -> hidden -> Z*K*d
  ParamTensor capsule_w;                                       // (Z*K) x d_z x d
  ParamTensor decoder_w1, decoder_b1, decoder_w2, decoder_b2;  // d_z -> hidden -> 2C

  std::vector<ParamTensor*> tensors();
  std::vector<const ParamTensor*> tensors() const;
};

struct DiscriminatorParams {
  ArchConfig arch;
  ParamTensor conv_k[3];  // widths 1, 3, 5; conv_channels x 1 x width
  ParamTensor conv_b[3];
  ParamTensor capsule_w;  // (Z_D*K_D) x d_out x d_primary

  std::vector<ParamTensor*> tensors();
  std::vector<const ParamTensor*> tensors() const;
};

GeneratorParams init_generator(const ArchConfig& arch, std::mt19937_64& rng);
DiscriminatorParams init_discriminator(const ArchConfig& arch, std::mt19937_64& rng);

/// Squashing nonlinearity; the zero vector maps to zero.
Eigen::VectorXd squash(const Eigen::VectorXd& u);

struct RoutingResult {
  Eigen::VectorXd output;                  // squash(weighted_sum)
  Eigen::VectorXd weighted_sum;            // with the final coupling weights
  std::vector<Eigen::VectorXd> couplings;  // per iteration, length J
  std::vector<Eigen::VectorXd> logits;     // per iteration, before the update
};

/// Dynamic routing of J votes (rows of `votes`) to one output capsule.
RoutingResult route_votes(const Matrix& votes, int iters, CouplingMode mode = CouplingMode::Softmax);

/// Computes votes W_j * u_j from J input capsules (rows of `inputs`) with
/// weights J x (d_out * d_in), then routes them. Throws ShapeMismatch.
RoutingResult route_capsules(const Matrix& inputs, const Matrix& weights, int iters,
                             CouplingMode mode = CouplingMode::Softmax);

/// Tape node: per row, the routed weighted sum of J votes of width `dim`.
/// Coupling weights are treated as constants in the reverse pass.
NodeId routing_sum(Tape& tape, NodeId votes, std::size_t capsules, std::size_t dim, int iters,
                   CouplingMode mode);

// Graph builders. Non-const parameters are trainable on the tape; const
// parameters enter as constants. Generator returns B x 2C reconstructions in
// (0,1); discriminator returns B x 1 scores in [0,1).
NodeId generator_graph(Tape& tape, GeneratorParams& params, NodeId x);
NodeId generator_graph(Tape& tape, const GeneratorParams& params, NodeId x);
NodeId discriminator_graph(Tape& tape, DiscriminatorParams& params, NodeId x);
NodeId discriminator_graph(Tape& tape, const DiscriminatorParams& params, NodeId x);

Matrix generator_forward(const GeneratorParams& params, const Matrix& batch);
Matrix discriminator_forward(const DiscriminatorParams& params, const Matrix& batch);

/// Colour-style augmentation: contrast about the per-vector mean, additive
/// brightness, then saturation toward the band-wise batch mean.
struct AugmentSpec {
  double brightness = 0.1;  // delta ~ U[-brightness, brightness]
  double contrast_lo = 0.8;
  double contrast_hi = 1.2;  // gamma ~ U[lo, hi]
  double saturation_lo = 0.8;
  double saturation_hi = 1.2;  // lambda ~ U[lo, hi]

  static AugmentSpec identity() { return {0.0, 1.0, 1.0, 1.0, 1.0}; }
  bool is_identity() const;
  void validate() const;
  bool operator==(const AugmentSpec&) const = default;
};

struct AugmentDraw {
  Eigen::VectorXd gamma;
  Eigen::VectorXd delta;
  Eigen::VectorXd lambda;
};

AugmentDraw draw_augment(const AugmentSpec& spec, std::size_t rows, std::mt19937_64& rng);
Matrix apply_augment(const Matrix& batch, const AugmentDraw& draw);
Matrix augment(const AugmentSpec& spec, const Matrix& batch, std::mt19937_64& rng);
NodeId augment_graph(Tape& tape, NodeId x, const AugmentDraw& draw);

}  // namespace clcagan
