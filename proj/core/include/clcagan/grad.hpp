#pragma once

// Tape-based reverse-mode differentiation over row-major double matrices.
//
// A graph is recorded first and evaluated on demand, so one tape can be
// re-run after its parameters change (the finite-difference harness relies
// on this). Rows are samples; capsule groups are contiguous column ranges.

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "clcagan/preprocess.hpp"

namespace clcagan::grad {

using Matrix = RowMatrix;

/// Learnable tensor. `data` stores the tensor flattened to rows x cols with
/// product(shape) == rows * cols; `grad` has the same layout.
struct ParamTensor {
  std::string name;
  std::vector<std::size_t> shape;
  Matrix data;
  Matrix grad;

  static ParamTensor make(std::string name, std::vector<std::size_t> shape, Eigen::Index rows,
                          Eigen::Index cols);

  std::size_t size() const { return static_cast<std::size_t>(data.size()); }
  void zero_grad() { grad.setZero(data.rows(), data.cols()); }
};

struct NodeId {
  std::uint32_t index = 0;
  bool operator==(const NodeId&) const = default;
};

class Op {
 public:
  virtual ~Op() = default;
  virtual const char* name() const = 0;
  virtual Matrix forward(std::span<const Matrix* const> inputs) = 0;
  // Accumulates into input_grads; entries are null for inputs that do not
  // need a gradient.
  virtual void backward(std::span<const Matrix* const> inputs, const Matrix& output,
                        const Matrix& output_grad, std::span<Matrix* const> input_grads) const = 0;
  // Ops with internal non-differentiated state (routing couplings) keep it
  // fixed from the last evaluation while held.
  virtual void hold_state(bool) {}
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  // Leaves
  NodeId constant(Matrix value);
  NodeId constant_ref(const Matrix& value);  // referenced, must outlive evaluation
  NodeId param(ParamTensor& p);              // trainable
  NodeId param(const ParamTensor& p);        // frozen, behaves as a constant

  // Primitives
  NodeId affine(NodeId x, NodeId weight, NodeId bias);  // x W^T + b
  // Same-padded stride-1 convolution along the spectral axis. x holds
  // in_channels blocks of length L per row; output holds out_channels blocks.
  NodeId conv1d(NodeId x, NodeId kernel, NodeId bias, std::size_t in_channels, std::size_t kernel_width);
  NodeId leaky_relu(NodeId x, double slope);
  NodeId sigmoid(NodeId x);
  NodeId log(NodeId x);
  NodeId clamp(NodeId x, double lo, double hi);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId scale_shift(NodeId x, double scale, double shift);
  NodeId group_l2norm(NodeId x, std::size_t group);  // B x (G*g) -> B x G
  NodeId squash(NodeId x, std::size_t group);       // per contiguous group
  NodeId concat(std::vector<NodeId> parts);         // along columns
  NodeId mean(NodeId x);                            // -> 1 x 1
  // Votes u_hat_j = W_j u_j for each of the J input capsules. weight is
  // J x (out_dim * in_dim), W_j stored row-major.
  NodeId capsule_transform(NodeId x, NodeId weight, std::size_t in_dim, std::size_t out_dim);

  NodeId apply(std::unique_ptr<Op> op, std::vector<NodeId> inputs);

  /// Evaluates every node. Throws NonFiniteIntermediate naming the node.
  void evaluate();
  /// evaluate() and return the terminal (last) node, which must be 1 x 1.
  double forward_eval();
  /// Adjoints of the terminal node; parameter adjoints are added to
  /// ParamTensor::grad. Requires a prior evaluation.
  void backprop();

  const Matrix& value(NodeId id) const;
  const Matrix& adjoint(NodeId id) const;
  bool requires_grad(NodeId id) const { return nodes_.at(id.index).requires_grad; }
  std::size_t size() const { return nodes_.size(); }
  std::string op_name(NodeId id) const;

  /// Forwards to Op::hold_state on every node.
  void hold_state(bool hold);

  /// Distinct trainable parameters in first-use order.
  std::vector<ParamTensor*> params() const;

 private:
  struct Node {
    std::unique_ptr<Op> op;
    std::vector<NodeId> inputs;
    Matrix value;
    Matrix adjoint;
    const Matrix* external = nullptr;
    ParamTensor* param = nullptr;
    bool requires_grad = false;
  };

  NodeId push(Node node);
  const Matrix& node_value(const Node& n) const { return n.external ? *n.external : n.value; }

  std::vector<Node> nodes_;
  bool evaluated_ = false;
};

struct FdOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Relative error is |analytic - numeric| / max(|analytic|, |numeric|, floor).
  double denominator_floor = 1e-6;
  // 0 checks every entry; otherwise a deterministic sample per tensor.
  std::size_t max_entries_per_tensor = 0;
  std::uint64_t seed = 1;
};

struct FdTensorReport {
  std::string name;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  bool passed = true;
};

struct FdReport {
  std::vector<FdTensorReport> tensors;
  double max_rel_error = 0.0;
  bool passed() const;
  std::vector<std::string> failures() const;
};

/// Compares backprop adjoints with central differences for every trainable
/// parameter on the tape. Op state is held during the perturbed evaluations,
/// so the numeric side differentiates the same function as backprop.
/// Parameter values are restored afterwards.
FdReport finite_diff_check(Tape& tape, const FdOptions& options = {});
FdReport finite_diff_check(Tape& tape, double step, double tolerance);

}  // namespace clcagan::grad
