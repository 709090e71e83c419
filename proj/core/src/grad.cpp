#include "clcagan/grad.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>
#include <unordered_set>

#include "clcagan/error.hpp"

namespace clcagan::grad {

ParamTensor ParamTensor::make(std::string name, std::vector<std::size_t> shape, Eigen::Index rows,
                              Eigen::Index cols) {
  const auto product = std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  if (product != static_cast<std::size_t>(rows * cols)) {
    throw Error(ErrorCode::ShapeMismatch, "tensor " + name + " shape does not match its storage");
  }
  ParamTensor p;
  p.name = std::move(name);
  p.shape = std::move(shape);
  p.data = Matrix::Zero(rows, cols);
  p.grad = Matrix::Zero(rows, cols);
  return p;
}

namespace {

[[noreturn]] void shape_error(const char* op, const std::string& detail) {
  throw Error(ErrorCode::ShapeMismatch, std::string(op) + ": " + detail);
}

std::string dims(const Matrix& m) { return std::to_string(m.rows()) + "x" + std::to_string(m.cols()); }

void require_same(const char* op, const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error(op, dims(a) + " vs " + dims(b));
}

// ---------------------------------------------------------------------------

class AffineOp final : public Op {
 public:
  const char* name() const override { return "affine"; }
  Matrix forward(std::span<const Matrix* const> in) override {
    const Matrix& x = *in[0];
    const Matrix& w = *in[1];
    const Matrix& b = *in[2];
    if (x.cols() != w.cols() || b.rows() != 1 || b.cols() != w.rows()) {
      shape_error(name(), "x " + dims(x) + ", W " + dims(w) + ", b " + dims(b));
    }
    Matrix y = x * w.transpose();
    y.rowwise() += b.row(0);
    return y;
  }
  void backward(std::span<const Matrix* const> in, const Matrix&, const Matrix& gy,
                std::span<Matrix* const> g) const override {
    if (g[0]) g[0]->noalias() += gy * (*in[1]);
    if (g[1]) g[1]->noalias() += gy.transpose() * (*in[0]);
    if (g[2]) *g[2] += gy.colwise().sum();
  }
};

class Conv1dOp final : public Op {
 public:
  Conv1dOp(std::size_t in_channels, std::size_t width) : cin_(in_channels), k_(width) {}
  const char* name() const override { return "conv1d"; }

  Matrix forward(std::span<const Matrix* const> in) override {
    const Matrix& x = *in[0];
    const Matrix& kern = *in[1];
    const Matrix& bias = *in[2];
    if (k_ % 2 == 0) shape_error(name(), "kernel width must be odd");
    if (cin_ == 0 || static_cast<std::size_t>(x.cols()) % cin_ != 0) shape_error(name(), "input channels");
    if (static_cast<std::size_t>(kern.cols()) != cin_ * k_ || bias.rows() != 1 || bias.cols() != kern.rows()) {
      shape_error(name(), "kernel " + dims(kern) + ", bias " + dims(bias));
    }
    const auto len = static_cast<Eigen::Index>(static_cast<std::size_t>(x.cols()) / cin_);
    const auto cout = kern.rows();
    const auto half = static_cast<Eigen::Index>(k_ / 2);
    const auto cin = static_cast<Eigen::Index>(cin_);
    const auto kw = static_cast<Eigen::Index>(k_);
    Matrix y(x.rows(), cout * len);
    for (Eigen::Index b = 0; b < x.rows(); ++b) {
      const double* xr = x.row(b).data();
      double* yr = y.row(b).data();
      for (Eigen::Index co = 0; co < cout; ++co) {
        double* yc = yr + co * len;
        std::fill(yc, yc + len, bias(0, co));
        for (Eigen::Index ci = 0; ci < cin; ++ci) {
          const double* xc = xr + ci * len;
          for (Eigen::Index t = 0; t < kw; ++t) {
            const double kv = kern(co, ci * kw + t);
            const Eigen::Index shift = t - half;
            const Eigen::Index lo = std::max<Eigen::Index>(0, -shift);
            const Eigen::Index hi = std::min<Eigen::Index>(len, len - shift);
            for (Eigen::Index p = lo; p < hi; ++p) yc[p] += kv * xc[p + shift];
          }
        }
      }
    }
    return y;
  }

  void backward(std::span<const Matrix* const> in, const Matrix&, const Matrix& gy,
                std::span<Matrix* const> g) const override {
    const Matrix& x = *in[0];
    const Matrix& kern = *in[1];
    const auto len = static_cast<Eigen::Index>(static_cast<std::size_t>(x.cols()) / cin_);
    const auto cout = kern.rows();
    const auto half = static_cast<Eigen::Index>(k_ / 2);
    const auto cin = static_cast<Eigen::Index>(cin_);
    const auto kw = static_cast<Eigen::Index>(k_);
    for (Eigen::Index b = 0; b < x.rows(); ++b) {
      const double* xr = x.row(b).data();
      const double* gr = gy.row(b).data();
      for (Eigen::Index co = 0; co < cout; ++co) {
        const double* gc = gr + co * len;
        if (g[2]) {
          double s = 0;
          for (Eigen::Index p = 0; p < len; ++p) s += gc[p];
          (*g[2])(0, co) += s;
        }
        for (Eigen::Index ci = 0; ci < cin; ++ci) {
          const double* xc = xr + ci * len;
          for (Eigen::Index t = 0; t < kw; ++t) {
            const Eigen::Index shift = t - half;
            const Eigen::Index lo = std::max<Eigen::Index>(0, -shift);
            const Eigen::Index hi = std::min<Eigen::Index>(len, len - shift);
            if (g[1]) {
              double s = 0;
              for (Eigen::Index p = lo; p < hi; ++p) s += gc[p] * xc[p + shift];
              (*g[1])(co, ci * kw + t) += s;
            }
            if (g[0]) {
              const double kv = kern(co, ci * kw + t);
              double* gx = g[0]->row(b).data() + ci * len;
              for (Eigen::Index p = lo; p < hi; ++p) gx[p + shift] += kv * gc[p];
            }
          }
        }
      }
    }
  }

 private:
  std::size_t cin_;
  std::size_t k_;
};

class LeakyReluOp final : public Op {
 public:
  explicit LeakyReluOp(double slope) : slope_(slope) {}
  const char* name() const override { return "leaky_relu"; }
  Matrix forward(std::span<const Matrix* const> in) override {
    return in[0]->unaryExpr([s = slope_](double v) { return v > 0 ? v : s * v; });
  }
  void backward(std::span<const Matrix* const> in, const Matrix&, const Matrix& gy,
                std::span<Matrix* const> g) const override {
    if (!g[0]) return;
    *g[0] += in[0]->binaryExpr(gy, [s = slope_](double v, double d) { return v > 0 ? d : s * d; });
  }

 private:
  double slope_;
};

class SigmoidOp final : public Op {
 public:
  const char* name() const override { return "sigmoid"; }
  Matrix forward(std::span<const Matrix* const> in) override {
    return in[0]->unaryExpr([](double v) {
      if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
      const double e = std::exp(v);
      return e / (1.0 + e);
    });
  }
  void backward(std::span<const Matrix* const>, const Matrix& y, const Matrix& gy,
                std::span<Matrix* const> g) const override {
    if (g[0]) *g[0] += (gy.array() * y.array() * (1.0 - y.array())).matrix();
  }
};

class LogOp final : public Op {
 public:
  const char* name() const override { return "log"; }
  Matrix forward(std::span<const Matrix* const> in) override { return in[0]->array().log().matrix(); }
  void backward(std::span<const Matrix* const> in, const Matrix&, const Matrix& gy,
                std::span<Matrix* const> g) const override {
    if (g[0]) *g[0] += (gy.array() / in[0]->array()).matrix();
  }
};

class ClampOp final : public Op {
 public:
  ClampOp(double lo, double hi) : lo_(lo), hi_(hi) {}
  const char* name() const override { return "clamp"; }
  Matrix forward(std::span<const Matrix* const> in) override {
    return in[0]->unaryExpr([lo = lo_, hi = hi_](double v) { return std::clamp(v, lo, hi); });
  }
  void backward(std::span<const Matrix* const> in, const Matrix&, const Matrix& gy,
                std::span<Matrix* const> g) const override {
    if (!g[0]) return;
    *g[0] += in[0]->binaryExpr(gy, [lo = lo_, hi = hi_](double v, double d) {
      return (v >= lo && v <= hi) ? d : 0.0;
    });
  }

 private:
  double lo_;
  double hi_;
};

class AddOp final : public Op {
 public:
  explicit AddOp(double sign) : sign_(sign) {}
  const char* name() const override { return sign_ > 0 ? "add" : "sub"; }
  Matrix forward(std::span<const Matrix* const> in) override {
    require_same(name(), *in[0], *in[1]);
    return sign_ > 0 ? Matrix(*in[0] + *in[1]) : Matrix(*in[0] - *in[1]);
  }
  void backward(std::span<const Matrix* const>, const Matrix&, const Matrix& gy,
                std::span<Matrix* const> g) const override {
    if (g[0]) *g[0] += gy;
    if (g[1]) *g[1] += sign_ * gy;
  }

 private:
  double sign_;
};

class MulOp final : public Op {
 public:
  const char* name() const override { return "mul"; }
  Matrix forward(std::span<const Matrix* const> in) override {
    require_same(name(), *in[0], *in[1]);
    return in[0]->cwiseProduct(*in[1]);
  }
  void backward(std::span<const Matrix* const> in, const Matrix&, const Matrix& gy,
                std::span<Matrix* const> g) const override {
    if (g[0]) *g[0] += gy.cwiseProduct(*in[1]);
    if (g[1]) *g[1] += gy.cwiseProduct(*in[0]);
  }
};

class ScaleShiftOp final : public Op {
 public:
  ScaleShiftOp(double scale, double shift) : scale_(scale), shift_(shift) {}
  const char* name() const override { return "scale_shift"; }
  Matrix forward(std::span<const Matrix* const> in) override {
    return ((in[0]->array() * scale_) + shift_).matrix();
  }
  void backward(std::span<const Matrix* const>, const Matrix&, const Matrix& gy,
                std::span<Matrix* const> g) const override {
    if (g[0]) *g[0] += scale_ * gy;
  }

 private:
  double scale_;
  double shift_;
};

class GroupNormOp final : public Op {
 public:
  explicit GroupNormOp(std::size_t group) : group_(static_cast<Eigen::Index>(group)) {}
  const char* name() const override { return "group_l2norm"; }
  Matrix forward(std::span<const Matrix* const> in) override {
    const Matrix& x = *in[0];
    if (group_ < 1 || x.cols() % group_ != 0) shape_error(name(), "group size does not divide columns");
    const auto groups = x.cols() / group_;
    Matrix y(x.rows(), groups);
    for (Eigen::Index b = 0; b < x.rows(); ++b) {
      for (Eigen::Index k = 0; k < groups; ++k) y(b, k) = x.row(b).segment(k * group_, group_).norm();
    }
    return y;
  }
  void backward(std::span<const Matrix* const> in, const Matrix& y, const Matrix& gy,
                std::span<Matrix* const> g) const override {
    if (!g[0]) return;
    const Matrix& x = *in[0];
    for (Eigen::Index b = 0; b < x.rows(); ++b) {
      for (Eigen::Index k = 0; k < y.cols(); ++k) {
        if (y(b, k) > 0) {
          g[0]->row(b).segment(k * group_, group_) += (gy(b, k) / y(b, k)) * x.row(b).segment(k * group_, group_);
        }
      }
    }
  }

 private:
  Eigen::Index group_;
};

// squash(v) = |v|^2 / (1 + |v|^2) * v / |v| = f(n) v, f(n) = n / (1 + n^2).
class SquashOp final : public Op {
 public:
  explicit SquashOp(std::size_t group) : group_(static_cast<Eigen::Index>(group)) {}
  const char* name() const override { return "squash"; }
  Matrix forward(std::span<const Matrix* const> in) override {
    const Matrix& x = *in[0];
    if (group_ < 1 || x.cols() % group_ != 0) shape_error(name(), "group size does not divide columns");
    Matrix y(x.rows(), x.cols());
    for (Eigen::Index b = 0; b < x.rows(); ++b) {
      for (Eigen::Index k = 0; k < x.cols() / group_; ++k) {
        const auto v = x.row(b).segment(k * group_, group_);
        const double n2 = v.squaredNorm();
        const double n = std::sqrt(n2);
        y.row(b).segment(k * group_, group_) = (n / (1.0 + n2)) * v;
      }
    }
    return y;
  }
  void backward(std::span<const Matrix* const> in, const Matrix&, const Matrix& gy,
                std::span<Matrix* const> g) const override {
    if (!g[0]) return;
    const Matrix& x = *in[0];
    for (Eigen::Index b = 0; b < x.rows(); ++b) {
      for (Eigen::Index k = 0; k < x.cols() / group_; ++k) {
        const auto v = x.row(b).segment(k * group_, group_);
        const auto gs = gy.row(b).segment(k * group_, group_);
        const double n2 = v.squaredNorm();
        const double n = std::sqrt(n2);
        if (n == 0.0) continue;
        const double f = n / (1.0 + n2);
        const double fprime_over_n = (1.0 - n2) / ((1.0 + n2) * (1.0 + n2) * n);
        g[0]->row(b).segment(k * group_, group_) += f * gs + (fprime_over_n * v.dot(gs)) * v;
      }
    }
  }

 private:
  Eigen::Index group_;
};

class ConcatOp final : public Op {
 public:
  const char* name() const override { return "concat"; }
  Matrix forward(std::span<const Matrix* const> in) override {
    Eigen::Index cols = 0;
    for (const auto* m : in) {
      if (m->rows() != in[0]->rows()) shape_error(name(), "row counts differ");
      cols += m->cols();
    }
    Matrix y(in[0]->rows(), cols);
    Eigen::Index at = 0;
    for (const auto* m : in) {
      y.middleCols(at, m->cols()) = *m;
      at += m->cols();
    }
    return y;
  }
  void backward(std::span<const Matrix* const> in, const Matrix&, const Matrix& gy,
                std::span<Matrix* const> g) const override {
    Eigen::Index at = 0;
    for (std::size_t k = 0; k < in.size(); ++k) {
      if (g[k]) *g[k] += gy.middleCols(at, in[k]->cols());
      at += in[k]->cols();
    }
  }
};

class MeanOp final : public Op {
 public:
  const char* name() const override { return "mean"; }
  Matrix forward(std::span<const Matrix* const> in) override {
    if (in[0]->size() == 0) shape_error(name(), "empty input");
    Matrix y(1, 1);
    y(0, 0) = in[0]->mean();
    return y;
  }
  void backward(std::span<const Matrix* const> in, const Matrix&, const Matrix& gy,
                std::span<Matrix* const> g) const override {
    if (g[0]) g[0]->array() += gy(0, 0) / static_cast<double>(in[0]->size());
  }
};

class CapsuleTransformOp final : public Op {
 public:
  CapsuleTransformOp(std::size_t in_dim, std::size_t out_dim)
      : din_(static_cast<Eigen::Index>(in_dim)), dout_(static_cast<Eigen::Index>(out_dim)) {}
  const char* name() const override { return "capsule_transform"; }

  Matrix forward(std::span<const Matrix* const> in) override {
    const Matrix& x = *in[0];
    const Matrix& w = *in[1];
    if (din_ < 1 || x.cols() % din_ != 0) shape_error(name(), "input dim does not divide columns");
    const auto caps = x.cols() / din_;
    if (w.rows() != caps || w.cols() != din_ * dout_) {
      shape_error(name(), "weights " + dims(w) + " for " + std::to_string(caps) + " capsules");
    }
    Matrix y(x.rows(), caps * dout_);
    for (Eigen::Index j = 0; j < caps; ++j) {
      Eigen::Map<const Matrix> wj(w.row(j).data(), dout_, din_);
      y.middleCols(j * dout_, dout_).noalias() = x.middleCols(j * din_, din_) * wj.transpose();
    }
    return y;
  }
  void backward(std::span<const Matrix* const> in, const Matrix&, const Matrix& gy,
                std::span<Matrix* const> g) const override {
    const Matrix& x = *in[0];
    const Matrix& w = *in[1];
    const auto caps = x.cols() / din_;
    for (Eigen::Index j = 0; j < caps; ++j) {
      Eigen::Map<const Matrix> wj(w.row(j).data(), dout_, din_);
      const auto gj = gy.middleCols(j * dout_, dout_);
      if (g[0]) g[0]->middleCols(j * din_, din_).noalias() += gj * wj;
      if (g[1]) {
        Eigen::Map<Matrix> gw(g[1]->row(j).data(), dout_, din_);
        gw.noalias() += gj.transpose() * x.middleCols(j * din_, din_);
      }
    }
  }

 private:
  Eigen::Index din_;
  Eigen::Index dout_;
};

}  // namespace

// ---------------------------------------------------------------------------
// Tape

NodeId Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  evaluated_ = false;
  return NodeId{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

NodeId Tape::constant(Matrix value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

NodeId Tape::constant_ref(const Matrix& value) {
  Node n;
  n.external = &value;
  return push(std::move(n));
}

NodeId Tape::param(ParamTensor& p) {
  Node n;
  n.external = &p.data;
  n.param = &p;
  n.requires_grad = true;
  return push(std::move(n));
}

NodeId Tape::param(const ParamTensor& p) { return constant_ref(p.data); }

NodeId Tape::apply(std::unique_ptr<Op> op, std::vector<NodeId> inputs) {
  Node n;
  for (auto id : inputs) {
    if (id.index >= nodes_.size()) {
      throw Error(ErrorCode::InvalidArgument, std::string(op->name()) + " references a later node");
    }
    n.requires_grad = n.requires_grad || nodes_[id.index].requires_grad;
  }
  n.op = std::move(op);
  n.inputs = std::move(inputs);
  return push(std::move(n));
}

NodeId Tape::affine(NodeId x, NodeId w, NodeId b) { return apply(std::make_unique<AffineOp>(), {x, w, b}); }
NodeId Tape::conv1d(NodeId x, NodeId k, NodeId b, std::size_t cin, std::size_t width) {
  return apply(std::make_unique<Conv1dOp>(cin, width), {x, k, b});
}
NodeId Tape::leaky_relu(NodeId x, double slope) { return apply(std::make_unique<LeakyReluOp>(slope), {x}); }
NodeId Tape::sigmoid(NodeId x) { return apply(std::make_unique<SigmoidOp>(), {x}); }
NodeId Tape::log(NodeId x) { return apply(std::make_unique<LogOp>(), {x}); }
NodeId Tape::clamp(NodeId x, double lo, double hi) { return apply(std::make_unique<ClampOp>(lo, hi), {x}); }
NodeId Tape::add(NodeId a, NodeId b) { return apply(std::make_unique<AddOp>(1.0), {a, b}); }
NodeId Tape::sub(NodeId a, NodeId b) { return apply(std::make_unique<AddOp>(-1.0), {a, b}); }
NodeId Tape::mul(NodeId a, NodeId b) { return apply(std::make_unique<MulOp>(), {a, b}); }
NodeId Tape::scale_shift(NodeId x, double scale, double shift) {
  return apply(std::make_unique<ScaleShiftOp>(scale, shift), {x});
}
NodeId Tape::group_l2norm(NodeId x, std::size_t group) { return apply(std::make_unique<GroupNormOp>(group), {x}); }
NodeId Tape::squash(NodeId x, std::size_t group) { return apply(std::make_unique<SquashOp>(group), {x}); }
NodeId Tape::concat(std::vector<NodeId> parts) {
  if (parts.empty()) throw Error(ErrorCode::InvalidArgument, "concat of nothing");
  return apply(std::make_unique<ConcatOp>(), std::move(parts));
}
NodeId Tape::mean(NodeId x) { return apply(std::make_unique<MeanOp>(), {x}); }
NodeId Tape::capsule_transform(NodeId x, NodeId w, std::size_t in_dim, std::size_t out_dim) {
  return apply(std::make_unique<CapsuleTransformOp>(in_dim, out_dim), {x, w});
}

void Tape::evaluate() {
  std::vector<const Matrix*> inputs;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    Node& n = nodes_[i];
    if (!n.op) continue;
    inputs.clear();
    for (auto id : n.inputs) inputs.push_back(&node_value(nodes_[id.index]));
    n.value = n.op->forward(inputs);
    if (!n.value.allFinite()) {
      throw Error(ErrorCode::NonFiniteIntermediate,
                  "node " + std::to_string(i) + " (" + n.op->name() + ") produced a non-finite value");
    }
  }
  evaluated_ = true;
}

void Tape::hold_state(bool hold) {
  for (auto& n : nodes_) {
    if (n.op) n.op->hold_state(hold);
  }
}

double Tape::forward_eval() {
  if (nodes_.empty()) throw Error(ErrorCode::InvalidArgument, "empty tape");
  evaluate();
  const Matrix& out = node_value(nodes_.back());
  if (out.rows() != 1 || out.cols() != 1) {
    throw Error(ErrorCode::ShapeMismatch, "terminal node is " + dims(out) + ", expected a scalar");
  }
  return out(0, 0);
}

void Tape::backprop() {
  if (!evaluated_) throw Error(ErrorCode::InvalidArgument, "backprop before evaluation");
  const Matrix& out = node_value(nodes_.back());
  if (out.rows() != 1 || out.cols() != 1) {
    throw Error(ErrorCode::ShapeMismatch, "terminal node is " + dims(out) + ", expected a scalar");
  }
  for (auto& n : nodes_) {
    if (n.requires_grad) {
      const Matrix& v = node_value(n);
      n.adjoint.setZero(v.rows(), v.cols());
    } else {
      n.adjoint.resize(0, 0);
    }
  }
  if (!nodes_.back().requires_grad) return;
  nodes_.back().adjoint(0, 0) = 1.0;

  std::vector<const Matrix*> inputs;
  std::vector<Matrix*> grads;
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad) continue;
    if (n.param) {
      n.param->grad += n.adjoint;
      continue;
    }
    if (!n.op) continue;
    inputs.clear();
    grads.clear();
    for (auto id : n.inputs) {
      Node& src = nodes_[id.index];
      inputs.push_back(&node_value(src));
      grads.push_back(src.requires_grad ? &src.adjoint : nullptr);
    }
    n.op->backward(inputs, n.value, n.adjoint, grads);
  }
}

const Matrix& Tape::value(NodeId id) const { return node_value(nodes_.at(id.index)); }
const Matrix& Tape::adjoint(NodeId id) const { return nodes_.at(id.index).adjoint; }

std::string Tape::op_name(NodeId id) const {
  const Node& n = nodes_.at(id.index);
  if (n.op) return n.op->name();
  return n.param ? "param" : "constant";
}

std::vector<ParamTensor*> Tape::params() const {
  std::vector<ParamTensor*> out;
  std::unordered_set<const ParamTensor*> seen;
  for (const auto& n : nodes_) {
    if (n.param && seen.insert(n.param).second) out.push_back(n.param);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Finite differences

bool FdReport::passed() const {
  return std::all_of(tensors.begin(), tensors.end(), [](const FdTensorReport& t) { return t.passed; });
}

std::vector<std::string> FdReport::failures() const {
  std::vector<std::string> out;
  for (const auto& t : tensors) {
    if (!t.passed) {
      out.push_back(t.name + "[" + std::to_string(t.worst_index) + "] analytic " +
                    std::to_string(t.worst_analytic) + " numeric " + std::to_string(t.worst_numeric) +
                    " rel " + std::to_string(t.max_rel_error));
    }
  }
  return out;
}

FdReport finite_diff_check(Tape& tape, const FdOptions& options) {
  if (!(options.step > 0)) throw Error(ErrorCode::InvalidArgument, "finite-difference step must be positive");
  auto params = tape.params();
  for (auto* p : params) p->zero_grad();
  tape.forward_eval();
  tape.backprop();

  FdReport report;
  std::mt19937_64 rng(options.seed);
  tape.hold_state(true);
  for (auto* p : params) {
    const Matrix analytic = p->grad;
    std::vector<std::size_t> entries(p->size());
    std::iota(entries.begin(), entries.end(), std::size_t{0});
    if (options.max_entries_per_tensor > 0 && entries.size() > options.max_entries_per_tensor) {
      std::shuffle(entries.begin(), entries.end(), rng);
      entries.resize(options.max_entries_per_tensor);
      std::sort(entries.begin(), entries.end());
    }
    FdTensorReport tr;
    tr.name = p->name;
    double* data = p->data.data();
    for (auto e : entries) {
      const double saved = data[e];
      data[e] = saved + options.step;
      const double up = tape.forward_eval();
      data[e] = saved - options.step;
      const double down = tape.forward_eval();
      data[e] = saved;
      const double numeric = (up - down) / (2 * options.step);
      const double a = analytic.data()[e];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.denominator_floor});
      const double rel = std::abs(a - numeric) / denom;
      if (++tr.checked == 1 || rel > tr.max_rel_error) {
        tr.max_rel_error = rel;
        tr.worst_index = e;
        tr.worst_analytic = a;
        tr.worst_numeric = numeric;
      }
    }
    tr.passed = tr.max_rel_error < options.tolerance;
    report.max_rel_error = std::max(report.max_rel_error, tr.max_rel_error);
    report.tensors.push_back(std::move(tr));
  }
  tape.hold_state(false);
  tape.forward_eval();
  return report;
}

FdReport finite_diff_check(Tape& tape, double step, double tolerance) {
  FdOptions o;
  o.step = step;
  o.tolerance = tolerance;
  return finite_diff_check(tape, o);
}

}  // namespace clcagan::grad
