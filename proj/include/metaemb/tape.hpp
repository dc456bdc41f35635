#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "metaemb/tensor.hpp"

namespace metaemb::ad {

using NodeId = std::uint32_t;

// Primitive operations recorded on a tape. Every primitive's vector-Jacobian
// product is itself written in terms of primitives, so a gradient recorded on
// the tape can be differentiated again.
enum class OpKind : std::uint8_t {
  leaf,
  add,
  sub,
  mul,
  matmul,
  transpose,
  sparse_matmul,  // constant sparse S times dense X
  select_cols,    // X[:, idx]
  scatter_cols,   // adjoint of select_cols
  concat_cols,
  reshape,
  sum,
  mean,
  expand,  // scalar broadcast to a shape
  affine,  // a*x + b with constants a, b
  sigmoid,
  tanh,
  relu,
  square,
  log,
  reciprocal,
  clip,
};

std::string_view op_name(OpKind kind);

struct OpAttr {
  double a = 0.0;
  double b = 0.0;
  SparsePtr sparse;
  std::vector<std::uint32_t> index;
  Shape shape;
  std::size_t count = 0;
};

class Tape;

// Handle to one node of a tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, NodeId id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  NodeId id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  Tape* tape_ = nullptr;
  NodeId id_ = 0;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf owning a copy of `value`.
  Var leaf(Tensor value);
  // Leaf referring to caller-owned storage, which must outlive the tape and
  // stay unchanged while the tape is in use.
  Var leaf_ref(const Tensor& value);

  Var record(OpKind kind, std::vector<NodeId> inputs, OpAttr attr = {});

  std::size_t size() const { return nodes_.size(); }
  const Tensor& value(NodeId id) const;
  OpKind kind(NodeId id) const { return nodes_[id].kind; }
  std::span<const NodeId> inputs(NodeId id) const { return nodes_[id].inputs; }

  // Drops every node with id >= n.
  void truncate(std::size_t n);
  // Re-executes every recorded op in order from the current leaf values.
  void replay();

  // Reverse-mode gradients of scalar `loss` with respect to `wrt`. The
  // returned Vars live on this tape and can be differentiated again.
  std::vector<Var> grad_graph(Var loss, std::span<const Var> wrt);
  // Same, returning plain tensors; the backward nodes are discarded.
  std::vector<Tensor> grad(Var loss, std::span<const Var> wrt);

 private:
  struct Node {
    OpKind kind = OpKind::leaf;
    std::vector<NodeId> inputs;
    OpAttr attr;
    Tensor owned;
    const Tensor* external = nullptr;
    const Tensor& value() const { return external ? *external : owned; }
  };

  std::vector<std::optional<Var>> vjp(NodeId id, Var out_grad, const std::vector<char>& needed);

  std::vector<Node> nodes_;
};

// Forward evaluation of a primitive, shared by recording and replay.
Tensor evaluate(OpKind kind, std::span<const Tensor* const> inputs, const OpAttr& attr);

// Gradient of scalar `loss` with respect to a single variable.
Tensor grad(Var loss, Var wrt);
// Hessian-vector product (d^2 loss / dx^2) v by double backprop.
Tensor hvp(Var loss, Var x, const Tensor& v);

namespace debug {
// Scales the recorded vector-Jacobian product of `kind` by 1.1. Used only to
// confirm the gradient checks can detect a broken derivative.
void inject_vjp_fault(std::optional<OpKind> kind);
}  // namespace debug

}  // namespace metaemb::ad
