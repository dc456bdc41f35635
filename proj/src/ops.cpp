#include "metaemb/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "metaemb/errors.hpp"

namespace metaemb::ad {

namespace {

Var unary(OpKind kind, Var x, OpAttr attr = {}) { return x.tape().record(kind, {x.id()}, std::move(attr)); }

Var binary(OpKind kind, Var a, Var b) {
  if (&a.tape() != &b.tape()) throw ValidationError(std::string(op_name(kind)) + ": operands on different tapes");
  return a.tape().record(kind, {a.id(), b.id()});
}

}  // namespace

Var constant(Tape& tape, Tensor value) { return tape.leaf(std::move(value)); }

Var add(Var a, Var b) { return binary(OpKind::add, a, b); }
Var sub(Var a, Var b) { return binary(OpKind::sub, a, b); }
Var mul(Var a, Var b) { return binary(OpKind::mul, a, b); }
Var matmul(Var a, Var b) { return binary(OpKind::matmul, a, b); }
Var transpose(Var x) { return unary(OpKind::transpose, x); }

Var sparse_matmul(SparsePtr s, Var x) {
  OpAttr attr;
  attr.sparse = std::move(s);
  return unary(OpKind::sparse_matmul, x, std::move(attr));
}

Var select_cols(Var x, std::vector<std::uint32_t> idx) {
  OpAttr attr;
  attr.index = std::move(idx);
  return unary(OpKind::select_cols, x, std::move(attr));
}

Var scatter_cols(Var x, std::vector<std::uint32_t> idx, std::size_t cols) {
  OpAttr attr;
  attr.index = std::move(idx);
  attr.count = cols;
  return unary(OpKind::scatter_cols, x, std::move(attr));
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  std::vector<NodeId> ids;
  ids.reserve(parts.size());
  for (const Var& p : parts) {
    if (&p.tape() != &parts.front().tape()) throw ValidationError("concat_cols: operands on different tapes");
    ids.push_back(p.id());
  }
  return parts.front().tape().record(OpKind::concat_cols, std::move(ids));
}

Var reshape(Var x, Shape shape) {
  OpAttr attr;
  attr.shape = std::move(shape);
  return unary(OpKind::reshape, x, std::move(attr));
}

Var sum(Var x) { return unary(OpKind::sum, x); }
Var mean(Var x) { return unary(OpKind::mean, x); }

Var expand(Var scalar, Shape shape) {
  OpAttr attr;
  attr.shape = std::move(shape);
  return unary(OpKind::expand, scalar, std::move(attr));
}

Var affine(Var x, double a, double b) {
  OpAttr attr;
  attr.a = a;
  attr.b = b;
  return unary(OpKind::affine, x, std::move(attr));
}

Var scale(Var x, double c) { return affine(x, c, 0.0); }
Var sigmoid(Var x) { return unary(OpKind::sigmoid, x); }
Var tanh(Var x) { return unary(OpKind::tanh, x); }
Var relu(Var x) { return unary(OpKind::relu, x); }
Var square(Var x) { return unary(OpKind::square, x); }
Var log(Var x) { return unary(OpKind::log, x); }
Var reciprocal(Var x) { return unary(OpKind::reciprocal, x); }

Var clip(Var x, double lo, double hi) {
  if (!(lo <= hi)) throw ValidationError("clip: lo > hi");
  OpAttr attr;
  attr.a = lo;
  attr.b = hi;
  return unary(OpKind::clip, x, std::move(attr));
}

Var gather_row(Var m, std::size_t i) {
  const std::uint32_t idx[] = {static_cast<std::uint32_t>(i)};
  if (i >= m.value().rows()) {
    throw IndexError("gather_row: row " + std::to_string(i) + " out of range for " + shape_string(m.shape()));
  }
  Var row = gather_rows(m, idx);
  return reshape(row, Shape{m.value().cols()});
}

Var gather_rows(Var m, std::span<const std::uint32_t> idx) {
  return sparse_matmul(std::make_shared<const SparseMatrix>(SparseMatrix::selector(idx, m.value().rows())), m);
}

Var avg_pool_rows(Var m, std::span<const std::vector<std::uint32_t>> bags) {
  return sparse_matmul(std::make_shared<const SparseMatrix>(SparseMatrix::mean_pool(bags, m.value().rows())), m);
}

Var broadcast_rows(Var row, std::size_t count) {
  if (row.value().rows() != 1) {
    throw ShapeError("broadcast_rows: expected a single row, got " + shape_string(row.shape()));
  }
  return sparse_matmul(std::make_shared<const SparseMatrix>(SparseMatrix::ones_column(count)), row);
}

Var sum_cols(Var x) {
  std::vector<std::uint32_t> idx(x.value().cols(), 0);
  return scatter_cols(x, std::move(idx), 1);
}

Var bce_loss(Var p, const Tensor& y) {
  if (y.shape() != p.shape()) {
    throw ShapeError("bce_loss: labels " + shape_string(y.shape()) + " vs predictions " + shape_string(p.shape()));
  }
  Tensor not_y = y;
  for (std::size_t i = 0; i < y.numel(); ++i) {
    if (y[i] != 0.0 && y[i] != 1.0) {
      throw ValidationError("bce_loss: label must be 0 or 1, got " + std::to_string(y[i]));
    }
    not_y[i] = 1.0 - y[i];
  }
  Tape& tape = p.tape();
  Var pc = clip(p, kProbEpsilon, 1.0 - kProbEpsilon);
  Var pos = mul(constant(tape, y), log(pc));
  Var neg = mul(constant(tape, std::move(not_y)), log(affine(pc, -1.0, 1.0)));
  return scale(mean(add(pos, neg)), -1.0);
}

double bce(double p, int y) {
  if (y != 0 && y != 1) throw ValidationError("bce: label must be 0 or 1, got " + std::to_string(y));
  const double pc = std::clamp(p, kProbEpsilon, 1.0 - kProbEpsilon);
  return y == 1 ? -std::log(pc) : -std::log(1.0 - pc);
}

}  // namespace metaemb::ad
