#include "metaemb/tape.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "metaemb/errors.hpp"
#include "metaemb/ops.hpp"

namespace metaemb::ad {

namespace {

std::optional<OpKind> g_fault;

[[noreturn]] void shape_mismatch(OpKind kind, const Tensor& a, const Tensor& b) {
  throw ShapeError(std::string(op_name(kind)) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                   shape_string(b.shape()));
}

void expect_arity(OpKind kind, std::span<const Tensor* const> inputs, std::size_t n) {
  if (inputs.size() != n) {
    throw ShapeError(std::string(op_name(kind)) + ": expected " + std::to_string(n) + " inputs, got " +
                     std::to_string(inputs.size()));
  }
}

template <class F>
Tensor map_unary(const Tensor& x, F f) {
  Tensor out(x.shape());
  auto src = x.values();
  auto dst = out.values();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = f(src[i]);
  return out;
}

template <class F>
Tensor map_binary(OpKind kind, const Tensor& a, const Tensor& b, F f) {
  if (a.shape() != b.shape()) shape_mismatch(kind, a, b);
  Tensor out(a.shape());
  auto x = a.values();
  auto y = b.values();
  auto dst = out.values();
  for (std::size_t i = 0; i < x.size(); ++i) dst[i] = f(x[i], y[i]);
  return out;
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Tensor matmul_values(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) shape_mismatch(OpKind::matmul, a, b);
  const std::size_t n = a.rows();
  const std::size_t k = a.cols();
  const std::size_t p = b.cols();
  Tensor out(Shape{n, p});
  auto av = a.values();
  auto bv = b.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < n; ++i) {
    double* orow = ov.data() + i * p;
    for (std::size_t j = 0; j < k; ++j) {
      const double aij = av[i * k + j];
      if (aij == 0.0) continue;
      const double* brow = bv.data() + j * p;
      for (std::size_t c = 0; c < p; ++c) orow[c] += aij * brow[c];
    }
  }
  return out;
}

Shape keep_rank(const Tensor& like, std::size_t rows, std::size_t cols) {
  if (like.rank() == 1 && rows == 1) return Shape{cols};
  return Shape{rows, cols};
}

}  // namespace

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::leaf: return "leaf";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::matmul: return "matmul";
    case OpKind::transpose: return "transpose";
    case OpKind::sparse_matmul: return "sparse_matmul";
    case OpKind::select_cols: return "select_cols";
    case OpKind::scatter_cols: return "scatter_cols";
    case OpKind::concat_cols: return "concat_cols";
    case OpKind::reshape: return "reshape";
    case OpKind::sum: return "sum";
    case OpKind::mean: return "mean";
    case OpKind::expand: return "expand";
    case OpKind::affine: return "affine";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::tanh: return "tanh";
    case OpKind::relu: return "relu";
    case OpKind::square: return "square";
    case OpKind::log: return "log";
    case OpKind::reciprocal: return "reciprocal";
    case OpKind::clip: return "clip";
  }
  return "unknown";
}

Tensor evaluate(OpKind kind, std::span<const Tensor* const> in, const OpAttr& attr) {
  switch (kind) {
    case OpKind::leaf:
      throw ValidationError("leaf nodes are not evaluated");
    case OpKind::add:
      expect_arity(kind, in, 2);
      return map_binary(kind, *in[0], *in[1], [](double x, double y) { return x + y; });
    case OpKind::sub:
      expect_arity(kind, in, 2);
      return map_binary(kind, *in[0], *in[1], [](double x, double y) { return x - y; });
    case OpKind::mul:
      expect_arity(kind, in, 2);
      return map_binary(kind, *in[0], *in[1], [](double x, double y) { return x * y; });
    case OpKind::matmul:
      expect_arity(kind, in, 2);
      return matmul_values(*in[0], *in[1]);
    case OpKind::transpose: {
      expect_arity(kind, in, 1);
      const Tensor& x = *in[0];
      const std::size_t r = x.rows(), c = x.cols();
      Tensor out(Shape{c, r});
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out.at(j, i) = x.at(i, j);
      return out;
    }
    case OpKind::sparse_matmul: {
      expect_arity(kind, in, 1);
      const SparseMatrix& s = *attr.sparse;
      const Tensor& x = *in[0];
      if (x.rows() != s.cols) {
        throw ShapeError("sparse_matmul: shape mismatch [" + std::to_string(s.rows) + "x" + std::to_string(s.cols) +
                         "] vs " + shape_string(x.shape()));
      }
      const std::size_t c = x.cols();
      Tensor out(Shape{s.rows, c});
      auto xv = x.values();
      auto ov = out.values();
      for (std::size_t r = 0; r < s.rows; ++r) {
        double* orow = ov.data() + r * c;
        for (std::size_t k = s.offsets[r]; k < s.offsets[r + 1]; ++k) {
          const double w = s.weights[k];
          const double* xrow = xv.data() + static_cast<std::size_t>(s.indices[k]) * c;
          for (std::size_t j = 0; j < c; ++j) orow[j] += w * xrow[j];
        }
      }
      return out;
    }
    case OpKind::select_cols: {
      expect_arity(kind, in, 1);
      const Tensor& x = *in[0];
      const std::size_t r = x.rows(), c = x.cols(), k = attr.index.size();
      for (auto j : attr.index) {
        if (j >= c) throw IndexError("select_cols: column " + std::to_string(j) + " out of range for " +
                                     shape_string(x.shape()));
      }
      Tensor out(keep_rank(x, r, k));
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < k; ++j) out[i * k + j] = x[i * c + attr.index[j]];
      return out;
    }
    case OpKind::scatter_cols: {
      expect_arity(kind, in, 1);
      const Tensor& x = *in[0];
      const std::size_t r = x.rows(), c = x.cols(), n = attr.count;
      if (attr.index.size() != c) {
        throw ShapeError("scatter_cols: index length " + std::to_string(attr.index.size()) + " vs " +
                         shape_string(x.shape()));
      }
      for (auto j : attr.index) {
        if (j >= n) throw IndexError("scatter_cols: column " + std::to_string(j) + " out of range");
      }
      Tensor out(keep_rank(x, r, n));
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[i * n + attr.index[j]] += x[i * c + j];
      return out;
    }
    case OpKind::concat_cols: {
      if (in.empty()) throw ShapeError("concat_cols: no inputs");
      const std::size_t r = in[0]->rows();
      std::size_t total = 0;
      bool all_rank1 = true;
      for (const Tensor* t : in) {
        if (t->rows() != r) shape_mismatch(kind, *in[0], *t);
        total += t->cols();
        all_rank1 = all_rank1 && t->rank() == 1;
      }
      Tensor out(all_rank1 ? Shape{total} : Shape{r, total});
      for (std::size_t i = 0; i < r; ++i) {
        std::size_t off = 0;
        for (const Tensor* t : in) {
          auto src = t->row(i);
          std::copy(src.begin(), src.end(), out.values().begin() + static_cast<std::ptrdiff_t>(i * total + off));
          off += t->cols();
        }
      }
      return out;
    }
    case OpKind::reshape:
      expect_arity(kind, in, 1);
      return in[0]->reshaped(attr.shape);
    case OpKind::sum:
    case OpKind::mean: {
      expect_arity(kind, in, 1);
      double s = 0.0;
      for (double v : in[0]->values()) s += v;
      if (kind == OpKind::mean) s /= static_cast<double>(in[0]->numel());
      return Tensor::scalar(s);
    }
    case OpKind::expand: {
      expect_arity(kind, in, 1);
      return Tensor(attr.shape, in[0]->item());
    }
    case OpKind::affine: {
      expect_arity(kind, in, 1);
      const double a = attr.a, b = attr.b;
      return map_unary(*in[0], [a, b](double x) { return a * x + b; });
    }
    case OpKind::sigmoid:
      expect_arity(kind, in, 1);
      return map_unary(*in[0], stable_sigmoid);
    case OpKind::tanh:
      expect_arity(kind, in, 1);
      return map_unary(*in[0], [](double x) { return std::tanh(x); });
    case OpKind::relu:
      expect_arity(kind, in, 1);
      return map_unary(*in[0], [](double x) { return x > 0.0 ? x : 0.0; });
    case OpKind::square:
      expect_arity(kind, in, 1);
      return map_unary(*in[0], [](double x) { return x * x; });
    case OpKind::log:
      expect_arity(kind, in, 1);
      return map_unary(*in[0], [](double x) { return std::log(x); });
    case OpKind::reciprocal:
      expect_arity(kind, in, 1);
      return map_unary(*in[0], [](double x) { return 1.0 / x; });
    case OpKind::clip: {
      expect_arity(kind, in, 1);
      const double lo = attr.a, hi = attr.b;
      return map_unary(*in[0], [lo, hi](double x) { return std::clamp(x, lo, hi); });
    }
  }
  throw ValidationError("unknown op kind");
}

const Tensor& Var::value() const { return tape_->value(id_); }

const Tensor& Tape::value(NodeId id) const {
  if (id >= nodes_.size()) throw IndexError("node id " + std::to_string(id) + " not on tape");
  return nodes_[id].value();
}

Var Tape::leaf(Tensor value) {
  if (!value.all_finite()) throw NumericError("leaf: non-finite value");
  Node n;
  n.owned = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<NodeId>(nodes_.size() - 1));
}

Var Tape::leaf_ref(const Tensor& value) {
  Node n;
  n.external = &value;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<NodeId>(nodes_.size() - 1));
}

Var Tape::record(OpKind kind, std::vector<NodeId> inputs, OpAttr attr) {
  std::vector<const Tensor*> in;
  in.reserve(inputs.size());
  for (NodeId id : inputs) in.push_back(&value(id));
  Tensor out = evaluate(kind, in, attr);
  if (!out.all_finite()) {
    throw NumericError(std::string(op_name(kind)) + ": produced a non-finite value");
  }
  Node n;
  n.kind = kind;
  n.inputs = std::move(inputs);
  n.attr = std::move(attr);
  n.owned = std::move(out);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<NodeId>(nodes_.size() - 1));
}

void Tape::truncate(std::size_t n) {
  if (n < nodes_.size()) nodes_.resize(n);
}

void Tape::replay() {
  std::vector<const Tensor*> in;
  for (auto& node : nodes_) {
    if (node.kind == OpKind::leaf) continue;
    in.clear();
    for (NodeId id : node.inputs) in.push_back(&nodes_[id].value());
    node.owned = evaluate(node.kind, in, node.attr);
  }
}

std::vector<std::optional<Var>> Tape::vjp(NodeId id, Var g, const std::vector<char>& needed) {
  // Copy what we need: recording below may reallocate nodes_.
  const OpKind kind = nodes_[id].kind;
  const std::vector<NodeId> ins = nodes_[id].inputs;
  const OpAttr attr = nodes_[id].attr;
  const Var out(this, id);
  auto in = [&](std::size_t i) { return Var(this, ins[i]); };
  auto need = [&](std::size_t i) { return needed[ins[i]] != 0; };

  std::vector<std::optional<Var>> r(ins.size());
  switch (kind) {
    case OpKind::leaf:
      break;
    case OpKind::add:
      if (need(0)) r[0] = g;
      if (need(1)) r[1] = g;
      break;
    case OpKind::sub:
      if (need(0)) r[0] = g;
      if (need(1)) r[1] = scale(g, -1.0);
      break;
    case OpKind::mul:
      if (need(0)) r[0] = mul(g, in(1));
      if (need(1)) r[1] = mul(g, in(0));
      break;
    case OpKind::matmul:
      if (need(0)) r[0] = matmul(g, transpose(in(1)));
      if (need(1)) r[1] = matmul(transpose(in(0)), g);
      break;
    case OpKind::transpose: {
      Var t = transpose(g);
      if (t.shape() != in(0).shape()) t = reshape(t, in(0).shape());
      r[0] = t;
      break;
    }
    case OpKind::sparse_matmul: {
      auto st = std::make_shared<const SparseMatrix>(attr.sparse->transposed());
      Var t = sparse_matmul(st, g);
      if (t.shape() != in(0).shape()) t = reshape(t, in(0).shape());
      r[0] = t;
      break;
    }
    case OpKind::select_cols:
      r[0] = scatter_cols(g, attr.index, in(0).value().cols());
      break;
    case OpKind::scatter_cols:
      r[0] = select_cols(g, attr.index);
      break;
    case OpKind::concat_cols: {
      std::uint32_t off = 0;
      for (std::size_t i = 0; i < ins.size(); ++i) {
        const auto c = static_cast<std::uint32_t>(in(i).value().cols());
        if (need(i)) {
          std::vector<std::uint32_t> idx(c);
          for (std::uint32_t j = 0; j < c; ++j) idx[j] = off + j;
          Var part = select_cols(g, std::move(idx));
          if (part.shape() != in(i).shape()) part = reshape(part, in(i).shape());
          r[i] = part;
        }
        off += c;
      }
      break;
    }
    case OpKind::reshape:
      r[0] = reshape(g, in(0).shape());
      break;
    case OpKind::sum:
      r[0] = expand(g, in(0).shape());
      break;
    case OpKind::mean:
      r[0] = scale(expand(g, in(0).shape()), 1.0 / static_cast<double>(in(0).value().numel()));
      break;
    case OpKind::expand:
      r[0] = reshape(sum(g), in(0).shape());
      break;
    case OpKind::affine:
      r[0] = scale(g, attr.a);
      break;
    case OpKind::sigmoid:
      r[0] = mul(g, mul(out, affine(out, -1.0, 1.0)));
      break;
    case OpKind::tanh:
      r[0] = mul(g, affine(square(out), -1.0, 1.0));
      break;
    case OpKind::relu: {
      Tensor mask = in(0).value();
      for (double& v : mask.values()) v = v > 0.0 ? 1.0 : 0.0;
      r[0] = mul(g, leaf(std::move(mask)));
      break;
    }
    case OpKind::square:
      r[0] = mul(g, scale(in(0), 2.0));
      break;
    case OpKind::log:
      r[0] = mul(g, reciprocal(in(0)));
      break;
    case OpKind::reciprocal:
      r[0] = mul(g, affine(square(out), -1.0, 0.0));
      break;
    case OpKind::clip: {
      Tensor mask = in(0).value();
      for (double& v : mask.values()) v = (v >= attr.a && v <= attr.b) ? 1.0 : 0.0;
      r[0] = mul(g, leaf(std::move(mask)));
      break;
    }
  }
  if (g_fault && *g_fault == kind) {
    for (auto& v : r) {
      if (v) v = scale(*v, 1.1);
    }
  }
  return r;
}

std::vector<Var> Tape::grad_graph(Var loss, std::span<const Var> wrt) {
  if (&loss.tape() != this) throw ValidationError("grad: loss belongs to another tape");
  if (loss.value().numel() != 1) {
    throw ShapeError("grad: loss must be scalar, got " + shape_string(loss.shape()));
  }
  const std::size_t n = static_cast<std::size_t>(loss.id()) + 1;

  // needed[i]: node i depends on some wrt variable.
  std::vector<char> needed(n, 0);
  for (const Var& w : wrt) {
    if (&w.tape() != this) throw ValidationError("grad: variable belongs to another tape");
    if (w.id() < n) needed[w.id()] = 1;
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (needed[i]) continue;
    for (NodeId p : nodes_[i].inputs) {
      if (needed[p]) {
        needed[i] = 1;
        break;
      }
    }
  }

  std::vector<std::optional<Var>> adj(n);
  if (needed[loss.id()]) adj[loss.id()] = leaf(Tensor(loss.shape(), 1.0));
  for (std::size_t i = n; i-- > 0;) {
    if (!adj[i] || nodes_[i].kind == OpKind::leaf) continue;
    auto parts = vjp(static_cast<NodeId>(i), *adj[i], needed);
    const std::vector<NodeId> ins = nodes_[i].inputs;
    for (std::size_t k = 0; k < ins.size(); ++k) {
      if (!parts[k]) continue;
      auto& slot = adj[ins[k]];
      slot = slot ? add(*slot, *parts[k]) : *parts[k];
    }
  }

  std::vector<Var> out;
  out.reserve(wrt.size());
  for (const Var& w : wrt) {
    if (w.id() < n && adj[w.id()]) {
      out.push_back(*adj[w.id()]);
    } else {
      out.push_back(leaf(Tensor(w.shape(), 0.0)));
    }
  }
  return out;
}

std::vector<Tensor> Tape::grad(Var loss, std::span<const Var> wrt) {
  const std::size_t mark = nodes_.size();
  auto vars = grad_graph(loss, wrt);
  std::vector<Tensor> out;
  out.reserve(vars.size());
  for (const Var& v : vars) out.push_back(v.value());
  truncate(mark);
  return out;
}

Tensor grad(Var loss, Var wrt) {
  const Var w[] = {wrt};
  return loss.tape().grad(loss, w).front();
}

Tensor hvp(Var loss, Var x, const Tensor& v) {
  if (v.shape() != x.shape()) {
    throw ShapeError("hvp: direction " + shape_string(v.shape()) + " vs variable " + shape_string(x.shape()));
  }
  Tape& tape = loss.tape();
  const std::size_t mark = tape.size();
  const Var w[] = {x};
  Var g = tape.grad_graph(loss, w).front();
  Var dot = sum(mul(g, constant(tape, v)));
  Tensor out = tape.grad(dot, w).front();
  tape.truncate(mark);
  return out;
}

namespace debug {
void inject_vjp_fault(std::optional<OpKind> kind) { g_fault = kind; }
}  // namespace debug

}  // namespace metaemb::ad
