#include "metaemb/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include "metaemb/errors.hpp"

namespace metaemb {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

namespace {

void check_shape(const Shape& shape) {
  if (shape.empty() || shape.size() > 2) {
    throw ShapeError("tensor rank must be 1 or 2, got " + shape_string(shape));
  }
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor extents must be positive, got " + shape_string(shape));
  }
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  values_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), values_(std::move(values)) {
  check_shape(shape_);
  if (values_.size() != shape_numel(shape_)) {
    throw ShapeError("tensor of shape " + shape_string(shape_) + " given " + std::to_string(values_.size()) +
                     " values");
  }
}

Tensor Tensor::vector(std::vector<double> v) {
  Shape s{v.size()};
  return Tensor(std::move(s), std::move(v));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
  return Tensor(Shape{rows, cols}, std::move(v));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  std::vector<double> v;
  std::size_t cols = rows.size() ? rows.begin()->size() : 0;
  for (const auto& r : rows) {
    if (r.size() != cols) throw ShapeError("ragged matrix literal");
    v.insert(v.end(), r.begin(), r.end());
  }
  return Tensor(Shape{rows.size(), cols}, std::move(v));
}

double Tensor::item() const {
  if (values_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape_));
  return values_[0];
}

bool Tensor::all_finite() const {
  for (double v : values_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != values_.size()) {
    throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  return Tensor(std::move(shape), values_);
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  return std::memcmp(a.values().data(), b.values().data(), a.numel() * sizeof(double)) == 0;
}

std::uint64_t checksum_combine(std::uint64_t seed, std::uint64_t h) {
  constexpr std::uint64_t kPrime = 1099511628211ull;
  for (int i = 0; i < 8; ++i) {
    seed ^= (h >> (8 * i)) & 0xffu;
    seed *= kPrime;
  }
  return seed;
}

std::uint64_t checksum(const Tensor& t) {
  std::uint64_t h = 14695981039346656037ull;
  for (auto d : t.shape()) h = checksum_combine(h, d);
  for (double v : t.values()) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    h = checksum_combine(h, bits);
  }
  return h;
}

SparseMatrix SparseMatrix::transposed() const {
  SparseMatrix t;
  t.rows = cols;
  t.cols = rows;
  t.offsets.assign(cols + 1, 0);
  for (auto c : indices) ++t.offsets[c + 1];
  for (std::size_t c = 0; c < cols; ++c) t.offsets[c + 1] += t.offsets[c];
  t.indices.resize(indices.size());
  t.weights.resize(weights.size());
  std::vector<std::size_t> cursor(t.offsets.begin(), t.offsets.end() - 1);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t k = offsets[r]; k < offsets[r + 1]; ++k) {
      auto dst = cursor[indices[k]]++;
      t.indices[dst] = static_cast<std::uint32_t>(r);
      t.weights[dst] = weights[k];
    }
  }
  return t;
}

SparseMatrix SparseMatrix::mean_pool(std::span<const std::vector<std::uint32_t>> bags, std::size_t cols) {
  SparseMatrix s;
  s.rows = bags.size();
  s.cols = cols;
  s.offsets.reserve(bags.size() + 1);
  for (const auto& bag : bags) {
    const double w = bag.empty() ? 0.0 : 1.0 / static_cast<double>(bag.size());
    for (auto idx : bag) {
      if (idx >= cols) {
        throw IndexError("pool index " + std::to_string(idx) + " out of range for " + std::to_string(cols) + " rows");
      }
      s.indices.push_back(idx);
      s.weights.push_back(w);
    }
    s.offsets.push_back(s.indices.size());
  }
  return s;
}

SparseMatrix SparseMatrix::selector(std::span<const std::uint32_t> idx, std::size_t cols) {
  SparseMatrix s;
  s.rows = idx.size();
  s.cols = cols;
  s.offsets.reserve(idx.size() + 1);
  for (auto i : idx) {
    if (i >= cols) {
      throw IndexError("gather index " + std::to_string(i) + " out of range for " + std::to_string(cols) + " rows");
    }
    s.indices.push_back(i);
    s.weights.push_back(1.0);
    s.offsets.push_back(s.indices.size());
  }
  return s;
}

SparseMatrix SparseMatrix::ones_column(std::size_t rows) {
  std::vector<std::uint32_t> idx(rows, 0);
  return selector(idx, 1);
}

}  // namespace metaemb
