#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace metaemb {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

// Dense double-precision array in row-major order. Rank 1 and 2 are the only
// ranks the models need; scalars are shape {1}.
class Tensor {
 public:
  Tensor() : Tensor(Shape{1}) {}
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double v) { return Tensor(Shape{1}, std::vector<double>{v}); }
  static Tensor vector(std::vector<double> v);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return values_.size(); }
  // Rank-2 extents; a rank-1 tensor reads as a single row.
  std::size_t rows() const { return shape_.size() == 2 ? shape_[0] : 1; }
  std::size_t cols() const { return shape_.back(); }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }
  double item() const;

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::span<double> row(std::size_t r) { return std::span<double>(values_).subspan(r * cols(), cols()); }
  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(values_).subspan(r * cols(), cols());
  }

  bool all_finite() const;
  Tensor reshaped(Shape shape) const;

 private:
  Shape shape_;
  std::vector<double> values_;
};

bool bitwise_equal(const Tensor& a, const Tensor& b);
// FNV-1a over shape and raw value bytes.
std::uint64_t checksum(const Tensor& t);
std::uint64_t checksum_combine(std::uint64_t seed, std::uint64_t h);

// Sparse rows x cols matrix in CSR layout. Used as a constant left operand
// for gathers, average pooling, row broadcasts and their adjoints.
struct SparseMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::size_t> offsets{0};
  std::vector<std::uint32_t> indices;
  std::vector<double> weights;

  std::size_t nnz() const { return indices.size(); }
  SparseMatrix transposed() const;

  // One row per bag: weight 1/|bag| on each member, empty bag -> empty row.
  static SparseMatrix mean_pool(std::span<const std::vector<std::uint32_t>> bags, std::size_t cols);
  // Row r selects column idx[r] with weight 1.
  static SparseMatrix selector(std::span<const std::uint32_t> idx, std::size_t cols);
  // rows x 1 of ones: broadcasts a single row to `rows` rows.
  static SparseMatrix ones_column(std::size_t rows);
};

using SparsePtr = std::shared_ptr<const SparseMatrix>;

}  // namespace metaemb
