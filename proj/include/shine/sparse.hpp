#pragma once

#include <cstddef>
#include <iosfwd>
#include <vector>

#include "shine/matrix.hpp"

namespace shine {

struct Triplet {
  std::size_t row = 0;
  std::size_t col = 0;
  double value = 0.0;
};

// Compressed-row sparse matrix with sorted column indices per row.
class CsrMatrix {
 public:
  CsrMatrix() = default;
  CsrMatrix(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), row_ptr_(rows + 1, 0) {}

  // Duplicate (row, col) pairs are summed. Zero values are kept out.
  static CsrMatrix from_triplets(std::size_t rows, std::size_t cols,
                                 std::vector<Triplet> entries);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t nnz() const { return values_.size(); }

  const std::vector<std::size_t>& row_ptr() const { return row_ptr_; }
  const std::vector<std::size_t>& col_idx() const { return col_idx_; }
  const std::vector<double>& values() const { return values_; }
  std::vector<double>& values() { return values_; }

  // this * x  (rows x cols) * (cols x k)
  Matrix multiply(const Matrix& x) const;
  // this^T * g  (cols x rows) * (rows x k)
  Matrix transpose_times(const Matrix& g) const;

  Matrix to_dense() const;
  std::vector<double> row_sums() const;

  bool operator==(const CsrMatrix& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_ && row_ptr_ == o.row_ptr_ &&
           col_idx_ == o.col_idx_ && values_ == o.values_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::size_t> row_ptr_;
  std::vector<std::size_t> col_idx_;
  std::vector<double> values_;
};

// Square weighted matrix with entry (i,j) present iff (j,i) is, equal values.
// Built by mirroring an upper-triangular entry list, so symmetry is exact.
class SymmetricSparseMatrix {
 public:
  SymmetricSparseMatrix() = default;
  explicit SymmetricSparseMatrix(std::size_t dim) : csr_(dim, dim) {}

  // `upper` holds entries with row <= col; the strict-upper part is mirrored.
  static SymmetricSparseMatrix from_upper(std::size_t dim, std::vector<Triplet> upper);

  std::size_t dim() const { return csr_.rows(); }
  std::size_t nnz() const { return csr_.nnz(); }
  const CsrMatrix& csr() const { return csr_; }

  Matrix multiply(const Matrix& x) const { return csr_.multiply(x); }
  Matrix to_dense() const { return csr_.to_dense(); }

  // Entries with row <= col, sorted, as used by the text dump format.
  std::vector<Triplet> upper_triplets() const;

  bool operator==(const SymmetricSparseMatrix& o) const { return csr_ == o.csr_; }

 private:
  CsrMatrix csr_;
};

// D^{-1/2} (I + A) D^{-1/2} with D_ii = 1 + sum_j A_ij, the degree of I + A.
// Well-defined for isolated nodes (D_ii = 1) and exactly symmetric.
SymmetricSparseMatrix normalize_adjacency(const SymmetricSparseMatrix& a);

// Text dump: first line the dimension, then "i j w" with i < j, sorted.
// Weights use max_digits10 so a reload is bit-identical.
void write_graph_dump(std::ostream& os, const SymmetricSparseMatrix& a);
SymmetricSparseMatrix read_graph_dump(std::istream& is);

// Rectangular variant used for pooling matrices: "rows cols" header.
void write_csr_dump(std::ostream& os, const CsrMatrix& m);
CsrMatrix read_csr_dump(std::istream& is);

}  // namespace shine
