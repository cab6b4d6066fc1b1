#include "shine/sparse.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace shine {

CsrMatrix CsrMatrix::from_triplets(std::size_t rows, std::size_t cols,
                                   std::vector<Triplet> entries) {
  for (const Triplet& t : entries) {
    if (t.row >= rows || t.col >= cols)
      throw std::runtime_error("CsrMatrix: triplet out of range");
  }
  std::sort(entries.begin(), entries.end(), [](const Triplet& a, const Triplet& b) {
    return a.row != b.row ? a.row < b.row : a.col < b.col;
  });

  CsrMatrix m(rows, cols);
  std::size_t i = 0;
  while (i < entries.size()) {
    std::size_t j = i;
    double sum = 0.0;
    while (j < entries.size() && entries[j].row == entries[i].row &&
           entries[j].col == entries[i].col) {
      sum += entries[j].value;
      ++j;
    }
    if (sum != 0.0) {
      m.col_idx_.push_back(entries[i].col);
      m.values_.push_back(sum);
      m.row_ptr_[entries[i].row + 1] += 1;
    }
    i = j;
  }
  for (std::size_t r = 0; r < rows; ++r) m.row_ptr_[r + 1] += m.row_ptr_[r];
  return m;
}

Matrix CsrMatrix::multiply(const Matrix& x) const {
  if (cols_ != x.rows()) throw std::runtime_error("CsrMatrix::multiply: shape mismatch");
  Matrix out(rows_, x.cols());
  for (std::size_t i = 0; i < rows_; ++i) {
    double* orow = out.row(i);
    for (std::size_t k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k) {
      double w = values_[k];
      const double* xrow = x.row(col_idx_[k]);
      for (std::size_t c = 0; c < x.cols(); ++c) orow[c] += w * xrow[c];
    }
  }
  return out;
}

Matrix CsrMatrix::transpose_times(const Matrix& g) const {
  if (rows_ != g.rows()) throw std::runtime_error("CsrMatrix::transpose_times: shape mismatch");
  Matrix out(cols_, g.cols());
  for (std::size_t i = 0; i < rows_; ++i) {
    const double* grow = g.row(i);
    for (std::size_t k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k) {
      double w = values_[k];
      double* orow = out.row(col_idx_[k]);
      for (std::size_t c = 0; c < g.cols(); ++c) orow[c] += w * grow[c];
    }
  }
  return out;
}

Matrix CsrMatrix::to_dense() const {
  Matrix out(rows_, cols_);
  for (std::size_t i = 0; i < rows_; ++i)
    for (std::size_t k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k)
      out(i, col_idx_[k]) = values_[k];
  return out;
}

std::vector<double> CsrMatrix::row_sums() const {
  std::vector<double> sums(rows_, 0.0);
  for (std::size_t i = 0; i < rows_; ++i)
    for (std::size_t k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k) sums[i] += values_[k];
  return sums;
}

SymmetricSparseMatrix SymmetricSparseMatrix::from_upper(std::size_t dim,
                                                        std::vector<Triplet> upper) {
  std::vector<Triplet> all;
  all.reserve(upper.size() * 2);
  for (const Triplet& t : upper) {
    if (t.row > t.col) throw std::runtime_error("SymmetricSparseMatrix: expected row <= col");
    if (!std::isfinite(t.value) || t.value < 0.0)
      throw std::runtime_error("SymmetricSparseMatrix: weights must be finite and >= 0");
    all.push_back(t);
    if (t.row != t.col) all.push_back({t.col, t.row, t.value});
  }
  SymmetricSparseMatrix s;
  s.csr_ = CsrMatrix::from_triplets(dim, dim, std::move(all));
  return s;
}

std::vector<Triplet> SymmetricSparseMatrix::upper_triplets() const {
  std::vector<Triplet> out;
  const auto& rp = csr_.row_ptr();
  const auto& ci = csr_.col_idx();
  const auto& v = csr_.values();
  for (std::size_t i = 0; i < dim(); ++i)
    for (std::size_t k = rp[i]; k < rp[i + 1]; ++k)
      if (ci[k] >= i) out.push_back({i, ci[k], v[k]});
  return out;
}

SymmetricSparseMatrix normalize_adjacency(const SymmetricSparseMatrix& a) {
  std::size_t n = a.dim();
  std::vector<double> inv_sqrt_deg(n);
  std::vector<double> deg = a.csr().row_sums();
  for (std::size_t i = 0; i < n; ++i) inv_sqrt_deg[i] = 1.0 / std::sqrt(1.0 + deg[i]);

  // Build the upper triangle once and mirror, so (i,j) and (j,i) are the
  // same double down to the last bit.
  std::vector<Triplet> upper;
  const auto& rp = a.csr().row_ptr();
  const auto& ci = a.csr().col_idx();
  const auto& v = a.csr().values();
  for (std::size_t i = 0; i < n; ++i) {
    double diag = 1.0;  // (I + A)_ii; component adjacencies have zero diagonal
    for (std::size_t k = rp[i]; k < rp[i + 1]; ++k) {
      std::size_t j = ci[k];
      if (j == i) {
        diag += v[k];
      } else if (j > i) {
        upper.push_back({i, j, v[k] * (inv_sqrt_deg[i] * inv_sqrt_deg[j])});
      }
    }
    upper.push_back({i, i, diag * (inv_sqrt_deg[i] * inv_sqrt_deg[i])});
  }
  return SymmetricSparseMatrix::from_upper(n, std::move(upper));
}

static void write_weight(std::ostream& os, double w) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", w);
  os << buf;
}

void write_graph_dump(std::ostream& os, const SymmetricSparseMatrix& a) {
  os << a.dim() << "\n";
  for (const Triplet& t : a.upper_triplets()) {
    os << t.row << " " << t.col << " ";
    write_weight(os, t.value);
    os << "\n";
  }
}

SymmetricSparseMatrix read_graph_dump(std::istream& is) {
  std::size_t dim;
  if (!(is >> dim)) throw std::runtime_error("graph dump: missing dimension");
  std::vector<Triplet> upper;
  std::size_t i, j;
  double w;
  while (is >> i >> j >> w) upper.push_back({i, j, w});
  return SymmetricSparseMatrix::from_upper(dim, std::move(upper));
}

void write_csr_dump(std::ostream& os, const CsrMatrix& m) {
  os << m.rows() << " " << m.cols() << "\n";
  const auto& rp = m.row_ptr();
  const auto& ci = m.col_idx();
  const auto& v = m.values();
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t k = rp[i]; k < rp[i + 1]; ++k) {
      os << i << " " << ci[k] << " ";
      write_weight(os, v[k]);
      os << "\n";
    }
  }
}

CsrMatrix read_csr_dump(std::istream& is) {
  std::size_t rows, cols;
  if (!(is >> rows >> cols)) throw std::runtime_error("csr dump: missing header");
  std::vector<Triplet> entries;
  std::size_t i, j;
  double w;
  while (is >> i >> j >> w) entries.push_back({i, j, w});
  return CsrMatrix::from_triplets(rows, cols, std::move(entries));
}

}  // namespace shine
