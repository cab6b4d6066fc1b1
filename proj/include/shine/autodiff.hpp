#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "shine/matrix.hpp"
#include "shine/rng.hpp"
#include "shine/sparse.hpp"

namespace shine {

class Tape;

// Handle to a dense matrix recorded on a tape. Cheap to copy; the backing
// storage lives in the tape (or, for parameters, in the Parameter itself).
class DiffTensor {
 public:
  DiffTensor() = default;

  const Matrix& value() const;
  const Matrix& grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool valid() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }

 private:
  friend class Tape;
  DiffTensor(Tape* t, std::size_t id) : tape_(t), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Sparsity structure shared between a sparse tensor and its exports.
struct SparsePattern {
  std::size_t dim = 0;
  std::vector<std::size_t> row_ptr;
  std::vector<std::size_t> col_idx;
  std::size_t nnz() const { return col_idx.size(); }
};

// Square sparse matrix whose stored values participate in differentiation.
// Used for the document adjacency, whose entries are inner products of the
// pooled document features. The pattern itself is fixed within a step.
class DiffSparse {
 public:
  DiffSparse() = default;

  const SparsePattern& pattern() const;
  const std::vector<double>& values() const;
  std::size_t nnz() const { return pattern().nnz(); }
  bool valid() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }

  SymmetricSparseMatrix to_symmetric() const;

 private:
  friend class Tape;
  DiffSparse(Tape* t, std::size_t id) : tape_(t), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Persistent trainable matrix. Lives outside any tape; each forward pass
// leases it in via Tape::param so gradients accumulate into `grad` here.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter() = default;
  Parameter(std::string n, Matrix v)
      : name(std::move(n)), value(std::move(v)), grad(value.rows(), value.cols()) {}

  void zero_grad() { grad.fill(0.0); }
};

namespace detail {
// Elementwise multiply by a constant factor matrix; entries with factor 0
// become exactly +0.0 (shared kernel behind the dropout variants).
DiffTensor apply_mask(DiffTensor x, Matrix factors, const char* op);
}  // namespace detail

// Records a single forward pass; single-threaded; backward runs once.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  DiffTensor constant(Matrix m);
  DiffTensor param(Parameter& p);
  DiffSparse sparse_constant(const SymmetricSparseMatrix& a);

  // Populates grads of every parameter reachable from `loss` (a 1x1 tensor).
  void backward(const DiffTensor& loss);

  std::size_t num_nodes() const { return tensors_.size(); }

  // Diagnostics for finite-difference fixtures: distance of the closest
  // ReLU pre-activation to 0 and of the closest inner product to the
  // sparsification threshold seen on this tape.
  double relu_margin() const { return relu_margin_; }
  double threshold_margin() const { return threshold_margin_; }

 private:
  friend class DiffTensor;
  friend class DiffSparse;

  struct TensorSlot {
    Matrix owned_value;
    const Matrix* value = nullptr;
    Matrix owned_grad;
    Matrix* grad = nullptr;
    bool needs_grad = false;
    std::function<void()> pull;
  };
  struct SparseSlot {
    std::shared_ptr<const SparsePattern> pattern;
    std::vector<double> values;
    std::vector<double> grads;
    bool needs_grad = false;
    std::function<void()> pull;
  };

  // Interleaved op order for a correct single reverse sweep.
  struct OpRef {
    bool sparse = false;
    std::size_t id = 0;
  };

  TensorSlot& slot(std::size_t id) { return tensors_[id]; }
  const TensorSlot& slot(std::size_t id) const { return tensors_[id]; }
  SparseSlot& sslot(std::size_t id) { return sparse_[id]; }
  const SparseSlot& sslot(std::size_t id) const { return sparse_[id]; }

  DiffTensor make_tensor(Matrix value, bool needs_grad, const char* op);
  DiffSparse make_sparse(std::shared_ptr<const SparsePattern> pattern,
                         std::vector<double> values, bool needs_grad);

  std::deque<TensorSlot> tensors_;
  std::deque<SparseSlot> sparse_;
  std::vector<OpRef> order_;
  bool backward_done_ = false;
  double relu_margin_ = 1e300;
  double threshold_margin_ = 1e300;

  friend DiffTensor matmul(DiffTensor, DiffTensor);
  friend DiffTensor spmm(const SymmetricSparseMatrix&, DiffTensor);
  friend DiffTensor spmm(const CsrMatrix&, DiffTensor);
  friend DiffTensor spmm(DiffSparse, DiffTensor);
  friend DiffTensor relu(DiffTensor);
  friend DiffTensor softmax_rows(DiffTensor);
  friend DiffTensor l2_normalize_rows(DiffTensor);
  friend DiffTensor l1_normalize_rows_or_uniform(DiffTensor);
  friend DiffTensor concat_cols(const std::vector<DiffTensor>&);
  friend DiffTensor dropout(DiffTensor, double, bool, Rng&);
  friend DiffTensor dropout_rows(DiffTensor, double, bool, Rng&);
  friend DiffTensor add(DiffTensor, DiffTensor);
  friend DiffTensor scale(DiffTensor, double);
  friend DiffTensor hadamard(DiffTensor, DiffTensor);
  friend DiffTensor sum_all(DiffTensor);
  friend DiffTensor masked_cross_entropy(DiffTensor, const std::vector<int>&,
                                         const std::vector<std::size_t>&);
  friend DiffSparse thresholded_gram(DiffTensor, double, bool);
  friend DiffSparse normalize_doc_sparse(DiffSparse);
  friend DiffSparse row_normalize_sparse(DiffSparse);
  friend DiffTensor detail::apply_mask(DiffTensor, Matrix, const char*);
};

// y = a * b
DiffTensor matmul(DiffTensor a, DiffTensor b);
// y = A * x for a constant symmetric adjacency; grad wrt x is A * g.
// The matrix is captured by reference and must outlive the tape.
DiffTensor spmm(const SymmetricSparseMatrix& a, DiffTensor x);
// y = S * x for a constant rectangular matrix (pooling); grad is S^T * g.
DiffTensor spmm(const CsrMatrix& s, DiffTensor x);
// y = A * x where A's stored values are differentiable.
DiffTensor spmm(DiffSparse a, DiffTensor x);

DiffTensor relu(DiffTensor x);
DiffTensor softmax_rows(DiffTensor x);
// Rows are scaled to unit L2 norm; all-zero rows stay all-zero.
DiffTensor l2_normalize_rows(DiffTensor x);
// Rows scaled to sum 1; all-zero rows become uniform 1/cols (no gradient).
DiffTensor l1_normalize_rows_or_uniform(DiffTensor x);
DiffTensor concat_cols(const std::vector<DiffTensor>& xs);

// Inverted dropout; exact identity when !training or rate == 0.
DiffTensor dropout(DiffTensor x, double rate, bool training, Rng& rng);
// One Bernoulli per row: the structural dropout used for one-hot features
// (equivalent to elementwise dropout on the nonzeros of an identity).
DiffTensor dropout_rows(DiffTensor x, double rate, bool training, Rng& rng);

DiffTensor add(DiffTensor a, DiffTensor b);
DiffTensor scale(DiffTensor x, double s);
DiffTensor hadamard(DiffTensor a, DiffTensor b);
DiffTensor sum_all(DiffTensor x);

// L = -sum_{i in mask} log(predictions[i, labels[i]]).
// Each masked row must sum to 1 within 1e-6; probabilities are clamped at
// 1e-12 (with a warning) before the log, and clamped entries get no gradient.
DiffTensor masked_cross_entropy(DiffTensor predictions, const std::vector<int>& labels,
                                const std::vector<std::size_t>& mask);

// A_ij = <x_i, x_j> where the inner product reaches `threshold`, else absent;
// the diagonal follows the same rule unless force_self_loops keeps it.
// Gradients flow into x through the surviving entries only.
DiffSparse thresholded_gram(DiffTensor x, double threshold, bool force_self_loops);

// D^{-1/2} (I + A) D^{-1/2} over the stored values; the degree scalings are
// treated as constants in backward, matching the fixed-pattern convention.
DiffSparse normalize_doc_sparse(DiffSparse a);
// Rows scaled to sum 1 (row sums treated as constants in backward).
DiffSparse row_normalize_sparse(DiffSparse a);

}  // namespace shine
