#include "shine/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <stdexcept>

namespace shine {

const Matrix& DiffTensor::value() const {
  if (!tape_) throw std::runtime_error("DiffTensor: not recorded on a tape");
  return *tape_->slot(id_).value;
}

const Matrix& DiffTensor::grad() const {
  if (!tape_) throw std::runtime_error("DiffTensor: not recorded on a tape");
  const Tape::TensorSlot& s = tape_->slot(id_);
  if (!s.grad) throw std::runtime_error("DiffTensor: no gradient storage");
  return *s.grad;
}

const SparsePattern& DiffSparse::pattern() const {
  if (!tape_) throw std::runtime_error("DiffSparse: not recorded on a tape");
  return *tape_->sslot(id_).pattern;
}

const std::vector<double>& DiffSparse::values() const {
  if (!tape_) throw std::runtime_error("DiffSparse: not recorded on a tape");
  return tape_->sslot(id_).values;
}

SymmetricSparseMatrix DiffSparse::to_symmetric() const {
  const SparsePattern& p = pattern();
  const std::vector<double>& v = values();
  std::vector<Triplet> upper;
  for (std::size_t i = 0; i < p.dim; ++i)
    for (std::size_t k = p.row_ptr[i]; k < p.row_ptr[i + 1]; ++k)
      if (p.col_idx[k] >= i) upper.push_back({i, p.col_idx[k], v[k]});
  return SymmetricSparseMatrix::from_upper(p.dim, std::move(upper));
}

DiffTensor Tape::make_tensor(Matrix value, bool needs_grad, const char* op) {
  check_finite(value, op);
  tensors_.emplace_back();
  TensorSlot& s = tensors_.back();
  s.owned_value = std::move(value);
  s.value = &s.owned_value;
  s.needs_grad = needs_grad;
  if (needs_grad) {
    s.owned_grad = Matrix(s.owned_value.rows(), s.owned_value.cols());
    s.grad = &s.owned_grad;
  }
  order_.push_back({false, tensors_.size() - 1});
  return DiffTensor(this, tensors_.size() - 1);
}

DiffSparse Tape::make_sparse(std::shared_ptr<const SparsePattern> pattern,
                             std::vector<double> values, bool needs_grad) {
  for (double v : values)
    if (!std::isfinite(v)) throw std::runtime_error("sparse op: non-finite value");
  sparse_.emplace_back();
  SparseSlot& s = sparse_.back();
  s.values = std::move(values);
  s.needs_grad = needs_grad;
  if (needs_grad) s.grads.assign(s.values.size(), 0.0);
  s.pattern = std::move(pattern);
  order_.push_back({true, sparse_.size() - 1});
  return DiffSparse(this, sparse_.size() - 1);
}

DiffTensor Tape::constant(Matrix m) { return make_tensor(std::move(m), false, "constant"); }

DiffTensor Tape::param(Parameter& p) {
  check_finite(p.value, "param " + p.name);
  if (!p.grad.same_shape(p.value)) p.grad = Matrix(p.value.rows(), p.value.cols());
  tensors_.emplace_back();
  TensorSlot& s = tensors_.back();
  s.value = &p.value;
  s.grad = &p.grad;
  s.needs_grad = true;
  order_.push_back({false, tensors_.size() - 1});
  return DiffTensor(this, tensors_.size() - 1);
}

DiffSparse Tape::sparse_constant(const SymmetricSparseMatrix& a) {
  auto pat = std::make_shared<SparsePattern>();
  pat->dim = a.dim();
  pat->row_ptr = a.csr().row_ptr();
  pat->col_idx = a.csr().col_idx();
  return make_sparse(std::move(pat), a.csr().values(), false);
}

void Tape::backward(const DiffTensor& loss) {
  if (loss.tape() != this) throw std::runtime_error("backward: tensor not on this tape");
  if (backward_done_) throw std::runtime_error("backward: tape already differentiated");
  backward_done_ = true;
  TensorSlot& ls = slot(loss.id());
  if (ls.value->rows() != 1 || ls.value->cols() != 1)
    throw std::runtime_error("backward: loss must be a 1x1 tensor");
  if (!ls.grad) throw std::runtime_error("backward: loss does not require grad");
  (*ls.grad)(0, 0) += 1.0;
  for (std::size_t i = order_.size(); i > 0; --i) {
    const OpRef& op = order_[i - 1];
    if (op.sparse) {
      SparseSlot& s = sslot(op.id);
      if (s.needs_grad && s.pull) s.pull();
    } else {
      TensorSlot& s = slot(op.id);
      if (s.needs_grad && s.pull) s.pull();
    }
  }
}

namespace {

Tape* tape_of(const DiffTensor& t) {
  if (!t.valid()) throw std::runtime_error("op: tensor not recorded on a tape");
  return t.tape();
}

void warn_clamped_probability() {
  static bool warned = false;
  if (!warned) {
    std::cerr << "warning: predicted probability clamped at 1e-12 before log\n";
    warned = true;
  }
}

}  // namespace

DiffTensor matmul(DiffTensor a, DiffTensor b) {
  Tape* t = tape_of(a);
  if (b.tape() != t) throw std::runtime_error("matmul: operands on different tapes");
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  bool ng = t->slot(a.id()).needs_grad || t->slot(b.id()).needs_grad;
  DiffTensor out = t->make_tensor(matmul(av, bv), ng, "matmul");
  if (ng) {
    std::size_t aid = a.id(), bid = b.id(), oid = out.id();
    t->slot(oid).pull = [t, aid, bid, oid]() {
      const Matrix& g = *t->slot(oid).grad;
      const Matrix& av = *t->slot(aid).value;
      const Matrix& bv = *t->slot(bid).value;
      if (t->slot(aid).needs_grad) t->slot(aid).grad->add_in_place(matmul(g, transpose(bv)));
      if (t->slot(bid).needs_grad) t->slot(bid).grad->add_in_place(matmul(transpose(av), g));
    };
  }
  return out;
}

DiffTensor spmm(const SymmetricSparseMatrix& a, DiffTensor x) {
  Tape* t = tape_of(x);
  if (a.dim() != x.rows()) throw std::runtime_error("spmm: dimension mismatch");
  bool ng = t->slot(x.id()).needs_grad;
  DiffTensor out = t->make_tensor(a.multiply(x.value()), ng, "spmm");
  if (ng) {
    const SymmetricSparseMatrix* ap = &a;
    std::size_t xid = x.id(), oid = out.id();
    t->slot(oid).pull = [t, ap, xid, oid]() {
      t->slot(xid).grad->add_in_place(ap->multiply(*t->slot(oid).grad));
    };
  }
  return out;
}

DiffTensor spmm(const CsrMatrix& s, DiffTensor x) {
  Tape* t = tape_of(x);
  if (s.cols() != x.rows()) throw std::runtime_error("spmm: dimension mismatch");
  bool ng = t->slot(x.id()).needs_grad;
  DiffTensor out = t->make_tensor(s.multiply(x.value()), ng, "spmm");
  if (ng) {
    const CsrMatrix* sp = &s;
    std::size_t xid = x.id(), oid = out.id();
    t->slot(oid).pull = [t, sp, xid, oid]() {
      t->slot(xid).grad->add_in_place(sp->transpose_times(*t->slot(oid).grad));
    };
  }
  return out;
}

DiffTensor spmm(DiffSparse a, DiffTensor x) {
  Tape* t = tape_of(x);
  if (!a.valid() || a.tape() != t) throw std::runtime_error("spmm: operands on different tapes");
  const SparsePattern& pat = a.pattern();
  if (pat.dim != x.rows()) throw std::runtime_error("spmm: dimension mismatch");

  const std::vector<double>& vals = a.values();
  const Matrix& xv = x.value();
  Matrix y(pat.dim, xv.cols());
  for (std::size_t i = 0; i < pat.dim; ++i) {
    double* yrow = y.row(i);
    for (std::size_t k = pat.row_ptr[i]; k < pat.row_ptr[i + 1]; ++k) {
      double w = vals[k];
      const double* xrow = xv.row(pat.col_idx[k]);
      for (std::size_t c = 0; c < xv.cols(); ++c) yrow[c] += w * xrow[c];
    }
  }

  bool ng = t->slot(x.id()).needs_grad || t->sslot(a.id()).needs_grad;
  DiffTensor out = t->make_tensor(std::move(y), ng, "spmm");
  if (ng) {
    std::size_t aid = a.id(), xid = x.id(), oid = out.id();
    t->slot(oid).pull = [t, aid, xid, oid]() {
      const Matrix& g = *t->slot(oid).grad;
      const Matrix& xv = *t->slot(xid).value;
      Tape::SparseSlot& as = t->sslot(aid);
      const SparsePattern& pat = *as.pattern;
      if (as.needs_grad) {
        // d/d a_ij = <g_i, x_j>
        for (std::size_t i = 0; i < pat.dim; ++i) {
          const double* grow = g.row(i);
          for (std::size_t k = pat.row_ptr[i]; k < pat.row_ptr[i + 1]; ++k) {
            const double* xrow = xv.row(pat.col_idx[k]);
            double acc = 0.0;
            for (std::size_t c = 0; c < g.cols(); ++c) acc += grow[c] * xrow[c];
            as.grads[k] += acc;
          }
        }
      }
      if (t->slot(xid).needs_grad) {
        // A^T g via row scatter (A symmetric in use, but stay general)
        Matrix& gx = *t->slot(xid).grad;
        for (std::size_t i = 0; i < pat.dim; ++i) {
          const double* grow = g.row(i);
          for (std::size_t k = pat.row_ptr[i]; k < pat.row_ptr[i + 1]; ++k) {
            double w = as.values[k];
            double* dst = gx.row(pat.col_idx[k]);
            for (std::size_t c = 0; c < g.cols(); ++c) dst[c] += w * grow[c];
          }
        }
      }
    };
  }
  return out;
}

DiffTensor relu(DiffTensor x) {
  Tape* t = tape_of(x);
  const Matrix& xv = x.value();
  Matrix y(xv.rows(), xv.cols());
  double margin = t->relu_margin_;
  for (std::size_t i = 0; i < xv.size(); ++i) {
    double v = xv.data()[i];
    if (v != 0.0) margin = std::min(margin, std::fabs(v));
    y.data()[i] = v > 0.0 ? v : 0.0;
  }
  t->relu_margin_ = margin;
  bool ng = t->slot(x.id()).needs_grad;
  DiffTensor out = t->make_tensor(std::move(y), ng, "relu");
  if (ng) {
    std::size_t xid = x.id(), oid = out.id();
    t->slot(oid).pull = [t, xid, oid]() {
      const Matrix& g = *t->slot(oid).grad;
      const Matrix& xv = *t->slot(xid).value;
      Matrix& gx = *t->slot(xid).grad;
      for (std::size_t i = 0; i < g.size(); ++i)
        if (xv.data()[i] > 0.0) gx.data()[i] += g.data()[i];
    };
  }
  return out;
}

DiffTensor softmax_rows(DiffTensor x) {
  Tape* t = tape_of(x);
  const Matrix& xv = x.value();
  Matrix y(xv.rows(), xv.cols());
  for (std::size_t i = 0; i < xv.rows(); ++i) {
    const double* xr = xv.row(i);
    double* yr = y.row(i);
    double mx = xr[0];
    for (std::size_t j = 1; j < xv.cols(); ++j) mx = std::max(mx, xr[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < xv.cols(); ++j) {
      yr[j] = std::exp(xr[j] - mx);
      sum += yr[j];
    }
    for (std::size_t j = 0; j < xv.cols(); ++j) yr[j] /= sum;
  }
  bool ng = t->slot(x.id()).needs_grad;
  DiffTensor out = t->make_tensor(std::move(y), ng, "softmax_rows");
  if (ng) {
    std::size_t xid = x.id(), oid = out.id();
    t->slot(oid).pull = [t, xid, oid]() {
      const Matrix& g = *t->slot(oid).grad;
      const Matrix& yv = *t->slot(oid).value;
      Matrix& gx = *t->slot(xid).grad;
      for (std::size_t i = 0; i < g.rows(); ++i) {
        const double* gr = g.row(i);
        const double* yr = yv.row(i);
        double dot = 0.0;
        for (std::size_t j = 0; j < g.cols(); ++j) dot += gr[j] * yr[j];
        double* dst = gx.row(i);
        for (std::size_t j = 0; j < g.cols(); ++j) dst[j] += yr[j] * (gr[j] - dot);
      }
    };
  }
  return out;
}

DiffTensor l2_normalize_rows(DiffTensor x) {
  Tape* t = tape_of(x);
  const Matrix& xv = x.value();
  Matrix y(xv.rows(), xv.cols());
  std::vector<double> norms(xv.rows(), 0.0);
  for (std::size_t i = 0; i < xv.rows(); ++i) {
    const double* xr = xv.row(i);
    double sq = 0.0;
    for (std::size_t j = 0; j < xv.cols(); ++j) sq += xr[j] * xr[j];
    double n = std::sqrt(sq);
    norms[i] = n;
    double* yr = y.row(i);
    if (n > 0.0)
      for (std::size_t j = 0; j < xv.cols(); ++j) yr[j] = xr[j] / n;
    // zero rows stay zero
  }
  bool ng = t->slot(x.id()).needs_grad;
  DiffTensor out = t->make_tensor(std::move(y), ng, "l2_normalize_rows");
  if (ng) {
    std::size_t xid = x.id(), oid = out.id();
    t->slot(oid).pull = [t, xid, oid, norms = std::move(norms)]() {
      const Matrix& g = *t->slot(oid).grad;
      const Matrix& yv = *t->slot(oid).value;
      Matrix& gx = *t->slot(xid).grad;
      for (std::size_t i = 0; i < g.rows(); ++i) {
        if (norms[i] == 0.0) continue;
        const double* gr = g.row(i);
        const double* yr = yv.row(i);
        double dot = 0.0;
        for (std::size_t j = 0; j < g.cols(); ++j) dot += gr[j] * yr[j];
        double* dst = gx.row(i);
        for (std::size_t j = 0; j < g.cols(); ++j)
          dst[j] += (gr[j] - yr[j] * dot) / norms[i];
      }
    };
  }
  return out;
}

DiffTensor l1_normalize_rows_or_uniform(DiffTensor x) {
  Tape* t = tape_of(x);
  const Matrix& xv = x.value();
  Matrix y(xv.rows(), xv.cols());
  std::vector<double> sums(xv.rows(), 0.0);
  for (std::size_t i = 0; i < xv.rows(); ++i) {
    const double* xr = xv.row(i);
    double s = 0.0;
    for (std::size_t j = 0; j < xv.cols(); ++j) s += xr[j];
    sums[i] = s;
    double* yr = y.row(i);
    if (s > 1e-12)
      for (std::size_t j = 0; j < xv.cols(); ++j) yr[j] = xr[j] / s;
    else
      for (std::size_t j = 0; j < xv.cols(); ++j)
        yr[j] = 1.0 / static_cast<double>(xv.cols());
  }
  bool ng = t->slot(x.id()).needs_grad;
  DiffTensor out = t->make_tensor(std::move(y), ng, "l1_normalize_rows");
  if (ng) {
    std::size_t xid = x.id(), oid = out.id();
    t->slot(oid).pull = [t, xid, oid, sums = std::move(sums)]() {
      const Matrix& g = *t->slot(oid).grad;
      const Matrix& yv = *t->slot(oid).value;
      Matrix& gx = *t->slot(xid).grad;
      for (std::size_t i = 0; i < g.rows(); ++i) {
        if (sums[i] <= 1e-12) continue;  // uniform rows carry no gradient
        const double* gr = g.row(i);
        const double* yr = yv.row(i);
        double dot = 0.0;
        for (std::size_t j = 0; j < g.cols(); ++j) dot += gr[j] * yr[j];
        double* dst = gx.row(i);
        for (std::size_t j = 0; j < g.cols(); ++j) dst[j] += (gr[j] - dot) / sums[i];
      }
    };
  }
  return out;
}

DiffTensor concat_cols(const std::vector<DiffTensor>& xs) {
  if (xs.empty()) throw std::runtime_error("concat_cols: no inputs");
  Tape* t = tape_of(xs[0]);
  std::size_t rows = xs[0].rows();
  std::size_t cols = 0;
  bool ng = false;
  for (const DiffTensor& x : xs) {
    if (x.tape() != t) throw std::runtime_error("concat_cols: operands on different tapes");
    if (x.rows() != rows) throw std::runtime_error("concat_cols: row count mismatch");
    cols += x.cols();
    ng = ng || t->slot(x.id()).needs_grad;
  }
  Matrix y(rows, cols);
  std::size_t off = 0;
  for (const DiffTensor& x : xs) {
    const Matrix& xv = x.value();
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < xv.cols(); ++j) y(i, off + j) = xv(i, j);
    off += xv.cols();
  }
  DiffTensor out = t->make_tensor(std::move(y), ng, "concat_cols");
  if (ng) {
    std::vector<std::size_t> ids;
    for (const DiffTensor& x : xs) ids.push_back(x.id());
    std::size_t oid = out.id();
    t->slot(oid).pull = [t, ids, oid]() {
      const Matrix& g = *t->slot(oid).grad;
      std::size_t off = 0;
      for (std::size_t id : ids) {
        Tape::TensorSlot& s = t->slot(id);
        std::size_t c = s.value->cols();
        if (s.needs_grad) {
          for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j < c; ++j) (*s.grad)(i, j) += g(i, off + j);
        }
        off += c;
      }
    };
  }
  return out;
}

namespace detail {

DiffTensor apply_mask(DiffTensor x, Matrix factors, const char* op) {
  Tape* t = tape_of(x);
  const Matrix& xv = x.value();
  Matrix y(xv.rows(), xv.cols());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    double f = factors.data()[i];
    y.data()[i] = f == 0.0 ? 0.0 : xv.data()[i] * f;
  }
  bool ng = t->slot(x.id()).needs_grad;
  DiffTensor out = t->make_tensor(std::move(y), ng, op);
  if (ng) {
    std::size_t xid = x.id(), oid = out.id();
    t->slot(oid).pull = [t, xid, oid, factors = std::move(factors)]() {
      const Matrix& g = *t->slot(oid).grad;
      Matrix& gx = *t->slot(xid).grad;
      for (std::size_t i = 0; i < g.size(); ++i)
        gx.data()[i] += g.data()[i] * factors.data()[i];
    };
  }
  return out;
}

}  // namespace detail

DiffTensor dropout(DiffTensor x, double rate, bool training, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw std::runtime_error("dropout: rate must be in [0, 1)");
  if (!training || rate == 0.0) return x;
  double keep_scale = 1.0 / (1.0 - rate);
  Matrix factors(x.rows(), x.cols());
  for (std::size_t i = 0; i < factors.size(); ++i)
    factors.data()[i] = rng.uniform() >= rate ? keep_scale : 0.0;
  return detail::apply_mask(x, std::move(factors), "dropout");
}

DiffTensor dropout_rows(DiffTensor x, double rate, bool training, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw std::runtime_error("dropout: rate must be in [0, 1)");
  if (!training || rate == 0.0) return x;
  double keep_scale = 1.0 / (1.0 - rate);
  Matrix factors(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double f = rng.uniform() >= rate ? keep_scale : 0.0;
    for (std::size_t j = 0; j < x.cols(); ++j) factors(i, j) = f;
  }
  return detail::apply_mask(x, std::move(factors), "dropout_rows");
}

DiffTensor add(DiffTensor a, DiffTensor b) {
  Tape* t = tape_of(a);
  if (b.tape() != t) throw std::runtime_error("add: operands on different tapes");
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (!av.same_shape(bv)) throw std::runtime_error("add: shape mismatch");
  Matrix y = av;
  y.add_in_place(bv);
  bool ng = t->slot(a.id()).needs_grad || t->slot(b.id()).needs_grad;
  DiffTensor out = t->make_tensor(std::move(y), ng, "add");
  if (ng) {
    std::size_t aid = a.id(), bid = b.id(), oid = out.id();
    t->slot(oid).pull = [t, aid, bid, oid]() {
      const Matrix& g = *t->slot(oid).grad;
      if (t->slot(aid).needs_grad) t->slot(aid).grad->add_in_place(g);
      if (t->slot(bid).needs_grad) t->slot(bid).grad->add_in_place(g);
    };
  }
  return out;
}

DiffTensor scale(DiffTensor x, double s) {
  Tape* t = tape_of(x);
  const Matrix& xv = x.value();
  Matrix y(xv.rows(), xv.cols());
  for (std::size_t i = 0; i < xv.size(); ++i) y.data()[i] = xv.data()[i] * s;
  bool ng = t->slot(x.id()).needs_grad;
  DiffTensor out = t->make_tensor(std::move(y), ng, "scale");
  if (ng) {
    std::size_t xid = x.id(), oid = out.id();
    t->slot(oid).pull = [t, xid, oid, s]() {
      const Matrix& g = *t->slot(oid).grad;
      Matrix& gx = *t->slot(xid).grad;
      for (std::size_t i = 0; i < g.size(); ++i) gx.data()[i] += g.data()[i] * s;
    };
  }
  return out;
}

DiffTensor hadamard(DiffTensor a, DiffTensor b) {
  Tape* t = tape_of(a);
  if (b.tape() != t) throw std::runtime_error("hadamard: operands on different tapes");
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (!av.same_shape(bv)) throw std::runtime_error("hadamard: shape mismatch");
  Matrix y(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.size(); ++i) y.data()[i] = av.data()[i] * bv.data()[i];
  bool ng = t->slot(a.id()).needs_grad || t->slot(b.id()).needs_grad;
  DiffTensor out = t->make_tensor(std::move(y), ng, "hadamard");
  if (ng) {
    std::size_t aid = a.id(), bid = b.id(), oid = out.id();
    t->slot(oid).pull = [t, aid, bid, oid]() {
      const Matrix& g = *t->slot(oid).grad;
      const Matrix& av = *t->slot(aid).value;
      const Matrix& bv = *t->slot(bid).value;
      if (t->slot(aid).needs_grad) {
        Matrix& ga = *t->slot(aid).grad;
        for (std::size_t i = 0; i < g.size(); ++i) ga.data()[i] += g.data()[i] * bv.data()[i];
      }
      if (t->slot(bid).needs_grad) {
        Matrix& gb = *t->slot(bid).grad;
        for (std::size_t i = 0; i < g.size(); ++i) gb.data()[i] += g.data()[i] * av.data()[i];
      }
    };
  }
  return out;
}

DiffTensor sum_all(DiffTensor x) {
  Tape* t = tape_of(x);
  const Matrix& xv = x.value();
  double s = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) s += xv.data()[i];
  Matrix y(1, 1);
  y(0, 0) = s;
  bool ng = t->slot(x.id()).needs_grad;
  DiffTensor out = t->make_tensor(std::move(y), ng, "sum_all");
  if (ng) {
    std::size_t xid = x.id(), oid = out.id();
    t->slot(oid).pull = [t, xid, oid]() {
      double g = (*t->slot(oid).grad)(0, 0);
      Matrix& gx = *t->slot(xid).grad;
      for (std::size_t i = 0; i < gx.size(); ++i) gx.data()[i] += g;
    };
  }
  return out;
}

DiffTensor masked_cross_entropy(DiffTensor predictions, const std::vector<int>& labels,
                                const std::vector<std::size_t>& mask) {
  Tape* t = tape_of(predictions);
  const Matrix& p = predictions.value();
  if (labels.size() != p.rows())
    throw std::runtime_error("masked_cross_entropy: labels size mismatch");
  double loss = 0.0;
  for (std::size_t i : mask) {
    if (i >= p.rows()) throw std::runtime_error("masked_cross_entropy: mask index out of range");
    double row_sum = 0.0;
    for (std::size_t j = 0; j < p.cols(); ++j) row_sum += p(i, j);
    if (std::fabs(row_sum - 1.0) > 1e-6)
      throw std::runtime_error("masked_cross_entropy: masked row does not sum to 1");
    int c = labels[i];
    if (c < 0 || static_cast<std::size_t>(c) >= p.cols())
      throw std::runtime_error("masked_cross_entropy: label out of range");
    double prob = p(i, c);
    if (prob < 1e-12) {
      warn_clamped_probability();
      prob = 1e-12;
    }
    loss -= std::log(prob);
  }
  Matrix y(1, 1);
  y(0, 0) = loss;
  bool ng = t->slot(predictions.id()).needs_grad;
  DiffTensor out = t->make_tensor(std::move(y), ng, "masked_cross_entropy");
  if (ng) {
    std::size_t pid = predictions.id(), oid = out.id();
    t->slot(oid).pull = [t, pid, oid, labels, mask]() {
      double g = (*t->slot(oid).grad)(0, 0);
      const Matrix& p = *t->slot(pid).value;
      Matrix& gp = *t->slot(pid).grad;
      for (std::size_t i : mask) {
        int c = labels[i];
        double prob = p(i, c);
        // below the clamp the loss is locally flat, so nothing flows back
        if (prob >= 1e-12) gp(i, c) += g * (-1.0 / prob);
      }
    };
  }
  return out;
}

DiffSparse thresholded_gram(DiffTensor x, double threshold, bool force_self_loops) {
  Tape* t = tape_of(x);
  const Matrix& xv = x.value();
  std::size_t n = xv.rows();
  std::size_t d = xv.cols();

  // Upper-triangular dots; each stored pair (i,j)/(j,i) shares one double.
  std::vector<std::vector<std::pair<std::size_t, double>>> rows(n);
  double margin = t->threshold_margin_;
  for (std::size_t i = 0; i < n; ++i) {
    const double* xi = xv.row(i);
    for (std::size_t j = i; j < n; ++j) {
      const double* xj = xv.row(j);
      double dot = 0.0;
      for (std::size_t k = 0; k < d; ++k) dot += xi[k] * xj[k];
      margin = std::min(margin, std::fabs(dot - threshold));
      bool keep = dot >= threshold || (force_self_loops && i == j);
      if (!keep) continue;
      rows[i].push_back({j, dot});
      if (i != j) rows[j].push_back({i, dot});
    }
  }
  t->threshold_margin_ = margin;

  auto pat = std::make_shared<SparsePattern>();
  pat->dim = n;
  pat->row_ptr.assign(n + 1, 0);
  std::vector<double> values;
  for (std::size_t i = 0; i < n; ++i) {
    std::sort(rows[i].begin(), rows[i].end());
    for (const auto& [j, v] : rows[i]) {
      pat->col_idx.push_back(j);
      values.push_back(v);
    }
    pat->row_ptr[i + 1] = pat->col_idx.size();
  }

  bool ng = t->slot(x.id()).needs_grad;
  DiffSparse out = t->make_sparse(std::move(pat), std::move(values), ng);
  if (ng) {
    std::size_t xid = x.id(), oid = out.id();
    t->sslot(oid).pull = [t, xid, oid]() {
      Tape::SparseSlot& s = t->sslot(oid);
      const SparsePattern& pat = *s.pattern;
      const Matrix& xv = *t->slot(xid).value;
      Matrix& gx = *t->slot(xid).grad;
      // Each stored entry (i,j) is an independent copy of <x_i, x_j>:
      // d/dx_i += g * x_j and d/dx_j += g * x_i. A diagonal entry therefore
      // contributes 2 g x_i, which is the correct derivative of |x_i|^2.
      for (std::size_t i = 0; i < pat.dim; ++i) {
        for (std::size_t k = pat.row_ptr[i]; k < pat.row_ptr[i + 1]; ++k) {
          std::size_t j = pat.col_idx[k];
          double g = s.grads[k];
          if (g == 0.0) continue;
          const double* xi = xv.row(i);
          const double* xj = xv.row(j);
          double* gi = gx.row(i);
          double* gj = gx.row(j);
          for (std::size_t c = 0; c < xv.cols(); ++c) {
            gi[c] += g * xj[c];
            gj[c] += g * xi[c];
          }
        }
      }
    };
  }
  return out;
}

namespace {

// Shared remap step for value transforms over a (possibly extended) pattern.
struct SparseRemap {
  std::shared_ptr<SparsePattern> pattern;
  std::vector<std::ptrdiff_t> source;  // new entry -> old entry index, -1 if none
};

SparseRemap extend_with_diagonal(const SparsePattern& old) {
  SparseRemap r;
  r.pattern = std::make_shared<SparsePattern>();
  r.pattern->dim = old.dim;
  r.pattern->row_ptr.assign(old.dim + 1, 0);
  for (std::size_t i = 0; i < old.dim; ++i) {
    bool has_diag = false;
    for (std::size_t k = old.row_ptr[i]; k < old.row_ptr[i + 1]; ++k) {
      std::size_t j = old.col_idx[k];
      if (j == i) has_diag = true;
      if (!has_diag && j > i) {
        r.pattern->col_idx.push_back(i);
        r.source.push_back(-1);
        has_diag = true;
      }
      r.pattern->col_idx.push_back(j);
      r.source.push_back(static_cast<std::ptrdiff_t>(k));
    }
    if (!has_diag) {
      r.pattern->col_idx.push_back(i);
      r.source.push_back(-1);
    }
    r.pattern->row_ptr[i + 1] = r.pattern->col_idx.size();
  }
  return r;
}

}  // namespace

DiffSparse normalize_doc_sparse(DiffSparse a) {
  Tape* t = a.tape();
  if (!t) throw std::runtime_error("normalize_doc_sparse: not on a tape");
  const SparsePattern& pat = a.pattern();
  const std::vector<double>& vals = a.values();

  std::vector<double> inv_sqrt(pat.dim);
  for (std::size_t i = 0; i < pat.dim; ++i) {
    double deg = 1.0;
    for (std::size_t k = pat.row_ptr[i]; k < pat.row_ptr[i + 1]; ++k) deg += vals[k];
    inv_sqrt[i] = 1.0 / std::sqrt(deg);
  }

  SparseRemap remap = extend_with_diagonal(pat);
  std::vector<double> out_vals(remap.source.size());
  std::vector<double> factors(remap.source.size());
  for (std::size_t i = 0; i < pat.dim; ++i) {
    for (std::size_t k = remap.pattern->row_ptr[i]; k < remap.pattern->row_ptr[i + 1]; ++k) {
      std::size_t j = remap.pattern->col_idx[k];
      double f = inv_sqrt[i] * inv_sqrt[j];
      double raw = remap.source[k] >= 0 ? vals[remap.source[k]] : 0.0;
      if (i == j) raw += 1.0;
      out_vals[k] = raw * f;
      factors[k] = f;
    }
  }

  bool ng = t->sslot(a.id()).needs_grad;
  DiffSparse out = t->make_sparse(remap.pattern, std::move(out_vals), ng);
  if (ng) {
    std::size_t aid = a.id(), oid = out.id();
    t->sslot(oid).pull = [t, aid, oid, factors = std::move(factors),
                          source = std::move(remap.source)]() {
      Tape::SparseSlot& os = t->sslot(oid);
      Tape::SparseSlot& as = t->sslot(aid);
      for (std::size_t k = 0; k < source.size(); ++k)
        if (source[k] >= 0) as.grads[source[k]] += os.grads[k] * factors[k];
    };
  }
  return out;
}

DiffSparse row_normalize_sparse(DiffSparse a) {
  Tape* t = a.tape();
  if (!t) throw std::runtime_error("row_normalize_sparse: not on a tape");
  const SparsePattern& pat = a.pattern();
  const std::vector<double>& vals = a.values();

  std::vector<double> factors(vals.size(), 0.0);
  std::vector<double> out_vals(vals.size(), 0.0);
  for (std::size_t i = 0; i < pat.dim; ++i) {
    double sum = 0.0;
    for (std::size_t k = pat.row_ptr[i]; k < pat.row_ptr[i + 1]; ++k) sum += vals[k];
    if (sum <= 1e-300) continue;
    double inv = 1.0 / sum;
    for (std::size_t k = pat.row_ptr[i]; k < pat.row_ptr[i + 1]; ++k) {
      factors[k] = inv;
      out_vals[k] = vals[k] * inv;
    }
  }

  bool ng = t->sslot(a.id()).needs_grad;
  auto pattern = t->sslot(a.id()).pattern;
  DiffSparse out = t->make_sparse(pattern, std::move(out_vals), ng);
  if (ng) {
    std::size_t aid = a.id(), oid = out.id();
    t->sslot(oid).pull = [t, aid, oid, factors = std::move(factors)]() {
      Tape::SparseSlot& os = t->sslot(oid);
      Tape::SparseSlot& as = t->sslot(aid);
      for (std::size_t k = 0; k < factors.size(); ++k)
        as.grads[k] += os.grads[k] * factors[k];
    };
  }
  return out;
}

}  // namespace shine
