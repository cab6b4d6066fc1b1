#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <sstream>
#include <vector>

#include "shine/adam.hpp"
#include "shine/autodiff.hpp"
#include "shine/matrix.hpp"
#include "shine/rng.hpp"
#include "shine/sparse.hpp"

using namespace shine;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Matrix m(r, c);
  for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
  return m;
}

// Scalar loss closure: rebuilds the graph from scratch on the given tape.
using Forward = std::function<DiffTensor(Tape&, DiffTensor)>;

// Central finite differences against the analytic gradient, coordinate by
// coordinate. rel = |a - f| / max(|a|, |f|, 1e-4); the floor keeps noise on
// near-zero coordinates from dominating.
void gradcheck(Parameter& p, const Forward& forward, double tol = 1e-6) {
  p.zero_grad();
  {
    Tape tape;
    DiffTensor loss = forward(tape, tape.param(p));
    REQUIRE(loss.rows() == 1);
    REQUIRE(loss.cols() == 1);
    tape.backward(loss);
  }
  Matrix analytic = p.grad;
  const double h = 1e-5;
  for (std::size_t k = 0; k < p.value.size(); ++k) {
    double saved = p.value.data()[k];
    p.value.data()[k] = saved + h;
    Tape tp;
    double lp = forward(tp, tp.param(p)).value()(0, 0);
    p.value.data()[k] = saved - h;
    Tape tm;
    double lm = forward(tm, tm.param(p)).value()(0, 0);
    p.value.data()[k] = saved;
    double fd = (lp - lm) / (2.0 * h);
    double a = analytic.data()[k];
    double rel = std::fabs(a - fd) / std::max({std::fabs(a), std::fabs(fd), 1e-4});
    CAPTURE(k);
    CAPTURE(a);
    CAPTURE(fd);
    CHECK(rel < tol);
  }
}

// Projects a matrix output to a scalar with fixed weights so every output
// entry participates in the gradient.
DiffTensor project(Tape& t, DiffTensor out, const Matrix& weights) {
  return sum_all(hadamard(out, t.constant(weights)));
}

SymmetricSparseMatrix random_symmetric(std::size_t n, double density, Rng& rng) {
  std::vector<Triplet> upper;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j)
      if (rng.uniform() < density) upper.push_back({i, j, rng.uniform(0.1, 2.0)});
  return SymmetricSparseMatrix::from_upper(n, std::move(upper));
}

// Threshold placed in the middle of the widest gap between pairwise inner
// products, so finite differencing never flips the sparsity pattern.
double midgap_threshold(const Matrix& x) {
  std::vector<double> dots;
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = i; j < x.rows(); ++j) {
      double d = 0.0;
      for (std::size_t c = 0; c < x.cols(); ++c) d += x(i, c) * x(j, c);
      dots.push_back(d);
    }
  std::sort(dots.begin(), dots.end());
  double best = dots[0] - 1.0, width = 0.0;
  for (std::size_t k = 0; k + 1 < dots.size(); ++k) {
    double gap = dots[k + 1] - dots[k];
    if (gap > width) {
      width = gap;
      best = 0.5 * (dots[k] + dots[k + 1]);
    }
  }
  return best;
}

}  // namespace

TEST_CASE("matmul value and gradient") {
  Rng rng(11);
  Matrix av = random_matrix(3, 4, rng);
  Matrix bv = random_matrix(4, 2, rng);
  Matrix w = random_matrix(3, 2, rng);

  Parameter a("a", av);
  Parameter b("b", bv);
  gradcheck(a, [&](Tape& t, DiffTensor x) {
    return project(t, matmul(x, t.param(b)), w);
  });
  gradcheck(b, [&](Tape& t, DiffTensor x) {
    return project(t, matmul(t.param(a), x), w);
  });

  Tape t;
  Matrix got = matmul(t.constant(av), t.constant(bv)).value();
  Matrix want = matmul(av, bv);
  for (std::size_t k = 0; k < got.size(); ++k)
    CHECK(got.data()[k] == doctest::Approx(want.data()[k]).epsilon(1e-15));
}

TEST_CASE("spmm matches densified oracle") {
  Rng rng(7);
  SymmetricSparseMatrix a = random_symmetric(8, 0.4, rng);
  Matrix x = random_matrix(8, 3, rng);
  Matrix dense = a.to_dense();
  Matrix want = matmul(dense, x);

  Tape t;
  Matrix got = spmm(a, t.constant(x)).value();
  REQUIRE(got.rows() == 8);
  for (std::size_t k = 0; k < got.size(); ++k)
    CHECK(std::fabs(got.data()[k] - want.data()[k]) < 1e-12);
}

TEST_CASE("spmm zero operator and permutation") {
  SymmetricSparseMatrix empty(2);
  Matrix x(2, 2);
  x(0, 0) = 1.0;
  x(1, 1) = 1.0;
  Tape t;
  Matrix zero = spmm(empty, t.constant(x)).value();
  CHECK(zero(0, 0) == 0.0);
  CHECK(zero(1, 1) == 0.0);

  SymmetricSparseMatrix cyc = SymmetricSparseMatrix::from_upper(2, {{0, 1, 1.0}});
  Matrix swapped = spmm(cyc, t.constant(x)).value();
  CHECK(swapped(0, 0) == 0.0);
  CHECK(swapped(0, 1) == 1.0);
  CHECK(swapped(1, 0) == 1.0);
  CHECK(swapped(1, 1) == 0.0);
}

TEST_CASE("spmm gradient wrt dense input") {
  Rng rng(13);
  SymmetricSparseMatrix a = random_symmetric(6, 0.5, rng);
  Matrix w = random_matrix(6, 3, rng);
  Parameter x("x", random_matrix(6, 3, rng));
  gradcheck(x, [&](Tape& t, DiffTensor xx) { return project(t, spmm(a, xx), w); });
}

TEST_CASE("spmm with rectangular pooling matrix") {
  Rng rng(17);
  // 4 docs x 6 nodes pooling
  std::vector<Triplet> entries = {{0, 1, 0.5}, {0, 2, 0.5}, {1, 0, 1.0},
                                  {2, 3, 0.25}, {2, 4, 0.75}, {3, 5, 1.0}};
  CsrMatrix s = CsrMatrix::from_triplets(4, 6, entries);
  Matrix w = random_matrix(4, 2, rng);
  Parameter h("h", random_matrix(6, 2, rng));
  gradcheck(h, [&](Tape& t, DiffTensor hh) { return project(t, spmm(s, hh), w); });

  Tape t;
  Matrix got = spmm(s, t.constant(h.value)).value();
  Matrix want = matmul(s.to_dense(), h.value);
  for (std::size_t k = 0; k < got.size(); ++k)
    CHECK(std::fabs(got.data()[k] - want.data()[k]) < 1e-14);
}

TEST_CASE("relu value, gradient, margin diagnostic") {
  Matrix xv(2, 2);
  xv(0, 0) = -1.5;
  xv(0, 1) = 0.5;
  xv(1, 0) = 2.0;
  xv(1, 1) = -0.25;
  Tape t;
  Matrix y = relu(t.constant(xv)).value();
  CHECK(y(0, 0) == 0.0);
  CHECK(y(0, 1) == 0.5);
  CHECK(y(1, 0) == 2.0);
  CHECK(y(1, 1) == 0.0);
  CHECK(t.relu_margin() == doctest::Approx(0.25));

  Rng rng(19);
  Matrix w = random_matrix(2, 2, rng);
  Parameter x("x", xv);
  gradcheck(x, [&](Tape& tt, DiffTensor xx) { return project(tt, relu(xx), w); });
}

TEST_CASE("softmax rows: uniform, shift invariance, gradient") {
  Matrix c(1, 4, 3.7);
  Tape t;
  Matrix u = softmax_rows(t.constant(c)).value();
  for (std::size_t j = 0; j < 4; ++j) CHECK(u(0, j) == doctest::Approx(0.25).epsilon(1e-14));

  Rng rng(23);
  Matrix xv = random_matrix(3, 5, rng);
  Matrix shifted = xv;
  for (std::size_t i = 0; i < shifted.rows(); ++i)
    for (std::size_t j = 0; j < shifted.cols(); ++j) shifted(i, j) += 11.25;
  Matrix a = softmax_rows(t.constant(xv)).value();
  Matrix b = softmax_rows(t.constant(shifted)).value();
  for (std::size_t k = 0; k < a.size(); ++k)
    CHECK(a.data()[k] == doctest::Approx(b.data()[k]).epsilon(1e-12));

  Matrix w = random_matrix(3, 5, rng);
  Parameter x("x", xv);
  gradcheck(x, [&](Tape& tt, DiffTensor xx) { return project(tt, softmax_rows(xx), w); });
}

TEST_CASE("l2 normalize rows: 3-4-5, zero rows, gradient") {
  Matrix xv(2, 2);
  xv(0, 0) = 3.0;
  xv(0, 1) = 4.0;
  // row 1 all zeros
  Tape t;
  Matrix y = l2_normalize_rows(t.constant(xv)).value();
  CHECK(y(0, 0) == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(y(0, 1) == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(y(1, 0) == 0.0);
  CHECK(y(1, 1) == 0.0);

  Rng rng(29);
  Matrix dense = random_matrix(3, 4, rng, 0.2, 1.5);
  Matrix w = random_matrix(3, 4, rng);
  Parameter x("x", dense);
  gradcheck(x, [&](Tape& tt, DiffTensor xx) { return project(tt, l2_normalize_rows(xx), w); });
}

TEST_CASE("l1 normalize rows or uniform") {
  Matrix xv(2, 4);
  xv(0, 0) = 1.0;
  xv(0, 2) = 3.0;
  // row 1 all zeros -> uniform
  Tape t;
  Matrix y = l1_normalize_rows_or_uniform(t.constant(xv)).value();
  CHECK(y(0, 0) == doctest::Approx(0.25));
  CHECK(y(0, 2) == doctest::Approx(0.75));
  for (std::size_t j = 0; j < 4; ++j) CHECK(y(1, j) == doctest::Approx(0.25));

  Rng rng(31);
  Matrix dense = random_matrix(2, 4, rng, 0.1, 2.0);
  Matrix w = random_matrix(2, 4, rng);
  Parameter x("x", dense);
  gradcheck(x, [&](Tape& tt, DiffTensor xx) {
    return project(tt, l1_normalize_rows_or_uniform(xx), w);
  });
}

TEST_CASE("concat cols values and gradients") {
  Rng rng(37);
  Matrix av = random_matrix(3, 2, rng);
  Matrix bv = random_matrix(3, 4, rng);
  Matrix cv = random_matrix(3, 1, rng);
  Tape t;
  Matrix y = concat_cols({t.constant(av), t.constant(bv), t.constant(cv)}).value();
  REQUIRE(y.rows() == 3);
  REQUIRE(y.cols() == 7);
  CHECK(y(1, 0) == av(1, 0));
  CHECK(y(1, 3) == bv(1, 1));
  CHECK(y(2, 6) == cv(2, 0));

  Matrix w = random_matrix(3, 7, rng);
  Parameter a("a", av);
  Parameter b("b", bv);
  gradcheck(a, [&](Tape& tt, DiffTensor xx) {
    return project(tt, concat_cols({xx, tt.constant(bv), tt.constant(cv)}), w);
  });
  gradcheck(b, [&](Tape& tt, DiffTensor xx) {
    return project(tt, concat_cols({tt.constant(av), xx, tt.constant(cv)}), w);
  });
}

TEST_CASE("dropout identity when not training or rate zero") {
  Rng rng(41);
  Matrix xv = random_matrix(4, 3, rng);
  Tape t;
  DiffTensor x = t.constant(xv);
  DiffTensor same = dropout(x, 0.5, false, rng);
  CHECK(same.value() == xv);
  DiffTensor same2 = dropout(x, 0.0, true, rng);
  CHECK(same2.value() == xv);
}

TEST_CASE("dropout scales survivors and zeroes the rest exactly") {
  Rng rng(43);
  Matrix xv = random_matrix(10, 8, rng, -2.0, -0.5);  // all negative on purpose
  Tape t;
  Matrix y = dropout(t.constant(xv), 0.5, true, rng).value();
  std::size_t kept = 0;
  for (std::size_t k = 0; k < y.size(); ++k) {
    if (y.data()[k] == 0.0) {
      CHECK(!std::signbit(y.data()[k]));  // dropped entries are +0.0 exactly
    } else {
      CHECK(y.data()[k] == doctest::Approx(xv.data()[k] * 2.0).epsilon(1e-15));
      ++kept;
    }
  }
  CHECK(kept > 10);
  CHECK(kept < 70);
}

TEST_CASE("dropout gradient with a fixed mask") {
  Rng init(47);
  Matrix xv = random_matrix(3, 3, init);
  Matrix w = random_matrix(3, 3, init);
  Parameter x("x", xv);
  gradcheck(x, [&](Tape& t, DiffTensor xx) {
    Rng rng(123);  // same mask on every evaluation
    return project(t, dropout(xx, 0.3, true, rng), w);
  });
}

TEST_CASE("dropout_rows zeroes whole rows") {
  Rng rng(53);
  Matrix xv = random_matrix(40, 3, rng, 0.5, 1.5);
  Tape t;
  Matrix y = dropout_rows(t.constant(xv), 0.5, true, rng).value();
  std::size_t zero_rows = 0;
  for (std::size_t i = 0; i < y.rows(); ++i) {
    bool all_zero = true;
    bool any_zero = false;
    for (std::size_t j = 0; j < y.cols(); ++j) {
      if (y(i, j) == 0.0)
        any_zero = true;
      else
        all_zero = false;
    }
    CHECK(all_zero == any_zero);  // a row is either fully kept or fully dropped
    if (all_zero) ++zero_rows;
  }
  CHECK(zero_rows > 5);
  CHECK(zero_rows < 35);
}

TEST_CASE("add, scale, hadamard, sum_all") {
  Rng rng(59);
  Matrix av = random_matrix(2, 3, rng);
  Matrix bv = random_matrix(2, 3, rng);
  Matrix w = random_matrix(2, 3, rng);

  Tape t;
  Matrix s = add(t.constant(av), t.constant(bv)).value();
  CHECK(s(1, 2) == doctest::Approx(av(1, 2) + bv(1, 2)));
  Matrix sc = scale(t.constant(av), -2.5).value();
  CHECK(sc(0, 1) == doctest::Approx(av(0, 1) * -2.5));
  Matrix h = hadamard(t.constant(av), t.constant(bv)).value();
  CHECK(h(1, 0) == doctest::Approx(av(1, 0) * bv(1, 0)));

  Parameter a("a", av);
  gradcheck(a, [&](Tape& tt, DiffTensor xx) {
    return project(tt, add(xx, tt.constant(bv)), w);
  });
  gradcheck(a, [&](Tape& tt, DiffTensor xx) { return project(tt, scale(xx, 0.7), w); });
  gradcheck(a, [&](Tape& tt, DiffTensor xx) {
    return project(tt, hadamard(xx, tt.constant(bv)), w);
  });
  gradcheck(a, [&](Tape& tt, DiffTensor xx) { return sum_all(xx); });
}

TEST_CASE("backward: linear and quadratic anchors") {
  Rng rng(61);
  Parameter w("w", random_matrix(3, 2, rng));

  w.zero_grad();
  {
    Tape t;
    DiffTensor loss = sum_all(t.param(w));
    t.backward(loss);
  }
  for (std::size_t k = 0; k < w.grad.size(); ++k) CHECK(w.grad.data()[k] == 1.0);

  w.zero_grad();
  {
    Tape t;
    DiffTensor x = t.param(w);
    t.backward(sum_all(hadamard(x, x)));
  }
  for (std::size_t k = 0; k < w.grad.size(); ++k)
    CHECK(w.grad.data()[k] == doctest::Approx(2.0 * w.value.data()[k]).epsilon(1e-14));
}

TEST_CASE("masked cross entropy anchors") {
  std::vector<int> labels = {0, 2, 1, 2};
  std::vector<std::size_t> mask = {0, 1, 3};

  // one-hot at the true class -> loss 0
  Matrix onehot(4, 3);
  for (std::size_t i = 0; i < 4; ++i) onehot(i, labels[i]) = 1.0;
  Tape t;
  CHECK(masked_cross_entropy(t.constant(onehot), labels, mask).value()(0, 0) == 0.0);

  // uniform -> m * log(C)
  Matrix uniform(4, 3, 1.0 / 3.0);
  double lu = masked_cross_entropy(t.constant(uniform), labels, mask).value()(0, 0);
  CHECK(lu == doctest::Approx(3.0 * std::log(3.0)).epsilon(1e-12));

  // unmasked rows are irrelevant (row 2 is unmasked, no sum constraint there)
  Matrix mixed = uniform;
  mixed(2, 0) = 17.0;
  mixed(2, 1) = -3.0;
  double lm = masked_cross_entropy(t.constant(mixed), labels, mask).value()(0, 0);
  CHECK(lm == lu);

  // masked row that does not sum to 1 -> error
  Matrix bad = uniform;
  bad(0, 0) = 0.9;
  CHECK_THROWS_AS(masked_cross_entropy(t.constant(bad), labels, mask), std::runtime_error);

  // zero probability at the true class -> clamped, finite
  Matrix zerop(4, 3);
  zerop(0, 1) = 1.0;
  zerop(1, 2) = 1.0;
  zerop(3, 2) = 1.0;
  double lz = masked_cross_entropy(t.constant(zerop), labels, mask).value()(0, 0);
  CHECK(std::isfinite(lz));
  CHECK(lz == doctest::Approx(-std::log(1e-12)).epsilon(1e-9));
}

TEST_CASE("masked cross entropy gradient through softmax") {
  Rng rng(67);
  std::vector<int> labels = {1, 0, 2, 1, 0};
  std::vector<std::size_t> mask = {0, 2, 4};
  Parameter x("x", random_matrix(5, 3, rng));
  gradcheck(x, [&](Tape& t, DiffTensor xx) {
    return masked_cross_entropy(softmax_rows(xx), labels, mask);
  });
}

TEST_CASE("thresholded gram: pattern, symmetry, monotonicity") {
  Rng rng(71);
  Matrix xv = random_matrix(7, 4, rng);
  Tape t;
  DiffSparse a = thresholded_gram(t.constant(xv), 0.3, false);
  const SparsePattern& pat = a.pattern();
  const std::vector<double>& vals = a.values();

  Matrix gram = matmul(xv, transpose(xv));
  // every kept entry matches the raw inner product and clears the threshold
  for (std::size_t i = 0; i < pat.dim; ++i) {
    for (std::size_t k = pat.row_ptr[i]; k < pat.row_ptr[i + 1]; ++k) {
      std::size_t j = pat.col_idx[k];
      CHECK(vals[k] >= 0.3);
      CHECK(vals[k] == doctest::Approx(gram(i, j)).epsilon(1e-12));
    }
  }
  // every absent pair is below the threshold
  Matrix dense = a.to_symmetric().to_dense();
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t j = 0; j < 7; ++j)
      if (dense(i, j) == 0.0) CHECK(gram(i, j) < 0.3);

  // stored (i,j) and (j,i) are the same double, bit for bit
  for (std::size_t i = 0; i < pat.dim; ++i)
    for (std::size_t k = pat.row_ptr[i]; k < pat.row_ptr[i + 1]; ++k) {
      std::size_t j = pat.col_idx[k];
      bool found = false;
      for (std::size_t k2 = pat.row_ptr[j]; k2 < pat.row_ptr[j + 1]; ++k2)
        if (pat.col_idx[k2] == i) {
          CHECK(vals[k2] == vals[k]);
          found = true;
        }
      CHECK(found);
    }

  // edge count is non-increasing in the threshold
  std::size_t prev = static_cast<std::size_t>(-1);
  for (double delta : {0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0}) {
    Tape tt;
    std::size_t nnz = thresholded_gram(tt.constant(xv), delta, false).nnz();
    CHECK(nnz <= prev);
    prev = nnz;
  }
}

TEST_CASE("thresholded gram: forced self loops") {
  Matrix xv(2, 2);
  xv(0, 0) = 0.1;  // |x_0|^2 = 0.01 < threshold
  xv(1, 1) = 3.0;
  Tape t;
  DiffSparse plain = thresholded_gram(t.constant(xv), 0.5, false);
  DiffSparse forced = thresholded_gram(t.constant(xv), 0.5, true);
  Matrix dp = plain.to_symmetric().to_dense();
  Matrix df = forced.to_symmetric().to_dense();
  CHECK(dp(0, 0) == 0.0);
  CHECK(df(0, 0) == doctest::Approx(0.01));
  CHECK(df(1, 1) == doctest::Approx(9.0));
}

TEST_CASE("thresholded gram gradient, separate and shared inputs") {
  Rng rng(73);
  Matrix xv = random_matrix(5, 3, rng, 0.4, 1.0);
  Matrix hv = random_matrix(5, 2, rng);
  Matrix w = random_matrix(5, 2, rng);
  double delta = midgap_threshold(xv);

  {
    Tape probe;
    thresholded_gram(probe.constant(xv), delta, false);
    REQUIRE(probe.threshold_margin() > 1e-3);
  }

  Parameter x("x", xv);
  gradcheck(x, [&](Tape& t, DiffTensor xx) {
    return project(t, spmm(thresholded_gram(xx, delta, false), t.constant(hv)), w);
  });
  // gradient through the adjacency values and the propagated features at once
  Matrix w2 = random_matrix(5, 3, rng);
  gradcheck(x, [&](Tape& t, DiffTensor xx) {
    return project(t, spmm(thresholded_gram(xx, delta, false), xx), w2);
  });
}

TEST_CASE("spmm over differentiable sparse matches dense oracle") {
  Rng rng(79);
  Matrix xv = random_matrix(6, 3, rng, 0.2, 0.9);
  Matrix hv = random_matrix(6, 4, rng);
  Tape t;
  DiffSparse a = thresholded_gram(t.constant(xv), 0.4, false);
  Matrix got = spmm(a, t.constant(hv)).value();
  Matrix want = matmul(a.to_symmetric().to_dense(), hv);
  for (std::size_t k = 0; k < got.size(); ++k)
    CHECK(std::fabs(got.data()[k] - want.data()[k]) < 1e-12);
}

TEST_CASE("normalize_doc_sparse values match dense oracle") {
  Rng rng(83);
  Matrix xv = random_matrix(5, 3, rng, 0.3, 1.0);
  Tape t;
  DiffSparse a = thresholded_gram(t.constant(xv), 0.4, false);
  DiffSparse n = normalize_doc_sparse(a);

  Matrix ad = a.to_symmetric().to_dense();
  std::size_t dim = ad.rows();
  std::vector<double> inv_sqrt(dim);
  for (std::size_t i = 0; i < dim; ++i) {
    double deg = 1.0;
    for (std::size_t j = 0; j < dim; ++j) deg += ad(i, j);
    inv_sqrt[i] = 1.0 / std::sqrt(deg);
  }
  Matrix want(dim, dim);
  for (std::size_t i = 0; i < dim; ++i)
    for (std::size_t j = 0; j < dim; ++j)
      want(i, j) = (ad(i, j) + (i == j ? 1.0 : 0.0)) * inv_sqrt[i] * inv_sqrt[j];

  Matrix got = n.to_symmetric().to_dense();
  REQUIRE(got.rows() == dim);
  for (std::size_t k = 0; k < got.size(); ++k)
    CHECK(std::fabs(got.data()[k] - want.data()[k]) < 1e-12);
}

TEST_CASE("normalize_doc_sparse backward follows the constant-factor rule") {
  // The degree scalings are constants in backward: the gradient that reaches
  // the raw adjacency value a_ij is g_ij * f_i * f_j. Reassemble that chain
  // by hand and compare with the tape.
  Rng rng(89);
  Matrix xv = random_matrix(4, 3, rng, 0.3, 1.0);
  Matrix hv = random_matrix(4, 2, rng);
  Matrix w = random_matrix(4, 2, rng);
  double delta = 0.4;

  Parameter x("x", xv);
  x.zero_grad();
  {
    Tape t;
    DiffTensor xx = t.param(x);
    DiffSparse a = thresholded_gram(xx, delta, false);
    DiffTensor out = spmm(normalize_doc_sparse(a), t.constant(hv));
    t.backward(project(t, out, w));
  }

  // reference: dense reconstruction of the same convention
  Matrix gram = matmul(xv, transpose(xv));
  std::size_t n = 4;
  Matrix a(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (gram(i, j) >= delta) a(i, j) = gram(i, j);
  std::vector<double> f(n);
  for (std::size_t i = 0; i < n; ++i) {
    double deg = 1.0;
    for (std::size_t j = 0; j < n; ++j) deg += a(i, j);
    f[i] = 1.0 / std::sqrt(deg);
  }
  // upstream on the normalized values: gN_ij = sum_c w(i,c) h(j,c)
  Matrix gn(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t c = 0; c < 2; ++c) acc += w(i, c) * hv(j, c);
      gn(i, j) = acc;
    }
  // gradient on kept raw entries, then into x through both sides
  Matrix want(n, 3);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (a(i, j) == 0.0 && i != j) continue;
      if (gram(i, j) < delta && i == j) continue;  // diagonal not kept
      double ga = gn(i, j) * f[i] * f[j];
      for (std::size_t c = 0; c < 3; ++c) {
        want(i, c) += ga * xv(j, c);
        want(j, c) += ga * xv(i, c);
      }
    }
  for (std::size_t k = 0; k < want.size(); ++k)
    CHECK(std::fabs(x.grad.data()[k] - want.data()[k]) < 1e-12);
}

TEST_CASE("row_normalize_sparse rows sum to one and backward scales by 1/rowsum") {
  Rng rng(97);
  Matrix xv = random_matrix(4, 3, rng, 0.3, 1.0);
  Matrix hv = random_matrix(4, 2, rng);
  Matrix w = random_matrix(4, 2, rng);
  double delta = 0.4;

  Parameter x("x", xv);
  x.zero_grad();
  std::vector<double> kept_sums;
  {
    Tape t;
    DiffTensor xx = t.param(x);
    DiffSparse a = thresholded_gram(xx, delta, false);
    DiffSparse r = row_normalize_sparse(a);
    const SparsePattern& pat = r.pattern();
    for (std::size_t i = 0; i < pat.dim; ++i) {
      double s = 0.0;
      for (std::size_t k = pat.row_ptr[i]; k < pat.row_ptr[i + 1]; ++k) s += r.values()[k];
      if (pat.row_ptr[i] != pat.row_ptr[i + 1])
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
    t.backward(project(t, spmm(r, t.constant(hv)), w));
  }

  Matrix gram = matmul(xv, transpose(xv));
  std::size_t n = 4;
  Matrix a(n, n);
  std::vector<double> rowsum(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (gram(i, j) >= delta) {
        a(i, j) = gram(i, j);
        rowsum[i] += gram(i, j);
      }
  Matrix want(n, 3);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (a(i, j) == 0.0) continue;
      double gn = 0.0;
      for (std::size_t c = 0; c < 2; ++c) gn += w(i, c) * hv(j, c);
      double ga = gn / rowsum[i];
      for (std::size_t c = 0; c < 3; ++c) {
        want(i, c) += ga * xv(j, c);
        want(j, c) += ga * xv(i, c);
      }
    }
  for (std::size_t k = 0; k < want.size(); ++k)
    CHECK(std::fabs(x.grad.data()[k] - want.data()[k]) < 1e-12);
}

TEST_CASE("tape misuse is rejected") {
  Rng rng(101);
  Matrix xv = random_matrix(2, 2, rng);
  Parameter p("p", xv);

  Tape t;
  DiffTensor loss = sum_all(t.param(p));
  t.backward(loss);
  CHECK_THROWS_AS(t.backward(loss), std::runtime_error);  // one sweep per tape

  Tape t2;
  CHECK_THROWS_AS(t2.backward(t2.param(p)), std::runtime_error);  // non-scalar loss

  Matrix bad(1, 1);
  bad(0, 0) = std::numeric_limits<double>::quiet_NaN();
  Tape t3;
  CHECK_THROWS_AS(t3.constant(bad), std::runtime_error);

  Tape t4, t5;
  DiffTensor a = t4.constant(xv);
  DiffTensor b = t5.constant(xv);
  CHECK_THROWS_AS(add(a, b), std::runtime_error);  // cross-tape
}

TEST_CASE("parameter gradients accumulate across leases, constants have none") {
  Matrix xv(1, 2);
  xv(0, 0) = 2.0;
  xv(0, 1) = -1.0;
  Parameter p("p", xv);
  p.zero_grad();
  {
    Tape t;
    t.backward(sum_all(t.param(p)));
  }
  {
    Tape t;
    t.backward(sum_all(t.param(p)));
  }
  CHECK(p.grad(0, 0) == 2.0);  // two backward passes, no zero_grad between

  Tape t;
  DiffTensor c = t.constant(xv);
  CHECK_THROWS_AS(c.grad(), std::runtime_error);
}

TEST_CASE("adam first step approximates -lr * sign(g)") {
  Matrix v0(2, 2);
  v0(0, 0) = 1.0;
  v0(0, 1) = -2.0;
  v0(1, 0) = 0.5;
  v0(1, 1) = 3.0;
  Parameter p("p", v0);
  p.grad(0, 0) = 0.7;
  p.grad(0, 1) = -1.3;
  p.grad(1, 0) = 2.0;
  p.grad(1, 1) = -0.04;

  AdamConfig cfg;
  AdamState opt({&p}, cfg);
  opt.step();
  CHECK(opt.t() == 1);
  for (std::size_t k = 0; k < p.value.size(); ++k) {
    double g = p.grad.data()[k];
    double expect = v0.data()[k] - cfg.lr * (g > 0 ? 1.0 : -1.0);
    CHECK(std::fabs(p.value.data()[k] - expect) <= cfg.lr * 1e-6);
  }
}

TEST_CASE("adam zero gradient leaves parameters unchanged") {
  Matrix v0(1, 3, 0.25);
  Parameter p("p", v0);
  p.zero_grad();
  AdamState opt({&p});
  opt.step();
  opt.step();
  CHECK(opt.t() == 2);
  CHECK(p.value == v0);
}

TEST_CASE("adam two steps match a standalone reference") {
  Rng rng(103);
  Matrix v0 = random_matrix(3, 2, rng);
  Matrix g = random_matrix(3, 2, rng);
  Parameter p("p", v0);
  AdamConfig cfg;
  AdamState opt({&p});

  // independent transcription
  Matrix ref = v0;
  Matrix m(3, 2), v(3, 2);
  for (int t = 1; t <= 2; ++t) {
    for (std::size_t k = 0; k < ref.size(); ++k) {
      double gk = g.data()[k];
      m.data()[k] = 0.9 * m.data()[k] + 0.1 * gk;
      v.data()[k] = 0.999 * v.data()[k] + 0.001 * gk * gk;
      double mhat = m.data()[k] / (1.0 - std::pow(0.9, t));
      double vhat = v.data()[k] / (1.0 - std::pow(0.999, t));
      ref.data()[k] -= 0.001 * mhat / (std::sqrt(vhat) + 1e-8);
    }
  }

  p.grad = g;
  opt.step();
  p.grad = g;
  opt.step();
  for (std::size_t k = 0; k < ref.size(); ++k)
    CHECK(std::fabs(p.value.data()[k] - ref.data()[k]) < 1e-12);
}

TEST_CASE("normalize_adjacency analytic anchors") {
  // isolated node: row reduces to the lone self-loop entry 1
  SymmetricSparseMatrix iso = SymmetricSparseMatrix::from_upper(3, {{0, 1, 1.0}});
  Matrix ni = normalize_adjacency(iso).to_dense();
  CHECK(ni(2, 2) == doctest::Approx(1.0));
  CHECK(ni(2, 0) == 0.0);

  // 2-node graph with unit edge: everything 0.5
  SymmetricSparseMatrix two = SymmetricSparseMatrix::from_upper(2, {{0, 1, 1.0}});
  Matrix nt = normalize_adjacency(two).to_dense();
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j) CHECK(nt(i, j) == doctest::Approx(0.5).epsilon(1e-15));

  // ring: every node has degree 2, all nonzero entries 1/3
  std::vector<Triplet> ring;
  std::size_t n = 6;
  for (std::size_t i = 0; i + 1 < n; ++i) ring.push_back({i, i + 1, 1.0});
  ring.push_back({0, n - 1, 1.0});
  Matrix nr = normalize_adjacency(SymmetricSparseMatrix::from_upper(n, std::move(ring))).to_dense();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (nr(i, j) != 0.0) CHECK(nr(i, j) == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
}

TEST_CASE("graph dump round trip is bit exact") {
  Rng rng(107);
  SymmetricSparseMatrix a = random_symmetric(9, 0.3, rng);
  std::stringstream ss;
  write_graph_dump(ss, a);
  SymmetricSparseMatrix back = read_graph_dump(ss);
  CHECK(a == back);

  CsrMatrix pool = CsrMatrix::from_triplets(
      3, 5, {{0, 1, 1.0 / 3.0}, {0, 4, 2.0 / 3.0}, {2, 0, 0.1234567890123456789}});
  std::stringstream s2;
  write_csr_dump(s2, pool);
  CsrMatrix back2 = read_csr_dump(s2);
  CHECK(pool == back2);
}
