#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mtp/rng.hpp"
#include "mtp/tensor.hpp"

#include <cmath>
#include <random>
#include <vector>

using namespace mtp;

namespace {

Mat random_mat(Index r, Index c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Mat m(r, c);
  for (Index i = 0; i < r; ++i)
    for (Index j = 0; j < c; ++j) m(i, j) = n(rng);
  return m;
}

// Straight-line reference attention, written independently of the library op:
// per group, per head, full score matrix + explicit causal mask.
Mat naive_attention(const Mat& q, const Mat& k, const Mat& v, int n_heads,
                    Index group) {
  const Index d = q.cols();
  const Index dh = d / n_heads;
  Mat out = Mat::Zero(q.rows(), d);
  for (Index g0 = 0; g0 < q.rows(); g0 += group) {
    for (int h = 0; h < n_heads; ++h) {
      for (Index i = 0; i < group; ++i) {
        // scores over rows 0..i of this group
        std::vector<double> s(i + 1);
        double mx = -1e300;
        for (Index j = 0; j <= i; ++j) {
          double dot = 0;
          for (Index c = 0; c < dh; ++c)
            dot += q(g0 + i, h * dh + c) * k(g0 + j, h * dh + c);
          s[j] = dot / std::sqrt(static_cast<double>(dh));
          mx = std::max(mx, s[j]);
        }
        double z = 0;
        for (Index j = 0; j <= i; ++j) z += std::exp(s[j] - mx);
        for (Index j = 0; j <= i; ++j) {
          const double p = std::exp(s[j] - mx) / z;
          for (Index c = 0; c < dh; ++c)
            out(g0 + i, h * dh + c) += p * v(g0 + j, h * dh + c);
        }
      }
    }
  }
  return out;
}

}  // namespace

TEST_CASE("matmul forward and backward match hand-computed values") {
  Mat a(2, 2), b(2, 2);
  a << 1, 2, 3, 4;
  b << 5, 6, 7, 8;
  Tensor ta(a, true), tb(b, true);
  Tensor c = matmul(ta, tb);
  CHECK(c.value()(0, 0) == 19);
  CHECK(c.value()(0, 1) == 22);
  CHECK(c.value()(1, 0) == 43);
  CHECK(c.value()(1, 1) == 50);

  // loss = sum of entries, so dA = 1*B^T and dB = A^T*1.
  Tensor ones_l(Mat::Ones(1, 2)), ones_r(Mat::Ones(2, 1));
  Tensor loss = matmul(matmul(ones_l, matmul(ta, tb)), ones_r);
  ta.zero_grad();
  tb.zero_grad();
  backward(loss);
  Mat da(2, 2), db(2, 2);
  da << 11, 15, 11, 15;  // ones * B^T
  db << 4, 4, 6, 6;      // A^T * ones
  CHECK((ta.grad() - da).cwiseAbs().maxCoeff() == 0.0);
  CHECK((tb.grad() - db).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("matmul_bt equals matmul against the transposed value") {
  auto rng = make_rng(1, SeedStream::kInit, 0);
  Mat a = random_mat(3, 4, rng), b = random_mat(5, 4, rng);
  Tensor ta(a), tb(b);
  Mat direct = matmul_bt(ta, tb).value();
  Mat ref = a * b.transpose();
  CHECK((direct - ref).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("softmax matches frozen values and rows sum to one") {
  Mat x(1, 3);
  x << 1, 2, 3;
  Mat p = softmax_rows(Tensor(x)).value();
  // exp(k)/ (e^1+e^2+e^3), evaluated independently and frozen
  CHECK(p(0, 0) == doctest::Approx(0.09003057317038046).epsilon(1e-12));
  CHECK(p(0, 1) == doctest::Approx(0.24472847105479767).epsilon(1e-12));
  CHECK(p(0, 2) == doctest::Approx(0.6652409557748219).epsilon(1e-12));

  auto rng = make_rng(2, SeedStream::kInit, 0);
  for (int it = 0; it < 20; ++it) {
    Mat m = random_mat(7, 11, rng, 5.0);
    Mat sm = softmax_rows(Tensor(m)).value();
    for (Index i = 0; i < sm.rows(); ++i) {
      CHECK(std::abs(sm.row(i).sum() - 1.0) < 1e-12);
      CHECK(sm.row(i).minCoeff() >= 0.0);
    }
  }
}

TEST_CASE("softmax is shift invariant") {
  auto rng = make_rng(3, SeedStream::kInit, 0);
  Mat m = random_mat(4, 6, rng, 3.0);
  Mat shifted = m;
  shifted.array() += 123.0;
  Mat a = softmax_rows(Tensor(m)).value();
  Mat b = softmax_rows(Tensor(shifted)).value();
  CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("layer_norm normalizes rows to zero mean / unit variance") {
  Mat x(1, 4);
  x << 1, 2, 3, 4;
  Tensor gain(Mat::Ones(1, 4)), bias(Mat::Zero(1, 4));
  Mat y = layer_norm(Tensor(x), gain, bias, 0.0).value();
  // (x - 2.5) / sqrt(1.25), frozen
  CHECK(y(0, 0) == doctest::Approx(-1.3416407864998738).epsilon(1e-12));
  CHECK(y(0, 1) == doctest::Approx(-0.4472135954999579).epsilon(1e-12));
  CHECK(y(0, 2) == doctest::Approx(0.4472135954999579).epsilon(1e-12));
  CHECK(y(0, 3) == doctest::Approx(1.3416407864998738).epsilon(1e-12));
}

TEST_CASE("cross_entropy on uniform logits is log V") {
  Mat logits = Mat::Zero(1, 4);
  Tensor t(logits, true);
  Tensor l = cross_entropy(t, 2);
  CHECK(l.item() == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  backward(l);
  // d/dlogits = softmax - onehot = 0.25 everywhere except 0.25-1 at target
  CHECK(t.grad()(0, 2) == doctest::Approx(-0.75).epsilon(1e-12));
  CHECK(t.grad()(0, 0) == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("cross_entropy_rows: per-row values, weights, zero-weight rows") {
  auto rng = make_rng(4, SeedStream::kInit, 0);
  Mat logits = random_mat(3, 5, rng);
  Tensor t(logits, true);
  std::vector<int> targets{1, 4, 0};
  std::vector<double> weights{0.5, 0.0, 2.0};
  RowLosses rl = cross_entropy_rows(t, targets, weights);
  double expect = 0;
  for (int i = 0; i < 3; ++i) {
    Mat row = logits.row(i);
    double mx = row.maxCoeff();
    double z = (row.array() - mx).exp().sum();
    double nll = -(row(0, targets[i]) - mx - std::log(z));
    CHECK(rl.per_row[i] == doctest::Approx(nll).epsilon(1e-12));
    expect += weights[i] * nll;
  }
  CHECK(rl.total.item() == doctest::Approx(expect).epsilon(1e-12));
  backward(rl.total);
  // zero-weight row contributes no gradient
  CHECK(t.grad().row(1).cwiseAbs().maxCoeff() == 0.0);
  CHECK(t.grad().row(0).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("gradients accumulate additively until zero_grad") {
  Mat a(1, 2);
  a << 2, 3;
  Tensor ta(a, true);
  Tensor loss = matmul(ta, Tensor(Mat::Ones(2, 1)));
  backward(loss);
  Mat g1 = ta.grad();
  backward(loss);
  CHECK((ta.grad() - 2 * g1).cwiseAbs().maxCoeff() < 1e-12);
  ta.zero_grad();
  backward(loss);
  CHECK((ta.grad() - g1).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("causal_attention matches a naive reference, incl. groups") {
  auto rng = make_rng(5, SeedStream::kInit, 0);
  for (int n_heads : {1, 2, 4}) {
    const Index group = 5, n_groups = 3, d = 8;
    Mat q = random_mat(n_groups * group, d, rng);
    Mat k = random_mat(n_groups * group, d, rng);
    Mat v = random_mat(n_groups * group, d, rng);
    Mat got = causal_attention(Tensor(q), Tensor(k), Tensor(v), n_heads, group)
                  .value();
    Mat want = naive_attention(q, k, v, n_heads, group);
    CHECK((got - want).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("causal_attention row 0 is exactly v row 0") {
  auto rng = make_rng(6, SeedStream::kInit, 0);
  Mat q = random_mat(4, 4, rng), k = random_mat(4, 4, rng),
      v = random_mat(4, 4, rng);
  Mat got = causal_attention(Tensor(q), Tensor(k), Tensor(v), 2, 4).value();
  CHECK((got.row(0) - v.row(0)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("gather_rows backward scatter-adds repeated ids") {
  Mat table(3, 2);
  table << 1, 2, 3, 4, 5, 6;
  Tensor t(table, true);
  Tensor y = gather_rows(t, {2, 0, 2});
  CHECK(y.value()(0, 0) == 5);
  CHECK(y.value()(1, 1) == 2);
  Tensor loss = matmul(matmul(Tensor(Mat::Ones(1, 3)), y), Tensor(Mat::Ones(2, 1)));
  backward(loss);
  CHECK(t.grad()(2, 0) == 2.0);  // row 2 gathered twice
  CHECK(t.grad()(0, 0) == 1.0);
  CHECK(t.grad()(1, 0) == 0.0);
}

TEST_CASE("add_rows_weighted applies per-row weights") {
  Mat a = Mat::Zero(2, 2), b = Mat::Ones(2, 2);
  Tensor ta(a, true), tb(b, true);
  Tensor y = add_rows_weighted(ta, tb, {0.0, 2.5});
  CHECK(y.value()(0, 0) == 0.0);
  CHECK(y.value()(1, 1) == 2.5);
  Tensor loss = matmul(matmul(Tensor(Mat::Ones(1, 2)), y), Tensor(Mat::Ones(2, 1)));
  backward(loss);
  CHECK(tb.grad()(0, 0) == 0.0);
  CHECK(tb.grad()(1, 0) == 2.5);
  CHECK(ta.grad()(0, 0) == 1.0);
}

TEST_CASE("grad_check validates every op's backward pass") {
  auto rng = make_rng(7, SeedStream::kInit, 0);
  const Index n = 6, d = 8;

  Tensor x(random_mat(n, d, rng), true);
  Tensor w1(random_mat(d, d, rng, 0.5), true);
  Tensor b1(random_mat(1, d, rng, 0.1), true);
  Tensor g(Mat::Ones(1, d), true);
  Tensor b(Mat::Zero(1, d), true);
  Tensor wq(random_mat(d, d, rng, 0.5), true);
  Tensor wk(random_mat(d, d, rng, 0.5), true);
  Tensor wv(random_mat(d, d, rng, 0.5), true);
  Tensor s = Tensor::scalar(0.7, true);

  auto f = [&]() {
    Tensor h = layer_norm(x, g, b);
    Tensor q = matmul(h, wq), k = matmul(h, wk), v = matmul(h, wv);
    Tensor attn = causal_attention(q, k, v, 2, n);
    Tensor y = add(h, attn);
    y = gelu(add_row_broadcast(matmul(y, w1), b1));
    y = scale_by(y, s);
    y = add_rows_weighted(y, h, {1, 0, 1, 0, 1, 0});
    std::vector<int> targets{1, 3, 0, 2, 5, 7};
    std::vector<double> weights{0.5, 1.0, 0.0, 0.25, 1.0, 0.125};
    return cross_entropy_rows(y, targets, weights).total;
  };

  std::vector<Tensor> params{x, w1, b1, g, b, wq, wk, wv, s};
  CHECK(grad_check(f, params) < 1e-6);
}

TEST_CASE("grad_check flags a wrong gradient") {
  // A deliberately broken closure: gradient of x*x computed as if it were x.
  Tensor x = Tensor::scalar(1.5, true);
  auto f = [&]() {
    Tensor y(x.value().cwiseProduct(x.value()), true);
    y.node()->requires_grad = true;
    y.node()->parents = {x.node()};
    y.node()->backprop = [xv = x.node()](TensorNode& self) {
      xv->ensure_grad() += self.grad;  // wrong: should be 2*x*grad
    };
    return y;
  };
  std::vector<Tensor> params{x};
  CHECK(grad_check(f, params) > 1e-2);
}

TEST_CASE("concat_cols splits gradient between inputs") {
  auto rng = make_rng(8, SeedStream::kInit, 0);
  Tensor a(random_mat(3, 2, rng), true), b2(random_mat(3, 4, rng), true);
  Tensor y = concat_cols(a, b2);
  CHECK(y.cols() == 6);
  CHECK((y.value().block(0, 2, 3, 4) - b2.value()).cwiseAbs().maxCoeff() == 0.0);
  std::vector<Tensor> params{a, b2};
  auto f = [&]() {
    Tensor z = concat_cols(a, b2);
    return cross_entropy_rows(z, {0, 5, 3}, {1.0, 1.0, 1.0}).total;
  };
  CHECK(grad_check(f, params) < 1e-6);
}
