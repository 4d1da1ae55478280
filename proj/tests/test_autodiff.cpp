// Tensor semantics, forward-value oracles for every primitive, exact backward
// checks on small cases, and the error contract. Finite-difference coverage
// lives in test_gradcheck.cpp.

#include <cmath>
#include <numbers>
#include <vector>

#include "clipfit/errors.hpp"
#include "clipfit/ops.hpp"
#include "clipfit/rng.hpp"
#include "clipfit/tensor.hpp"
#include "doctest.h"

using namespace clipfit;

namespace {

Tensor filled(Rng& rng, Shape shape, bool req = true) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i)
    t.data()[i] = 2.0 * rng.uniform() - 1.0;
  t.set_requires_grad(req);
  return t;
}

}  // namespace

TEST_CASE("tensor construction and factories") {
  Tensor z({2, 3});
  CHECK(z.numel() == 6);
  CHECK(z.shape() == Shape{2, 3});
  for (std::size_t i = 0; i < 6; ++i) CHECK(z.data()[i] == 0.0);

  Tensor f = Tensor::full({4}, 2.5);
  for (std::size_t i = 0; i < 4; ++i) CHECK(f.at(i) == 2.5);

  Tensor s = Tensor::scalar(-3.0);
  CHECK(s.item() == -3.0);
  CHECK(s.shape() == Shape{1});

  Tensor r = Tensor::row({1.0, 2.0, 3.0});
  CHECK(r.shape() == Shape{3});

  Tensor m = Tensor::matrix(2, 2, {1.0, 2.0, 3.0, 4.0});
  CHECK(m.at(1, 0) == 3.0);

  CHECK(!Tensor().defined());
  CHECK(shape_numel({2, 3, 4}) == 24);
  CHECK(shape_str({2, 3}) == "[2x3]");
}

TEST_CASE("tensor copies are shallow, clone is deep") {
  Tensor a = Tensor::row({1.0, 2.0});
  Tensor b = a;  // shallow
  b.data()[0] = 9.0;
  CHECK(a.at(0) == 9.0);
  CHECK(a.same_storage(b));

  Tensor c = a.clone();
  CHECK(!c.same_storage(a));
  c.data()[0] = 5.0;
  CHECK(a.at(0) == 9.0);
}

TEST_CASE("gradient buffer lifecycle") {
  Tensor a = Tensor::row({1.0, 2.0});
  CHECK(!a.has_grad());
  CHECK_THROWS(a.grad());
  const double g[2] = {0.5, 0.25};
  a.accumulate_grad(g, 2);
  CHECK(a.has_grad());
  CHECK(a.grad()[0] == 0.5);
  a.accumulate_grad(g, 2);  // += semantics
  CHECK(a.grad()[0] == 1.0);
  a.zero_grad();
  CHECK(!a.has_grad());
}

TEST_CASE("ops without a tape produce plain values") {
  Rng rng(7);
  Tensor a = filled(rng, {2, 2});
  Tensor b = filled(rng, {2, 2});
  Tensor y = ops::add(a, b, nullptr);
  CHECK(!y.requires_grad());
}

TEST_CASE("tape records only when an input requires gradients") {
  Rng rng(7);
  Tape tape;
  Tensor a = filled(rng, {2, 2}, false);
  Tensor b = filled(rng, {2, 2}, false);
  ops::add(a, b, &tape);
  CHECK(tape.size() == 0);

  b.set_requires_grad(true);
  Tensor y = ops::add(a, b, &tape);
  CHECK(tape.size() == 1);
  CHECK(y.requires_grad());

  // Backward from a loss that does not require gradients is a no-op.
  Tape t2;
  Tensor cst = Tensor::scalar(1.0);
  CHECK_NOTHROW(t2.backward(cst));
}

TEST_CASE("elementwise add/sub/mul forward and exact backward") {
  Tape tape;
  Tensor a = Tensor::row({1.0, -2.0, 3.0});
  Tensor b = Tensor::row({4.0, 5.0, -6.0});
  a.set_requires_grad(true);
  b.set_requires_grad(true);

  Tensor s = ops::add(a, b, &tape);
  CHECK(s.at(0) == 5.0);
  CHECK(s.at(2) == -3.0);

  Tensor d = ops::sub(a, b, &tape);
  CHECK(d.at(1) == -7.0);

  Tensor p = ops::mul(a, b, &tape);
  CHECK(p.at(2) == -18.0);

  // loss = sum(a*b): da = b, db = a, exactly.
  Tape t2;
  Tensor loss = ops::sum(ops::mul(a, b, &t2), &t2);
  t2.backward(loss);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(a.grad()[i] == b.at(i));
    CHECK(b.grad()[i] == a.at(i));
  }
}

TEST_CASE("backward accumulates across calls") {
  Tensor a = Tensor::row({1.0, 2.0});
  a.set_requires_grad(true);
  Tape tape;
  Tensor loss = ops::sum(a, &tape);
  tape.backward(loss);
  CHECK(a.grad()[0] == 1.0);
  // backward seeds the loss grad with += 1, so a second replay starts from a
  // seed of 2 and the leaf accumulates 1 + 2.
  tape.backward(loss);
  CHECK(a.grad()[0] == 3.0);
}

TEST_CASE("scale_add and mul_scalar") {
  Tensor x = Tensor::row({1.0, 2.0});
  x.set_requires_grad(true);
  Tape tape;
  Tensor y = ops::scale_add(x, 2.0, -1.0, &tape);
  CHECK(y.at(0) == 1.0);
  CHECK(y.at(1) == 3.0);
  Tensor loss = ops::sum(y, &tape);
  tape.backward(loss);
  CHECK(x.grad()[0] == 2.0);  // d(alpha*x+beta)/dx = alpha

  Tensor s = Tensor::scalar(3.0);
  s.set_requires_grad(true);
  Tape t2;
  Tensor z = ops::mul_scalar(x, s, &t2);
  CHECK(z.at(1) == 6.0);
  Tensor l2 = ops::sum(z, &t2);
  t2.backward(l2);
  CHECK(s.grad()[0] == 3.0);  // sum(x)
  CHECK_THROWS_AS(ops::mul_scalar(x, Tensor::row({1.0, 2.0})), DimensionError);
}

TEST_CASE("exp matches std::exp elementwise") {
  Tensor x = Tensor::row({0.0, 1.0, -2.0});
  Tensor y = ops::exp(x);
  CHECK(y.at(0) == 1.0);
  CHECK(y.at(1) == doctest::Approx(std::exp(1.0)).epsilon(1e-15));
  CHECK(y.at(2) == doctest::Approx(std::exp(-2.0)).epsilon(1e-15));
}

TEST_CASE("matmul matches a naive triple loop") {
  Rng rng(11);
  const std::size_t m = 4, k = 3, n = 5;
  Tensor a = filled(rng, {m, k}, false);
  Tensor b = filled(rng, {k, n}, false);
  Tensor c = ops::matmul(a, b);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) acc += a.at(i, t) * b.at(t, j);
      CHECK(c.at(i, j) == doctest::Approx(acc).epsilon(1e-14));
    }
  }
  CHECK_THROWS_AS(ops::matmul(a, a), DimensionError);        // inner mismatch
  CHECK_THROWS_AS(ops::matmul(a, Tensor::row({1.0, 2.0, 3.0})),
                  DimensionError);                            // not 2-D
}

TEST_CASE("matmul backward: dA = W B^T and dB = A^T W for loss sum(W*AB)") {
  Rng rng(13);
  const std::size_t m = 3, k = 4, n = 2;
  Tensor a = filled(rng, {m, k});
  Tensor b = filled(rng, {k, n});
  Tensor w = filled(rng, {m, n}, false);
  Tape tape;
  Tensor loss = ops::sum(ops::mul(ops::matmul(a, b, &tape), w, &tape), &tape);
  tape.backward(loss);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t t = 0; t < k; ++t) {
      double expect = 0.0;
      for (std::size_t j = 0; j < n; ++j) expect += w.at(i, j) * b.at(t, j);
      CHECK(a.grad()[i * k + t] == doctest::Approx(expect).epsilon(1e-12));
    }
  }
  for (std::size_t t = 0; t < k; ++t) {
    for (std::size_t j = 0; j < n; ++j) {
      double expect = 0.0;
      for (std::size_t i = 0; i < m; ++i) expect += a.at(i, t) * w.at(i, j);
      CHECK(b.grad()[t * n + j] == doctest::Approx(expect).epsilon(1e-12));
    }
  }
}

TEST_CASE("transpose, reshape, slicing, concat, select_row") {
  Tensor x = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  Tensor xt = ops::transpose(x);
  CHECK(xt.shape() == Shape{3, 2});
  CHECK(xt.at(2, 0) == 3.0);
  CHECK(xt.at(0, 1) == 4.0);

  Tensor r = ops::reshape(x, {3, 2});
  CHECK(r.at(1, 0) == 3.0);  // row-major reinterpretation
  CHECK_THROWS_AS(ops::reshape(x, {4, 2}), DimensionError);

  Tensor sc = ops::slice_cols(x, 1, 2);
  CHECK(sc.shape() == Shape{2, 2});
  CHECK(sc.at(0, 0) == 2.0);
  CHECK(sc.at(1, 1) == 6.0);
  CHECK_THROWS_AS(ops::slice_cols(x, 2, 2), DimensionError);

  Tensor cc = ops::concat_cols({x, sc});
  CHECK(cc.shape() == Shape{2, 5});
  CHECK(cc.at(1, 4) == 6.0);

  Tensor cr = ops::concat_rows({x, x});
  CHECK(cr.shape() == Shape{4, 3});
  CHECK(cr.at(3, 2) == 6.0);
  CHECK_THROWS_AS(ops::concat_rows(std::vector<Tensor>{x, sc}),
                  DimensionError);

  Tensor row = ops::select_row(x, 1);
  CHECK(row.shape() == Shape{3});
  CHECK(row.at(0) == 4.0);
  CHECK_THROWS_AS(ops::select_row(x, 2), IndexError);
}

TEST_CASE("slice and concat gradients land in the right places") {
  Tensor x = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  x.set_requires_grad(true);
  Tape tape;
  Tensor loss = ops::sum(ops::slice_cols(x, 1, 1, &tape), &tape);
  tape.backward(loss);
  const std::vector<double> expect = {0, 1, 0, 0, 1, 0};
  for (std::size_t i = 0; i < 6; ++i) CHECK(x.grad()[i] == expect[i]);
}

TEST_CASE("bias_add broadcasts over rows") {
  Tensor x = Tensor::matrix(2, 2, {1, 2, 3, 4});
  Tensor b = Tensor::row({10, 20});
  Tensor y = ops::bias_add(x, b);
  CHECK(y.at(0, 1) == 22.0);
  CHECK(y.at(1, 0) == 13.0);
  CHECK_THROWS_AS(ops::bias_add(x, Tensor::row({1, 2, 3})), DimensionError);

  b.set_requires_grad(true);
  Tape tape;
  Tensor loss = ops::sum(ops::bias_add(x, b, &tape), &tape);
  tape.backward(loss);
  CHECK(b.grad()[0] == 2.0);  // one per row
}

TEST_CASE("embedding_lookup gathers rows and accumulates repeated ids") {
  Tensor table = Tensor::matrix(5, 2, {0, 1, 10, 11, 20, 21, 30, 31, 40, 41});
  table.set_requires_grad(true);
  Tensor y = ops::embedding_lookup(table, {3, 0, 3});
  CHECK(y.shape() == Shape{3, 2});
  CHECK(y.at(0, 1) == 31.0);
  CHECK(y.at(1, 0) == 0.0);
  CHECK_THROWS_AS(ops::embedding_lookup(table, {5}), VocabularyError);

  Tape tape;
  Tensor loss = ops::sum(ops::embedding_lookup(table, {3, 0, 3}, &tape), &tape);
  tape.backward(loss);
  CHECK(table.grad()[3 * 2 + 0] == 2.0);  // id 3 used twice
  CHECK(table.grad()[0] == 1.0);
  CHECK(table.grad()[2] == 0.0);  // id 1 untouched
}

TEST_CASE("layer_norm matches the naive per-row formula") {
  Rng rng(17);
  const std::size_t rows = 3, d = 5;
  const double eps = 1e-5;
  Tensor x = filled(rng, {rows, d}, false);
  Tensor gain = filled(rng, {d}, false);
  Tensor bias = filled(rng, {d}, false);
  Tensor y = ops::layer_norm(x, gain, bias, eps);
  for (std::size_t r = 0; r < rows; ++r) {
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += x.at(r, j);
    mu /= d;
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      var += (x.at(r, j) - mu) * (x.at(r, j) - mu);
    }
    var /= d;
    for (std::size_t j = 0; j < d; ++j) {
      const double expect =
          (x.at(r, j) - mu) / std::sqrt(var + eps) * gain.at(j) + bias.at(j);
      CHECK(y.at(r, j) == doctest::Approx(expect).epsilon(1e-12));
    }
  }
}

TEST_CASE("gelu matches the tanh approximation") {
  Tensor x = Tensor::row({-2.0, -0.5, 0.0, 0.5, 2.0});
  Tensor y = ops::gelu(x);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double v = x.at(i);
    const double inner =
        std::sqrt(2.0 / std::numbers::pi) * (v + 0.044715 * v * v * v);
    const double expect = 0.5 * v * (1.0 + std::tanh(inner));
    CHECK(y.at(i) == doctest::Approx(expect).epsilon(1e-14));
  }
  CHECK(y.at(2) == 0.0);
}

TEST_CASE("softmax_rows produces normalized rows, stable under shift") {
  Tensor x = Tensor::matrix(2, 3, {1, 2, 3, 1001, 1002, 1003});
  Tensor y = ops::softmax_rows(x);
  for (std::size_t r = 0; r < 2; ++r) {
    double total = 0.0;
    for (std::size_t j = 0; j < 3; ++j) total += y.at(r, j);
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  }
  // Shift invariance: both rows are the same logits up to a constant.
  for (std::size_t j = 0; j < 3; ++j) {
    CHECK(y.at(0, j) == doctest::Approx(y.at(1, j)).epsilon(1e-12));
  }
}

TEST_CASE("softmax_cross_entropy forward and backward oracles") {
  Tensor logits = Tensor::matrix(2, 3, {0.5, -1.0, 2.0, 1.0, 1.0, 1.0});
  logits.set_requires_grad(true);
  const std::vector<int> labels = {2, 0};

  // Naive: mean over rows of log-sum-exp minus the true logit.
  double expect = 0.0;
  for (std::size_t r = 0; r < 2; ++r) {
    double mx = logits.at(r, 0);
    for (std::size_t j = 1; j < 3; ++j) mx = std::max(mx, logits.at(r, j));
    double lse = 0.0;
    for (std::size_t j = 0; j < 3; ++j) lse += std::exp(logits.at(r, j) - mx);
    expect += mx + std::log(lse) -
              logits.at(r, static_cast<std::size_t>(labels[r]));
  }
  expect /= 2.0;

  Tape tape;
  Tensor loss = ops::softmax_cross_entropy(logits, labels, &tape);
  CHECK(loss.item() == doctest::Approx(expect).epsilon(1e-12));

  tape.backward(loss);
  // d/dlogits = (softmax - onehot) / batch.
  Tensor sm = ops::softmax_rows(logits);
  for (std::size_t r = 0; r < 2; ++r) {
    for (std::size_t j = 0; j < 3; ++j) {
      const double onehot = (static_cast<int>(j) == labels[r]) ? 1.0 : 0.0;
      CHECK(logits.grad()[r * 3 + j] ==
            doctest::Approx((sm.at(r, j) - onehot) / 2.0).epsilon(1e-12));
    }
  }

  CHECK_THROWS_AS(ops::softmax_cross_entropy(logits, {0, 3}), IndexError);
  CHECK_THROWS_AS(ops::softmax_cross_entropy(logits, {0}), DimensionError);
}

TEST_CASE("l2_normalize_rows yields unit rows and rejects zero rows") {
  Tensor x = Tensor::matrix(2, 2, {3, 4, 0.3, -0.4});
  Tensor y = ops::l2_normalize_rows(x);
  CHECK(y.at(0, 0) == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(y.at(0, 1) == doctest::Approx(0.8).epsilon(1e-15));
  for (std::size_t r = 0; r < 2; ++r) {
    const double n =
        y.at(r, 0) * y.at(r, 0) + y.at(r, 1) * y.at(r, 1);
    CHECK(n == doctest::Approx(1.0).epsilon(1e-12));
  }
  Tensor z = Tensor::matrix(2, 2, {1, 1, 0, 0});
  CHECK_THROWS_AS(ops::l2_normalize_rows(z), DegenerateInputError);
}

TEST_CASE("cosine_similarity is exactly 1 on identical vectors") {
  Tensor u = Tensor::row({0.3, -1.7, 2.9});
  CHECK(ops::cosine_similarity(u, u).item() == 1.0);

  Tensor v = Tensor::row({1.0, 0.0, 0.0});
  Tensor w = Tensor::row({0.0, 1.0, 0.0});
  CHECK(ops::cosine_similarity(v, w).item() == 0.0);

  Tensor nv = ops::scale_add(v, -1.0, 0.0);
  CHECK(ops::cosine_similarity(v, nv).item() ==
        doctest::Approx(-1.0).epsilon(1e-15));

  CHECK_THROWS_AS(ops::cosine_similarity(v, Tensor::row({0.0, 0.0, 0.0})),
                  DegenerateInputError);
  CHECK_THROWS_AS(ops::cosine_similarity(v, Tensor::row({1.0, 2.0})),
                  DimensionError);
}

TEST_CASE("sum and mean reduce to [1] with uniform gradients") {
  Tensor x = Tensor::matrix(2, 2, {1, 2, 3, 4});
  x.set_requires_grad(true);
  CHECK(ops::sum(x).item() == 10.0);
  CHECK(ops::mean(x).item() == 2.5);

  Tape tape;
  Tensor loss = ops::mean(x, &tape);
  tape.backward(loss);
  for (std::size_t i = 0; i < 4; ++i) CHECK(x.grad()[i] == 0.25);
}

TEST_CASE("multi_head_attention matches a naive reference") {
  Rng rng(23);
  const std::size_t T = 3, w = 4, heads = 2, dh = w / heads;
  Tensor x = filled(rng, {T, w}, false);
  Tensor qkv_w = filled(rng, {w, 3 * w}, false);
  Tensor qkv_b = filled(rng, {3 * w}, false);
  Tensor out_w = filled(rng, {w, w}, false);
  Tensor out_b = filled(rng, {w}, false);

  Tensor y = ops::multi_head_attention(x, qkv_w, qkv_b, out_w, out_b, heads);
  CHECK(y.shape() == Shape{T, w});

  // Naive reference with plain loops.
  std::vector<double> qkv(T * 3 * w);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t j = 0; j < 3 * w; ++j) {
      double acc = qkv_b.at(j);
      for (std::size_t i = 0; i < w; ++i) acc += x.at(t, i) * qkv_w.at(i, j);
      qkv[t * 3 * w + j] = acc;
    }
  }
  std::vector<double> concat(T * w);
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t t = 0; t < T; ++t) {
      // scores over all source positions for head h, query position t
      std::vector<double> score(T);
      double mx = -1e300;
      for (std::size_t s = 0; s < T; ++s) {
        double dot = 0.0;
        for (std::size_t i = 0; i < dh; ++i) {
          const double q = qkv[t * 3 * w + h * dh + i];
          const double k = qkv[s * 3 * w + w + h * dh + i];
          dot += q * k;
        }
        score[s] = dot / std::sqrt(static_cast<double>(dh));
        mx = std::max(mx, score[s]);
      }
      double denom = 0.0;
      for (std::size_t s = 0; s < T; ++s) {
        score[s] = std::exp(score[s] - mx);
        denom += score[s];
      }
      for (std::size_t i = 0; i < dh; ++i) {
        double acc = 0.0;
        for (std::size_t s = 0; s < T; ++s) {
          acc += score[s] / denom * qkv[s * 3 * w + 2 * w + h * dh + i];
        }
        concat[t * w + h * dh + i] = acc;
      }
    }
  }
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t j = 0; j < w; ++j) {
      double acc = out_b.at(j);
      for (std::size_t i = 0; i < w; ++i) {
        acc += concat[t * w + i] * out_w.at(i, j);
      }
      CHECK(y.at(t, j) == doctest::Approx(acc).epsilon(1e-11));
    }
  }
}

TEST_CASE("gradients flow through a composite graph") {
  Rng rng(29);
  Tensor a = filled(rng, {3, 4});
  Tensor b = filled(rng, {4, 2});
  Tape tape;
  Tensor loss = ops::mean(ops::gelu(ops::matmul(a, b, &tape), &tape), &tape);
  tape.backward(loss);
  CHECK(a.has_grad());
  CHECK(b.has_grad());
  tape.clear();
  CHECK(tape.size() == 0);
}
