#pragma once

// Central-difference gradient verification for every differentiable
// primitive and both regularizer losses. Shared between the unit tests and
// the acceptance runner so they grade the exact same checks.
//
// Each case rebuilds its graph from scratch through a closure, reads the
// analytic gradients from one backward pass, then perturbs every input
// element with a centered step and compares. The reported error is
// norm-based per leaf:  ||g_analytic - g_fd|| / max(1e-8, ||g_a||, ||g_fd||),
// and a case's error is the worst leaf.

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "clipfit/model.hpp"
#include "clipfit/ops.hpp"
#include "clipfit/params.hpp"
#include "clipfit/rng.hpp"
#include "clipfit/train.hpp"

namespace clipfit::gradcheck {

struct CaseResult {
  std::string name;
  double rel_err = 0.0;
};

inline Tensor leaf(Rng& rng, Shape shape, double lo = -1.5, double hi = 1.5) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) {
    t.data()[i] = lo + (hi - lo) * rng.uniform();
  }
  t.set_requires_grad(true);
  return t;
}

// Redraws until every row stays clear of the zero vector (normalize/cosine
// preconditions).
inline Tensor leaf_rows_nonzero(Rng& rng, std::size_t rows, std::size_t cols) {
  Tensor t({rows, cols});
  for (std::size_t r = 0; r < rows; ++r) {
    for (;;) {
      double n2 = 0.0;
      for (std::size_t c = 0; c < cols; ++c) {
        const double v = -1.5 + 3.0 * rng.uniform();
        t.data()[r * cols + c] = v;
        n2 += v * v;
      }
      if (n2 > 0.25) break;
    }
  }
  t.set_requires_grad(true);
  return t;
}

// Fixed, non-differentiable weights turning any output into a scalar loss.
inline Tensor loss_weights(Rng& rng, const Shape& shape) {
  Tensor w(shape);
  for (std::size_t i = 0; i < w.numel(); ++i) {
    w.data()[i] = -1.0 + 2.0 * rng.uniform();
  }
  return w;
}

inline Tensor weighted(const Tensor& out, const Tensor& w, Tape* tape) {
  return ops::sum(ops::mul(out, w, tape), tape);
}

// Runs one case: analytic backward once, then centered differences over all
// leaves. `build` must re-derive the scalar loss from the live leaf values.
inline double check_case(const std::function<Tensor(Tape*)>& build,
                         std::vector<Tensor> leaves) {
  Tape tape;
  Tensor loss = build(&tape);
  for (Tensor& l : leaves) l.zero_grad();
  tape.backward(loss);

  double worst = 0.0;
  for (Tensor& l : leaves) {
    const std::size_t n = l.numel();
    std::vector<double> analytic(n, 0.0);
    if (l.has_grad()) analytic = l.grad();

    std::vector<double> fd(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double x0 = l.data()[i];
      const double h = 1e-5 * std::max(1.0, std::fabs(x0));
      l.data()[i] = x0 + h;
      const double fp = build(nullptr).item();
      l.data()[i] = x0 - h;
      const double fm = build(nullptr).item();
      l.data()[i] = x0;
      fd[i] = (fp - fm) / (2.0 * h);
    }

    double da = 0.0, dn = 0.0, dd = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      da += analytic[i] * analytic[i];
      dn += fd[i] * fd[i];
      const double d = analytic[i] - fd[i];
      dd += d * d;
    }
    const double denom =
        std::max(1e-8, std::max(std::sqrt(da), std::sqrt(dn)));
    worst = std::max(worst, std::sqrt(dd) / denom);
  }
  return worst;
}

// Every primitive plus the two regularizer losses, at miniature shapes.
inline std::vector<CaseResult> run_suite(std::uint64_t seed) {
  std::vector<CaseResult> results;
  Rng rng(seed);

  auto record = [&](const std::string& name,
                    const std::function<Tensor(Tape*)>& build,
                    std::vector<Tensor> leaves) {
    results.push_back({name, check_case(build, std::move(leaves))});
  };

  {
    Tensor a = leaf(rng, {2, 3}), b = leaf(rng, {2, 3});
    Tensor w = loss_weights(rng, {2, 3});
    record("add", [=](Tape* t) { return weighted(ops::add(a, b, t), w, t); },
           {a, b});
  }
  {
    Tensor a = leaf(rng, {2, 3}), b = leaf(rng, {2, 3});
    Tensor w = loss_weights(rng, {2, 3});
    record("sub", [=](Tape* t) { return weighted(ops::sub(a, b, t), w, t); },
           {a, b});
  }
  {
    Tensor a = leaf(rng, {2, 3}), b = leaf(rng, {2, 3});
    Tensor w = loss_weights(rng, {2, 3});
    record("mul", [=](Tape* t) { return weighted(ops::mul(a, b, t), w, t); },
           {a, b});
  }
  {
    Tensor x = leaf(rng, {2, 3});
    Tensor w = loss_weights(rng, {2, 3});
    record("scale_add",
           [=](Tape* t) {
             return weighted(ops::scale_add(x, 1.7, -0.3, t), w, t);
           },
           {x});
  }
  {
    Tensor x = leaf(rng, {2, 3}), s = leaf(rng, {1}, 0.5, 1.5);
    Tensor w = loss_weights(rng, {2, 3});
    record("mul_scalar",
           [=](Tape* t) { return weighted(ops::mul_scalar(x, s, t), w, t); },
           {x, s});
  }
  {
    Tensor x = leaf(rng, {2, 3}, -1.0, 1.0);
    Tensor w = loss_weights(rng, {2, 3});
    record("exp", [=](Tape* t) { return weighted(ops::exp(x, t), w, t); },
           {x});
  }
  {
    Tensor a = leaf(rng, {2, 3}), b = leaf(rng, {3, 4});
    Tensor w = loss_weights(rng, {2, 4});
    record("matmul",
           [=](Tape* t) { return weighted(ops::matmul(a, b, t), w, t); },
           {a, b});
  }
  {
    Tensor x = leaf(rng, {2, 3});
    Tensor w = loss_weights(rng, {3, 2});
    record("transpose",
           [=](Tape* t) { return weighted(ops::transpose(x, t), w, t); }, {x});
  }
  {
    Tensor x = leaf(rng, {2, 6});
    Tensor w = loss_weights(rng, {3, 4});
    record("reshape",
           [=](Tape* t) {
             return weighted(ops::reshape(x, {3, 4}, t), w, t);
           },
           {x});
  }
  {
    Tensor x = leaf(rng, {3, 5});
    Tensor w = loss_weights(rng, {3, 2});
    record("slice_cols",
           [=](Tape* t) {
             return weighted(ops::slice_cols(x, 1, 2, t), w, t);
           },
           {x});
  }
  {
    Tensor a = leaf(rng, {2, 2}), b = leaf(rng, {2, 3});
    Tensor w = loss_weights(rng, {2, 5});
    record("concat_cols",
           [=](Tape* t) {
             return weighted(ops::concat_cols({a, b}, t), w, t);
           },
           {a, b});
  }
  {
    Tensor a = leaf(rng, {2, 3}), b = leaf(rng, {1, 3});
    Tensor w = loss_weights(rng, {3, 3});
    record("concat_rows",
           [=](Tape* t) {
             return weighted(ops::concat_rows({a, b}, t), w, t);
           },
           {a, b});
  }
  {
    Tensor x = leaf(rng, {3, 4});
    Tensor w = loss_weights(rng, {4});
    record("select_row",
           [=](Tape* t) { return weighted(ops::select_row(x, 1, t), w, t); },
           {x});
  }
  {
    Tensor x = leaf(rng, {3, 4}), b = leaf(rng, {4});
    Tensor w = loss_weights(rng, {3, 4});
    record("bias_add",
           [=](Tape* t) { return weighted(ops::bias_add(x, b, t), w, t); },
           {x, b});
  }
  {
    Tensor table = leaf(rng, {5, 3});
    const std::vector<std::uint16_t> ids{1, 0, 4, 1};  // repeat tests +=
    Tensor w = loss_weights(rng, {4, 3});
    record("embedding_lookup",
           [=](Tape* t) {
             return weighted(ops::embedding_lookup(table, ids, t), w, t);
           },
           {table});
  }
  {
    Tensor x = leaf(rng, {3, 5});
    Tensor gain = leaf(rng, {5}, 0.5, 1.5);
    Tensor bias = leaf(rng, {5}, -0.5, 0.5);
    Tensor w = loss_weights(rng, {3, 5});
    record("layer_norm",
           [=](Tape* t) {
             return weighted(ops::layer_norm(x, gain, bias, kLayerNormEps, t),
                             w, t);
           },
           {x, gain, bias});
  }
  {
    Tensor x = leaf(rng, {2, 5}, -2.5, 2.5);
    Tensor w = loss_weights(rng, {2, 5});
    record("gelu", [=](Tape* t) { return weighted(ops::gelu(x, t), w, t); },
           {x});
  }
  {
    Tensor x = leaf(rng, {3, 4});
    Tensor w = loss_weights(rng, {3, 4});
    record("softmax_rows",
           [=](Tape* t) { return weighted(ops::softmax_rows(x, t), w, t); },
           {x});
  }
  {
    Tensor logits = leaf(rng, {3, 4});
    const std::vector<int> labels{0, 3, 2};
    record("softmax_cross_entropy",
           [=](Tape* t) { return ops::softmax_cross_entropy(logits, labels, t); },
           {logits});
  }
  {
    Tensor x = leaf_rows_nonzero(rng, 3, 4);
    Tensor w = loss_weights(rng, {3, 4});
    record("l2_normalize_rows",
           [=](Tape* t) { return weighted(ops::l2_normalize_rows(x, t), w, t); },
           {x});
  }
  {
    Tensor u = leaf_rows_nonzero(rng, 1, 5);
    Tensor v = leaf_rows_nonzero(rng, 1, 5);
    record("cosine_similarity",
           [=](Tape* t) {
             return ops::cosine_similarity(ops::reshape(u, {5}, t),
                                           ops::reshape(v, {5}, t), t);
           },
           {u, v});
  }
  {
    Tensor x = leaf(rng, {3, 4});
    record("sum", [=](Tape* t) { return ops::sum(x, t); }, {x});
  }
  {
    Tensor x = leaf(rng, {3, 4});
    record("mean", [=](Tape* t) { return ops::mean(x, t); }, {x});
  }
  {
    const std::size_t T = 3, width = 4, heads = 2;
    Tensor x = leaf(rng, {T, width}, -1.0, 1.0);
    Tensor qkv_w = leaf(rng, {width, 3 * width}, -0.6, 0.6);
    Tensor qkv_b = leaf(rng, {3 * width}, -0.3, 0.3);
    Tensor out_w = leaf(rng, {width, width}, -0.6, 0.6);
    Tensor out_b = leaf(rng, {width}, -0.3, 0.3);
    Tensor w = loss_weights(rng, {T, width});
    record("multi_head_attention",
           [=](Tape* t) {
             return weighted(ops::multi_head_attention(x, qkv_w, qkv_b, out_w,
                                                       out_b, heads, t),
                             w, t);
           },
           {x, qkv_w, qkv_b, out_w, out_b});
  }

  // Regularizer losses. kd_loss differentiates through the live class
  // weights; the reference rows stay constant.
  {
    Tensor live = leaf_rows_nonzero(rng, 3, 4);
    Tensor ref = leaf_rows_nonzero(rng, 3, 4);
    for (bool raw : {false, true}) {
      record(raw ? "kd_loss_raw_cosine" : "kd_loss",
             [=](Tape* t) {
               ClassWeights l2, r2;
               l2.rows = live;
               r2.rows = ref;
               r2.reference = true;
               return kd_loss(l2, r2, raw, t);
             },
             {live});
    }
  }
  {
    // Tiny model: perturb the ClipFit-trainable parameters away from the
    // reference so the loss and its gradients are nonzero.
    ModelConfig cfg;
    cfg.text = {16, 8, 8, 2, 1, 16};
    cfg.image = {8, 4, 1, 8, 2, 1, 16};
    cfg.embed_dim = 8;
    DualEncoder model(cfg, seed ^ 0xabcdef12ull);
    const Snapshot reference = take_snapshot(model);
    const FreezeMask mask =
        apply_strategy(model, Strategy::preset(StrategyKind::ClipFit));

    std::vector<Tensor> leaves;
    Rng prng = rng.derive(7);
    for (const std::string& name : mask.trainable_names()) {
      if (name.find("bias") == std::string::npos) continue;
      if (name.rfind("text.", 0) != 0) continue;
      Tensor p = model.param(name);
      for (std::size_t i = 0; i < p.numel(); ++i) {
        p.data()[i] += -0.4 + 0.8 * prng.uniform();
      }
      leaves.push_back(p);
    }
    record("mse_bias_loss",
           [&model, &mask, reference](Tape* t) {
             return mse_bias_loss(model, mask, reference, t);
           },
           leaves);
  }

  return results;
}

}  // namespace clipfit::gradcheck
