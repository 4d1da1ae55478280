#include "clipfit/ops.hpp"

#include <cmath>
#include <string>

#include "clipfit/errors.hpp"
#include "clipfit/kernels.hpp"

namespace clipfit::ops {
namespace {

void check_defined(const char* op, const Tensor& t) {
  if (!t.defined()) throw DimensionError(std::string(op) + ": undefined input");
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  check_defined(op, a);
  check_defined(op, b);
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

void check_2d(const char* op, const Tensor& t) {
  check_defined(op, t);
  if (t.ndim() != 2) {
    throw DimensionError(std::string(op) + ": expected 2-D tensor, got " +
                         shape_str(t.shape()));
  }
}

bool taped(Tape* tape, std::initializer_list<const Tensor*> ins) {
  if (!tape) return false;
  for (const Tensor* t : ins) {
    if (t->requires_grad()) return true;
  }
  return false;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b, Tape* tape) {
  check_same_shape("add", a, b);
  Tensor out(a.shape());
  const std::size_t n = a.numel();
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  if (taped(tape, {&a, &b})) {
    out.set_requires_grad(true);
    Tensor ta = a, tb = b, to = out;
    tape->record([ta, tb, to]() mutable {
      if (!to.has_grad()) return;
      const auto& g = to.grad();
      if (ta.requires_grad()) ta.accumulate_grad(g.data(), g.size());
      if (tb.requires_grad()) tb.accumulate_grad(g.data(), g.size());
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b, Tape* tape) {
  check_same_shape("sub", a, b);
  Tensor out(a.shape());
  const std::size_t n = a.numel();
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
  if (taped(tape, {&a, &b})) {
    out.set_requires_grad(true);
    Tensor ta = a, tb = b, to = out;
    tape->record([ta, tb, to]() mutable {
      if (!to.has_grad()) return;
      const auto& g = to.grad();
      if (ta.requires_grad()) ta.accumulate_grad(g.data(), g.size());
      if (tb.requires_grad()) {
        double* gb = tb.grad_data();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b, Tape* tape) {
  check_same_shape("mul", a, b);
  Tensor out(a.shape());
  const std::size_t n = a.numel();
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
  if (taped(tape, {&a, &b})) {
    out.set_requires_grad(true);
    Tensor ta = a, tb = b, to = out;
    tape->record([ta, tb, to]() mutable {
      if (!to.has_grad()) return;
      const auto& g = to.grad();
      if (ta.requires_grad()) {
        double* ga = ta.grad_data();
        const double* pb2 = tb.data();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * pb2[i];
      }
      if (tb.requires_grad()) {
        double* gb = tb.grad_data();
        const double* pa2 = ta.data();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * pa2[i];
      }
    });
  }
  return out;
}

Tensor scale_add(const Tensor& x, double alpha, double beta, Tape* tape) {
  check_defined("scale_add", x);
  Tensor out(x.shape());
  const std::size_t n = x.numel();
  const double* px = x.data();
  double* po = out.data();
  for (std::size_t i = 0; i < n; ++i) po[i] = alpha * px[i] + beta;
  if (taped(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor tx = x, to = out;
    tape->record([tx, to, alpha]() mutable {
      if (!to.has_grad()) return;
      const auto& g = to.grad();
      double* gx = tx.grad_data();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += alpha * g[i];
    });
  }
  return out;
}

Tensor mul_scalar(const Tensor& x, const Tensor& s, Tape* tape) {
  check_defined("mul_scalar", x);
  check_defined("mul_scalar", s);
  if (s.numel() != 1) {
    throw DimensionError("mul_scalar: scale must have one element, got " +
                         shape_str(s.shape()));
  }
  const double sv = s.data()[0];
  Tensor out(x.shape());
  const std::size_t n = x.numel();
  const double* px = x.data();
  double* po = out.data();
  for (std::size_t i = 0; i < n; ++i) po[i] = px[i] * sv;
  if (taped(tape, {&x, &s})) {
    out.set_requires_grad(true);
    Tensor tx = x, ts = s, to = out;
    tape->record([tx, ts, to]() mutable {
      if (!to.has_grad()) return;
      const auto& g = to.grad();
      if (tx.requires_grad()) {
        const double sv2 = ts.data()[0];
        double* gx = tx.grad_data();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * sv2;
      }
      if (ts.requires_grad()) {
        const double* px2 = tx.data();
        double acc = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * px2[i];
        ts.accumulate_grad(&acc, 1);
      }
    });
  }
  return out;
}

Tensor exp(const Tensor& x, Tape* tape) {
  check_defined("exp", x);
  Tensor out(x.shape());
  const std::size_t n = x.numel();
  const double* px = x.data();
  double* po = out.data();
  for (std::size_t i = 0; i < n; ++i) po[i] = std::exp(px[i]);
  if (taped(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor tx = x, to = out;
    tape->record([tx, to]() mutable {
      if (!to.has_grad()) return;
      const auto& g = to.grad();
      const double* py = to.data();
      double* gx = tx.grad_data();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * py[i];
    });
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape) {
  check_2d("matmul", a);
  check_2d("matmul", b);
  if (a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: inner dimensions disagree, " +
                         shape_str(a.shape()) + " * " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out(Shape{m, n});
  kern::matmul_nn(a.data(), b.data(), out.data(), m, k, n);
  if (taped(tape, {&a, &b})) {
    out.set_requires_grad(true);
    Tensor ta = a, tb = b, to = out;
    tape->record([ta, tb, to, m, k, n]() mutable {
      if (!to.has_grad()) return;
      const double* g = to.grad().data();
      if (ta.requires_grad()) {
        // dA += dC * B^T
        kern::matmul_nt(g, tb.data(), ta.grad_data(), m, n, k, true);
      }
      if (tb.requires_grad()) {
        // dB += A^T * dC
        kern::matmul_tn(ta.data(), g, tb.grad_data(), k, m, n, true);
      }
    });
  }
  return out;
}

Tensor transpose(const Tensor& x, Tape* tape) {
  check_2d("transpose", x);
  const std::size_t m = x.dim(0), n = x.dim(1);
  Tensor out(Shape{n, m});
  const double* px = x.data();
  double* po = out.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) po[j * m + i] = px[i * n + j];
  }
  if (taped(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor tx = x, to = out;
    tape->record([tx, to, m, n]() mutable {
      if (!to.has_grad()) return;
      const double* g = to.grad().data();
      double* gx = tx.grad_data();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += g[j * m + i];
      }
    });
  }
  return out;
}

Tensor reshape(const Tensor& x, Shape shape, Tape* tape) {
  check_defined("reshape", x);
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) +
                         " as " + shape_str(shape));
  }
  Tensor out(std::move(shape), x.vec());
  if (taped(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor tx = x, to = out;
    tape->record([tx, to]() mutable {
      if (!to.has_grad()) return;
      const auto& g = to.grad();
      tx.accumulate_grad(g.data(), g.size());
    });
  }
  return out;
}

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count,
                  Tape* tape) {
  check_2d("slice_cols", x);
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (start + count > n) {
    throw DimensionError("slice_cols: [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") out of range for " +
                         shape_str(x.shape()));
  }
  Tensor out(Shape{m, count});
  const double* px = x.data();
  double* po = out.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < count; ++j) {
      po[i * count + j] = px[i * n + start + j];
    }
  }
  if (taped(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor tx = x, to = out;
    tape->record([tx, to, start, count, m, n]() mutable {
      if (!to.has_grad()) return;
      const double* g = to.grad().data();
      double* gx = tx.grad_data();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < count; ++j) {
          gx[i * n + start + j] += g[i * count + j];
        }
      }
    });
  }
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& xs, Tape* tape) {
  if (xs.empty()) throw DimensionError("concat_cols: no inputs");
  std::size_t m = 0, total = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    check_2d("concat_cols", xs[i]);
    if (i == 0) {
      m = xs[i].dim(0);
    } else if (xs[i].dim(0) != m) {
      throw DimensionError("concat_cols: row count mismatch " +
                           shape_str(xs[0].shape()) + " vs " +
                           shape_str(xs[i].shape()));
    }
    total += xs[i].dim(1);
  }
  Tensor out(Shape{m, total});
  double* po = out.data();
  std::size_t off = 0;
  for (const Tensor& x : xs) {
    const std::size_t n = x.dim(1);
    const double* px = x.data();
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) po[i * total + off + j] = px[i * n + j];
    }
    off += n;
  }
  bool wants = false;
  if (tape) {
    for (const Tensor& x : xs) wants = wants || x.requires_grad();
  }
  if (wants) {
    out.set_requires_grad(true);
    std::vector<Tensor> hs = xs;
    Tensor to = out;
    tape->record([hs, to, m, total]() mutable {
      if (!to.has_grad()) return;
      const double* g = to.grad().data();
      std::size_t off2 = 0;
      for (Tensor& x : hs) {
        const std::size_t n = x.dim(1);
        if (x.requires_grad()) {
          double* gx = x.grad_data();
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
              gx[i * n + j] += g[i * total + off2 + j];
            }
          }
        }
        off2 += n;
      }
    });
  }
  return out;
}

Tensor concat_rows(const std::vector<Tensor>& xs, Tape* tape) {
  if (xs.empty()) throw DimensionError("concat_rows: no inputs");
  std::size_t n = 0, total = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    check_2d("concat_rows", xs[i]);
    if (i == 0) {
      n = xs[i].dim(1);
    } else if (xs[i].dim(1) != n) {
      throw DimensionError("concat_rows: column count mismatch " +
                           shape_str(xs[0].shape()) + " vs " +
                           shape_str(xs[i].shape()));
    }
    total += xs[i].dim(0);
  }
  Tensor out(Shape{total, n});
  double* po = out.data();
  std::size_t off = 0;
  for (const Tensor& x : xs) {
    const std::size_t m = x.dim(0);
    const double* px = x.data();
    for (std::size_t i = 0; i < m * n; ++i) po[off * n + i] = px[i];
    off += m;
  }
  bool wants = false;
  if (tape) {
    for (const Tensor& x : xs) wants = wants || x.requires_grad();
  }
  if (wants) {
    out.set_requires_grad(true);
    std::vector<Tensor> hs = xs;
    Tensor to = out;
    tape->record([hs, to, n]() mutable {
      if (!to.has_grad()) return;
      const double* g = to.grad().data();
      std::size_t off2 = 0;
      for (Tensor& x : hs) {
        const std::size_t m = x.dim(0);
        if (x.requires_grad()) {
          x.accumulate_grad(g + off2 * n, m * n);
        }
        off2 += m;
      }
    });
  }
  return out;
}

Tensor select_row(const Tensor& x, std::size_t r, Tape* tape) {
  check_2d("select_row", x);
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (r >= m) {
    throw IndexError("select_row: row " + std::to_string(r) +
                     " out of range for " + shape_str(x.shape()));
  }
  Tensor out(Shape{n});
  const double* px = x.data() + r * n;
  double* po = out.data();
  for (std::size_t j = 0; j < n; ++j) po[j] = px[j];
  if (taped(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor tx = x, to = out;
    tape->record([tx, to, r, n]() mutable {
      if (!to.has_grad()) return;
      const double* g = to.grad().data();
      double* gx = tx.grad_data();
      for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += g[j];
    });
  }
  return out;
}

Tensor bias_add(const Tensor& x, const Tensor& b, Tape* tape) {
  check_2d("bias_add", x);
  check_defined("bias_add", b);
  if (b.ndim() != 1 || b.dim(0) != x.dim(1)) {
    throw DimensionError("bias_add: bias " + shape_str(b.shape()) +
                         " does not match columns of " + shape_str(x.shape()));
  }
  const std::size_t m = x.dim(0), n = x.dim(1);
  Tensor out(x.shape());
  const double* px = x.data();
  const double* pb = b.data();
  double* po = out.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) po[i * n + j] = px[i * n + j] + pb[j];
  }
  if (taped(tape, {&x, &b})) {
    out.set_requires_grad(true);
    Tensor tx = x, tb = b, to = out;
    tape->record([tx, tb, to, m, n]() mutable {
      if (!to.has_grad()) return;
      const double* g = to.grad().data();
      if (tx.requires_grad()) tx.accumulate_grad(g, m * n);
      if (tb.requires_grad()) {
        double* gb = tb.grad_data();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
        }
      }
    });
  }
  return out;
}

Tensor embedding_lookup(const Tensor& table,
                        const std::vector<std::uint16_t>& ids, Tape* tape) {
  check_2d("embedding_lookup", table);
  const std::size_t v = table.dim(0), w = table.dim(1);
  for (std::uint16_t id : ids) {
    if (id >= v) {
      throw VocabularyError("token id " + std::to_string(id) +
                            " out of range for vocabulary of size " +
                            std::to_string(v));
    }
  }
  const std::size_t t = ids.size();
  Tensor out(Shape{t, w});
  const double* pt = table.data();
  double* po = out.data();
  for (std::size_t i = 0; i < t; ++i) {
    const double* row = pt + static_cast<std::size_t>(ids[i]) * w;
    for (std::size_t j = 0; j < w; ++j) po[i * w + j] = row[j];
  }
  if (taped(tape, {&table})) {
    out.set_requires_grad(true);
    Tensor tt = table, to = out;
    std::vector<std::uint16_t> ids2 = ids;
    tape->record([tt, to, ids2, w]() mutable {
      if (!to.has_grad()) return;
      const double* g = to.grad().data();
      double* gt = tt.grad_data();
      for (std::size_t i = 0; i < ids2.size(); ++i) {
        double* row = gt + static_cast<std::size_t>(ids2[i]) * w;
        for (std::size_t j = 0; j < w; ++j) row[j] += g[i * w + j];
      }
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps, Tape* tape) {
  check_2d("layer_norm", x);
  const std::size_t m = x.dim(0), d = x.dim(1);
  if (gain.ndim() != 1 || gain.dim(0) != d || bias.ndim() != 1 ||
      bias.dim(0) != d) {
    throw DimensionError("layer_norm: gain " + shape_str(gain.shape()) +
                         " / bias " + shape_str(bias.shape()) +
                         " do not match columns of " + shape_str(x.shape()));
  }
  Tensor out(x.shape());
  std::vector<double> mean(m), inv_std(m);
  kern::layer_norm_fwd(x.data(), gain.data(), bias.data(), out.data(),
                       mean.data(), inv_std.data(), m, d, eps);
  if (taped(tape, {&x, &gain, &bias})) {
    out.set_requires_grad(true);
    Tensor tx = x, tg = gain, tb = bias, to = out;
    tape->record([tx, tg, tb, to, mean, inv_std, m, d]() mutable {
      if (!to.has_grad()) return;
      const double* g = to.grad().data();
      std::vector<double> dx_scratch;
      double* dx = nullptr;
      if (tx.requires_grad()) {
        dx = tx.grad_data();
      } else {
        dx_scratch.assign(m * d, 0.0);
        dx = dx_scratch.data();
      }
      std::vector<double> dg_scratch, db_scratch;
      double* dg = nullptr;
      double* db = nullptr;
      if (tg.requires_grad()) {
        dg = tg.grad_data();
      } else {
        dg_scratch.assign(d, 0.0);
        dg = dg_scratch.data();
      }
      if (tb.requires_grad()) {
        db = tb.grad_data();
      } else {
        db_scratch.assign(d, 0.0);
        db = db_scratch.data();
      }
      kern::layer_norm_bwd(tx.data(), tg.data(), mean.data(), inv_std.data(),
                           g, dx, dg, db, m, d);
    });
  }
  return out;
}

Tensor gelu(const Tensor& x, Tape* tape) {
  check_defined("gelu", x);
  Tensor out(x.shape());
  kern::gelu_fwd(x.data(), out.data(), x.numel());
  if (taped(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor tx = x, to = out;
    tape->record([tx, to]() mutable {
      if (!to.has_grad()) return;
      const auto& g = to.grad();
      kern::gelu_bwd(tx.data(), g.data(), tx.grad_data(), g.size());
    });
  }
  return out;
}

Tensor softmax_rows(const Tensor& x, Tape* tape) {
  check_2d("softmax_rows", x);
  const std::size_t m = x.dim(0), d = x.dim(1);
  Tensor out(x.shape());
  kern::softmax_rows_fwd(x.data(), out.data(), m, d);
  if (taped(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor tx = x, to = out;
    tape->record([tx, to, m, d]() mutable {
      if (!to.has_grad()) return;
      const double* g = to.grad().data();
      const double* y = to.data();
      double* gx = tx.grad_data();
      for (std::size_t r = 0; r < m; ++r) {
        const double* yr = y + r * d;
        const double* gr = g + r * d;
        double dot = 0.0;
        for (std::size_t j = 0; j < d; ++j) dot += gr[j] * yr[j];
        for (std::size_t j = 0; j < d; ++j) {
          gx[r * d + j] += (gr[j] - dot) * yr[j];
        }
      }
    });
  }
  return out;
}

Tensor softmax_cross_entropy(const Tensor& logits,
                             const std::vector<int>& labels, Tape* tape) {
  check_2d("softmax_cross_entropy", logits);
  const std::size_t b = logits.dim(0), k = logits.dim(1);
  if (labels.size() != b) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(b) +
                         " logit rows but " + std::to_string(labels.size()) +
                         " labels");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= k) {
      throw IndexError("softmax_cross_entropy: label " + std::to_string(y) +
                       " out of range for " + std::to_string(k) + " classes");
    }
  }
  std::vector<double> probs(b * k);
  kern::softmax_rows_fwd(logits.data(), probs.data(), b, k);
  double loss = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    loss -= std::log(probs[i * k + static_cast<std::size_t>(labels[i])]);
  }
  loss /= static_cast<double>(b);
  Tensor out = Tensor::scalar(loss);
  if (taped(tape, {&logits})) {
    out.set_requires_grad(true);
    Tensor tl = logits, to = out;
    std::vector<int> labels2 = labels;
    tape->record([tl, to, probs, labels2, b, k]() mutable {
      if (!to.has_grad()) return;
      const double g = to.grad()[0] / static_cast<double>(b);
      double* gl = tl.grad_data();
      for (std::size_t i = 0; i < b; ++i) {
        const std::size_t y = static_cast<std::size_t>(labels2[i]);
        for (std::size_t j = 0; j < k; ++j) {
          gl[i * k + j] += g * (probs[i * k + j] - (j == y ? 1.0 : 0.0));
        }
      }
    });
  }
  return out;
}

Tensor l2_normalize_rows(const Tensor& x, Tape* tape) {
  check_2d("l2_normalize_rows", x);
  const std::size_t m = x.dim(0), d = x.dim(1);
  Tensor out(x.shape());
  std::vector<double> norms(m);
  const double* px = x.data();
  double* po = out.data();
  for (std::size_t r = 0; r < m; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += px[r * d + j] * px[r * d + j];
    if (s == 0.0) {
      throw DegenerateInputError("l2_normalize_rows: row " + std::to_string(r) +
                                 " has zero norm");
    }
    const double nrm = std::sqrt(s);
    norms[r] = nrm;
    for (std::size_t j = 0; j < d; ++j) po[r * d + j] = px[r * d + j] / nrm;
  }
  if (taped(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor tx = x, to = out;
    tape->record([tx, to, norms, m, d]() mutable {
      if (!to.has_grad()) return;
      const double* g = to.grad().data();
      const double* y = to.data();
      double* gx = tx.grad_data();
      for (std::size_t r = 0; r < m; ++r) {
        const double* yr = y + r * d;
        const double* gr = g + r * d;
        double dot = 0.0;
        for (std::size_t j = 0; j < d; ++j) dot += gr[j] * yr[j];
        for (std::size_t j = 0; j < d; ++j) {
          gx[r * d + j] += (gr[j] - dot * yr[j]) / norms[r];
        }
      }
    });
  }
  return out;
}

Tensor cosine_similarity(const Tensor& u, const Tensor& v, Tape* tape) {
  check_defined("cosine_similarity", u);
  check_defined("cosine_similarity", v);
  if (u.ndim() != 1 || v.ndim() != 1 || u.dim(0) != v.dim(0)) {
    throw DimensionError("cosine_similarity: expected equal-length vectors, " +
                         shape_str(u.shape()) + " vs " + shape_str(v.shape()));
  }
  const std::size_t d = u.dim(0);
  const double* pu = u.data();
  const double* pv = v.data();
  double suv = 0.0, suu = 0.0, svv = 0.0;
  for (std::size_t j = 0; j < d; ++j) suv += pu[j] * pv[j];
  for (std::size_t j = 0; j < d; ++j) suu += pu[j] * pu[j];
  for (std::size_t j = 0; j < d; ++j) svv += pv[j] * pv[j];
  if (suu == 0.0 || svv == 0.0) {
    throw DegenerateInputError("cosine_similarity: zero-norm input");
  }
  // sqrt(suu*svv) rather than sqrt(suu)*sqrt(svv): identical inputs give the
  // same accumulated sums, so cos(u,u) is exactly suu/suu == 1.
  const double denom = std::sqrt(suu * svv);
  const double c = suv / denom;
  Tensor out = Tensor::scalar(c);
  if (taped(tape, {&u, &v})) {
    out.set_requires_grad(true);
    Tensor tu = u, tv = v, to = out;
    tape->record([tu, tv, to, denom, c, suu, svv, d]() mutable {
      if (!to.has_grad()) return;
      const double g = to.grad()[0];
      const double* pu2 = tu.data();
      const double* pv2 = tv.data();
      if (tu.requires_grad()) {
        double* gu = tu.grad_data();
        for (std::size_t j = 0; j < d; ++j) {
          gu[j] += g * (pv2[j] / denom - c * pu2[j] / suu);
        }
      }
      if (tv.requires_grad()) {
        double* gv = tv.grad_data();
        for (std::size_t j = 0; j < d; ++j) {
          gv[j] += g * (pu2[j] / denom - c * pv2[j] / svv);
        }
      }
    });
  }
  return out;
}

Tensor sum(const Tensor& x, Tape* tape) {
  check_defined("sum", x);
  const std::size_t n = x.numel();
  const double* px = x.data();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += px[i];
  Tensor out = Tensor::scalar(s);
  if (taped(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor tx = x, to = out;
    tape->record([tx, to]() mutable {
      if (!to.has_grad()) return;
      const double g = to.grad()[0];
      double* gx = tx.grad_data();
      for (std::size_t i = 0; i < tx.numel(); ++i) gx[i] += g;
    });
  }
  return out;
}

Tensor mean(const Tensor& x, Tape* tape) {
  check_defined("mean", x);
  const std::size_t n = x.numel();
  if (n == 0) throw DimensionError("mean: empty tensor");
  const double* px = x.data();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += px[i];
  Tensor out = Tensor::scalar(s / static_cast<double>(n));
  if (taped(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor tx = x, to = out;
    tape->record([tx, to, n]() mutable {
      if (!to.has_grad()) return;
      const double g = to.grad()[0] / static_cast<double>(n);
      double* gx = tx.grad_data();
      for (std::size_t i = 0; i < n; ++i) gx[i] += g;
    });
  }
  return out;
}

Tensor multi_head_attention(const Tensor& x, const Tensor& qkv_w,
                            const Tensor& qkv_b, const Tensor& out_w,
                            const Tensor& out_b, std::size_t heads,
                            Tape* tape) {
  check_2d("multi_head_attention", x);
  const std::size_t w = x.dim(1);
  if (heads == 0 || w % heads != 0) {
    throw DimensionError("multi_head_attention: width " + std::to_string(w) +
                         " not divisible by " + std::to_string(heads) +
                         " heads");
  }
  if (qkv_w.ndim() != 2 || qkv_w.dim(0) != w || qkv_w.dim(1) != 3 * w) {
    throw DimensionError("multi_head_attention: qkv weight " +
                         shape_str(qkv_w.shape()) + " does not match width " +
                         std::to_string(w));
  }
  const std::size_t dh = w / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor qkv = bias_add(matmul(x, qkv_w, tape), qkv_b, tape);  // [T x 3w]
  Tensor q = slice_cols(qkv, 0, w, tape);
  Tensor k = slice_cols(qkv, w, w, tape);
  Tensor v = slice_cols(qkv, 2 * w, w, tape);

  std::vector<Tensor> head_outs;
  head_outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor qh = slice_cols(q, h * dh, dh, tape);
    Tensor kh = slice_cols(k, h * dh, dh, tape);
    Tensor vh = slice_cols(v, h * dh, dh, tape);
    Tensor scores = scale_add(matmul(qh, transpose(kh, tape), tape), scale,
                              0.0, tape);                   // [T x T]
    Tensor probs = softmax_rows(scores, tape);
    head_outs.push_back(matmul(probs, vh, tape));           // [T x dh]
  }
  Tensor merged = concat_cols(head_outs, tape);             // [T x w]
  return bias_add(matmul(merged, out_w, tape), out_b, tape);
}

}  // namespace clipfit::ops
