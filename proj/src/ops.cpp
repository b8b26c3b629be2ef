#include "shrinklab/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

namespace shrink {

namespace {

thread_local long long g_mac_count = 0;

// c[m x n] += a[m x k] * b[k x n]. i-k-j loop order: the inner loop is
// independent per j, so the compiler can vectorize it without reordering
// any floating-point accumulation chain.
void mm_accum(const double* a, const double* b, double* c, int m, int k, int n) {
  g_mac_count += static_cast<long long>(m) * k * n;
  for (int i = 0; i < m; ++i) {
    const double* ai = a + static_cast<std::size_t>(i) * k;
    double* ci = c + static_cast<std::size_t>(i) * n;
    for (int kk = 0; kk < k; ++kk) {
      const double av = ai[kk];
      const double* bk = b + static_cast<std::size_t>(kk) * n;
      for (int j = 0; j < n; ++j) ci[j] += av * bk[j];
    }
  }
}

std::vector<double> transposed(const double* a, int rows, int cols) {
  std::vector<double> t(static_cast<std::size_t>(rows) * cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j)
      t[static_cast<std::size_t>(j) * rows + i] =
          a[static_cast<std::size_t>(i) * cols + j];
  return t;
}

Graph* owner_graph(std::initializer_list<const Tensor*> ts) {
  Graph* g = nullptr;
  for (const Tensor* t : ts) {
    if (!t->tracked()) continue;
    if (g && t->graph != g)
      throw std::invalid_argument("op: inputs belong to different graphs");
    g = t->graph;
  }
  return g;
}

void require_2d(const Tensor& t, const char* op) {
  if (t.shape.size() != 2)
    throw std::invalid_argument(std::string(op) + ": expected 2-D tensor");
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape != b.shape)
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

// Stable softmax over one strided line.
void softmax_line(const double* x, double* y, int len, std::size_t stride,
                  double tau) {
  double mx = x[0];
  for (int i = 1; i < len; ++i) mx = std::max(mx, x[i * stride]);
  double z = 0.0;
  for (int i = 0; i < len; ++i) {
    const double e = std::exp((x[i * stride] - mx) / tau);
    y[i * stride] = e;
    z += e;
  }
  for (int i = 0; i < len; ++i) y[i * stride] /= z;
}

void softmax_line_backward(const double* y, const double* dy, double* dx,
                           int len, std::size_t stride, double tau) {
  double dot = 0.0;
  for (int i = 0; i < len; ++i) dot += dy[i * stride] * y[i * stride];
  for (int i = 0; i < len; ++i)
    dx[i * stride] += y[i * stride] * (dy[i * stride] - dot) / tau;
}

}  // namespace

void reset_mac_counter() { g_mac_count = 0; }
long long mac_counter() { return g_mac_count; }

double logsumexp_row(const double* v, int n) {
  double mx = v[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, v[i]);
  double z = 0.0;
  for (int i = 0; i < n; ++i) z += std::exp(v[i] - mx);
  return mx + std::log(z);
}

int argmax_row(const Tensor& x, int row) {
  require_2d(x, "argmax_row");
  const int n = x.cols();
  const double* v = x.ptr() + static_cast<std::size_t>(row) * n;
  int best = 0;
  for (int i = 1; i < n; ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const int m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) throw std::invalid_argument("matmul: inner dimensions disagree");

  Tensor out({m, n});
  mm_accum(a.ptr(), b.ptr(), out.ptr(), m, k, n);

  Graph* g = owner_graph({&a, &b});
  if (!g) return out;
  out = g->make_node(std::move(out));
  g->set_backward(out.node, [a, b, out, m, k, n](Graph& gg) {
    const double* dc = gg.grad_data(out);
    if (double* da = gg.maybe_grad(a)) {
      const std::vector<double> bt = transposed(b.ptr(), k, n);  // [n x k]
      mm_accum(dc, bt.data(), da, m, n, k);
    }
    if (double* db = gg.maybe_grad(b)) {
      const std::vector<double> at = transposed(a.ptr(), m, k);  // [k x m]
      mm_accum(at.data(), dc, db, k, m, n);
    }
  });
  return out;
}

Tensor transpose(const Tensor& a) {
  require_2d(a, "transpose");
  const int m = a.rows(), n = a.cols();
  Tensor out({n, m}, transposed(a.ptr(), m, n));
  Graph* g = owner_graph({&a});
  if (!g) return out;
  out = g->make_node(std::move(out));
  g->set_backward(out.node, [a, out, m, n](Graph& gg) {
    const double* dc = gg.grad_data(out);  // [n x m]
    if (double* da = gg.maybe_grad(a)) {
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          da[static_cast<std::size_t>(i) * n + j] +=
              dc[static_cast<std::size_t>(j) * m + i];
    }
  });
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape);
  const std::size_t n = out.size();
  const double* pa = a.ptr();
  const double* pb = b.ptr();
  double* po = out.ptr();
  for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];

  Graph* g = owner_graph({&a, &b});
  if (!g) return out;
  out = g->make_node(std::move(out));
  g->set_backward(out.node, [a, b, out, n](Graph& gg) {
    const double* dc = gg.grad_data(out);
    if (double* da = gg.maybe_grad(a))
      for (std::size_t i = 0; i < n; ++i) da[i] += dc[i];
    if (double* db = gg.maybe_grad(b))
      for (std::size_t i = 0; i < n; ++i) db[i] += dc[i];
  });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape);
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];

  Graph* g = owner_graph({&a, &b});
  if (!g) return out;
  out = g->make_node(std::move(out));
  g->set_backward(out.node, [a, b, out, n](Graph& gg) {
    const double* dc = gg.grad_data(out);
    if (double* da = gg.maybe_grad(a))
      for (std::size_t i = 0; i < n; ++i) da[i] += dc[i] * b[i];
    if (double* db = gg.maybe_grad(b))
      for (std::size_t i = 0; i < n; ++i) db[i] += dc[i] * a[i];
  });
  return out;
}

Tensor scale(const Tensor& x, double s) {
  Tensor out(x.shape);
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] * s;
  Graph* g = owner_graph({&x});
  if (!g) return out;
  out = g->make_node(std::move(out));
  g->set_backward(out.node, [x, out, s, n](Graph& gg) {
    const double* dc = gg.grad_data(out);
    if (double* dx = gg.maybe_grad(x))
      for (std::size_t i = 0; i < n; ++i) dx[i] += dc[i] * s;
  });
  return out;
}

Tensor add_row_bias(const Tensor& x, const Tensor& bias) {
  require_2d(x, "add_row_bias");
  const int m = x.rows(), n = x.cols();
  if (static_cast<int>(bias.size()) != n)
    throw std::invalid_argument("add_row_bias: bias length mismatch");
  Tensor out({m, n});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out[static_cast<std::size_t>(i) * n + j] =
          x[static_cast<std::size_t>(i) * n + j] + bias[j];

  Graph* g = owner_graph({&x, &bias});
  if (!g) return out;
  out = g->make_node(std::move(out));
  g->set_backward(out.node, [x, bias, out, m, n](Graph& gg) {
    const double* dc = gg.grad_data(out);
    if (double* dx = gg.maybe_grad(x))
      for (std::size_t i = 0; i < static_cast<std::size_t>(m) * n; ++i)
        dx[i] += dc[i];
    if (double* db = gg.maybe_grad(bias))
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          db[j] += dc[static_cast<std::size_t>(i) * n + j];
  });
  return out;
}

Tensor softmax(const Tensor& x, int axis, double temperature) {
  if (temperature <= 0.0)
    throw std::invalid_argument("softmax: temperature must be positive");
  const bool is_1d = x.shape.size() == 1;
  if (!is_1d) require_2d(x, "softmax");
  if (is_1d && axis != 0)
    throw std::invalid_argument("softmax: axis out of range for 1-D input");
  if (!is_1d && axis != 0 && axis != 1)
    throw std::invalid_argument("softmax: axis out of range");

  const int m = is_1d ? 1 : x.rows();
  const int n = is_1d ? static_cast<int>(x.size()) : x.cols();
  // axis==1 (or 1-D): lines are rows; axis==0: lines are columns.
  const bool rows = is_1d || axis == 1;
  const int n_lines = rows ? m : n;
  const int len = rows ? n : m;
  const std::size_t stride = rows ? 1 : static_cast<std::size_t>(n);

  Tensor out(x.shape);
  for (int l = 0; l < n_lines; ++l) {
    const std::size_t base = rows ? static_cast<std::size_t>(l) * n : l;
    softmax_line(x.ptr() + base, out.ptr() + base, len, stride, temperature);
  }

  Graph* g = owner_graph({&x});
  if (!g) return out;
  out = g->make_node(std::move(out));
  const double tau = temperature;
  g->set_backward(out.node, [x, out, n_lines, len, stride, rows, n, tau](Graph& gg) {
    const double* dc = gg.grad_data(out);
    if (double* dx = gg.maybe_grad(x)) {
      for (int l = 0; l < n_lines; ++l) {
        const std::size_t base = rows ? static_cast<std::size_t>(l) * n : l;
        softmax_line_backward(out.ptr() + base, dc + base, dx + base, len,
                              stride, tau);
      }
    }
  });
  return out;
}

Tensor attention_softmax(const Tensor& scores, bool causal) {
  require_2d(scores, "attention_softmax");
  const int n = scores.rows();
  if (scores.cols() != n)
    throw std::invalid_argument("attention_softmax: matrix must be square");

  Tensor out({n, n});
  for (int i = 0; i < n; ++i) {
    const int valid = causal ? i + 1 : n;
    const double* row = scores.ptr() + static_cast<std::size_t>(i) * n;
    double* yrow = out.ptr() + static_cast<std::size_t>(i) * n;
    softmax_line(row, yrow, valid, 1, 1.0);
    for (int j = valid; j < n; ++j) yrow[j] = 0.0;
  }

  Graph* g = owner_graph({&scores});
  if (!g) return out;
  out = g->make_node(std::move(out));
  g->set_backward(out.node, [scores, out, n, causal](Graph& gg) {
    const double* dc = gg.grad_data(out);
    if (double* dx = gg.maybe_grad(scores)) {
      for (int i = 0; i < n; ++i) {
        const int valid = causal ? i + 1 : n;
        const std::size_t base = static_cast<std::size_t>(i) * n;
        softmax_line_backward(out.ptr() + base, dc + base, dx + base, valid, 1,
                              1.0);
      }
    }
  });
  return out;
}

Tensor layer_normalize(const Tensor& x, const Tensor& gain, const Tensor& bias,
                       double eps) {
  require_2d(x, "layer_normalize");
  const int m = x.rows(), n = x.cols();
  if (static_cast<int>(gain.size()) != n || static_cast<int>(bias.size()) != n)
    throw std::invalid_argument("layer_normalize: gain/bias must match last dim");

  Tensor out({m, n});
  std::vector<double> inv_sd(m), mu(m);
  for (int i = 0; i < m; ++i) {
    const double* row = x.ptr() + static_cast<std::size_t>(i) * n;
    double s = 0.0;
    for (int j = 0; j < n; ++j) s += row[j];
    const double mean = s / n;
    double v = 0.0;
    for (int j = 0; j < n; ++j) v += (row[j] - mean) * (row[j] - mean);
    const double inv = 1.0 / std::sqrt(v / n + eps);
    mu[i] = mean;
    inv_sd[i] = inv;
    double* orow = out.ptr() + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j)
      orow[j] = (row[j] - mean) * inv * gain[j] + bias[j];
  }

  Graph* g = owner_graph({&x, &gain, &bias});
  if (!g) return out;
  out = g->make_node(std::move(out));
  g->set_backward(out.node, [x, gain, bias, out, m, n, mu = std::move(mu),
                             inv_sd = std::move(inv_sd)](Graph& gg) {
    const double* dc = gg.grad_data(out);
    double* dx = gg.maybe_grad(x);
    double* dg = gg.maybe_grad(gain);
    double* db = gg.maybe_grad(bias);
    std::vector<double> xhat(n), h(n);
    for (int i = 0; i < m; ++i) {
      const double* row = x.ptr() + static_cast<std::size_t>(i) * n;
      const double* drow = dc + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) xhat[j] = (row[j] - mu[i]) * inv_sd[i];
      if (dg)
        for (int j = 0; j < n; ++j) dg[j] += drow[j] * xhat[j];
      if (db)
        for (int j = 0; j < n; ++j) db[j] += drow[j];
      if (dx) {
        double ha = 0.0, hb = 0.0;
        for (int j = 0; j < n; ++j) {
          h[j] = drow[j] * gain[j];
          ha += h[j];
          hb += h[j] * xhat[j];
        }
        ha /= n;
        hb /= n;
        double* dxrow = dx + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j)
          dxrow[j] += (h[j] - ha - xhat[j] * hb) * inv_sd[i];
      }
    }
  });
  return out;
}

namespace {
constexpr double kGeluC = 0.7978845608028653558798921198687;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Tensor gelu(const Tensor& x) {
  Tensor out(x.shape);
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double v = x[i];
    out[i] = 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v)));
  }
  Graph* g = owner_graph({&x});
  if (!g) return out;
  out = g->make_node(std::move(out));
  g->set_backward(out.node, [x, out, n](Graph& gg) {
    const double* dc = gg.grad_data(out);
    if (double* dx = gg.maybe_grad(x)) {
      for (std::size_t i = 0; i < n; ++i) {
        const double v = x[i];
        const double u = kGeluC * (v + kGeluA * v * v * v);
        const double t = std::tanh(u);
        const double sech2 = 1.0 - t * t;
        const double du = kGeluC * (1.0 + 3.0 * kGeluA * v * v);
        dx[i] += dc[i] * (0.5 * (1.0 + t) + 0.5 * v * sech2 * du);
      }
    }
  });
  return out;
}

Tensor embedding_rows(const Tensor& table, const std::vector<int>& ids) {
  require_2d(table, "embedding_rows");
  const int v = table.rows(), d = table.cols();
  const int m = static_cast<int>(ids.size());
  if (m == 0) throw std::invalid_argument("embedding_rows: empty id list");
  Tensor out({m, d});
  for (int i = 0; i < m; ++i) {
    if (ids[i] < 0 || ids[i] >= v)
      throw std::invalid_argument("embedding_rows: id out of range");
    std::memcpy(out.ptr() + static_cast<std::size_t>(i) * d,
                table.ptr() + static_cast<std::size_t>(ids[i]) * d,
                static_cast<std::size_t>(d) * sizeof(double));
  }
  Graph* g = owner_graph({&table});
  if (!g) return out;
  out = g->make_node(std::move(out));
  g->set_backward(out.node, [table, out, ids, m, d](Graph& gg) {
    const double* dc = gg.grad_data(out);
    if (double* dt = gg.maybe_grad(table)) {
      for (int i = 0; i < m; ++i) {
        double* drow = dt + static_cast<std::size_t>(ids[i]) * d;
        const double* crow = dc + static_cast<std::size_t>(i) * d;
        for (int j = 0; j < d; ++j) drow[j] += crow[j];
      }
    }
  });
  return out;
}

Tensor slice_rows(const Tensor& x, int r0, int r1) {
  require_2d(x, "slice_rows");
  const int m = x.rows(), n = x.cols();
  if (r0 < 0 || r1 > m || r0 >= r1)
    throw std::invalid_argument("slice_rows: invalid range");
  const int h = r1 - r0;
  Tensor out({h, n});
  std::memcpy(out.ptr(), x.ptr() + static_cast<std::size_t>(r0) * n,
              static_cast<std::size_t>(h) * n * sizeof(double));
  Graph* g = owner_graph({&x});
  if (!g) return out;
  out = g->make_node(std::move(out));
  g->set_backward(out.node, [x, out, r0, h, n](Graph& gg) {
    const double* dc = gg.grad_data(out);
    if (double* dx = gg.maybe_grad(x)) {
      double* base = dx + static_cast<std::size_t>(r0) * n;
      for (std::size_t i = 0; i < static_cast<std::size_t>(h) * n; ++i)
        base[i] += dc[i];
    }
  });
  return out;
}

Tensor slice_cols(const Tensor& x, int c0, int c1) {
  require_2d(x, "slice_cols");
  const int m = x.rows(), n = x.cols();
  if (c0 < 0 || c1 > n || c0 >= c1)
    throw std::invalid_argument("slice_cols: invalid range");
  const int w = c1 - c0;
  Tensor out({m, w});
  for (int i = 0; i < m; ++i)
    std::memcpy(out.ptr() + static_cast<std::size_t>(i) * w,
                x.ptr() + static_cast<std::size_t>(i) * n + c0,
                static_cast<std::size_t>(w) * sizeof(double));
  Graph* g = owner_graph({&x});
  if (!g) return out;
  out = g->make_node(std::move(out));
  g->set_backward(out.node, [x, out, c0, m, n, w](Graph& gg) {
    const double* dc = gg.grad_data(out);
    if (double* dx = gg.maybe_grad(x)) {
      for (int i = 0; i < m; ++i) {
        double* drow = dx + static_cast<std::size_t>(i) * n + c0;
        const double* crow = dc + static_cast<std::size_t>(i) * w;
        for (int j = 0; j < w; ++j) drow[j] += crow[j];
      }
    }
  });
  return out;
}

Tensor concat_rows(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_rows: empty input");
  const int n = xs[0].cols();
  int m = 0;
  for (const Tensor& t : xs) {
    require_2d(t, "concat_rows");
    if (t.cols() != n) throw std::invalid_argument("concat_rows: column mismatch");
    m += t.rows();
  }
  Tensor out({m, n});
  std::size_t off = 0;
  for (const Tensor& t : xs) {
    std::memcpy(out.ptr() + off, t.ptr(), t.size() * sizeof(double));
    off += t.size();
  }
  Graph* g = nullptr;
  for (const Tensor& t : xs) {
    Graph* tg = owner_graph({&t});
    if (tg && g && tg != g)
      throw std::invalid_argument("concat_rows: inputs from different graphs");
    if (tg) g = tg;
  }
  if (!g) return out;
  out = g->make_node(std::move(out));
  g->set_backward(out.node, [xs, out](Graph& gg) {
    const double* dc = gg.grad_data(out);
    std::size_t off = 0;
    for (const Tensor& t : xs) {
      if (double* dt = gg.maybe_grad(t))
        for (std::size_t i = 0; i < t.size(); ++i) dt[i] += dc[off + i];
      off += t.size();
    }
  });
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_cols: empty input");
  const int m = xs[0].rows();
  int n = 0;
  for (const Tensor& t : xs) {
    require_2d(t, "concat_cols");
    if (t.rows() != m) throw std::invalid_argument("concat_cols: row mismatch");
    n += t.cols();
  }
  Tensor out({m, n});
  int coff = 0;
  for (const Tensor& t : xs) {
    const int w = t.cols();
    for (int i = 0; i < m; ++i)
      std::memcpy(out.ptr() + static_cast<std::size_t>(i) * n + coff,
                  t.ptr() + static_cast<std::size_t>(i) * w,
                  static_cast<std::size_t>(w) * sizeof(double));
    coff += w;
  }
  Graph* g = nullptr;
  for (const Tensor& t : xs) {
    Graph* tg = owner_graph({&t});
    if (tg && g && tg != g)
      throw std::invalid_argument("concat_cols: inputs from different graphs");
    if (tg) g = tg;
  }
  if (!g) return out;
  out = g->make_node(std::move(out));
  g->set_backward(out.node, [xs, out, m, n](Graph& gg) {
    const double* dc = gg.grad_data(out);
    int coff = 0;
    for (const Tensor& t : xs) {
      const int w = t.cols();
      if (double* dt = gg.maybe_grad(t)) {
        for (int i = 0; i < m; ++i) {
          const double* crow = dc + static_cast<std::size_t>(i) * n + coff;
          double* trow = dt + static_cast<std::size_t>(i) * w;
          for (int j = 0; j < w; ++j) trow[j] += crow[j];
        }
      }
      coff += w;
    }
  });
  return out;
}

Tensor sum_all(const Tensor& x) {
  double s = 0.0;
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) s += x[i];
  Tensor out({1}, {s});
  Graph* g = owner_graph({&x});
  if (!g) return out;
  out = g->make_node(std::move(out));
  g->set_backward(out.node, [x, out, n](Graph& gg) {
    const double dl = gg.grad_data(out)[0];
    if (double* dx = gg.maybe_grad(x))
      for (std::size_t i = 0; i < n; ++i) dx[i] += dl;
  });
  return out;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  require_2d(logits, "cross_entropy");
  const int b = logits.rows(), c = logits.cols();
  if (static_cast<int>(labels.size()) != b)
    throw std::invalid_argument("cross_entropy: label count mismatch");
  double loss = 0.0;
  for (int i = 0; i < b; ++i) {
    if (labels[i] < 0 || labels[i] >= c)
      throw std::invalid_argument("cross_entropy: label out of range");
    const double* row = logits.ptr() + static_cast<std::size_t>(i) * c;
    loss += logsumexp_row(row, c) - row[labels[i]];
  }
  loss /= b;
  if (!std::isfinite(loss))
    throw std::runtime_error("cross_entropy: non-finite loss");
  Tensor out({1}, {loss});
  Graph* g = owner_graph({&logits});
  if (!g) return out;
  out = g->make_node(std::move(out));
  g->set_backward(out.node, [logits, out, labels, b, c](Graph& gg) {
    const double dl = gg.grad_data(out)[0];
    if (double* dz = gg.maybe_grad(logits)) {
      std::vector<double> p(c);
      for (int i = 0; i < b; ++i) {
        const double* row = logits.ptr() + static_cast<std::size_t>(i) * c;
        softmax_line(row, p.data(), c, 1, 1.0);
        double* drow = dz + static_cast<std::size_t>(i) * c;
        for (int j = 0; j < c; ++j) drow[j] += dl * p[j] / b;
        drow[labels[i]] -= dl / b;
      }
    }
  });
  return out;
}

Tensor kd_divergence(const Tensor& teacher_logits, const Tensor& student_logits,
                     double tau, bool scale_by_tau_sq) {
  require_2d(teacher_logits, "kd_divergence");
  require_same_shape(teacher_logits, student_logits, "kd_divergence");
  if (tau <= 0.0)
    throw std::invalid_argument("kd_divergence: temperature must be positive");
  const int b = teacher_logits.rows(), c = teacher_logits.cols();
  const double factor = scale_by_tau_sq ? tau * tau : 1.0;

  // KL(p || q) per row with p from the teacher, q from the student, both at
  // temperature tau and evaluated in log space.
  std::vector<double> p(static_cast<std::size_t>(b) * c);
  double loss = 0.0;
  for (int i = 0; i < b; ++i) {
    const double* trow = teacher_logits.ptr() + static_cast<std::size_t>(i) * c;
    const double* srow = student_logits.ptr() + static_cast<std::size_t>(i) * c;
    double* prow = p.data() + static_cast<std::size_t>(i) * c;
    softmax_line(trow, prow, c, 1, tau);
    double lse_t = 0.0, lse_s = 0.0;
    {
      std::vector<double> tt(c), ss(c);
      for (int j = 0; j < c; ++j) tt[j] = trow[j] / tau;
      for (int j = 0; j < c; ++j) ss[j] = srow[j] / tau;
      lse_t = logsumexp_row(tt.data(), c);
      lse_s = logsumexp_row(ss.data(), c);
    }
    double kl = 0.0;
    for (int j = 0; j < c; ++j) {
      if (prow[j] <= 0.0) continue;  // limit p*log(p) -> 0
      const double log_p = trow[j] / tau - lse_t;
      const double log_q = srow[j] / tau - lse_s;
      kl += prow[j] * (log_p - log_q);
    }
    loss += kl;
  }
  loss = factor * loss / b;
  if (!std::isfinite(loss))
    throw std::runtime_error("kd_divergence: non-finite loss");

  Tensor out({1}, {loss});
  Graph* g = owner_graph({&student_logits});
  if (!g) return out;
  out = g->make_node(std::move(out));
  g->set_backward(out.node, [teacher_logits, student_logits, out, tau, factor,
                             b, c, p = std::move(p)](Graph& gg) {
    const double dl = gg.grad_data(out)[0];
    if (double* dz = gg.maybe_grad(student_logits)) {
      std::vector<double> q(c);
      const double coef = dl * factor / (tau * static_cast<double>(b));
      for (int i = 0; i < b; ++i) {
        const double* srow =
            student_logits.ptr() + static_cast<std::size_t>(i) * c;
        softmax_line(srow, q.data(), c, 1, tau);
        const double* prow = p.data() + static_cast<std::size_t>(i) * c;
        double* drow = dz + static_cast<std::size_t>(i) * c;
        for (int j = 0; j < c; ++j) drow[j] += coef * (q[j] - prow[j]);
      }
    }
  });
  return out;
}

}  // namespace shrink
