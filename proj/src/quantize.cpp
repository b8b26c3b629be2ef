#include "shrinklab/quantize.hpp"

#include <cmath>
#include <limits>

namespace shrink {

namespace {

float scale_of(const Tensor& w) {
  double mx = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double a = std::fabs(w[i]);
    if (!std::isfinite(a)) throw std::invalid_argument("quantize: non-finite value");
    if (a > mx) mx = a;
  }
  if (mx == 0.0) return std::numeric_limits<float>::min();
  return static_cast<float>(mx / 127.0);
}

std::int8_t code_of(double w, double scale) {
  const double q = std::round(w / scale);  // round halves away from zero
  const double c = std::min(127.0, std::max(-127.0, q));
  return static_cast<std::int8_t>(c);
}

}  // namespace

QuantTensor quantize_tensor(const Tensor& w) {
  QuantTensor q;
  q.shape = w.shape;
  q.scale = scale_of(w);
  q.values.resize(w.size());
  const double s = static_cast<double>(q.scale);
  for (std::size_t i = 0; i < w.size(); ++i) q.values[i] = code_of(w[i], s);
  return q;
}

Tensor dequantize(const QuantTensor& q) {
  Tensor t(q.shape);
  const double s = static_cast<double>(q.scale);
  for (std::size_t i = 0; i < q.values.size(); ++i)
    t[i] = static_cast<double>(q.values[i]) * s;
  return t;
}

Tensor fake_quantize(const Tensor& w) {
  const float scale = scale_of(w);
  const double s = static_cast<double>(scale);
  Tensor out(w.shape);
  const std::size_t n = w.size();
  for (std::size_t i = 0; i < n; ++i)
    out[i] = static_cast<double>(code_of(w[i], s)) * s;

  if (!w.tracked()) return out;
  Graph* g = w.graph;
  out = g->make_node(std::move(out));
  const double pass_limit = 127.0 * s;
  g->set_backward(out.node, [w, out, n, pass_limit](Graph& gg) {
    const double* dc = gg.grad_data(out);
    if (double* dw = gg.maybe_grad(w)) {
      for (std::size_t i = 0; i < n; ++i)
        if (std::fabs(w[i]) <= pass_limit) dw[i] += dc[i];
    }
  });
  return out;
}

}  // namespace shrink
