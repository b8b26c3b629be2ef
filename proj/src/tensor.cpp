#include "shrinklab/tensor.hpp"

#include <cmath>
#include <cstring>

namespace shrink {

bool all_finite(const Tensor& t) {
  for (double v : *t.data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Tensor Graph::leaf(const Tensor& value) {
  Tensor t = value;
  t.graph = this;
  t.node = static_cast<int>(tape_.size());
  NodeRec rec;
  rec.size = t.size();
  rec.leaf = true;
  tape_.push_back(std::move(rec));
  return t;
}

Tensor Graph::make_node(Tensor value) {
  value.graph = this;
  value.node = static_cast<int>(tape_.size());
  NodeRec rec;
  rec.size = value.size();
  tape_.push_back(std::move(rec));
  return value;
}

void Graph::set_backward(int node, std::function<void(Graph&)> back) {
  tape_[static_cast<std::size_t>(node)].back = std::move(back);
}

double* Graph::touch(int node) {
  NodeRec& rec = tape_[static_cast<std::size_t>(node)];
  if (!rec.grad) {
    rec.grad = std::make_unique<double[]>(rec.size);
    std::memset(rec.grad.get(), 0, rec.size * sizeof(double));
  }
  return rec.grad.get();
}

double* Graph::maybe_grad(const Tensor& t) {
  if (!t.tracked() || t.graph != this) return nullptr;
  return touch(t.node);
}

const double* Graph::grad_data(const Tensor& t) const {
  if (!t.tracked() || t.graph != this) return nullptr;
  return tape_[static_cast<std::size_t>(t.node)].grad.get();
}

std::vector<double> Graph::grad(const Tensor& t) const {
  std::vector<double> out(t.size(), 0.0);
  const double* g = grad_data(t);
  if (g) std::memcpy(out.data(), g, t.size() * sizeof(double));
  return out;
}

void Graph::backward(const Tensor& loss) {
  if (!loss.tracked() || loss.graph != this)
    throw std::invalid_argument("backward: loss is not tracked on this graph");
  if (loss.size() != 1)
    throw std::invalid_argument("backward: loss must be scalar");
  touch(loss.node)[0] += 1.0;
  for (int t = loss.node; t >= 0; --t) {
    NodeRec& rec = tape_[static_cast<std::size_t>(t)];
    if (rec.grad && rec.back) rec.back(*this);
  }
}

}  // namespace shrink
