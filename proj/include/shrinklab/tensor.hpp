#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <stdexcept>
#include <vector>

namespace shrink {

class Graph;

// Dense row-major tensor of 64-bit reals. Copies are shallow and share the
// underlying buffer; deep_copy() detaches. Compute runs in doubles,
// checkpoints store 32-bit.
struct Tensor {
  std::vector<int> shape;
  std::shared_ptr<std::vector<double>> data;
  Graph* graph = nullptr;
  int node = -1;

  Tensor() : data(std::make_shared<std::vector<double>>()) {}
  explicit Tensor(std::vector<int> s)
      : shape(std::move(s)),
        data(std::make_shared<std::vector<double>>(numel(shape), 0.0)) {}
  Tensor(std::vector<int> s, std::vector<double> v)
      : shape(std::move(s)),
        data(std::make_shared<std::vector<double>>(std::move(v))) {
    if (data->size() != numel(shape))
      throw std::invalid_argument("tensor: data length does not match shape");
  }

  static std::size_t numel(const std::vector<int>& s) {
    std::size_t n = 1;
    for (int d : s) {
      if (d <= 0) throw std::invalid_argument("tensor: non-positive dimension");
      n *= static_cast<std::size_t>(d);
    }
    return n;
  }

  std::size_t size() const { return data->size(); }
  int rows() const {
    if (shape.size() != 2) throw std::invalid_argument("tensor: rows() needs 2-D");
    return shape[0];
  }
  int cols() const {
    if (shape.size() != 2) throw std::invalid_argument("tensor: cols() needs 2-D");
    return shape[1];
  }
  double* ptr() { return data->data(); }
  const double* ptr() const { return data->data(); }
  double& operator[](std::size_t i) { return (*data)[i]; }
  double operator[](std::size_t i) const { return (*data)[i]; }
  bool tracked() const { return node >= 0 && graph != nullptr; }

  Tensor detached() const {
    Tensor t = *this;
    t.graph = nullptr;
    t.node = -1;
    return t;
  }
  Tensor deep_copy() const {
    return Tensor(shape, *data);
  }
};

bool all_finite(const Tensor& t);

// Reverse-mode tape. Ops append nodes in creation order, so the node list is
// topologically ordered by construction (every non-leaf node's inputs precede
// it). Gradient buffers are allocated on first touch; backward() skips nodes
// whose buffer was never touched, so disconnected subgraphs cost nothing and
// disconnected leaves read back as zero gradient.
class Graph {
 public:
  // Registers `value` as a differentiable leaf. Shares the buffer, so the
  // caller's tensor and the leaf see the same values.
  Tensor leaf(const Tensor& value);

  // Used by ops: registers a freshly computed output, then its backward
  // closure (two-phase so the closure can capture the registered tensor).
  // Closures must accumulate (+=) into parent buffers via maybe_grad().
  Tensor make_node(Tensor value);
  void set_backward(int node, std::function<void(Graph&)> back);

  // Scalar loss only. Runs the tape in reverse from the loss node.
  // Single-threaded by contract.
  void backward(const Tensor& loss);

  // Gradient w.r.t. t from the last backward(); zeros if t was untouched.
  std::vector<double> grad(const Tensor& t) const;

  // Raw gradient pointer or nullptr if t was never touched.
  const double* grad_data(const Tensor& t) const;

  // For backward closures: lazily allocated zero-filled buffer for a tracked
  // tensor, nullptr for constants.
  double* maybe_grad(const Tensor& t);

  bool is_leaf(int node) const { return tape_[static_cast<std::size_t>(node)].leaf; }
  std::size_t node_count() const { return tape_.size(); }

 private:
  struct NodeRec {
    std::function<void(Graph&)> back;  // empty for leaves
    std::unique_ptr<double[]> grad;
    std::size_t size = 0;
    bool leaf = false;
  };
  double* touch(int node);
  std::vector<NodeRec> tape_;
};

}  // namespace shrink
