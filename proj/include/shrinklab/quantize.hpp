#pragma once

#include <cstdint>
#include <vector>

#include "shrinklab/tensor.hpp"

namespace shrink {

// Symmetric per-tensor int8 weights. The scale is stored as float32 (the
// checkpoint width) so quantize -> save -> load -> dequantize is bit-exact.
struct QuantTensor {
  std::vector<int> shape;
  std::vector<std::int8_t> values;
  float scale = 0.0f;

  std::size_t size() const { return values.size(); }
};

// scale = max|w| / 127 (narrowed to float32); codes = clamp(round-half-away-
// from-zero(w / scale), -127, 127). An all-zero tensor gets the smallest
// positive float32 as a sentinel scale and dequantizes back to zeros.
QuantTensor quantize_tensor(const Tensor& w);

Tensor dequantize(const QuantTensor& q);

// quantize -> dequantize in the forward pass; straight-through estimator in
// the backward pass (identity inside the clamp range, zero outside).
Tensor fake_quantize(const Tensor& w);

}  // namespace shrink
