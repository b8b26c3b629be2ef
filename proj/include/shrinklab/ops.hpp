#pragma once

#include <vector>

#include "shrinklab/tensor.hpp"

namespace shrink {

// Dense primitives with reverse-mode differentiation. Every op runs with a
// fixed accumulation order so identical inputs produce bit-identical outputs
// across runs on the same host. Ops register a backward closure on the graph
// of their tracked inputs; untracked inputs are constants.

// [m x k] * [k x n] -> [m x n]
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor transpose(const Tensor& a);

// Elementwise; shapes must match.
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& x, double s);

// [m x n] + [n], broadcast over rows.
Tensor add_row_bias(const Tensor& x, const Tensor& bias);

// Softmax along `axis` of a 1-D or 2-D tensor, with logits divided by
// `temperature` before normalizing. Stabilized by subtracting the line max.
Tensor softmax(const Tensor& x, int axis, double temperature);

// Row softmax over a square [n x n] score matrix at temperature 1, with an
// optional causal mask (row i attends to columns 0..i).
Tensor attention_softmax(const Tensor& scores, bool causal);

// Per row over the last dimension: (x - mean) / sqrt(var + eps) * gain + bias.
Tensor layer_normalize(const Tensor& x, const Tensor& gain, const Tensor& bias,
                       double eps);

// Tanh-approximation GELU, elementwise.
Tensor gelu(const Tensor& x);

// Gathers rows of `table` at `ids`; backward scatter-adds.
Tensor embedding_rows(const Tensor& table, const std::vector<int>& ids);

Tensor slice_rows(const Tensor& x, int r0, int r1);
Tensor slice_cols(const Tensor& x, int c0, int c1);
Tensor concat_rows(const std::vector<Tensor>& xs);
Tensor concat_cols(const std::vector<Tensor>& xs);

// Scalar reductions.
Tensor sum_all(const Tensor& x);

// Mean over the batch of -log softmax(logits)[label], computed in log space.
// logits: [B x C], labels in [0, C).
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);

// tau^2 * mean over rows of KL(softmax(t/tau) || softmax(s/tau)).
// Teacher logits are treated as constants; gradient flows to the student
// side only. `scale_by_tau_sq=false` drops the tau^2 factor.
Tensor kd_divergence(const Tensor& teacher_logits, const Tensor& student_logits,
                     double tau, bool scale_by_tau_sq = true);

// Host-side helpers (not graph ops).
int argmax_row(const Tensor& x, int row);
double logsumexp_row(const double* v, int n);

// Thread-local multiply-add counter over matmul kernels; lets tests check
// analytic FLOPs models against what forward actually executes.
void reset_mac_counter();
long long mac_counter();

}  // namespace shrink
