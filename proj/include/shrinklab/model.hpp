#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "shrinklab/quantize.hpp"
#include "shrinklab/tensor.hpp"

namespace shrink {

enum class ArchKind { EncoderClassifier, DecoderLm };
enum class Precision { Real, Int8Weights };

// A point in the architecture space. hidden_dim is always derived as
// num_heads * head_dim.
struct ArchConfig {
  int num_layers = 0;
  int num_heads = 0;
  int head_dim = 0;
  int hidden_dim = 0;
  int ffd_size = 0;
  int vocab_size = 0;
  int max_seq_len = 0;
  ArchKind arch_kind = ArchKind::EncoderClassifier;
  int num_classes = 2;  // classifier head width; ignored for the LM

  void validate() const;
  bool operator==(const ArchConfig&) const = default;
};

// Values captured during a forward pass with capture=true. All tensors are
// detached deep copies.
struct TraceCache {
  // [layer][batch item] -> [n x d] hidden state after the full block.
  std::vector<std::vector<Tensor>> hidden;
  // [layer][batch item] -> [n x d] feedforward block output (pre-residual).
  std::vector<std::vector<Tensor>> ff_out;
  // [layer][batch item][head] -> [n x n] row-stochastic attention map.
  std::vector<std::vector<std::vector<Tensor>>> attention;

  int num_layers() const { return static_cast<int>(hidden.size()); }
  int batch_size() const { return hidden.empty() ? 0 : static_cast<int>(hidden[0].size()); }
};

// All learnable tensors plus precision/QAT flags. Tensors are keyed by name
// in a sorted map so iteration order is canonical everywhere (init, optim,
// checkpoints, hashing).
struct ModelState {
  ArchConfig config;
  Precision precision = Precision::Real;
  bool quantize_aware = false;  // weights pass through quantize/dequantize in forward
  std::map<std::string, Tensor> tensors;
  // Authoritative int8 payloads when precision == Int8Weights; `tensors`
  // then holds their dequantized values for compute.
  std::map<std::string, QuantTensor> quantized;
};

// True for the tensors quantize_model converts (the weight matrices);
// biases, layernorm parameters and embeddings stay real.
bool is_weight_matrix(const std::string& name);

// Weights ~ N(0, 0.02^2), biases zero, layernorm gains one. Deterministic
// per (config, seed).
ModelState build_model(const ArchConfig& config, std::uint64_t seed);

// Exact learnable-scalar count:
//   embeddings (V + P) * d
//   per layer  4(d^2 + d) attention + (d*f + f) + (f*d + d) FFN + 2*(2d) LN
//   head       d*C + C for the classifier; the LM output projection is tied
//              to the token embedding and adds nothing.
long long count_parameters(const ArchConfig& config);

// Analytic per-layer FLOPs at the given sequence length (multiply-add = 2):
// attention 8*n*d^2 + 4*n^2*d, feedforward 4*n*d*f. Uniform across layers.
std::vector<double> estimate_flops(const ArchConfig& config, int seq_len);

// Whole-model FLOPs for one sequence: layer sum plus the head readout.
double model_total_flops(const ArchConfig& config, int seq_len);

// Parameter bytes (4 per real scalar; 1 per int8 scalar + one 4-byte scale
// per weight tensor) plus activation bytes
// (batch*seq*d*(layers+1) + batch*heads*seq^2*layers) * 4.
long long estimate_memory(const ArchConfig& config, int batch, int seq_len,
                          Precision precision);

struct ForwardOptions {
  Graph* graph = nullptr;  // set for training; bound leaves land in result
  bool capture = false;
};

struct ForwardResult {
  // Classifier: [B x num_classes]. LM: all per-sequence logits stacked
  // row-wise, [sum(n_i) x vocab].
  Tensor logits;
  // Per-sequence logits ([1 x C] or [n_i x V]) on the same graph.
  std::vector<Tensor> per_seq;
  TraceCache trace;
  // Parameter leaves bound to options.graph, keyed like ModelState::tensors.
  std::map<std::string, Tensor> params;
};

ForwardResult forward(const ModelState& model,
                      const std::vector<std::vector<int>>& tokens,
                      const ForwardOptions& options = {});

// Greedy argmax decoding, one token per step; stops at max_new tokens, at
// end_token (if >= 0), or when the context window fills up.
std::vector<int> generate(const ModelState& model, std::vector<int> prompt,
                          int max_new, int end_token = -1);

// FNV-1a over config, flags and raw tensor bytes; used for frozen-model and
// bit-identity checks.
std::uint64_t state_hash(const ModelState& model);

}  // namespace shrink
