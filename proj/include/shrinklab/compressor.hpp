#pragma once

#include <string>
#include <vector>

#include "shrinklab/nas.hpp"
#include "shrinklab/quantize.hpp"
#include "shrinklab/trainer.hpp"

namespace shrink {

struct PruneRecord {
  std::string component;  // layers | heads | head_dim | ffd
  int from_value = 0;
  int to_value = 0;
  double metric_before = 0.0;  // current accepted baseline
  double metric_after = 0.0;   // candidate after proxy retraining
  bool accepted = false;
};

struct PruneLog {
  ArchConfig input_config;
  ArchConfig output_config;
  double baseline_metric = 0.0;  // proxy metric of the input config
  std::vector<PruneRecord> records;
};

// One pass over the components in order {layers, attention heads, hidden
// size (head_dim ladder), feedforward size}: step down one ladder notch at a
// time, proxy-retrain-and-evaluate the candidate from scratch, accept while
// the primary-metric drop against the current accepted baseline stays <= eps,
// revert and move on at the first rejection. Each component stops at ladder
// exhaustion. Candidates are scored with derived seeds, so the chain is
// deterministic per (arch, eps, proxy, seed).
PruneLog structured_prune(const ArchConfig& arch, const Dataset& train_data,
                          const Dataset& val_data, double epsilon,
                          const ProxyEvalConfig& proxy,
                          const SearchSpace& space, std::uint64_t seed);

// Applies the accepted records to the log's input config; equals
// output_config for a well-formed log.
ArchConfig replay_prune_log(const PruneLog& log);

std::string prune_log_json(const PruneLog& log);

// Per-tensor symmetric int8 on every weight matrix; biases, layernorm
// parameters and embeddings stay real. The dequantized values replace the
// compute tensors, so the returned model forwards directly.
ModelState quantize_model(const ModelState& model);

}  // namespace shrink
