#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "shrinklab/model.hpp"
#include "shrinklab/synthdata.hpp"

namespace shrink {

struct AdamWConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// First/second moment accumulators mirror parameter shapes; step counts
// optimizer_step invocations (shared bias correction across tensors).
struct OptimState {
  AdamWConfig hyper;
  long long step = 0;
  std::map<std::string, std::vector<double>> m;
  std::map<std::string, std::vector<double>> v;
};

struct NonFiniteGradientError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Decoupled-decay AdamW:
//   m <- b1*m + (1-b1)*g;  v <- b2*v + (1-b2)*g^2
//   theta <- theta - lr * (mhat / (sqrt(vhat) + eps) + lambda*theta)
// A non-finite gradient aborts the whole step (no partial update).
void optimizer_step(std::map<std::string, Tensor>& params,
                    const std::map<std::string, std::vector<double>>& grads,
                    OptimState& state);

enum class LossKind { HardLabel, KdOnly, Hybrid };

struct LossSpec {
  LossKind kind = LossKind::HardLabel;
  double alpha = 0.7;  // KD-term weight in hybrid mode
  double tau = 2.0;
  bool tau_sq_scaling = true;
};

struct TrainOptions {
  LossSpec loss;
  int steps = 300;
  int batch_size = 32;
  std::uint64_t seed = 0;
  AdamWConfig adamw;
  // Frozen teacher for KD/hybrid losses; never mutated.
  const ModelState* teacher = nullptr;
};

struct TrainResult {
  std::vector<double> loss_history;  // one entry per step
};

// Deterministic fixed-step training loop shared by teacher training, NAS
// proxy scoring, pruning evaluation and distillation. Batch order is a
// seeded per-epoch shuffle. Mutates `model` in place.
TrainResult train(ModelState& model, const Dataset& data,
                  const TrainOptions& options);

struct EvalMetrics {
  // classifier
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  bool precision_defined = true;
  bool recall_defined = true;
  long long tp = 0, fp = 0, fn = 0, tn = 0;
  // language model
  double token_accuracy = 0.0;
  double perplexity = 0.0;
  // both
  double mean_loss = 0.0;

  // The metric the pipeline treats as primary for accept/revert decisions.
  double primary(ArchKind kind) const {
    return kind == ArchKind::EncoderClassifier ? accuracy : token_accuracy;
  }
};

// Positive class = clone (label 1). Undefined ratios (zero denominators)
// come back 0 with the corresponding flag cleared.
EvalMetrics metrics_from_confusion(long long tp, long long fp, long long fn,
                                   long long tn);

// Pure and order-independent: counts are integral and the loss mean is
// accumulated in sorted order, so a dataset permutation returns bit-equal
// metrics.
EvalMetrics evaluate(const ModelState& model, const Dataset& data);

// Loss-history export, one "step,loss" row per line.
void export_loss_csv(const std::vector<double>& history, const std::string& path);

// Fixed-budget proxy scoring shared by NAS fitness and pruning decisions:
// build a fresh model, train it briefly, evaluate on the validation split.
struct ProxyEvalConfig {
  int steps = 150;
  int batch_size = 16;
  AdamWConfig adamw{1e-3, 0.9, 0.999, 1e-8, 0.01};
  LossSpec loss;                        // hard-label unless a teacher is set
  const ModelState* teacher = nullptr;  // enables KD/hybrid proxies
  bool fake_quant = false;              // quantize-aware proxy runs
};

EvalMetrics proxy_evaluate(const ArchConfig& config, const Dataset& train_data,
                           const Dataset& val_data, const ProxyEvalConfig& proxy,
                           std::uint64_t seed);

}  // namespace shrink
