#pragma once

#include <cstdint>
#include <vector>

#include "shrinklab/trainer.hpp"

namespace shrink {

// Temperature-softened teacher matching, optionally mixed with hard-label
// supervision.
struct DistillConfig {
  double temperature = 2.0;
  double alpha = 1.0;                   // KD-term weight; 1 = kd_only
  LossKind mode = LossKind::KdOnly;     // KdOnly or Hybrid
  bool tau_sq_scaling = true;           // raw KL behind the flag
  int steps = 300;
  int batch_size = 32;
  AdamWConfig adamw;
};

// tau^2 * mean-over-rows KL(softmax(z_t/tau) || softmax(z_s/tau)).
double kd_loss(const Tensor& teacher_logits, const Tensor& student_logits,
               double tau, bool tau_sq_scaling = true);

// alpha * kd_loss + (1 - alpha) * cross_entropy(student, labels).
double hybrid_loss(const Tensor& teacher_logits, const Tensor& student_logits,
                   const std::vector<int>& labels, double tau, double alpha,
                   bool tau_sq_scaling = true);

// Trains the student against the frozen teacher's logits on `data`.
// Teacher and student must share vocabulary and task-head semantics; the
// teacher is bit-unchanged afterwards.
TrainResult distill(const ModelState& teacher, ModelState& student,
                    const Dataset& data, const DistillConfig& config,
                    std::uint64_t seed);

}  // namespace shrink
