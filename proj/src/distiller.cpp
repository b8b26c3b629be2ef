#include "shrinklab/distiller.hpp"

#include "shrinklab/ops.hpp"

namespace shrink {

double kd_loss(const Tensor& teacher_logits, const Tensor& student_logits,
               double tau, bool tau_sq_scaling) {
  return kd_divergence(teacher_logits, student_logits, tau, tau_sq_scaling)[0];
}

double hybrid_loss(const Tensor& teacher_logits, const Tensor& student_logits,
                   const std::vector<int>& labels, double tau, double alpha,
                   bool tau_sq_scaling) {
  if (alpha < 0.0 || alpha > 1.0)
    throw std::invalid_argument("hybrid_loss: alpha must lie in [0, 1]");
  const double kd = kd_loss(teacher_logits, student_logits, tau, tau_sq_scaling);
  const double ce = cross_entropy(student_logits, labels)[0];
  return alpha * kd + (1.0 - alpha) * ce;
}

TrainResult distill(const ModelState& teacher, ModelState& student,
                    const Dataset& data, const DistillConfig& config,
                    std::uint64_t seed) {
  if (teacher.config.arch_kind != student.config.arch_kind)
    throw std::invalid_argument("distill: teacher/student task kinds differ");
  if (teacher.config.vocab_size != student.config.vocab_size)
    throw std::invalid_argument("distill: teacher/student vocabularies differ");
  if (teacher.config.arch_kind == ArchKind::EncoderClassifier &&
      teacher.config.num_classes != student.config.num_classes)
    throw std::invalid_argument("distill: classifier head widths differ");
  if (config.mode == LossKind::HardLabel)
    throw std::invalid_argument("distill: mode must be KdOnly or Hybrid");

  TrainOptions opt;
  opt.loss.kind = config.mode;
  opt.loss.alpha = config.mode == LossKind::KdOnly ? 1.0 : config.alpha;
  opt.loss.tau = config.temperature;
  opt.loss.tau_sq_scaling = config.tau_sq_scaling;
  opt.steps = config.steps;
  opt.batch_size = config.batch_size;
  opt.seed = seed;
  opt.adamw = config.adamw;
  opt.teacher = &teacher;
  return train(student, data, opt);
}

}  // namespace shrink
