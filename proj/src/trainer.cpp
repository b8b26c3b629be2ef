#include "shrinklab/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "shrinklab/ops.hpp"
#include "shrinklab/rng.hpp"

namespace shrink {

void optimizer_step(std::map<std::string, Tensor>& params,
                    const std::map<std::string, std::vector<double>>& grads,
                    OptimState& state) {
  for (const auto& [name, param] : params) {
    const auto it = grads.find(name);
    if (it == grads.end()) continue;
    if (it->second.size() != param.size())
      throw std::invalid_argument("optimizer_step: gradient shape mismatch for " + name);
    for (double g : it->second)
      if (!std::isfinite(g))
        throw NonFiniteGradientError("optimizer_step: non-finite gradient in " + name);
  }

  const AdamWConfig& h = state.hyper;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(h.beta1, t);
  const double bc2 = 1.0 - std::pow(h.beta2, t);

  for (auto& [name, param] : params) {
    const auto it = grads.find(name);
    static const std::vector<double> kEmpty;
    const std::vector<double>* g = it == grads.end() ? nullptr : &it->second;
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.empty()) m.assign(param.size(), 0.0);
    if (v.empty()) v.assign(param.size(), 0.0);
    for (std::size_t i = 0; i < param.size(); ++i) {
      const double gi = g ? (*g)[i] : 0.0;
      m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * gi;
      v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * gi * gi;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      param[i] -= h.lr * (mhat / (std::sqrt(vhat) + h.eps) +
                          h.weight_decay * param[i]);
    }
  }
}

namespace {

struct Batch {
  std::vector<std::vector<int>> inputs;
  std::vector<int> labels;  // classifier only
};

Batch assemble_batch(const Dataset& data, const std::vector<std::size_t>& order,
                     std::size_t start, std::size_t count) {
  Batch b;
  for (std::size_t i = start; i < start + count; ++i) {
    const Example& e = data.examples[order[i]];
    if (data.kind == TaskKind::ClonePairs) {
      b.inputs.push_back(encode_pair(e));
      b.labels.push_back(e.label);
    } else {
      b.inputs.push_back(e.tokens);
    }
  }
  return b;
}

// LM targets: rows 0..n-2 predict tokens 1..n-1. Returns the on-graph
// prediction logits stacked row-wise plus the flat target list.
Tensor lm_prediction_logits(const ForwardResult& fwd,
                            const std::vector<std::vector<int>>& inputs,
                            std::vector<int>* targets) {
  std::vector<Tensor> rows;
  for (std::size_t s = 0; s < inputs.size(); ++s) {
    const int n = static_cast<int>(inputs[s].size());
    if (n < 2) throw std::invalid_argument("lm training: sequence too short");
    rows.push_back(slice_rows(fwd.per_seq[s], 0, n - 1));
    for (int t = 1; t < n; ++t) targets->push_back(inputs[s][t]);
  }
  return rows.size() == 1 ? rows[0] : concat_rows(rows);
}

Tensor batch_loss(const ModelState& model, const Batch& batch,
                  const LossSpec& spec, const ModelState* teacher, Graph& g,
                  std::map<std::string, Tensor>* bound) {
  ForwardOptions opt;
  opt.graph = &g;
  ForwardResult fwd = forward(model, batch.inputs, opt);
  *bound = std::move(fwd.params);

  Tensor student_logits;
  std::vector<int> targets;
  if (model.config.arch_kind == ArchKind::EncoderClassifier) {
    student_logits = fwd.logits;
    targets = batch.labels;
  } else {
    student_logits = lm_prediction_logits(fwd, batch.inputs, &targets);
  }

  if (spec.kind == LossKind::HardLabel)
    return cross_entropy(student_logits, targets);

  if (!teacher) throw std::invalid_argument("train: KD loss needs a teacher");
  ForwardResult tf = forward(*teacher, batch.inputs);
  Tensor teacher_logits;
  if (teacher->config.arch_kind == ArchKind::EncoderClassifier) {
    teacher_logits = tf.logits;
  } else {
    std::vector<int> unused;
    teacher_logits = lm_prediction_logits(tf, batch.inputs, &unused);
  }

  Tensor kd = kd_divergence(teacher_logits, student_logits, spec.tau,
                            spec.tau_sq_scaling);
  if (spec.kind == LossKind::KdOnly) return kd;
  return add(scale(kd, spec.alpha),
             scale(cross_entropy(student_logits, targets), 1.0 - spec.alpha));
}

}  // namespace

TrainResult train(ModelState& model, const Dataset& data,
                  const TrainOptions& options) {
  if (data.examples.empty()) throw std::invalid_argument("train: empty dataset");
  const bool kind_match =
      (data.kind == TaskKind::ClonePairs &&
       model.config.arch_kind == ArchKind::EncoderClassifier) ||
      (data.kind == TaskKind::GrammarLm &&
       model.config.arch_kind == ArchKind::DecoderLm);
  if (!kind_match) throw std::invalid_argument("train: dataset does not match arch_kind");
  if (options.loss.kind != LossKind::HardLabel && !options.teacher)
    throw std::invalid_argument("train: KD loss needs a teacher");
  if (options.loss.alpha < 0.0 || options.loss.alpha > 1.0)
    throw std::invalid_argument("train: alpha must lie in [0, 1]");

  TrainResult result;
  OptimState optim;
  optim.hyper = options.adamw;

  const std::size_t n = data.examples.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = n;  // force shuffle at first use
  std::uint64_t epoch = 0;

  for (int step = 0; step < options.steps; ++step) {
    if (cursor >= n) {
      Rng rng(derive_seed(options.seed, 0xba7c4, epoch++));
      rng.shuffle(order);
      cursor = 0;
    }
    const std::size_t take =
        std::min<std::size_t>(static_cast<std::size_t>(options.batch_size), n - cursor);
    Batch batch = assemble_batch(data, order, cursor, take);
    cursor += take;

    Graph g;
    std::map<std::string, Tensor> bound;
    Tensor loss = batch_loss(model, batch, options.loss, options.teacher, g, &bound);
    if (!std::isfinite(loss[0]))
      throw std::runtime_error("train: non-finite loss at step " + std::to_string(step));
    g.backward(loss);

    std::map<std::string, std::vector<double>> grads;
    for (const auto& [name, leaf] : bound) grads[name] = g.grad(leaf);
    optimizer_step(model.tensors, grads, optim);

    result.loss_history.push_back(loss[0]);
  }
  return result;
}

EvalMetrics metrics_from_confusion(long long tp, long long fp, long long fn,
                                   long long tn) {
  EvalMetrics m;
  m.tp = tp;
  m.fp = fp;
  m.fn = fn;
  m.tn = tn;
  const long long total = tp + fp + fn + tn;
  m.accuracy = total == 0 ? 0.0
                          : static_cast<double>(tp + tn) / static_cast<double>(total);
  if (tp + fp == 0) {
    m.precision = 0.0;
    m.precision_defined = false;
  } else {
    m.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  }
  if (tp + fn == 0) {
    m.recall = 0.0;
    m.recall_defined = false;
  } else {
    m.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  }
  return m;
}

namespace {

// Permutation-invariant mean: sum the values in sorted order.
double sorted_mean(std::vector<double>& values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  double s = 0.0;
  for (double v : values) s += v;
  return s / static_cast<double>(values.size());
}

}  // namespace

EvalMetrics evaluate(const ModelState& model, const Dataset& data) {
  if (data.examples.empty()) throw std::invalid_argument("evaluate: empty dataset");
  const bool classifier = model.config.arch_kind == ArchKind::EncoderClassifier;
  if (classifier != (data.kind == TaskKind::ClonePairs))
    throw std::invalid_argument("evaluate: dataset does not match arch_kind");

  constexpr std::size_t kChunk = 32;
  std::vector<double> losses;

  if (classifier) {
    long long tp = 0, fp = 0, fn = 0, tn = 0;
    for (std::size_t at = 0; at < data.size(); at += kChunk) {
      const std::size_t take = std::min(kChunk, data.size() - at);
      std::vector<std::vector<int>> inputs;
      std::vector<int> labels;
      for (std::size_t i = at; i < at + take; ++i) {
        inputs.push_back(encode_pair(data.examples[i]));
        labels.push_back(data.examples[i].label);
      }
      ForwardResult fwd = forward(model, inputs);
      for (std::size_t i = 0; i < take; ++i) {
        const int pred = argmax_row(fwd.logits, static_cast<int>(i));
        const int want = labels[i];
        if (pred == 1 && want == 1) ++tp;
        if (pred == 1 && want == 0) ++fp;
        if (pred == 0 && want == 1) ++fn;
        if (pred == 0 && want == 0) ++tn;
        Tensor row = slice_rows(fwd.logits, static_cast<int>(i),
                                static_cast<int>(i) + 1);
        losses.push_back(cross_entropy(row, {want})[0]);
      }
    }
    EvalMetrics m = metrics_from_confusion(tp, fp, fn, tn);
    m.mean_loss = sorted_mean(losses);
    return m;
  }

  long long correct = 0, total = 0;
  for (std::size_t at = 0; at < data.size(); at += kChunk) {
    const std::size_t take = std::min(kChunk, data.size() - at);
    std::vector<std::vector<int>> inputs;
    for (std::size_t i = at; i < at + take; ++i)
      inputs.push_back(data.examples[i].tokens);
    ForwardResult fwd = forward(model, inputs);
    for (std::size_t s = 0; s < take; ++s) {
      const std::vector<int>& seq = inputs[s];
      const int n = static_cast<int>(seq.size());
      for (int t = 0; t + 1 < n; ++t) {
        const int pred = argmax_row(fwd.per_seq[s], t);
        if (pred == seq[t + 1]) ++correct;
        ++total;
        Tensor row = slice_rows(fwd.per_seq[s], t, t + 1);
        losses.push_back(cross_entropy(row, {seq[t + 1]})[0]);
      }
    }
  }
  EvalMetrics m;
  m.token_accuracy =
      total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
  m.mean_loss = sorted_mean(losses);
  m.perplexity = std::exp(m.mean_loss);
  return m;
}

EvalMetrics proxy_evaluate(const ArchConfig& config, const Dataset& train_data,
                           const Dataset& val_data, const ProxyEvalConfig& proxy,
                           std::uint64_t seed) {
  ModelState model = build_model(config, derive_seed(seed, 0x9c0de));
  model.quantize_aware = proxy.fake_quant;
  TrainOptions opt;
  opt.loss = proxy.loss;
  opt.steps = proxy.steps;
  opt.batch_size = proxy.batch_size;
  opt.seed = derive_seed(seed, 0x7a11);
  opt.adamw = proxy.adamw;
  opt.teacher = proxy.teacher;
  train(model, train_data, opt);
  return evaluate(model, val_data);
}

void export_loss_csv(const std::vector<double>& history, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("export_loss_csv: cannot open " + path);
  out << "step,loss\n";
  for (std::size_t i = 0; i < history.size(); ++i)
    out << i << ',' << history[i] << '\n';
}

}  // namespace shrink
