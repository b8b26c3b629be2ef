#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "shrinklab/rng.hpp"
#include "shrinklab/trainer.hpp"

using namespace shrink;

namespace {

ArchConfig toy_classifier(int layers = 1, int heads = 2, int head_dim = 4,
                          int ffd = 8) {
  ArchConfig c;
  c.num_layers = layers;
  c.num_heads = heads;
  c.head_dim = head_dim;
  c.hidden_dim = heads * head_dim;
  c.ffd_size = ffd;
  c.vocab_size = 64;
  c.max_seq_len = 32;
  c.arch_kind = ArchKind::EncoderClassifier;
  c.num_classes = 2;
  return c;
}

// Label is decided by which identifier band the single content token falls
// in: linearly separable from the embedding.
Dataset separable_toy(int n) {
  const VocabLayout v = vocab_layout(64);
  Dataset ds;
  ds.kind = TaskKind::ClonePairs;
  ds.vocab_size = 64;
  for (int i = 0; i < n; ++i) {
    Example e;
    e.label = i % 2;
    const int tok = e.label == 1 ? v.ident_lo + (i % 8) : v.ident_lo + 12 + (i % 8);
    e.tokens = {tok};
    e.tokens_b = {tok};
    ds.examples.push_back(e);
  }
  return ds;
}

}  // namespace

TEST_CASE("optimizer_step: zero-gradient and decay cases") {
  std::map<std::string, Tensor> params;
  params["w"] = Tensor({3}, {1.0, -2.0, 0.5});
  std::map<std::string, std::vector<double>> grads;
  grads["w"] = {0.0, 0.0, 0.0};

  {
    OptimState s;
    s.hyper.weight_decay = 0.0;
    auto before = *params["w"].data;
    optimizer_step(params, grads, s);
    CHECK(*params["w"].data == before);
    CHECK(s.step == 1);
  }
  {
    OptimState s;
    s.hyper.weight_decay = 0.05;
    s.hyper.lr = 0.1;
    auto before = *params["w"].data;
    optimizer_step(params, grads, s);
    for (int i = 0; i < 3; ++i)
      CHECK(params["w"][i] == doctest::Approx(before[i] * (1.0 - 0.1 * 0.05))
                                  .epsilon(1e-15));
  }
}

TEST_CASE("optimizer_step: hand-evaluated single step") {
  std::map<std::string, Tensor> params;
  params["w"] = Tensor({1}, {1.0});
  std::map<std::string, std::vector<double>> grads;
  grads["w"] = {1.0};
  OptimState s;
  s.hyper = {0.1, 0.9, 0.999, 1e-8, 0.0};
  optimizer_step(params, grads, s);
  // mhat = 1, vhat = 1 -> theta = 1 - 0.1 * 1/(1 + 1e-8) ~ 0.9
  CHECK(params["w"][0] == doctest::Approx(0.9).epsilon(1e-6));
}

TEST_CASE("optimizer_step matches an independent recurrence for 1000 draws") {
  Rng rng(2024);
  std::map<std::string, Tensor> params;
  params["w"] = Tensor({1000});
  std::vector<double> theta(1000), m(1000, 0.0), v(1000, 0.0);
  for (int i = 0; i < 1000; ++i) {
    theta[i] = rng.uniform(-2, 2);
    params["w"][i] = theta[i];
  }
  AdamWConfig h;
  h.weight_decay = 0.0;
  OptimState s;
  s.hyper = h;

  for (int step = 1; step <= 5; ++step) {
    std::map<std::string, std::vector<double>> grads;
    grads["w"].resize(1000);
    for (int i = 0; i < 1000; ++i) grads["w"][i] = rng.uniform(-1, 1);
    optimizer_step(params, grads, s);
    // reference recurrences, written independently
    for (int i = 0; i < 1000; ++i) {
      const double g = grads["w"][i];
      m[i] = h.beta1 * m[i] + (1 - h.beta1) * g;
      v[i] = h.beta2 * v[i] + (1 - h.beta2) * g * g;
      const double mh = m[i] / (1 - std::pow(h.beta1, step));
      const double vh = v[i] / (1 - std::pow(h.beta2, step));
      theta[i] -= h.lr * mh / (std::sqrt(vh) + h.eps);
    }
  }
  for (int i = 0; i < 1000; ++i)
    CHECK(std::fabs(params["w"][i] - theta[i]) <= 1e-12);
}

TEST_CASE("optimizer_step aborts on non-finite gradients") {
  std::map<std::string, Tensor> params;
  params["w"] = Tensor({2}, {1.0, 2.0});
  std::map<std::string, std::vector<double>> grads;
  grads["w"] = {0.5, std::numeric_limits<double>::quiet_NaN()};
  OptimState s;
  CHECK_THROWS_AS(optimizer_step(params, grads, s), NonFiniteGradientError);
  CHECK(params["w"][0] == 1.0);  // no partial update
  CHECK(params["w"][1] == 2.0);
  CHECK(s.step == 0);
}

TEST_CASE("train: steps=0 no-op and bit-identical determinism") {
  Dataset ds = generate_clone_dataset(5, 200, 64, {6, 12});
  ModelState a = build_model(toy_classifier(), 33);
  const std::uint64_t before = state_hash(a);

  TrainOptions opt;
  opt.steps = 0;
  train(a, ds, opt);
  CHECK(state_hash(a) == before);

  opt.steps = 40;
  opt.batch_size = 16;
  opt.seed = 7;
  ModelState b = build_model(toy_classifier(), 33);
  TrainResult ra = train(a, ds, opt);
  TrainResult rb = train(b, ds, opt);
  CHECK(state_hash(a) == state_hash(b));
  CHECK(ra.loss_history == rb.loss_history);
  CHECK(ra.loss_history.size() == 40);
}

TEST_CASE("train: loss strictly decreases over 50-step windows on a separable toy") {
  Dataset ds = separable_toy(256);
  ModelState m = build_model(toy_classifier(), 11);
  TrainOptions opt;
  opt.steps = 150;
  opt.batch_size = 16;
  opt.seed = 3;
  opt.adamw.lr = 1e-3;
  TrainResult r = train(m, ds, opt);
  auto window_mean = [&](int from) {
    double s = 0;
    for (int i = from; i < from + 50; ++i) s += r.loss_history[i];
    return s / 50;
  };
  CHECK(window_mean(0) > window_mean(50));
  CHECK(window_mean(50) > window_mean(100));
}

TEST_CASE("train: smoke run halves the loss on clone pairs") {
  // Desk-scale stand-in for the teacher smoke oracle: small model, 2000
  // pairs; the full teacher run lives in the acceptance suite.
  Dataset ds = generate_clone_dataset(17, 2000, 64, {6, 12});
  ArchConfig c = toy_classifier(2, 2, 8, 32);
  ModelState m = build_model(c, 21);
  TrainOptions opt;
  opt.steps = 250;
  opt.batch_size = 16;
  opt.seed = 5;
  opt.adamw.lr = 1e-3;
  TrainResult r = train(m, ds, opt);
  double tail = 0;
  for (int i = 230; i < 250; ++i) tail += r.loss_history[i];
  tail /= 20;
  INFO("first=", r.loss_history[0], " tail=", tail);
  CHECK(tail <= 0.5 * r.loss_history[0]);
}

TEST_CASE("metrics_from_confusion worked examples") {
  {
    EvalMetrics m = metrics_from_confusion(10, 0, 0, 10);
    CHECK(m.accuracy == 1.0);
    CHECK(m.precision == 1.0);
    CHECK(m.recall == 1.0);
  }
  {
    // everything predicted negative
    EvalMetrics m = metrics_from_confusion(0, 0, 7, 13);
    CHECK(m.recall == 0.0);
    CHECK(m.precision == 0.0);
    CHECK_FALSE(m.precision_defined);
    CHECK(m.recall_defined);
  }
  {
    EvalMetrics m = metrics_from_confusion(93, 7, 4, 96);
    CHECK(m.precision == doctest::Approx(0.93).epsilon(1e-12));
    CHECK(m.recall == doctest::Approx(93.0 / 97.0).epsilon(1e-12));
    CHECK(m.recall == doctest::Approx(0.959).epsilon(1e-3));
  }
}

TEST_CASE("evaluate is pure and permutation-invariant") {
  Dataset ds = generate_clone_dataset(29, 64, 64, {6, 12});
  ModelState m = build_model(toy_classifier(), 51);
  EvalMetrics a = evaluate(m, ds);
  EvalMetrics again = evaluate(m, ds);
  CHECK(a.accuracy == again.accuracy);
  CHECK(a.mean_loss == again.mean_loss);

  Dataset shuffled = ds;
  Rng rng(4);
  rng.shuffle(shuffled.examples);
  EvalMetrics b = evaluate(m, shuffled);
  CHECK(a.accuracy == b.accuracy);
  CHECK(a.precision == b.precision);
  CHECK(a.recall == b.recall);
  CHECK(a.mean_loss == b.mean_loss);  // exact: sorted accumulation

  Dataset empty;
  empty.kind = TaskKind::ClonePairs;
  CHECK_THROWS_AS(evaluate(m, empty), std::invalid_argument);
}

TEST_CASE("evaluate on an LM dataset gives perplexity == exp(mean loss)") {
  Dataset ds = generate_lm_dataset(3, 40);
  ArchConfig c;
  c.num_layers = 1;
  c.num_heads = 2;
  c.head_dim = 4;
  c.hidden_dim = 8;
  c.ffd_size = 16;
  c.vocab_size = 32;
  c.max_seq_len = 24;
  c.arch_kind = ArchKind::DecoderLm;
  ModelState m = build_model(c, 2);
  EvalMetrics e = evaluate(m, ds);
  CHECK(e.perplexity == doctest::Approx(std::exp(e.mean_loss)).epsilon(1e-12));
  CHECK(e.token_accuracy >= 0.0);
  CHECK(e.token_accuracy <= 1.0);
}
