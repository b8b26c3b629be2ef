#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "shrinklab/checkpoint.hpp"
#include "shrinklab/compressor.hpp"
#include "shrinklab/ops.hpp"
#include "shrinklab/rng.hpp"

using namespace shrink;

TEST_CASE("quantize_tensor worked example") {
  Tensor w({3}, {-2.54, 0.02, 2.54});
  QuantTensor q = quantize_tensor(w);
  CHECK(std::fabs(static_cast<double>(q.scale) - 0.02) <= 1e-8);
  CHECK(q.values[0] == -127);
  CHECK(q.values[1] == 1);
  CHECK(q.values[2] == 127);

  Tensor back = dequantize(q);
  for (int i = 0; i < 3; ++i)
    CHECK(std::fabs(back[i] - w[i]) <= 0.5 * static_cast<double>(q.scale));
}

TEST_CASE("all-zero tensor quantizes to zeros with a sentinel scale") {
  Tensor w({4});
  QuantTensor q = quantize_tensor(w);
  CHECK(q.scale == std::numeric_limits<float>::min());
  for (auto v : q.values) CHECK(v == 0);
  Tensor back = dequantize(q);
  for (std::size_t i = 0; i < back.size(); ++i) CHECK(back[i] == 0.0);
}

TEST_CASE("round-trip error is bounded by scale/2 over 1000 random tensors") {
  Rng rng(55);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = rng.uniform_int(1, 40);
    Tensor w({n});
    const double mag = std::pow(10.0, rng.uniform(-3, 2));
    for (int i = 0; i < n; ++i) w[i] = rng.uniform(-mag, mag);
    QuantTensor q = quantize_tensor(w);
    Tensor back = dequantize(q);
    for (int i = 0; i < n; ++i)
      CHECK(std::fabs(back[i] - w[i]) <= 0.5 * static_cast<double>(q.scale));
  }
}

namespace {

ArchConfig toy_arch(int heads = 2, int head_dim = 8, int layers = 2, int ffd = 32) {
  ArchConfig c;
  c.num_layers = layers;
  c.num_heads = heads;
  c.head_dim = head_dim;
  c.hidden_dim = heads * head_dim;
  c.ffd_size = ffd;
  c.vocab_size = 64;
  c.max_seq_len = 32;
  c.arch_kind = ArchKind::EncoderClassifier;
  return c;
}

// Snap every weight matrix onto its own int8 grid.
ModelState snapped_weights(const ModelState& m) {
  ModelState out = m;
  for (auto& [name, t] : out.tensors) {
    if (!is_weight_matrix(name)) continue;
    out.tensors[name] = dequantize(quantize_tensor(t));
  }
  return out;
}

}  // namespace

TEST_CASE("quantize_model: memory drop, checkpoint round-trip, argmax agreement") {
  Dataset ds = generate_clone_dataset(91, 600, 64, {6, 10});
  ModelState model = build_model(toy_arch(), 3);
  TrainOptions opt;
  opt.steps = 150;
  opt.batch_size = 16;
  opt.seed = 8;
  opt.adamw.lr = 1e-3;
  train(model, ds, opt);

  ModelState q = quantize_model(model);
  CHECK(q.precision == Precision::Int8Weights);
  CHECK_THROWS_AS(quantize_model(q), std::invalid_argument);

  const long long mem_real =
      estimate_memory(model.config, 1, 20, Precision::Real);
  const long long mem_q =
      estimate_memory(q.config, 1, 20, Precision::Int8Weights);
  CHECK(mem_q < mem_real);

  // checkpoint round-trip of the quantized model is bit-exact
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "shrinklab_quant_test";
  fs::create_directories(dir);
  const std::string p = (dir / "q.ckpt").string();
  const std::string p2 = (dir / "q2.ckpt").string();
  save_checkpoint(q, p);
  ModelState loaded = load_checkpoint(p);
  save_checkpoint(loaded, p2);
  {
    std::ifstream f1(p, std::ios::binary), f2(p2, std::ios::binary);
    std::vector<char> b1(std::istreambuf_iterator<char>(f1), {});
    std::vector<char> b2(std::istreambuf_iterator<char>(f2), {});
    CHECK(b1 == b2);  // save(load(x)) byte-identical
  }
  for (const auto& [name, qt] : q.quantized) {
    REQUIRE(loaded.quantized.count(name) == 1);
    CHECK(loaded.quantized.at(name).values == qt.values);
    CHECK(loaded.quantized.at(name).scale == qt.scale);
    // dequantized compute tensors identical too
    for (std::size_t i = 0; i < qt.size(); ++i)
      CHECK(loaded.tensors.at(name)[i] == q.tensors.at(name)[i]);
  }
  fs::remove_all(dir);

  // argmax agreement between real and int8 model on the train set
  int agree = 0;
  for (const Example& e : ds.examples) {
    ForwardResult fr = forward(model, {encode_pair(e)});
    ForwardResult fq = forward(q, {encode_pair(e)});
    if (argmax_row(fr.logits, 0) == argmax_row(fq.logits, 0)) ++agree;
  }
  const double agreement = static_cast<double>(agree) / static_cast<double>(ds.size());
  INFO("argmax agreement = ", agreement);
  CHECK(agreement >= 0.95);
}

TEST_CASE("fake-quant is exact on weights already on the int8 grid") {
  ModelState m = snapped_weights(build_model(toy_arch(), 13));
  ModelState qat = m;
  qat.quantize_aware = true;

  Dataset ds = generate_clone_dataset(7, 8, 64, {6, 10});
  for (const Example& e : ds.examples) {
    ForwardResult plain = forward(m, {encode_pair(e)});
    ForwardResult fq = forward(qat, {encode_pair(e)});
    REQUIRE(plain.logits.size() == fq.logits.size());
    for (std::size_t i = 0; i < plain.logits.size(); ++i)
      CHECK(plain.logits[i] == fq.logits[i]);  // bitwise
  }
}

TEST_CASE("straight-through estimator passes in-range gradients unchanged") {
  ModelState m = snapped_weights(build_model(toy_arch(1, 4, 1, 8), 17));
  ModelState qat = m;
  qat.quantize_aware = true;
  Dataset ds = generate_clone_dataset(9, 4, 64, {6, 8});

  auto grads_of = [&](const ModelState& model) {
    Graph g;
    ForwardOptions opt;
    opt.graph = &g;
    ForwardResult f = forward(model, {encode_pair(ds.examples[0])}, opt);
    Tensor loss = cross_entropy(f.logits, {ds.examples[0].label});
    g.backward(loss);
    std::map<std::string, std::vector<double>> out;
    for (const auto& [name, leaf] : f.params) out[name] = g.grad(leaf);
    return out;
  };
  auto ga = grads_of(m);
  auto gb = grads_of(qat);
  for (const auto& [name, va] : ga) {
    const auto& vb = gb.at(name);
    REQUIRE(va.size() == vb.size());
    for (std::size_t i = 0; i < va.size(); ++i) CHECK(va[i] == vb[i]);
  }
}

TEST_CASE("fake_quantize matches quantize-dequantize exactly") {
  Rng rng(23);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor w({5, 7});
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-3, 3);
    Tensor fq = fake_quantize(w);
    Tensor qd = dequantize(quantize_tensor(w));
    for (std::size_t i = 0; i < w.size(); ++i) CHECK(fq[i] == qd[i]);
  }
}

TEST_CASE("structured_prune: epsilon extremes, replay, parameter monotonicity") {
  Dataset ds = generate_clone_dataset(33, 120, 64, {6, 8});
  auto parts = split_dataset(ds, {0.7, 0.15, 0.15}, 3);
  ProxyEvalConfig proxy;
  proxy.steps = 3;  // threshold-driven decisions; proxy quality irrelevant here
  proxy.batch_size = 8;
  const SearchSpace space = SearchSpace::standard();

  ArchConfig start = toy_arch(4, 8, 3, 64);  // on-ladder start

  {
    const double inf = std::numeric_limits<double>::infinity();
    PruneLog log = structured_prune(start, parts[0], parts[1], inf, proxy, space, 4);
    CHECK(log.output_config.num_layers == 2);
    CHECK(log.output_config.num_heads == 2);
    CHECK(log.output_config.head_dim == 2);
    CHECK(log.output_config.ffd_size == 4);
    CHECK(log.output_config.hidden_dim == 4);
    for (const PruneRecord& r : log.records) CHECK(r.accepted);
    CHECK(replay_prune_log(log) == log.output_config);

    // every accepted step strictly reduces the parameter count
    ArchConfig c = log.input_config;
    long long params = count_parameters(c);
    for (const PruneRecord& r : log.records) {
      if (!r.accepted) continue;
      if (r.component == "layers") c.num_layers = r.to_value;
      if (r.component == "heads") c.num_heads = r.to_value;
      if (r.component == "head_dim") c.head_dim = r.to_value;
      if (r.component == "ffd") c.ffd_size = r.to_value;
      c.hidden_dim = c.num_heads * c.head_dim;
      const long long next = count_parameters(c);
      CHECK(next < params);
      params = next;
    }

    // ladder membership of the pruned config
    auto in_ladder = [](const std::vector<int>& ladder, int v) {
      return std::find(ladder.begin(), ladder.end(), v) != ladder.end();
    };
    CHECK(in_ladder(space.layer_ladder, log.output_config.num_layers));
    CHECK(in_ladder(space.head_ladder, log.output_config.num_heads));
    CHECK(in_ladder(space.head_dim_ladder, log.output_config.head_dim));
    CHECK(in_ladder(space.ffd_ladder, log.output_config.ffd_size));
  }
  {
    PruneLog log = structured_prune(start, parts[0], parts[1], -1.0, proxy, space, 4);
    CHECK(log.output_config == start);
    for (const PruneRecord& r : log.records) CHECK_FALSE(r.accepted);
    CHECK(log.records.size() == 4);  // one rejected notch per component
    CHECK(replay_prune_log(log) == start);
  }
  {
    // determinism of the full accept/revert chain
    PruneLog a = structured_prune(start, parts[0], parts[1], 0.05, proxy, space, 4);
    PruneLog b = structured_prune(start, parts[0], parts[1], 0.05, proxy, space, 4);
    CHECK(a.output_config == b.output_config);
    REQUIRE(a.records.size() == b.records.size());
    for (std::size_t i = 0; i < a.records.size(); ++i) {
      CHECK(a.records[i].metric_after == b.records[i].metric_after);
      CHECK(a.records[i].accepted == b.records[i].accepted);
    }
    CHECK(replay_prune_log(a) == a.output_config);
  }
}

TEST_CASE("quantize-aware proxy training beats post-training quantization") {
  // Paired comparison on a linearly separable toy at a width where int8
  // noise is material. Configuration and seeds frozen after the first run.
  const VocabLayout v = vocab_layout(64);
  Dataset ds;
  ds.kind = TaskKind::ClonePairs;
  ds.vocab_size = 64;
  for (int i = 0; i < 512; ++i) {
    Example e;
    e.label = i % 2;
    const int tok = e.label == 1 ? v.ident_lo + (i % 9) : v.ident_lo + 14 + (i % 9);
    e.tokens = {tok};
    e.tokens_b = {tok};
    ds.examples.push_back(e);
  }

  ArchConfig c = toy_arch(1, 4, 1, 8);
  auto run = [&](bool qat) {
    ModelState m = build_model(c, 41);
    m.quantize_aware = qat;
    TrainOptions opt;
    opt.steps = 300;
    opt.batch_size = 16;
    opt.seed = 42;
    opt.adamw.lr = 2e-3;
    train(m, ds, opt);
    m.quantize_aware = false;
    const double before = evaluate(m, ds).accuracy;
    const double after = evaluate(quantize_model(m), ds).accuracy;
    return std::pair<double, double>(before, after);
  };
  auto [plain_before, plain_after] = run(false);
  auto [qat_before, qat_after] = run(true);
  const double drop_plain = plain_before - plain_after;
  const double drop_qat = qat_before - qat_after;
  INFO("plain drop=", drop_plain, " qat drop=", drop_qat);
  CHECK(drop_qat <= drop_plain);
}
