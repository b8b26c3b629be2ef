#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdio>
#include <filesystem>

#include "doctest.h"
#include "shrinklab/checkpoint.hpp"
#include "shrinklab/model.hpp"
#include "shrinklab/ops.hpp"
#include "shrinklab/rng.hpp"

using namespace shrink;

namespace {

ArchConfig tiny_classifier() {
  ArchConfig c;
  c.num_layers = 1;
  c.num_heads = 1;
  c.head_dim = 2;
  c.hidden_dim = 2;
  c.ffd_size = 4;
  c.vocab_size = 5;
  c.max_seq_len = 4;
  c.arch_kind = ArchKind::EncoderClassifier;
  c.num_classes = 2;
  return c;
}

ArchConfig small_decoder() {
  ArchConfig c;
  c.num_layers = 2;
  c.num_heads = 2;
  c.head_dim = 4;
  c.hidden_dim = 8;
  c.ffd_size = 16;
  c.vocab_size = 11;
  c.max_seq_len = 12;
  c.arch_kind = ArchKind::DecoderLm;
  return c;
}

long long enumerate_elements(const ModelState& m) {
  long long total = 0;
  for (const auto& [name, t] : m.tensors) total += static_cast<long long>(t.size());
  return total;
}

}  // namespace

TEST_CASE("build_model determinism and validation") {
  ArchConfig c = small_decoder();
  ModelState a = build_model(c, 99);
  ModelState b = build_model(c, 99);
  CHECK(state_hash(a) == state_hash(b));
  ModelState other = build_model(c, 100);
  CHECK(state_hash(a) != state_hash(other));

  // the pruned student from the clone-detection walkthrough builds fine
  ArchConfig student;
  student.num_layers = 8;
  student.num_heads = 4;
  student.head_dim = 2;
  student.hidden_dim = 8;
  student.ffd_size = 8;
  student.vocab_size = 64;
  student.max_seq_len = 32;
  student.arch_kind = ArchKind::EncoderClassifier;
  ModelState s = build_model(student, 1);
  CHECK(enumerate_elements(s) == count_parameters(student));

  ArchConfig bad = student;
  bad.num_heads = 3;
  bad.head_dim = 4;
  bad.hidden_dim = 16;
  CHECK_THROWS_AS(build_model(bad, 1), std::invalid_argument);
}

TEST_CASE("classifier forward shape contract") {
  ModelState m = build_model(tiny_classifier(), 5);
  ForwardResult r = forward(m, {{0, 1, 2}, {2, 3, 4, 1}, {4}});
  CHECK(r.logits.rows() == 3);
  CHECK(r.logits.cols() == 2);

  CHECK_THROWS_AS(forward(m, {{0, 1, 2, 3, 4}}), std::invalid_argument);  // too long
  CHECK_THROWS_AS(forward(m, {{0, 7}}), std::invalid_argument);           // bad token
}

TEST_CASE("decoder causality is exact") {
  ModelState m = build_model(small_decoder(), 17);
  std::vector<int> seq = {1, 2, 3, 4, 5, 6};
  ForwardResult a = forward(m, {seq});
  std::vector<int> edited = seq;
  edited[4] = 9;
  edited[5] = 10;
  ForwardResult b = forward(m, {edited});
  const int v = m.config.vocab_size;
  // positions 0..3 see identical prefixes -> identical logits, bitwise
  for (int t = 0; t < 4; ++t)
    for (int j = 0; j < v; ++j)
      CHECK(a.logits[static_cast<std::size_t>(t) * v + j] ==
            b.logits[static_cast<std::size_t>(t) * v + j]);
}

TEST_CASE("trace attention rows are stochastic") {
  ModelState m = build_model(small_decoder(), 3);
  ForwardOptions opt;
  opt.capture = true;
  ForwardResult r = forward(m, {{1, 2, 3, 4, 5}, {5, 4, 3}}, opt);
  CHECK(r.trace.num_layers() == 2);
  for (const auto& layer : r.trace.attention) {
    for (const auto& item : layer) {
      for (const Tensor& map : item) {
        const int n = map.rows();
        for (int i = 0; i < n; ++i) {
          double sum = 0.0;
          for (int j = 0; j < n; ++j) sum += map[static_cast<std::size_t>(i) * n + j];
          CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
        }
      }
    }
  }
}

TEST_CASE("generate: trivial and deterministic") {
  ModelState m = build_model(small_decoder(), 23);
  std::vector<int> prompt = {1, 2, 3};
  CHECK(generate(m, prompt, 0) == prompt);
  auto a = generate(m, prompt, 5);
  auto b = generate(m, prompt, 5);
  CHECK(a == b);
  CHECK(a.size() == 8);

  ModelState enc = build_model(tiny_classifier(), 1);
  CHECK_THROWS_AS(generate(enc, prompt, 1), std::invalid_argument);
}

TEST_CASE("count_parameters formula and enumeration oracle") {
  // zero-layer degenerate: embeddings + head only
  ArchConfig z = tiny_classifier();
  z.num_layers = 0;
  CHECK(count_parameters(z) ==
        static_cast<long long>((z.vocab_size + z.max_seq_len)) * z.hidden_dim +
            z.hidden_dim * z.num_classes + z.num_classes);

  // tiny config equals exhaustive enumeration of tensor elements
  ArchConfig t = tiny_classifier();
  ModelState mt = build_model(t, 7);
  CHECK(count_parameters(t) == enumerate_elements(mt));

  // teacher-style width: 768 / 12 heads -> head_dim 64
  CHECK(768 / 12 == 64);

  // 50 random configs: formula equals enumeration
  Rng rng(31337);
  for (int i = 0; i < 50; ++i) {
    ArchConfig c;
    c.num_layers = rng.uniform_int(1, 4);
    c.num_heads = rng.uniform_int(1, 4);
    c.head_dim = rng.uniform_int(1, 8);
    c.hidden_dim = c.num_heads * c.head_dim;
    c.ffd_size = rng.uniform_int(1, 32);
    c.vocab_size = rng.uniform_int(8, 40);
    c.max_seq_len = rng.uniform_int(4, 16);
    c.arch_kind = (i % 2 == 0) ? ArchKind::EncoderClassifier : ArchKind::DecoderLm;
    c.num_classes = 2 + (i % 3);
    ModelState m = build_model(c, derive_seed(5, i));
    CHECK(count_parameters(c) == enumerate_elements(m));
  }

  // strict monotonicity in layers, head count, ffd
  ArchConfig base = small_decoder();
  ArchConfig more = base;
  more.num_layers += 1;
  CHECK(count_parameters(more) > count_parameters(base));
  more = base;
  more.num_heads += 1;
  more.hidden_dim = more.num_heads * more.head_dim;
  CHECK(count_parameters(more) > count_parameters(base));
  more = base;
  more.ffd_size += 1;
  CHECK(count_parameters(more) > count_parameters(base));
}

TEST_CASE("estimate_flops: uniform, linear in f, matches the MAC counter") {
  ArchConfig c = small_decoder();
  auto flops = estimate_flops(c, 7);
  CHECK(flops.size() == 2);
  CHECK(flops[0] == flops[1]);

  ArchConfig c2 = c;
  c2.ffd_size *= 2;
  auto flops2 = estimate_flops(c2, 7);
  CHECK(flops2[0] - flops[0] ==
        doctest::Approx(4.0 * 7 * c.hidden_dim * c.ffd_size));

  // instrumented multiply-add counter over an actual forward pass
  ArchConfig t = tiny_classifier();
  ModelState m = build_model(t, 2);
  const int n = 3;
  reset_mac_counter();
  forward(m, {{0, 1, 2}});
  const long long macs = mac_counter();
  const long long head_macs = static_cast<long long>(t.hidden_dim) * t.num_classes;
  double layer_flops = 0.0;
  for (double v : estimate_flops(t, n)) layer_flops += v;
  CHECK(static_cast<double>(macs - head_macs) * 2.0 == layer_flops);
}

TEST_CASE("estimate_memory: precision ratio, batch linearity, hand case") {
  ArchConfig c = small_decoder();
  const long long real_mem = estimate_memory(c, 1, 8, Precision::Real);
  const long long int8_mem = estimate_memory(c, 1, 8, Precision::Int8Weights);
  CHECK(int8_mem < real_mem);

  // batch doubling doubles activation bytes exactly
  const long long params_only = estimate_memory(c, 0, 8, Precision::Real);
  const long long act1 = estimate_memory(c, 1, 8, Precision::Real) - params_only;
  const long long act2 = estimate_memory(c, 2, 8, Precision::Real) - params_only;
  CHECK(act2 == 2 * act1);

  // weight-matrix bytes drop to ~1/4 (+4-byte scales)
  long long weight_numel = 0;
  int n_weight_tensors = 0;
  ModelState m = build_model(c, 1);
  for (const auto& [name, t] : m.tensors) {
    if (is_weight_matrix(name)) {
      weight_numel += static_cast<long long>(t.size());
      ++n_weight_tensors;
    }
  }
  CHECK(real_mem - int8_mem == weight_numel * 3 - 4 * n_weight_tensors);

  // tiny hand computation
  ArchConfig t = tiny_classifier();  // d=2, f=4, V=5, P=4, L=1, h=1, C=2
  const long long params = count_parameters(t);
  const int b = 2, n = 3;
  const long long expect =
      params * 4 + b * n * 2 * (1 + 1) * 4 + b * 1 * n * n * 1 * 4;
  CHECK(estimate_memory(t, b, n, Precision::Real) == expect);
}

TEST_CASE("shape contract at the search-space lattice corners") {
  struct Corner {
    int layers, heads, head_dim, ffd;
  };
  // corners of the discrete search lattice
  const Corner corners[] = {{2, 2, 2, 4}, {2, 12, 128, 4}, {12, 2, 2, 3072},
                            {12, 12, 128, 3072}};
  for (const Corner& k : corners) {
    ArchConfig c;
    c.num_layers = k.layers;
    c.num_heads = k.heads;
    c.head_dim = k.head_dim;
    c.hidden_dim = k.heads * k.head_dim;
    c.ffd_size = k.ffd;
    c.vocab_size = 16;
    c.max_seq_len = 8;
    c.arch_kind = ArchKind::EncoderClassifier;
    c.num_classes = 2;
    ModelState m = build_model(c, 3);
    ForwardResult r = forward(m, {{0, 1, 2, 3}});
    CHECK(r.logits.rows() == 1);
    CHECK(r.logits.cols() == 2);
  }
}

TEST_CASE("checkpoint round-trip is bit-exact") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "shrinklab_ckpt_test";
  fs::create_directories(dir);

  ModelState m = build_model(small_decoder(), 41);
  const std::string p1 = (dir / "a.ckpt").string();
  const std::string p2 = (dir / "b.ckpt").string();
  save_checkpoint(m, p1);
  ModelState loaded = load_checkpoint(p1);
  CHECK(loaded.config == m.config);
  save_checkpoint(loaded, p2);

  // save(load(x)) is byte-identical to x
  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  std::vector<char> b1(std::istreambuf_iterator<char>(f1), {});
  std::vector<char> b2(std::istreambuf_iterator<char>(f2), {});
  CHECK(b1 == b2);

  // loaded model computes identical logits to a float32-rounded model
  ForwardResult ra = forward(loaded, {{1, 2, 3}});
  ModelState rounded = m;
  for (auto& [name, t] : rounded.tensors) {
    Tensor copy = t.deep_copy();
    for (std::size_t i = 0; i < copy.size(); ++i)
      copy[i] = static_cast<double>(static_cast<float>(copy[i]));
    rounded.tensors[name] = copy;
  }
  ForwardResult rb = forward(rounded, {{1, 2, 3}});
  for (std::size_t i = 0; i < ra.logits.size(); ++i)
    CHECK(ra.logits[i] == rb.logits[i]);

  fs::remove_all(dir);
}
