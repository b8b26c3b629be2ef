#include "shrinklab/model.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "shrinklab/ops.hpp"
#include "shrinklab/rng.hpp"

namespace shrink {

namespace {
constexpr double kLnEps = 1e-5;

std::string layer_prefix(int i) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "layer%02d.", i);
  return buf;
}
}  // namespace

void ArchConfig::validate() const {
  if (num_layers < 1) throw std::invalid_argument("config: num_layers must be >= 1");
  if (num_heads < 1 || head_dim < 1)
    throw std::invalid_argument("config: heads and head_dim must be >= 1");
  if (hidden_dim != num_heads * head_dim)
    throw std::invalid_argument("config: hidden_dim must equal num_heads * head_dim");
  if (ffd_size < 1) throw std::invalid_argument("config: ffd_size must be >= 1");
  if (vocab_size < 1 || max_seq_len < 1)
    throw std::invalid_argument("config: vocab_size and max_seq_len must be >= 1");
  if (arch_kind == ArchKind::EncoderClassifier && num_classes < 2)
    throw std::invalid_argument("config: classifier needs >= 2 classes");
}

bool is_weight_matrix(const std::string& name) {
  if (name == "head.w") return true;
  const auto dot = name.rfind('.');
  if (dot == std::string::npos) return false;
  const std::string leaf = name.substr(dot + 1);
  return leaf == "wq" || leaf == "wk" || leaf == "wv" || leaf == "wo" ||
         leaf == "wff1" || leaf == "wff2";
}

ModelState build_model(const ArchConfig& config, std::uint64_t seed) {
  config.validate();
  ModelState m;
  m.config = config;
  Rng rng(derive_seed(seed, 0x6d6f64656cULL));

  const int d = config.hidden_dim;
  const int f = config.ffd_size;

  auto normal = [&](std::vector<int> shape) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal(0.0, 0.02);
    return t;
  };
  auto zeros = [](std::vector<int> shape) { return Tensor(std::move(shape)); };
  auto ones = [](std::vector<int> shape) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = 1.0;
    return t;
  };

  // Construction order is fixed; it defines the RNG consumption order.
  m.tensors["tok_emb"] = normal({config.vocab_size, d});
  m.tensors["pos_emb"] = normal({config.max_seq_len, d});
  for (int l = 0; l < config.num_layers; ++l) {
    const std::string p = layer_prefix(l);
    m.tensors[p + "ln1_g"] = ones({d});
    m.tensors[p + "ln1_b"] = zeros({d});
    m.tensors[p + "wq"] = normal({d, d});
    m.tensors[p + "bq"] = zeros({d});
    m.tensors[p + "wk"] = normal({d, d});
    m.tensors[p + "bk"] = zeros({d});
    m.tensors[p + "wv"] = normal({d, d});
    m.tensors[p + "bv"] = zeros({d});
    m.tensors[p + "wo"] = normal({d, d});
    m.tensors[p + "bo"] = zeros({d});
    m.tensors[p + "ln2_g"] = ones({d});
    m.tensors[p + "ln2_b"] = zeros({d});
    m.tensors[p + "wff1"] = normal({d, f});
    m.tensors[p + "bff1"] = zeros({f});
    m.tensors[p + "wff2"] = normal({f, d});
    m.tensors[p + "bff2"] = zeros({d});
  }
  if (config.arch_kind == ArchKind::EncoderClassifier) {
    m.tensors["head.w"] = normal({d, config.num_classes});
    m.tensors["head.b"] = zeros({config.num_classes});
  }
  return m;
}

long long count_parameters(const ArchConfig& c) {
  const long long d = c.hidden_dim, f = c.ffd_size;
  long long total = static_cast<long long>(c.vocab_size + c.max_seq_len) * d;
  total += c.num_layers * (4 * (d * d + d) + (d * f + f) + (f * d + d) + 2 * (2 * d));
  if (c.arch_kind == ArchKind::EncoderClassifier)
    total += d * c.num_classes + c.num_classes;
  return total;
}

std::vector<double> estimate_flops(const ArchConfig& c, int seq_len) {
  if (seq_len < 1) throw std::invalid_argument("estimate_flops: seq_len must be >= 1");
  const double n = seq_len, d = c.hidden_dim, f = c.ffd_size;
  const double per_layer = 8.0 * n * d * d + 4.0 * n * n * d + 4.0 * n * d * f;
  return std::vector<double>(static_cast<std::size_t>(c.num_layers), per_layer);
}

double model_total_flops(const ArchConfig& c, int seq_len) {
  double total = 0.0;
  for (double v : estimate_flops(c, seq_len)) total += v;
  const double d = c.hidden_dim;
  if (c.arch_kind == ArchKind::EncoderClassifier)
    total += 2.0 * d * c.num_classes;  // pooled single-row readout
  else
    total += 2.0 * seq_len * d * c.vocab_size;  // tied-embedding readout
  return total;
}

long long estimate_memory(const ArchConfig& c, int batch, int seq_len,
                          Precision precision) {
  const long long d = c.hidden_dim, f = c.ffd_size;
  long long param_bytes = 0;
  auto tensor_bytes = [&](long long numel, bool weight) {
    if (precision == Precision::Int8Weights && weight)
      param_bytes += numel + 4;  // int8 values + one float32 scale
    else
      param_bytes += numel * 4;
  };
  tensor_bytes(static_cast<long long>(c.vocab_size) * d, false);  // tok_emb
  tensor_bytes(static_cast<long long>(c.max_seq_len) * d, false); // pos_emb
  for (int l = 0; l < c.num_layers; ++l) {
    for (int w = 0; w < 4; ++w) tensor_bytes(d * d, true);  // wq wk wv wo
    for (int b = 0; b < 4; ++b) tensor_bytes(d, false);     // their biases
    tensor_bytes(d * f, true);                              // wff1
    tensor_bytes(f, false);
    tensor_bytes(f * d, true);  // wff2
    tensor_bytes(d, false);
    tensor_bytes(4 * d, false);  // two layernorm gain/bias pairs
  }
  if (c.arch_kind == ArchKind::EncoderClassifier) {
    tensor_bytes(d * c.num_classes, true);
    tensor_bytes(c.num_classes, false);
  }
  const long long b = batch, n = seq_len, h = c.num_heads, L = c.num_layers;
  const long long act_bytes = b * n * d * (L + 1) * 4 + b * h * n * n * L * 4;
  return param_bytes + act_bytes;
}

namespace {

struct BoundWeights {
  // Tensors actually used in compute (possibly fake-quantized views).
  std::map<std::string, Tensor> use;
  // Raw bound leaves (returned to the trainer for gradient lookup).
  std::map<std::string, Tensor> params;
};

BoundWeights bind_weights(const ModelState& model, Graph* graph) {
  BoundWeights bw;
  for (const auto& [name, tensor] : model.tensors) {
    Tensor bound = graph ? graph->leaf(tensor) : tensor;
    if (graph) bw.params[name] = bound;
    if (model.quantize_aware && is_weight_matrix(name))
      bound = fake_quantize(bound);
    bw.use[name] = bound;
  }
  return bw;
}

}  // namespace

ForwardResult forward(const ModelState& model,
                      const std::vector<std::vector<int>>& tokens,
                      const ForwardOptions& options) {
  const ArchConfig& c = model.config;
  if (tokens.empty()) throw std::invalid_argument("forward: empty batch");
  for (const auto& seq : tokens) {
    if (seq.empty()) throw std::invalid_argument("forward: empty sequence");
    if (static_cast<int>(seq.size()) > c.max_seq_len)
      throw std::invalid_argument("forward: sequence exceeds max_seq_len");
    for (int id : seq)
      if (id < 0 || id >= c.vocab_size)
        throw std::invalid_argument("forward: token out of vocabulary");
  }

  BoundWeights bw = bind_weights(model, options.graph);
  const auto& W = bw.use;
  const bool causal = c.arch_kind == ArchKind::DecoderLm;
  const int dh = c.head_dim;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  ForwardResult result;
  if (options.capture) {
    result.trace.hidden.resize(c.num_layers);
    result.trace.ff_out.resize(c.num_layers);
    result.trace.attention.resize(c.num_layers);
  }

  for (const auto& seq : tokens) {
    const int n = static_cast<int>(seq.size());
    std::vector<int> positions(n);
    for (int i = 0; i < n; ++i) positions[i] = i;

    Tensor x = add(embedding_rows(W.at("tok_emb"), seq),
                   embedding_rows(W.at("pos_emb"), positions));

    for (int l = 0; l < c.num_layers; ++l) {
      const std::string p = layer_prefix(l);
      Tensor a = layer_normalize(x, W.at(p + "ln1_g"), W.at(p + "ln1_b"), kLnEps);
      Tensor q = add_row_bias(matmul(a, W.at(p + "wq")), W.at(p + "bq"));
      Tensor k = add_row_bias(matmul(a, W.at(p + "wk")), W.at(p + "bk"));
      Tensor v = add_row_bias(matmul(a, W.at(p + "wv")), W.at(p + "bv"));

      std::vector<Tensor> head_ctx;
      std::vector<Tensor> head_maps;
      head_ctx.reserve(c.num_heads);
      for (int h = 0; h < c.num_heads; ++h) {
        Tensor qh = slice_cols(q, h * dh, (h + 1) * dh);
        Tensor kh = slice_cols(k, h * dh, (h + 1) * dh);
        Tensor vh = slice_cols(v, h * dh, (h + 1) * dh);
        Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt_dh);
        Tensor probs = attention_softmax(scores, causal);
        if (options.capture) head_maps.push_back(probs.detached().deep_copy());
        head_ctx.push_back(matmul(probs, vh));
      }
      Tensor ctx = concat_cols(head_ctx);
      x = add(x, add_row_bias(matmul(ctx, W.at(p + "wo")), W.at(p + "bo")));

      Tensor b = layer_normalize(x, W.at(p + "ln2_g"), W.at(p + "ln2_b"), kLnEps);
      Tensor inner = gelu(add_row_bias(matmul(b, W.at(p + "wff1")), W.at(p + "bff1")));
      Tensor ff = add_row_bias(matmul(inner, W.at(p + "wff2")), W.at(p + "bff2"));
      x = add(x, ff);

      if (options.capture) {
        result.trace.attention[l].push_back(std::move(head_maps));
        result.trace.ff_out[l].push_back(ff.detached().deep_copy());
        result.trace.hidden[l].push_back(x.detached().deep_copy());
      }
    }

    if (c.arch_kind == ArchKind::EncoderClassifier) {
      Tensor pooled = slice_rows(x, 0, 1);
      result.per_seq.push_back(
          add_row_bias(matmul(pooled, W.at("head.w")), W.at("head.b")));
    } else {
      result.per_seq.push_back(matmul(x, transpose(W.at("tok_emb"))));
    }
  }

  result.logits = result.per_seq.size() == 1 ? result.per_seq[0]
                                             : concat_rows(result.per_seq);
  result.params = std::move(bw.params);
  return result;
}

std::vector<int> generate(const ModelState& model, std::vector<int> prompt,
                          int max_new, int end_token) {
  if (model.config.arch_kind != ArchKind::DecoderLm)
    throw std::invalid_argument("generate: model is not a decoder LM");
  if (prompt.empty()) throw std::invalid_argument("generate: empty prompt");
  for (int step = 0; step < max_new; ++step) {
    if (static_cast<int>(prompt.size()) >= model.config.max_seq_len) break;
    ForwardResult r = forward(model, {prompt});
    const int next = argmax_row(r.logits, r.logits.rows() - 1);
    prompt.push_back(next);
    if (next == end_token) break;
  }
  return prompt;
}

std::uint64_t state_hash(const ModelState& model) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix_bytes = [&h](const void* p, std::size_t len) {
    const unsigned char* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < len; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  };
  auto mix_string = [&](const std::string& s) { mix_bytes(s.data(), s.size()); };

  const int kind = static_cast<int>(model.config.arch_kind);
  const int prec = static_cast<int>(model.precision);
  mix_bytes(&model.config.num_layers, sizeof(int));
  mix_bytes(&model.config.num_heads, sizeof(int));
  mix_bytes(&model.config.head_dim, sizeof(int));
  mix_bytes(&model.config.ffd_size, sizeof(int));
  mix_bytes(&model.config.vocab_size, sizeof(int));
  mix_bytes(&model.config.max_seq_len, sizeof(int));
  mix_bytes(&kind, sizeof(int));
  mix_bytes(&prec, sizeof(int));
  for (const auto& [name, t] : model.tensors) {
    mix_string(name);
    mix_bytes(t.ptr(), t.size() * sizeof(double));
  }
  for (const auto& [name, q] : model.quantized) {
    mix_string(name);
    mix_bytes(&q.scale, sizeof(float));
    mix_bytes(q.values.data(), q.values.size());
  }
  return h;
}

}  // namespace shrink
