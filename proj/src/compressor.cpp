#include "shrinklab/compressor.hpp"

#include <algorithm>

#include "json.hpp"
#include "shrinklab/json_util.hpp"

namespace shrink {

namespace {

// Largest ladder value strictly below v; 0 when exhausted. Off-ladder
// starting points (a hand-built teacher) step onto the ladder.
int step_down(const std::vector<int>& ladder, int v) {
  int best = 0;
  for (int x : ladder)
    if (x < v) best = std::max(best, x);
  return best;
}

struct Component {
  const char* name;
  const std::vector<int>* ladder;
  int ArchConfig::* field;
};

}  // namespace

PruneLog structured_prune(const ArchConfig& arch, const Dataset& train_data,
                          const Dataset& val_data, double epsilon,
                          const ProxyEvalConfig& proxy,
                          const SearchSpace& space, std::uint64_t seed) {
  arch.validate();
  PruneLog log;
  log.input_config = arch;

  ArchConfig current = arch;
  double baseline =
      proxy_evaluate(current, train_data, val_data, proxy, derive_seed(seed, 0))
          .primary(arch.arch_kind);
  log.baseline_metric = baseline;

  const Component components[] = {
      {"layers", &space.layer_ladder, &ArchConfig::num_layers},
      {"heads", &space.head_ladder, &ArchConfig::num_heads},
      {"head_dim", &space.head_dim_ladder, &ArchConfig::head_dim},
      {"ffd", &space.ffd_ladder, &ArchConfig::ffd_size},
  };

  std::uint64_t notch = 0;
  for (const Component& comp : components) {
    while (true) {
      const int from = current.*(comp.field);
      const int to = step_down(*comp.ladder, from);
      if (to == 0) break;  // ladder exhausted for this component

      ArchConfig candidate = current;
      candidate.*(comp.field) = to;
      candidate.hidden_dim = candidate.num_heads * candidate.head_dim;
      const double metric =
          proxy_evaluate(candidate, train_data, val_data, proxy,
                         derive_seed(seed, 1, ++notch))
              .primary(arch.arch_kind);

      PruneRecord rec;
      rec.component = comp.name;
      rec.from_value = from;
      rec.to_value = to;
      rec.metric_before = baseline;
      rec.metric_after = metric;
      rec.accepted = (baseline - metric) <= epsilon;
      log.records.push_back(rec);

      if (!rec.accepted) break;  // revert, move to the next component
      current = candidate;
      baseline = metric;
    }
  }

  log.output_config = current;
  return log;
}

ArchConfig replay_prune_log(const PruneLog& log) {
  ArchConfig c = log.input_config;
  for (const PruneRecord& r : log.records) {
    if (!r.accepted) continue;
    if (r.component == "layers")
      c.num_layers = r.to_value;
    else if (r.component == "heads")
      c.num_heads = r.to_value;
    else if (r.component == "head_dim")
      c.head_dim = r.to_value;
    else if (r.component == "ffd")
      c.ffd_size = r.to_value;
    else
      throw std::invalid_argument("replay_prune_log: unknown component " + r.component);
    c.hidden_dim = c.num_heads * c.head_dim;
  }
  return c;
}

std::string prune_log_json(const PruneLog& log) {
  nlohmann::json j;
  j["input_config"] = log.input_config;
  j["output_config"] = log.output_config;
  j["baseline_metric"] = log.baseline_metric;
  nlohmann::json recs = nlohmann::json::array();
  for (const PruneRecord& r : log.records)
    recs.push_back({{"component", r.component},
                    {"from", r.from_value},
                    {"to", r.to_value},
                    {"metric_before", r.metric_before},
                    {"metric_after", r.metric_after},
                    {"decision", r.accepted ? "accepted" : "reverted"}});
  j["records"] = recs;
  return j.dump(2);
}

ModelState quantize_model(const ModelState& model) {
  if (model.precision != Precision::Real)
    throw std::invalid_argument("quantize_model: model is already quantized");
  ModelState out;
  out.config = model.config;
  out.precision = Precision::Int8Weights;
  out.quantize_aware = false;  // values already sit on the int8 grid
  for (const auto& [name, tensor] : model.tensors) {
    if (is_weight_matrix(name)) {
      QuantTensor q = quantize_tensor(tensor);
      out.tensors[name] = dequantize(q);
      out.quantized[name] = std::move(q);
    } else {
      out.tensors[name] = tensor.deep_copy();
    }
  }
  return out;
}

}  // namespace shrink
