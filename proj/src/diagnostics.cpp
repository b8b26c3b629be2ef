#include "shrinklab/diagnostics.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace shrink {

namespace {

double mean_row_norm(const std::vector<Tensor>& items, NormScaling scaling) {
  double sum = 0.0;
  long long rows = 0;
  for (const Tensor& t : items) {
    const int n = t.rows(), d = t.cols();
    const double denom = scaling == NormScaling::SqrtDim
                             ? std::sqrt(static_cast<double>(d))
                             : static_cast<double>(d);
    for (int i = 0; i < n; ++i) {
      double sq = 0.0;
      for (int j = 0; j < d; ++j) {
        const double v = t[static_cast<std::size_t>(i) * d + j];
        sq += v * v;
      }
      sum += std::sqrt(sq) / denom;
      ++rows;
    }
  }
  if (rows == 0) throw std::invalid_argument("diagnostics: empty trace");
  return sum / static_cast<double>(rows);
}

void check_layer(const TraceCache& trace, int layer) {
  if (layer < 0 || layer >= trace.num_layers())
    throw std::invalid_argument("diagnostics: layer out of range");
}

}  // namespace

double hidden_state_norm(const TraceCache& trace, int layer, NormScaling scaling) {
  check_layer(trace, layer);
  return mean_row_norm(trace.hidden[static_cast<std::size_t>(layer)], scaling);
}

double feedforward_norm(const TraceCache& trace, int layer, NormScaling scaling) {
  check_layer(trace, layer);
  return mean_row_norm(trace.ff_out[static_cast<std::size_t>(layer)], scaling);
}

double attention_head_score(const TraceCache& trace, int layer) {
  check_layer(trace, layer);
  double sum = 0.0;
  long long rows = 0;
  for (const auto& item : trace.attention[static_cast<std::size_t>(layer)]) {
    for (const Tensor& map : item) {
      const int n = map.rows();
      for (int i = 0; i < n; ++i) {
        double mx = 0.0;
        for (int j = 0; j < n; ++j)
          mx = std::max(mx, map[static_cast<std::size_t>(i) * n + j]);
        sum += mx;
        ++rows;
      }
    }
  }
  if (rows == 0) throw std::invalid_argument("diagnostics: no attention maps captured");
  return sum / static_cast<double>(rows);
}

double depth_prior(int layer) {
  if (layer < 0) throw std::invalid_argument("depth_prior: negative layer");
  return 1.0 / static_cast<double>(layer + 1);
}

LayerProfile profile_layers(const ModelState& model, const Dataset& calibration,
                            int seq_len, int max_batch, NormScaling scaling) {
  if (calibration.examples.empty())
    throw std::invalid_argument("profile_layers: empty calibration set");

  std::vector<std::vector<int>> inputs;
  const std::size_t take =
      std::min<std::size_t>(static_cast<std::size_t>(max_batch), calibration.size());
  for (std::size_t i = 0; i < take; ++i) {
    const Example& e = calibration.examples[i];
    inputs.push_back(calibration.kind == TaskKind::ClonePairs ? encode_pair(e)
                                                              : e.tokens);
  }

  ForwardOptions opt;
  opt.capture = true;
  ForwardResult fwd = forward(model, inputs, opt);

  const std::vector<double> flops = estimate_flops(model.config, seq_len);
  LayerProfile profile;
  for (int l = 0; l < model.config.num_layers; ++l) {
    LayerDiagnostics d;
    d.layer_index = l;
    d.hidden_norm = hidden_state_norm(fwd.trace, l, scaling);
    d.ff_norm = feedforward_norm(fwd.trace, l, scaling);
    d.attn_score = attention_head_score(fwd.trace, l);
    d.depth_prior = depth_prior(l);
    d.flops = flops[static_cast<std::size_t>(l)];
    profile.layers.push_back(d);
  }

  // Plateau: smallest l such that every later layer gains < 5% hidden norm.
  const double kGain = 1.05;
  int plateau = model.config.num_layers - 1;
  for (int l = 0; l < model.config.num_layers - 1; ++l) {
    bool flat = true;
    for (int j = l + 1; j < model.config.num_layers && flat; ++j)
      if (profile.layers[static_cast<std::size_t>(j)].hidden_norm >=
          kGain * profile.layers[static_cast<std::size_t>(j - 1)].hidden_norm)
        flat = false;
    if (flat) {
      plateau = l;
      break;
    }
  }
  profile.plateau_index = plateau;
  return profile;
}

void export_profile_csv(const LayerProfile& profile, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("export_profile_csv: cannot open " + path);
  out << "layer,hidden_norm,ff_norm,attn_score,depth_prior,flops\n";
  for (const LayerDiagnostics& d : profile.layers)
    out << d.layer_index << ',' << d.hidden_norm << ',' << d.ff_norm << ','
        << d.attn_score << ',' << d.depth_prior << ',' << d.flops << '\n';
}

std::string profile_summary_json(const LayerProfile& profile) {
  nlohmann::json j;
  j["num_layers"] = profile.layers.size();
  j["plateau_index"] = profile.plateau_index;
  nlohmann::json rows = nlohmann::json::array();
  for (const LayerDiagnostics& d : profile.layers)
    rows.push_back({{"layer", d.layer_index},
                    {"hidden_norm", d.hidden_norm},
                    {"ff_norm", d.ff_norm},
                    {"attn_score", d.attn_score},
                    {"depth_prior", d.depth_prior},
                    {"flops", d.flops}});
  j["layers"] = rows;
  return j.dump(2);
}

}  // namespace shrink
