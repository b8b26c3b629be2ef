#pragma once

#include <string>
#include <vector>

#include "shrinklab/model.hpp"
#include "shrinklab/synthdata.hpp"

namespace shrink {

// Per-layer redundancy record. depth_prior is 1/(l+1) for zero-based l;
// attn_score lies in [1/n, 1] for sequence length n.
struct LayerDiagnostics {
  int layer_index = 0;
  double hidden_norm = 0.0;
  double ff_norm = 0.0;
  double attn_score = 0.0;
  double depth_prior = 0.0;
  double flops = 0.0;
};

enum class NormScaling { SqrtDim, Dim };

// Mean over batch items and token positions of ||h_t||_2 / sqrt(d).
// Dividing by sqrt(d) makes unit-variance rows score ~1 at any width; the
// literal /d variant is selectable.
double hidden_state_norm(const TraceCache& trace, int layer,
                         NormScaling scaling = NormScaling::SqrtDim);

// Same statistic over the feedforward-block output tensor.
double feedforward_norm(const TraceCache& trace, int layer,
                        NormScaling scaling = NormScaling::SqrtDim);

// Mean over heads, batch items and query rows of the row max of the
// attention map: exactly 1/n for uniform attention, 1 for one-hot rows.
double attention_head_score(const TraceCache& trace, int layer);

double depth_prior(int layer);  // 1/(l+1)

struct LayerProfile {
  std::vector<LayerDiagnostics> layers;
  // Smallest layer index after which hidden_norm grows by < 5% per layer.
  int plateau_index = 0;
};

// Runs a captured forward pass over (at most) `max_batch` calibration
// examples at their natural lengths and combines all four metrics with the
// analytic per-layer FLOPs at seq_len.
LayerProfile profile_layers(const ModelState& model, const Dataset& calibration,
                            int seq_len, int max_batch = 16,
                            NormScaling scaling = NormScaling::SqrtDim);

// layer,hidden_norm,ff_norm,attn_score,depth_prior,flops
void export_profile_csv(const LayerProfile& profile, const std::string& path);
std::string profile_summary_json(const LayerProfile& profile);

}  // namespace shrink
