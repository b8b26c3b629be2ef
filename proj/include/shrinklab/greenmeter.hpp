#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "shrinklab/model.hpp"
#include "shrinklab/synthdata.hpp"

namespace shrink {

// Inference measurement record. Internal equalities hold exactly:
// co2_g == energy_kwh * carbon_intensity, co2_g_per_sample == co2_g / n,
// p50 <= p95.
struct GreenReport {
  std::size_t n_samples = 0;
  std::vector<double> latency_ms;  // per batch, execution order
  double p50_ms = 0.0;
  double p95_ms = 0.0;
  double total_wall_s = 0.0;
  long long peak_memory_bytes = 0;
  double energy_kwh = 0.0;
  double co2_g = 0.0;
  double co2_g_per_sample = 0.0;
  double carbon_intensity_g_per_kwh = 0.0;
  double device_power_w = 0.0;
};

// Monotonic per-batch wall-clock over `reps` passes of the dataset; the
// first `warmup` batches run untimed.
std::vector<double> time_inference(const ModelState& model, const Dataset& data,
                                   int batch_size, int warmup, int reps);

// Nearest-rank percentile: value at index ceil(p/100 * n) of the ascending
// sort (1-indexed). p in (0, 100].
double percentile(const std::vector<double>& samples, double p);

// power_w * duration_s / 3.6e6
double estimate_energy(double duration_s, double device_power_w);

// kwh * intensity
double co2_from_energy(double kwh, double intensity_g_per_kwh);

// Pluggable power source. The default is a constant host-power model; a
// probe-backed implementation can slot in without touching measure_run.
class PowerModel {
 public:
  virtual ~PowerModel() = default;
  virtual double power_watts(double elapsed_s) const = 0;
};

class ConstantPower : public PowerModel {
 public:
  explicit ConstantPower(double watts) : watts_(watts) {}
  double power_watts(double) const override { return watts_; }

 private:
  double watts_;
};

struct InferenceWorkload {
  // Runs the full workload once, returning per-batch latencies in ms.
  std::function<std::vector<double>()> run;
  std::size_t n_samples = 0;
  long long peak_memory_bytes = 0;
  // measure_run reads the process high-water mark after the run instead of
  // trusting peak_memory_bytes.
  bool probe_peak_memory = false;
};

// Wraps the workload, integrates the power model over fixed sampling
// intervals (the last partial interval pro-rated) and fills every report
// field. A workload failure propagates; no partial report escapes.
GreenReport measure_run(const InferenceWorkload& workload,
                        const PowerModel& power, double intensity_g_per_kwh,
                        double sampling_interval_s = 15.0);

// Workload over a model and dataset. Peak memory defaults to the analytic
// estimate at the dataset's longest encoded sequence; `measured_memory`
// swaps in the process high-water mark probe instead.
InferenceWorkload inference_workload(const ModelState& model,
                                     const Dataset& data, int batch_size,
                                     int warmup, int reps,
                                     bool measured_memory = false);

// /proc/self/status VmHWM, in bytes (0 if unavailable).
long long process_peak_memory_bytes();

std::string green_report_json(const GreenReport& report);

}  // namespace shrink
