#include "shrinklab/greenmeter.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace shrink {

namespace {

using Clock = std::chrono::steady_clock;

std::vector<std::vector<std::vector<int>>> build_batches(const Dataset& data,
                                                         int batch_size) {
  if (data.examples.empty())
    throw std::invalid_argument("time_inference: empty dataset");
  if (batch_size < 1)
    throw std::invalid_argument("time_inference: batch_size must be >= 1");
  std::vector<std::vector<std::vector<int>>> batches;
  for (std::size_t at = 0; at < data.size();
       at += static_cast<std::size_t>(batch_size)) {
    const std::size_t take =
        std::min<std::size_t>(static_cast<std::size_t>(batch_size),
                              data.size() - at);
    std::vector<std::vector<int>> batch;
    for (std::size_t i = at; i < at + take; ++i) {
      const Example& e = data.examples[i];
      batch.push_back(data.kind == TaskKind::ClonePairs ? encode_pair(e)
                                                        : e.tokens);
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

}  // namespace

std::vector<double> time_inference(const ModelState& model, const Dataset& data,
                                   int batch_size, int warmup, int reps) {
  if (reps < 1) throw std::invalid_argument("time_inference: reps must be >= 1");
  const auto batches = build_batches(data, batch_size);

  for (int w = 0; w < warmup; ++w)
    forward(model, batches[static_cast<std::size_t>(w) % batches.size()]);

  std::vector<double> samples;
  samples.reserve(batches.size() * static_cast<std::size_t>(reps));
  for (int rep = 0; rep < reps; ++rep) {
    for (const auto& batch : batches) {
      const auto t0 = Clock::now();
      forward(model, batch);
      const auto t1 = Clock::now();
      samples.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
  }
  return samples;
}

double percentile(const std::vector<double>& samples, double p) {
  if (samples.empty()) throw std::invalid_argument("percentile: empty samples");
  if (p <= 0.0 || p > 100.0)
    throw std::invalid_argument("percentile: p must lie in (0, 100]");
  std::vector<double> sorted = samples;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t rank = static_cast<std::size_t>(
      std::ceil(p / 100.0 * static_cast<double>(sorted.size())));
  return sorted[std::max<std::size_t>(rank, 1) - 1];
}

double estimate_energy(double duration_s, double device_power_w) {
  return device_power_w * duration_s / 3.6e6;
}

double co2_from_energy(double kwh, double intensity_g_per_kwh) {
  return kwh * intensity_g_per_kwh;
}

GreenReport measure_run(const InferenceWorkload& workload,
                        const PowerModel& power, double intensity_g_per_kwh,
                        double sampling_interval_s) {
  if (!workload.run) throw std::invalid_argument("measure_run: missing workload");
  if (sampling_interval_s <= 0.0)
    throw std::invalid_argument("measure_run: sampling interval must be positive");

  const auto t0 = Clock::now();
  std::vector<double> latencies = workload.run();  // failures propagate
  const auto t1 = Clock::now();
  const double total_s = std::chrono::duration<double>(t1 - t0).count();

  // Interval integration of the sampled power; the final partial interval is
  // pro-rated. With a constant model this telescopes to power * duration.
  double joules = 0.0;
  double t = 0.0;
  while (t + sampling_interval_s <= total_s) {
    joules += power.power_watts(t) * sampling_interval_s;
    t += sampling_interval_s;
  }
  joules += power.power_watts(t) * (total_s - t);

  GreenReport r;
  r.n_samples = workload.n_samples;
  r.latency_ms = std::move(latencies);
  if (!r.latency_ms.empty()) {
    r.p50_ms = percentile(r.latency_ms, 50.0);
    r.p95_ms = percentile(r.latency_ms, 95.0);
  }
  r.total_wall_s = total_s;
  r.peak_memory_bytes = workload.probe_peak_memory ? process_peak_memory_bytes()
                                                   : workload.peak_memory_bytes;
  r.energy_kwh = joules / 3.6e6;
  r.co2_g = co2_from_energy(r.energy_kwh, intensity_g_per_kwh);
  r.co2_g_per_sample =
      r.n_samples == 0 ? 0.0 : r.co2_g / static_cast<double>(r.n_samples);
  r.carbon_intensity_g_per_kwh = intensity_g_per_kwh;
  r.device_power_w = power.power_watts(0.0);
  return r;
}

long long process_peak_memory_bytes() {
  std::ifstream in("/proc/self/status");
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("VmHWM:", 0) == 0) {
      std::istringstream ss(line.substr(6));
      long long kb = 0;
      ss >> kb;
      return kb * 1024;
    }
  }
  return 0;
}

InferenceWorkload inference_workload(const ModelState& model,
                                     const Dataset& data, int batch_size,
                                     int warmup, int reps,
                                     bool measured_memory) {
  InferenceWorkload w;
  w.n_samples = data.size() * static_cast<std::size_t>(reps);
  w.probe_peak_memory = measured_memory;
  if (!measured_memory) {
    int max_len = 1;
    for (const Example& e : data.examples) {
      const int len = data.kind == TaskKind::ClonePairs
                          ? static_cast<int>(encode_pair(e).size())
                          : static_cast<int>(e.tokens.size());
      max_len = std::max(max_len, len);
    }
    w.peak_memory_bytes =
        estimate_memory(model.config, batch_size, max_len, model.precision);
  }
  // The caller keeps model and data alive for the workload's lifetime.
  w.run = [&model, &data, batch_size, warmup, reps]() {
    return time_inference(model, data, batch_size, warmup, reps);
  };
  return w;
}

std::string green_report_json(const GreenReport& r) {
  nlohmann::json j;
  j["n_samples"] = r.n_samples;
  j["p50_ms"] = r.p50_ms;
  j["p95_ms"] = r.p95_ms;
  j["total_wall_s"] = r.total_wall_s;
  j["peak_memory_bytes"] = r.peak_memory_bytes;
  j["energy_kwh"] = r.energy_kwh;
  j["co2_g"] = r.co2_g;
  j["co2_g_per_sample"] = r.co2_g_per_sample;
  j["carbon_intensity_g_per_kwh"] = r.carbon_intensity_g_per_kwh;
  j["device_power_w"] = r.device_power_w;
  j["latency_ms"] = r.latency_ms;
  return j.dump(2);
}

}  // namespace shrink
