#pragma once

#include <climits>
#include <compare>
#include <limits>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "shrinklab/model.hpp"
#include "shrinklab/rng.hpp"
#include "shrinklab/synthdata.hpp"
#include "shrinklab/trainer.hpp"

namespace shrink {

// Discrete architecture lattice. hidden_dim is derived, never free.
struct SearchSpace {
  std::vector<int> layer_ladder;
  std::vector<int> head_ladder;
  std::vector<int> head_dim_ladder;
  std::vector<int> ffd_ladder;

  static SearchSpace standard();
};

// Hard deployment limits. Anything left at its default is unconstrained.
struct Budget {
  double max_latency_ms = std::numeric_limits<double>::infinity();
  long long max_memory_bytes = LLONG_MAX;
  std::optional<double> max_gco2_per_sample;
};

struct Genome {
  int num_layers = 0;
  int num_heads = 0;
  int head_dim = 0;
  int ffd_size = 0;

  int hidden_dim() const { return num_heads * head_dim; }
  auto operator<=>(const Genome&) const = default;
};

// Task-side fields a genome does not control.
struct TaskTemplate {
  int vocab_size = 0;
  int max_seq_len = 0;
  ArchKind arch_kind = ArchKind::EncoderClassifier;
  int num_classes = 2;
};

ArchConfig config_from_genome(const Genome& g, const TaskTemplate& t);

struct Candidate {
  Genome genome;
  std::optional<double> fitness;  // validation loss; +inf ranks last
  bool feasible = false;
};
using Population = std::vector<Candidate>;

Genome sample_genome(const SearchSpace& space, Rng& rng);

// Deterministic analytic latency proxy by default; measured wall-clock of a
// real forward pass behind the `measured` flag. The power/intensity pair
// only matters when the budget carries a CO2-per-sample limit.
struct LatencyModel {
  double host_gflops = 5.0;
  bool measured = false;
  double power_watts = 65.0;
  double carbon_intensity_g_per_kwh = 170.043;
};

struct Feasibility {
  bool feasible = true;
  std::vector<std::string> reasons;  // violated limits: latency/memory/co2
  double latency_ms = 0.0;
  long long memory_bytes = 0;
  double gco2_per_sample = 0.0;
};

// Infeasible is a value, not an error.
Feasibility check_feasibility(const Genome& g, const TaskTemplate& t,
                              const Budget& budget, int seq_len, int batch,
                              const LatencyModel& latency);

// Proxy-train a fresh model of this genome and return its validation loss.
// Deterministic per (genome, seed); a non-finite training run comes back as
// +inf so the candidate ranks last instead of aborting the search.
double evaluate_fitness(const Genome& g, const TaskTemplate& t,
                        const Dataset& train_data, const Dataset& val_data,
                        const ProxyEvalConfig& proxy, std::uint64_t seed);

// Elitism + crossover/mutation over the ranked (= feasible, fitness-bearing)
// subset: slots 1-2 keep the best two verbatim (ties broken by smaller
// parameter count, then lexicographic genome); every other slot picks two
// parents uniformly from the top four, applies uniform per-field crossover
// with probability crossover_rate (else clones parent one), then resamples
// each field from its ladder with probability mutation_rate.
Population evolve(const Population& population, const SearchSpace& space,
                  const TaskTemplate& t, double crossover_rate,
                  double mutation_rate, Rng& rng);

struct BudgetInfeasibleError : std::runtime_error {
  explicit BudgetInfeasibleError(const std::string& constraint)
      : std::runtime_error("budget infeasible: every candidate violates the " +
                           constraint + " limit"),
        binding_constraint(constraint) {}
  std::string binding_constraint;
};

struct NasOptions {
  SearchSpace space = SearchSpace::standard();
  Budget budget;
  int population_size = 12;   // desk-scale defaults; 50/50 mirrors the
  int generations = 8;        // full-scale configuration
  double crossover_rate = 0.7;
  double mutation_rate = 0.1;
  ProxyEvalConfig proxy;
  LatencyModel latency;
  int feasibility_seq_len = 24;
  int feasibility_batch = 1;
  std::uint64_t seed = 0;
  int max_threads = 2;  // concurrent fitness evaluations per generation
};

struct GenerationStats {
  int generation = 0;
  double best_fitness = 0.0;
  double mean_fitness = 0.0;
  double feasible_fraction = 0.0;
};

struct AuditEntry {
  int generation = 0;
  int slot = 0;
  Genome genome;
  bool feasible = false;
  std::vector<std::string> reasons;
  std::optional<double> fitness;
  bool ranked = false;
};

struct NasResult {
  Genome best_genome;
  ArchConfig best_config;
  double best_fitness = 0.0;
  std::vector<GenerationStats> log;
  std::vector<AuditEntry> audit;
};

// Feasibility-filter -> fitness -> evolve, per generation. Candidate seeds
// derive as hash(master, generation, slot); repeated genomes reuse their
// first evaluation, which keeps elites bit-stable and saves proxy runs.
// Throws BudgetInfeasibleError (naming the binding constraint) if a
// generation has no feasible candidate.
NasResult run_nas(const TaskTemplate& t, const Dataset& train_data,
                  const Dataset& val_data, const NasOptions& options);

std::string nas_log_json(const NasResult& result);

}  // namespace shrink
