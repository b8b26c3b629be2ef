#include "shrinklab/nas.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <future>
#include <limits>
#include <map>

#include "json.hpp"
#include "shrinklab/json_util.hpp"
#include "shrinklab/ops.hpp"

namespace shrink {

SearchSpace SearchSpace::standard() {
  SearchSpace s;
  for (int l = 2; l <= 12; ++l) s.layer_ladder.push_back(l);
  s.head_ladder = {2, 4, 6, 8, 10, 12};
  s.head_dim_ladder = {2, 4, 8, 16, 32, 64, 96, 128};
  // Log-spaced steps plus the widths the compressed families actually use.
  s.ffd_ladder = {4, 8, 16, 32, 64, 96, 128, 256, 512, 768, 1024, 2048, 3072};
  return s;
}

ArchConfig config_from_genome(const Genome& g, const TaskTemplate& t) {
  ArchConfig c;
  c.num_layers = g.num_layers;
  c.num_heads = g.num_heads;
  c.head_dim = g.head_dim;
  c.hidden_dim = g.hidden_dim();
  c.ffd_size = g.ffd_size;
  c.vocab_size = t.vocab_size;
  c.max_seq_len = t.max_seq_len;
  c.arch_kind = t.arch_kind;
  c.num_classes = t.num_classes;
  return c;
}

namespace {

int pick(const std::vector<int>& ladder, Rng& rng) {
  return ladder[rng.next_below(ladder.size())];
}

}  // namespace

Genome sample_genome(const SearchSpace& space, Rng& rng) {
  Genome g;
  g.num_layers = pick(space.layer_ladder, rng);
  g.num_heads = pick(space.head_ladder, rng);
  g.head_dim = pick(space.head_dim_ladder, rng);
  g.ffd_size = pick(space.ffd_ladder, rng);
  return g;
}

Feasibility check_feasibility(const Genome& g, const TaskTemplate& t,
                              const Budget& budget, int seq_len, int batch,
                              const LatencyModel& latency) {
  Feasibility f;
  const ArchConfig config = config_from_genome(g, t);

  if (latency.measured) {
    ModelState model = build_model(config, 0xbe9c);
    std::vector<int> seq(static_cast<std::size_t>(seq_len), 0);
    std::vector<std::vector<int>> inputs(static_cast<std::size_t>(batch), seq);
    forward(model, inputs);  // warmup
    const auto t0 = std::chrono::steady_clock::now();
    forward(model, inputs);
    const auto t1 = std::chrono::steady_clock::now();
    f.latency_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
  } else {
    const double flops = static_cast<double>(batch) * model_total_flops(config, seq_len);
    f.latency_ms = flops / (latency.host_gflops * 1e9) * 1e3;
  }
  f.memory_bytes = estimate_memory(config, batch, seq_len, Precision::Real);
  const double sample_seconds = f.latency_ms / 1e3 / static_cast<double>(batch);
  const double kwh = latency.power_watts * sample_seconds / 3.6e6;
  f.gco2_per_sample = kwh * latency.carbon_intensity_g_per_kwh;

  if (f.latency_ms > budget.max_latency_ms) f.reasons.push_back("latency");
  if (f.memory_bytes > budget.max_memory_bytes) f.reasons.push_back("memory");
  if (budget.max_gco2_per_sample && f.gco2_per_sample > *budget.max_gco2_per_sample)
    f.reasons.push_back("co2");
  f.feasible = f.reasons.empty();
  return f;
}

double evaluate_fitness(const Genome& g, const TaskTemplate& t,
                        const Dataset& train_data, const Dataset& val_data,
                        const ProxyEvalConfig& proxy, std::uint64_t seed) {
  try {
    const EvalMetrics m =
        proxy_evaluate(config_from_genome(g, t), train_data, val_data, proxy, seed);
    if (!std::isfinite(m.mean_loss))
      return std::numeric_limits<double>::infinity();
    return m.mean_loss;
  } catch (const NonFiniteGradientError&) {
    return std::numeric_limits<double>::infinity();
  } catch (const std::runtime_error&) {  // non-finite loss mid-training
    return std::numeric_limits<double>::infinity();
  }
}

namespace {

struct RankKey {
  double fitness;
  long long params;
  Genome genome;

  bool operator<(const RankKey& o) const {
    if (fitness != o.fitness) return fitness < o.fitness;
    if (params != o.params) return params < o.params;
    return genome < o.genome;
  }
};

std::vector<const Candidate*> ranked_candidates(const Population& pop,
                                                const TaskTemplate& t) {
  std::vector<const Candidate*> ranked;
  for (const Candidate& c : pop)
    if (c.feasible && c.fitness) ranked.push_back(&c);
  std::stable_sort(ranked.begin(), ranked.end(),
                   [&](const Candidate* a, const Candidate* b) {
                     return RankKey{*a->fitness,
                                    count_parameters(config_from_genome(a->genome, t)),
                                    a->genome} <
                            RankKey{*b->fitness,
                                    count_parameters(config_from_genome(b->genome, t)),
                                    b->genome};
                   });
  return ranked;
}

}  // namespace

Population evolve(const Population& population, const SearchSpace& space,
                  const TaskTemplate& t, double crossover_rate,
                  double mutation_rate, Rng& rng) {
  if (population.size() < 4)
    throw std::invalid_argument("evolve: population must hold at least 4 candidates");
  const std::vector<const Candidate*> ranked = ranked_candidates(population, t);
  if (ranked.empty())
    throw std::invalid_argument("evolve: no ranked candidate to select from");

  Population next;
  next.reserve(population.size());
  const std::size_t n_elites = std::min<std::size_t>(2, ranked.size());
  for (std::size_t i = 0; i < n_elites; ++i) next.push_back(*ranked[i]);  // verbatim

  const std::size_t top_k = std::min<std::size_t>(4, ranked.size());
  auto resample_field = [&](int& field, const std::vector<int>& ladder) {
    if (rng.uniform() < mutation_rate) field = pick(ladder, rng);
  };
  while (next.size() < population.size()) {
    const Genome& p1 = ranked[rng.next_below(top_k)]->genome;
    const Genome& p2 = ranked[rng.next_below(top_k)]->genome;
    Genome child = p1;
    if (rng.uniform() < crossover_rate) {
      if (rng.uniform() < 0.5) child.num_layers = p2.num_layers;
      if (rng.uniform() < 0.5) child.num_heads = p2.num_heads;
      if (rng.uniform() < 0.5) child.head_dim = p2.head_dim;
      if (rng.uniform() < 0.5) child.ffd_size = p2.ffd_size;
    }
    resample_field(child.num_layers, space.layer_ladder);
    resample_field(child.num_heads, space.head_ladder);
    resample_field(child.head_dim, space.head_dim_ladder);
    resample_field(child.ffd_size, space.ffd_ladder);
    Candidate c;
    c.genome = child;
    next.push_back(std::move(c));
  }
  return next;
}

NasResult run_nas(const TaskTemplate& t, const Dataset& train_data,
                  const Dataset& val_data, const NasOptions& options) {
  if (options.population_size < 4)
    throw std::invalid_argument("run_nas: population_size must be >= 4");

  Population pop;
  {
    Rng rng(derive_seed(options.seed, 0x1217));
    for (int i = 0; i < options.population_size; ++i) {
      Candidate c;
      c.genome = sample_genome(options.space, rng);
      pop.push_back(std::move(c));
    }
  }

  NasResult result;
  std::map<Genome, double> fitness_cache;
  bool have_best = false;
  RankKey best_key{};

  for (int gen = 0; gen < options.generations; ++gen) {
    // Feasibility filter precedes ranking; infeasible genomes are never
    // evaluated or ranked.
    std::vector<Feasibility> feas(pop.size());
    for (std::size_t slot = 0; slot < pop.size(); ++slot) {
      feas[slot] = check_feasibility(pop[slot].genome, t, options.budget,
                                     options.feasibility_seq_len,
                                     options.feasibility_batch, options.latency);
      pop[slot].feasible = feas[slot].feasible;
      if (!pop[slot].feasible) pop[slot].fitness.reset();
    }

    // Unique uncached feasible genomes, evaluated concurrently with seeds
    // pinned to their first slot this generation.
    std::vector<std::pair<Genome, std::uint64_t>> to_eval;
    for (std::size_t slot = 0; slot < pop.size(); ++slot) {
      const Candidate& c = pop[slot];
      if (!c.feasible || fitness_cache.count(c.genome)) continue;
      bool queued = false;
      for (const auto& [g, s] : to_eval) queued = queued || g == c.genome;
      if (!queued)
        to_eval.emplace_back(c.genome,
                             derive_seed(options.seed, static_cast<std::uint64_t>(gen),
                                         static_cast<std::uint64_t>(slot)));
    }
    for (std::size_t at = 0; at < to_eval.size();
         at += static_cast<std::size_t>(options.max_threads)) {
      const std::size_t end = std::min(
          to_eval.size(), at + static_cast<std::size_t>(options.max_threads));
      std::vector<std::future<double>> futures;
      for (std::size_t i = at; i < end; ++i)
        futures.push_back(std::async(std::launch::async, [&, i]() {
          return evaluate_fitness(to_eval[i].first, t, train_data, val_data,
                                  options.proxy, to_eval[i].second);
        }));
      for (std::size_t i = at; i < end; ++i)
        fitness_cache[to_eval[i].first] = futures[i - at].get();
    }

    double sum = 0.0, best = std::numeric_limits<double>::infinity();
    int n_ranked = 0, n_feasible = 0;
    for (std::size_t slot = 0; slot < pop.size(); ++slot) {
      Candidate& c = pop[slot];
      AuditEntry a;
      a.generation = gen;
      a.slot = static_cast<int>(slot);
      a.genome = c.genome;
      a.feasible = c.feasible;
      a.reasons = feas[slot].reasons;
      if (c.feasible) {
        ++n_feasible;
        c.fitness = fitness_cache.at(c.genome);
        a.fitness = c.fitness;
        a.ranked = true;
        ++n_ranked;
        sum += *c.fitness;
        best = std::min(best, *c.fitness);
        const RankKey key{*c.fitness,
                          count_parameters(config_from_genome(c.genome, t)),
                          c.genome};
        if (!have_best || key < best_key) {
          best_key = key;
          result.best_genome = c.genome;
          result.best_fitness = *c.fitness;
          have_best = true;
        }
      }
      result.audit.push_back(std::move(a));
    }

    if (n_ranked == 0) {
      // Name the most frequently violated limit this generation.
      std::map<std::string, int> counts;
      for (const Feasibility& f : feas)
        for (const std::string& r : f.reasons) counts[r]++;
      std::string binding = "memory";
      int most = -1;
      for (const auto& [reason, n] : counts)
        if (n > most) {
          most = n;
          binding = reason;
        }
      throw BudgetInfeasibleError(binding);
    }

    GenerationStats stats;
    stats.generation = gen;
    stats.best_fitness = best;
    stats.mean_fitness = sum / n_ranked;
    stats.feasible_fraction =
        static_cast<double>(n_feasible) / static_cast<double>(pop.size());
    result.log.push_back(stats);

    if (gen + 1 < options.generations) {
      Rng rng(derive_seed(options.seed, 0xe701e, static_cast<std::uint64_t>(gen)));
      pop = evolve(pop, options.space, t, options.crossover_rate,
                   options.mutation_rate, rng);
    }
  }

  result.best_config = config_from_genome(result.best_genome, t);
  return result;
}

std::string nas_log_json(const NasResult& result) {
  nlohmann::json j;
  j["best_genome"] = {{"num_layers", result.best_genome.num_layers},
                      {"num_heads", result.best_genome.num_heads},
                      {"head_dim", result.best_genome.head_dim},
                      {"ffd_size", result.best_genome.ffd_size}};
  j["best_config"] = result.best_config;
  j["best_fitness"] = result.best_fitness;
  nlohmann::json gens = nlohmann::json::array();
  for (const GenerationStats& s : result.log)
    gens.push_back({{"generation", s.generation},
                    {"best_fitness", s.best_fitness},
                    {"mean_fitness", s.mean_fitness},
                    {"feasible_fraction", s.feasible_fraction}});
  j["generations"] = gens;
  nlohmann::json audit = nlohmann::json::array();
  for (const AuditEntry& a : result.audit) {
    nlohmann::json e{{"generation", a.generation},
                     {"slot", a.slot},
                     {"genome",
                      {{"num_layers", a.genome.num_layers},
                       {"num_heads", a.genome.num_heads},
                       {"head_dim", a.genome.head_dim},
                       {"ffd_size", a.genome.ffd_size}}},
                     {"feasible", a.feasible},
                     {"reasons", a.reasons},
                     {"ranked", a.ranked}};
    if (a.fitness) e["fitness"] = *a.fitness;
    audit.push_back(std::move(e));
  }
  j["audit"] = audit;
  return j.dump(2);
}

}  // namespace shrink
