#include "shrinklab/synthdata.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "json.hpp"

namespace shrink {

namespace {

// Transform selection probabilities for positive pairs. Tuned so that the
// pair task is learnable by a small transformer but a bag-of-tokens overlap
// baseline stays well below its ceiling (renamed identifiers suppress
// overlap, the small operator set creates chance overlap in negatives).
constexpr double kRenameProb = 0.75;
constexpr double kSwapProb = 0.5;
constexpr double kInsertProb = 0.35;

constexpr int kLmMaxDepth = 2;
constexpr double kLmBranchProb = 0.55;

enum class Sym { Expr, Op, Rparen, End };

// Parses tokens[*pos..] against the expectation stack; returns false on the
// first illegal token. Shared by grammar_valid and legal_continuations.
bool run_grammar_machine(const std::vector<int>& tokens, const VocabLayout& v,
                         std::vector<Sym>& stack, std::size_t* consumed) {
  stack.clear();
  *consumed = 0;
  if (tokens.empty() || tokens[0] != kBos) return false;
  stack.push_back(Sym::End);
  stack.push_back(Sym::Expr);
  *consumed = 1;
  for (std::size_t i = 1; i < tokens.size(); ++i) {
    if (stack.empty()) return false;  // trailing tokens
    const int t = tokens[i];
    const Sym top = stack.back();
    switch (top) {
      case Sym::Expr:
        if (t == kLparen) {
          stack.pop_back();
          stack.push_back(Sym::Rparen);
          stack.push_back(Sym::Expr);
          stack.push_back(Sym::Op);
          stack.push_back(Sym::Expr);
        } else if (v.is_ident(t)) {
          stack.pop_back();
        } else {
          return false;
        }
        break;
      case Sym::Op:
        if (!v.is_op(t)) return false;
        stack.pop_back();
        break;
      case Sym::Rparen:
        if (t != kRparen) return false;
        stack.pop_back();
        break;
      case Sym::End:
        if (t != kEos) return false;
        stack.pop_back();
        break;
    }
    *consumed = i + 1;
  }
  return true;
}

}  // namespace

VocabLayout vocab_layout(int vocab_size) {
  if (vocab_size < 16)
    throw std::invalid_argument("vocab_layout: vocab_size must be >= 16");
  VocabLayout v;
  v.vocab_size = vocab_size;
  const int rest = vocab_size - 6;
  const int n_ident = (rest + 1) / 2;
  const int n_op = std::max(2, rest / 4);
  v.ident_lo = 6;
  v.ident_hi = 6 + n_ident;
  v.op_lo = v.ident_hi;
  v.op_hi = v.op_lo + n_op;
  v.noop_lo = v.op_hi;
  v.noop_hi = vocab_size;
  if (v.n_noops() < 1)
    throw std::invalid_argument("vocab_layout: vocabulary too small");
  return v;
}

std::vector<int> clone_base_sequence(Rng& rng, const VocabLayout& v,
                                     std::pair<int, int> len_range) {
  if (len_range.first < 3 || len_range.second < len_range.first)
    throw std::invalid_argument("clone_base_sequence: invalid length range");
  const int target = rng.uniform_int(len_range.first, len_range.second);
  const int units = std::max(2, (target + 1) / 2);
  std::vector<int> seq;
  seq.reserve(2 * units - 1);
  seq.push_back(rng.uniform_int(v.ident_lo, v.ident_hi - 1));
  for (int u = 1; u < units; ++u) {
    seq.push_back(rng.uniform_int(v.op_lo, v.op_hi - 1));
    seq.push_back(rng.uniform_int(v.ident_lo, v.ident_hi - 1));
  }
  return seq;
}

std::vector<int> apply_clone_transforms(const std::vector<int>& base,
                                        const VocabLayout& v,
                                        const CloneTransforms& t, Rng& rng) {
  std::vector<int> seq = base;

  if (t.rename) {
    std::vector<int> perm(static_cast<std::size_t>(v.n_idents()));
    std::iota(perm.begin(), perm.end(), v.ident_lo);
    rng.shuffle(perm);
    for (int& tok : seq)
      if (v.is_ident(tok)) tok = perm[static_cast<std::size_t>(tok - v.ident_lo)];
  }

  if (t.swap_segments) {
    std::vector<std::size_t> sites;
    for (std::size_t i = 1; i + 1 < seq.size(); ++i)
      if (v.is_commutative_op(seq[i]) && v.is_ident(seq[i - 1]) &&
          v.is_ident(seq[i + 1]))
        sites.push_back(i);
    if (!sites.empty()) {
      const std::size_t p = sites[rng.next_below(sites.size())];
      std::swap(seq[p - 1], seq[p + 1]);
    }
  }

  if (t.insert_noops) {
    // Appended rather than interleaved: no-ops never disturb the positional
    // structure of the content tokens.
    const int k = rng.uniform_int(1, 2);
    for (int i = 0; i < k; ++i)
      seq.push_back(rng.uniform_int(v.noop_lo, v.noop_hi - 1));
  }
  return seq;
}

Dataset generate_clone_dataset(std::uint64_t seed, int n_pairs, int vocab_size,
                               std::pair<int, int> len_range) {
  if (n_pairs < 1) throw std::invalid_argument("generate_clone_dataset: n_pairs < 1");
  const VocabLayout v = vocab_layout(vocab_size);
  Dataset ds;
  ds.kind = TaskKind::ClonePairs;
  ds.vocab_size = vocab_size;
  ds.seed = seed;
  ds.examples.reserve(static_cast<std::size_t>(n_pairs));

  for (int i = 0; i < n_pairs; ++i) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i), 0xc10e));
    Example e;
    e.label = (i % 2 == 0) ? 1 : 0;
    e.tokens = clone_base_sequence(rng, v, len_range);
    if (e.label == 1) {
      CloneTransforms t;
      t.rename = rng.uniform() < kRenameProb;
      t.swap_segments = rng.uniform() < kSwapProb;
      t.insert_noops = rng.uniform() < kInsertProb;
      if (!t.rename && !t.swap_segments && !t.insert_noops) t.rename = true;
      e.tokens_b = apply_clone_transforms(e.tokens, v, t, rng);
      while (e.tokens_b == e.tokens) {
        // identity permutation or no-op swap; force a visible change
        CloneTransforms force;
        force.insert_noops = true;
        e.tokens_b = apply_clone_transforms(e.tokens, v, force, rng);
      }
    } else {
      e.tokens_b = clone_base_sequence(rng, v, len_range);
      while (e.tokens_b == e.tokens)
        e.tokens_b = clone_base_sequence(rng, v, len_range);
    }
    ds.examples.push_back(std::move(e));
  }
  return ds;
}

namespace {

void gen_expr(Rng& rng, const VocabLayout& v, int depth, std::vector<int>& out) {
  if (depth < kLmMaxDepth && rng.uniform() < kLmBranchProb) {
    out.push_back(kLparen);
    gen_expr(rng, v, depth + 1, out);
    out.push_back(rng.uniform_int(v.op_lo, v.op_hi - 1));
    gen_expr(rng, v, depth + 1, out);
    out.push_back(kRparen);
  } else {
    out.push_back(rng.uniform_int(v.ident_lo, v.ident_hi - 1));
  }
}

}  // namespace

Dataset generate_lm_dataset(std::uint64_t seed, int n_seqs,
                            std::pair<int, int> len_range) {
  if (n_seqs < 1) throw std::invalid_argument("generate_lm_dataset: n_seqs < 1");
  // The layout only matters through the class ranges; fix a 32-token vocab.
  const int vocab = 32;
  const VocabLayout v = vocab_layout(vocab);
  Dataset ds;
  ds.kind = TaskKind::GrammarLm;
  ds.vocab_size = vocab;
  ds.seed = seed;
  ds.examples.reserve(static_cast<std::size_t>(n_seqs));
  for (int i = 0; i < n_seqs; ++i) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i), 0x11aa));
    Example e;
    for (int attempt = 0;; ++attempt) {
      e.tokens.clear();
      e.tokens.push_back(kBos);
      gen_expr(rng, v, 0, e.tokens);
      e.tokens.push_back(kEos);
      const int len = static_cast<int>(e.tokens.size());
      if (len >= len_range.first && len <= len_range.second) break;
      if (attempt > 1000)
        throw std::invalid_argument("generate_lm_dataset: length range unreachable");
    }
    ds.examples.push_back(std::move(e));
  }
  return ds;
}

bool grammar_valid(const std::vector<int>& tokens, const VocabLayout& v) {
  std::vector<Sym> stack;
  std::size_t consumed = 0;
  if (!run_grammar_machine(tokens, v, stack, &consumed)) return false;
  return consumed == tokens.size() && stack.empty();
}

std::vector<int> legal_continuations(const std::vector<int>& prefix,
                                     const VocabLayout& v) {
  std::vector<Sym> stack;
  std::size_t consumed = 0;
  if (!run_grammar_machine(prefix, v, stack, &consumed) ||
      consumed != prefix.size())
    throw std::invalid_argument("legal_continuations: prefix is not viable");
  std::vector<int> out;
  if (stack.empty()) return out;  // complete sequence, nothing may follow
  switch (stack.back()) {
    case Sym::Expr:
      out.push_back(kLparen);
      for (int t = v.ident_lo; t < v.ident_hi; ++t) out.push_back(t);
      break;
    case Sym::Op:
      for (int t = v.op_lo; t < v.op_hi; ++t) out.push_back(t);
      break;
    case Sym::Rparen:
      out.push_back(kRparen);
      break;
    case Sym::End:
      out.push_back(kEos);
      break;
  }
  return out;
}

std::array<Dataset, 3> split_dataset(const Dataset& ds,
                                     std::array<double, 3> fractions,
                                     std::uint64_t seed) {
  const double sum = fractions[0] + fractions[1] + fractions[2];
  if (std::abs(sum - 1.0) > 1e-9)
    throw std::invalid_argument("split: fractions must sum to 1");
  const std::size_t n = ds.size();
  const std::size_t n0 = static_cast<std::size_t>(fractions[0] * static_cast<double>(n));
  const std::size_t n1 = static_cast<std::size_t>(fractions[1] * static_cast<double>(n));
  if (n0 == 0 || n1 == 0 || n0 + n1 >= n)
    throw std::invalid_argument("split: degenerate fraction produces an empty split");

  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(derive_seed(seed, 0x5b117));
  rng.shuffle(perm);

  std::array<Dataset, 3> out;
  for (Dataset& d : out) {
    d.kind = ds.kind;
    d.vocab_size = ds.vocab_size;
    d.seed = ds.seed;
  }
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t which = i < n0 ? 0 : (i < n0 + n1 ? 1 : 2);
    out[which].examples.push_back(ds.examples[perm[i]]);
  }
  return out;
}

std::vector<int> encode_pair(const Example& e) {
  std::vector<int> out;
  out.reserve(e.tokens.size() + e.tokens_b.size() + 2);
  out.push_back(kCls);
  out.insert(out.end(), e.tokens.begin(), e.tokens.end());
  out.push_back(kSep);
  out.insert(out.end(), e.tokens_b.begin(), e.tokens_b.end());
  return out;
}

void export_jsonl(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("export_jsonl: cannot open " + path);
  for (const Example& e : ds.examples) {
    nlohmann::json rec{{"tokens", e.tokens}, {"label", e.label}};
    if (ds.kind == TaskKind::ClonePairs) rec["tokens_b"] = e.tokens_b;
    out << rec.dump() << '\n';
  }
}

Dataset import_jsonl(const std::string& path, TaskKind kind, int vocab_size) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("import_jsonl: cannot open " + path);
  Dataset ds;
  ds.kind = kind;
  ds.vocab_size = vocab_size;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const nlohmann::json rec = nlohmann::json::parse(line);
    Example e;
    rec.at("tokens").get_to(e.tokens);
    e.label = rec.value("label", -1);
    if (rec.contains("tokens_b")) rec.at("tokens_b").get_to(e.tokens_b);
    ds.examples.push_back(std::move(e));
  }
  return ds;
}

}  // namespace shrink
