#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "shrinklab/rng.hpp"

namespace shrink {

// Special token ids shared by both tasks.
constexpr int kCls = 0;
constexpr int kSep = 1;
constexpr int kBos = 2;
constexpr int kEos = 3;
constexpr int kLparen = 4;
constexpr int kRparen = 5;

// The rest of the vocabulary is partitioned into fixed id ranges so the
// clone transforms (identifier renaming, no-op insertion, commutative swaps)
// are well-defined. Ranges are half-open [lo, hi).
struct VocabLayout {
  int vocab_size = 0;
  int ident_lo = 0, ident_hi = 0;
  int op_lo = 0, op_hi = 0;
  int noop_lo = 0, noop_hi = 0;

  int n_idents() const { return ident_hi - ident_lo; }
  int n_ops() const { return op_hi - op_lo; }
  int n_noops() const { return noop_hi - noop_lo; }
  bool is_ident(int id) const { return id >= ident_lo && id < ident_hi; }
  bool is_op(int id) const { return id >= op_lo && id < op_hi; }
  bool is_noop(int id) const { return id >= noop_lo && id < noop_hi; }
  // Operators in the lower half of the op range commute.
  bool is_commutative_op(int id) const {
    return is_op(id) && id < op_lo + (n_ops() + 1) / 2;
  }
};

VocabLayout vocab_layout(int vocab_size);  // requires vocab_size >= 16

enum class TaskKind { ClonePairs, GrammarLm };

struct Example {
  std::vector<int> tokens;
  std::vector<int> tokens_b;  // clone pairs only
  int label = -1;             // clone pairs: 1 = clone, 0 = not
};

struct Dataset {
  TaskKind kind = TaskKind::ClonePairs;
  int vocab_size = 0;
  std::uint64_t seed = 0;
  std::vector<Example> examples;

  std::size_t size() const { return examples.size(); }
};

struct CloneTransforms {
  bool rename = false;
  bool insert_noops = false;
  bool swap_segments = false;
};

// Base clone sequence: ident (op ident)* chain; token count falls inside
// len_range (clamped to the chain structure).
std::vector<int> clone_base_sequence(Rng& rng, const VocabLayout& v,
                                     std::pair<int, int> len_range);

// Applies the selected label-preserving transforms to `base`.
std::vector<int> apply_clone_transforms(const std::vector<int>& base,
                                        const VocabLayout& v,
                                        const CloneTransforms& t, Rng& rng);

// Labeled pair dataset: positives are transformed copies of a base sequence,
// negatives are two independently sampled sequences. Labels alternate, so
// counts are exactly 50/50 up to rounding. Deterministic per (seed, n_pairs,
// vocab_size, len_range); each pair uses a derived seed, so the prefix of a
// larger run equals a smaller run.
Dataset generate_clone_dataset(std::uint64_t seed, int n_pairs, int vocab_size,
                               std::pair<int, int> len_range);

// Sequences from a small deterministic context-free expression grammar:
//   EXPR -> "(" EXPR OP EXPR ")" | IDENT
// bracketed by BOS/EOS, nesting depth capped so every sequence fits the
// default range [3, 17]. Sequences outside len_range are resampled.
Dataset generate_lm_dataset(std::uint64_t seed, int n_seqs,
                            std::pair<int, int> len_range = {3, 17});

// Full-sequence validity (BOS EXPR EOS) under the grammar above.
bool grammar_valid(const std::vector<int>& tokens, const VocabLayout& v);

// All tokens that can legally follow `prefix` (prefix must itself be a valid
// start). When the result is a single token the prefix is unambiguous.
std::vector<int> legal_continuations(const std::vector<int>& prefix,
                                     const VocabLayout& v);

// Deterministic disjoint split; floor sizes for the first two fractions,
// remainder to the third. Errors if fractions do not sum to 1 or any split
// comes out empty.
std::array<Dataset, 3> split_dataset(const Dataset& ds,
                                     std::array<double, 3> fractions,
                                     std::uint64_t seed);

// [CLS] a [SEP] b encoding used by the pair classifier.
std::vector<int> encode_pair(const Example& e);

// Line-delimited JSON: {"tokens":[...], "tokens_b":[...]?, "label":int}.
void export_jsonl(const Dataset& ds, const std::string& path);
Dataset import_jsonl(const std::string& path, TaskKind kind, int vocab_size);

}  // namespace shrink
