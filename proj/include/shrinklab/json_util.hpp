#pragma once

#include <string>

#include "json.hpp"
#include "shrinklab/model.hpp"

namespace shrink {

inline std::string to_string(ArchKind k) {
  return k == ArchKind::EncoderClassifier ? "encoder_classifier" : "decoder_lm";
}

inline ArchKind arch_kind_from_string(const std::string& s) {
  if (s == "encoder_classifier") return ArchKind::EncoderClassifier;
  if (s == "decoder_lm") return ArchKind::DecoderLm;
  throw std::invalid_argument("unknown arch_kind: " + s);
}

inline std::string to_string(Precision p) {
  return p == Precision::Real ? "real" : "int8_weights";
}

inline Precision precision_from_string(const std::string& s) {
  if (s == "real") return Precision::Real;
  if (s == "int8_weights") return Precision::Int8Weights;
  throw std::invalid_argument("unknown precision: " + s);
}

inline void to_json(nlohmann::json& j, const ArchConfig& c) {
  j = nlohmann::json{{"num_layers", c.num_layers},
                     {"num_heads", c.num_heads},
                     {"head_dim", c.head_dim},
                     {"hidden_dim", c.hidden_dim},
                     {"ffd_size", c.ffd_size},
                     {"vocab_size", c.vocab_size},
                     {"max_seq_len", c.max_seq_len},
                     {"arch_kind", to_string(c.arch_kind)},
                     {"num_classes", c.num_classes}};
}

inline void from_json(const nlohmann::json& j, ArchConfig& c) {
  j.at("num_layers").get_to(c.num_layers);
  j.at("num_heads").get_to(c.num_heads);
  j.at("head_dim").get_to(c.head_dim);
  j.at("hidden_dim").get_to(c.hidden_dim);
  j.at("ffd_size").get_to(c.ffd_size);
  j.at("vocab_size").get_to(c.vocab_size);
  j.at("max_seq_len").get_to(c.max_seq_len);
  c.arch_kind = arch_kind_from_string(j.at("arch_kind").get<std::string>());
  c.num_classes = j.value("num_classes", 2);
}

}  // namespace shrink
