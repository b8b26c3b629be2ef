#pragma once

#include <string>

#include "shrinklab/model.hpp"

namespace shrink {

// Binary checkpoint: 8-byte magic, little-endian u32 header length, JSON
// header (format version, ArchConfig, precision tag, named tensor directory
// with shapes and payload offsets), then raw little-endian payloads. Real
// tensors store float32; quantized tensors store one float32 scale followed
// by int8 codes. save(load(path)) writes byte-identical files.
void save_checkpoint(const ModelState& model, const std::string& path);

ModelState load_checkpoint(const std::string& path);

}  // namespace shrink
