#include "shrinklab/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include "shrinklab/json_util.hpp"

namespace shrink {

namespace {

constexpr char kMagic[8] = {'S', 'L', 'C', 'K', 'P', 'T', '0', '1'};

void append_f32(std::vector<char>& out, float v) {
  char buf[4];
  std::memcpy(buf, &v, 4);
  out.insert(out.end(), buf, buf + 4);
}

float read_f32(const char* p) {
  float v;
  std::memcpy(&v, p, 4);
  return v;
}

}  // namespace

void save_checkpoint(const ModelState& model, const std::string& path) {
  nlohmann::json dir = nlohmann::json::array();
  std::vector<char> payload;

  for (const auto& [name, tensor] : model.tensors) {
    const bool int8 = model.precision == Precision::Int8Weights &&
                      model.quantized.count(name) > 0;
    nlohmann::json entry{{"name", name}, {"shape", tensor.shape},
                         {"offset", payload.size()}};
    if (int8) {
      const QuantTensor& q = model.quantized.at(name);
      entry["dtype"] = "i8";
      entry["bytes"] = 4 + q.values.size();
      append_f32(payload, q.scale);
      payload.insert(payload.end(),
                     reinterpret_cast<const char*>(q.values.data()),
                     reinterpret_cast<const char*>(q.values.data()) + q.values.size());
    } else {
      entry["dtype"] = "f32";
      entry["bytes"] = tensor.size() * 4;
      for (std::size_t i = 0; i < tensor.size(); ++i)
        append_f32(payload, static_cast<float>(tensor[i]));
    }
    dir.push_back(std::move(entry));
  }

  nlohmann::json header{{"format_version", 1},
                        {"config", model.config},
                        {"precision", to_string(model.precision)},
                        {"quantize_aware", model.quantize_aware},
                        {"tensors", dir}};
  const std::string header_text = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("checkpoint: cannot open for writing: " + path);
  out.write(kMagic, 8);
  const std::uint32_t hlen = static_cast<std::uint32_t>(header_text.size());
  out.write(reinterpret_cast<const char*>(&hlen), 4);
  out.write(header_text.data(), header_text.size());
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw std::runtime_error("checkpoint: write failed: " + path);
}

ModelState load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open: " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("checkpoint: bad magic: " + path);
  std::uint32_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), 4);
  std::string header_text(hlen, '\0');
  in.read(header_text.data(), hlen);
  if (!in) throw std::runtime_error("checkpoint: truncated header: " + path);

  const nlohmann::json header = nlohmann::json::parse(header_text);
  if (header.at("format_version").get<int>() != 1)
    throw std::runtime_error("checkpoint: unsupported format version");

  ModelState model;
  model.config = header.at("config").get<ArchConfig>();
  model.precision = precision_from_string(header.at("precision").get<std::string>());
  model.quantize_aware = header.value("quantize_aware", false);

  std::vector<char> payload(std::istreambuf_iterator<char>(in), {});
  for (const auto& entry : header.at("tensors")) {
    const std::string name = entry.at("name").get<std::string>();
    const std::vector<int> shape = entry.at("shape").get<std::vector<int>>();
    const std::size_t offset = entry.at("offset").get<std::size_t>();
    const std::size_t bytes = entry.at("bytes").get<std::size_t>();
    if (offset + bytes > payload.size())
      throw std::runtime_error("checkpoint: payload out of range: " + name);
    const char* p = payload.data() + offset;
    const std::size_t numel = Tensor::numel(shape);
    if (entry.at("dtype").get<std::string>() == "i8") {
      QuantTensor q;
      q.shape = shape;
      q.scale = read_f32(p);
      q.values.resize(numel);
      if (bytes != 4 + numel) throw std::runtime_error("checkpoint: size mismatch: " + name);
      std::memcpy(q.values.data(), p + 4, numel);
      model.tensors[name] = dequantize(q);
      model.quantized[name] = std::move(q);
    } else {
      if (bytes != numel * 4) throw std::runtime_error("checkpoint: size mismatch: " + name);
      Tensor t(shape);
      for (std::size_t i = 0; i < numel; ++i)
        t[i] = static_cast<double>(read_f32(p + i * 4));
      model.tensors[name] = std::move(t);
    }
  }
  return model;
}

}  // namespace shrink
