// SPDX-License-Identifier: Apache-2.0
#include "ifam/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "ifam/json_io.hpp"

namespace ifam {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

namespace {

constexpr char kMagic[4] = {'I', 'F', 'A', 'M'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::vector<std::uint8_t>& in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[at + i]) << (8 * i);
  return v;
}

std::uint32_t crc(const std::uint8_t* data, std::size_t n) {
  uLong c = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    c = crc32(c, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(c);
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const IfamModel& model) {
  Json tensors = Json::array();
  std::size_t offset = 0;
  for (const auto& [name, t] : model.params) {
    tensors.push_back(
        Json{{"name", name}, {"shape", t.shape()}, {"dtype", "f32"}, {"offset", offset}});
    offset += t.size() * sizeof(float);
  }
  const std::string header =
      Json{{"model", model.config}, {"path", to_string(model.path)}, {"tensors", tensors}}.dump();

  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(header.size()));
  out.insert(out.end(), header.begin(), header.end());
  out.reserve(out.size() + offset + 4);
  for (const auto& [name, t] : model.params) {
    for (double v : t.values()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  put_u32(out, crc(out.data(), out.size()));
  return out;
}

IfamModel deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw CheckpointError("not an IFAM checkpoint");
  }
  const std::size_t body = bytes.size() - 4;
  if (crc(bytes.data(), body) != get_u32(bytes, body)) {
    throw CheckpointError("checkpoint checksum mismatch");
  }
  const std::uint32_t version = get_u32(bytes, 4);
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  const std::size_t header_len = get_u32(bytes, 8);
  const std::size_t blob_start = 12 + header_len;
  if (blob_start > body) throw CheckpointError("checkpoint header overruns the file");

  Json header;
  ModelConfig config;
  InferencePath path;
  try {
    header = Json::parse(bytes.begin() + 12, bytes.begin() + static_cast<long>(blob_start));
    config = header.at("model").get<ModelConfig>();
    path = inference_path_from_string(header.at("path").get<std::string>());
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("bad checkpoint header: ") + e.what());
  }

  IfamModel model = IfamModel::create(config, path, 0);
  const Json& tensors = header.at("tensors");
  if (!tensors.is_array() || tensors.size() != model.params.size()) {
    throw CheckpointError("checkpoint tensor directory does not match the model");
  }
  std::size_t i = 0;
  for (auto& [name, t] : model.params) {
    const Json& entry = tensors[i++];
    if (entry.value("name", "") != name || entry.value("dtype", "") != "f32" ||
        entry.at("shape").get<nc::Shape>() != t.shape()) {
      throw CheckpointError("checkpoint tensor '" + entry.value("name", "?") +
                            "' does not match model parameter '" + name + "'");
    }
    const std::size_t at = blob_start + entry.at("offset").get<std::size_t>();
    if (at + t.size() * sizeof(float) > body) throw CheckpointError("checkpoint blob truncated");
    auto dst = t.mutable_values();
    for (std::size_t k = 0; k < dst.size(); ++k) {
      dst[k] = static_cast<double>(std::bit_cast<float>(get_u32(bytes, at + 4 * k)));
    }
  }
  return model;
}

void save_checkpoint(const IfamModel& model, const std::string& path) {
  const auto bytes = serialize_checkpoint(model);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path);
}

IfamModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace ifam
