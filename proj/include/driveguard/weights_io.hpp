#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <boost/crc.hpp>
#include <nlohmann/json.hpp>

#include "driveguard/architectures.hpp"

namespace driveguard {

static_assert(std::endian::native == std::endian::little, "weight files assume a little-endian host");

class WeightsError : public ContractViolation {
 public:
  using ContractViolation::ContractViolation;
};
/// Bad magic bytes or unsupported version.
class WeightsFormatError : public WeightsError {
 public:
  using WeightsError::WeightsError;
};
/// Header describes a different architecture than the one requested.
class WeightsManifestError : public WeightsError {
 public:
  using WeightsError::WeightsError;
};
class WeightsTruncatedError : public WeightsError {
 public:
  using WeightsError::WeightsError;
};
class WeightsChecksumError : public WeightsError {
 public:
  using WeightsError::WeightsError;
};

inline constexpr std::array<char, 4> kWeightsMagic{'D', 'G', 'W', '1'};
inline constexpr int kWeightsVersion = 1;

/// CRC-64/XZ (ECMA-182 polynomial, reflected, inverted).
inline std::uint64_t crc64(const void* data, std::size_t size) {
  boost::crc_optimal<64, 0x42F0E1EBA9EA3693ULL, ~0ULL, ~0ULL, true, true> crc;
  crc.process_bytes(data, size);
  return crc.checksum();
}

inline nlohmann::json config_to_json(const ArchitectureConfig& c) {
  return {{"kind", std::string(to_string(c.kind))},
          {"height", c.height},
          {"width", c.width},
          {"widths", c.widths},
          {"kernel_size", c.kernel_size},
          {"in_channels", c.in_channels}};
}

inline ArchitectureConfig config_from_json(const nlohmann::json& j) {
  ArchitectureConfig c;
  c.kind = parse_architecture(j.at("kind").get<std::string>());
  c.height = j.at("height").get<std::size_t>();
  c.width = j.at("width").get<std::size_t>();
  c.widths = j.at("widths").get<std::array<std::size_t, 4>>();
  c.kernel_size = j.at("kernel_size").get<std::size_t>();
  c.in_channels = j.at("in_channels").get<std::size_t>();
  return c;
}

/// Serialized DGW1 image of a model: magic, header length, JSON header,
/// float32 payload, CRC-64 of the payload.
inline std::string encode_weights(ModelGraph<float>& m) {
  nlohmann::json manifest = nlohmann::json::array();
  std::string payload;
  for (auto& [name, t] : m.tensors()) {
    manifest.push_back({{"name", name}, {"shape", t->shape()}, {"offset", payload.size()}});
    payload.append(reinterpret_cast<const char*>(t->data().data()), t->size() * sizeof(float));
  }
  const nlohmann::json header{{"format", "DGW1"},
                              {"version", kWeightsVersion},
                              {"architecture", std::string(to_string(m.config.kind))},
                              {"config", config_to_json(m.config)},
                              {"tensors", manifest},
                              {"payload_bytes", payload.size()}};
  const std::string head = header.dump();
  const auto head_len = static_cast<std::uint32_t>(head.size());
  const std::uint64_t crc = crc64(payload.data(), payload.size());

  std::string out(kWeightsMagic.begin(), kWeightsMagic.end());
  out.append(reinterpret_cast<const char*>(&head_len), 4);
  out += head;
  out += payload;
  out.append(reinterpret_cast<const char*>(&crc), 8);
  return out;
}

inline ModelGraph<float> decode_weights(const std::string& bytes, const ArchitectureConfig* expected = nullptr) {
  if (bytes.size() < 8 || !std::equal(kWeightsMagic.begin(), kWeightsMagic.end(), bytes.begin())) {
    throw WeightsFormatError("not a DGW1 weight file (bad magic)");
  }
  std::uint32_t head_len = 0;
  std::memcpy(&head_len, bytes.data() + 4, 4);
  if (bytes.size() < 8 + static_cast<std::size_t>(head_len)) throw WeightsTruncatedError("weight file header is truncated");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(8, head_len));
  } catch (const nlohmann::json::exception& e) {
    throw WeightsFormatError(std::string("unreadable weight header: ") + e.what());
  }
  if (header.value("format", "") != "DGW1" || header.value("version", -1) != kWeightsVersion) {
    throw WeightsFormatError("unsupported weight file version");
  }

  ArchitectureConfig cfg;
  try {
    cfg = config_from_json(header.at("config"));
  } catch (const std::exception& e) {
    throw WeightsFormatError(std::string("bad config in weight header: ") + e.what());
  }
  if (expected != nullptr && !expected->same_topology(cfg)) {
    throw WeightsManifestError("weight file holds a " + std::string(to_string(cfg.kind)) +
                               " model that does not match the requested " + std::string(to_string(expected->kind)) +
                               " configuration");
  }

  const std::size_t payload_bytes = header.at("payload_bytes").get<std::size_t>();
  const std::size_t payload_at = 8 + head_len;
  if (bytes.size() < payload_at + payload_bytes + 8) {
    throw WeightsTruncatedError("weight payload is truncated: expected " + std::to_string(payload_bytes + 8) +
                                " bytes after the header, found " + std::to_string(bytes.size() - payload_at));
  }
  if (bytes.size() > payload_at + payload_bytes + 8) throw WeightsFormatError("trailing bytes after weight checksum");
  const char* payload = bytes.data() + payload_at;
  std::uint64_t stored = 0;
  std::memcpy(&stored, payload + payload_bytes, 8);
  if (crc64(payload, payload_bytes) != stored) throw WeightsChecksumError("weight payload checksum mismatch");

  ModelGraph<float> m = build_model<float>(cfg);
  const auto& manifest = header.at("tensors");
  auto targets = m.tensors();
  if (manifest.size() != targets.size()) {
    throw WeightsManifestError("weight manifest lists " + std::to_string(manifest.size()) + " tensors, model has " +
                               std::to_string(targets.size()));
  }
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const auto& entry = manifest[i];
    auto& [name, t] = targets[i];
    if (entry.at("name").get<std::string>() != name || entry.at("shape").get<Shape>() != t->shape()) {
      throw WeightsManifestError("manifest entry '" + entry.at("name").get<std::string>() + "' does not match tensor '" +
                                 name + "' " + to_string(t->shape()));
    }
    const std::size_t offset = entry.at("offset").get<std::size_t>();
    const std::size_t n = t->size() * sizeof(float);
    if (offset + n > payload_bytes) throw WeightsTruncatedError("tensor '" + name + "' extends past the payload");
    std::memcpy(t->data().data(), payload + offset, n);
  }
  return m;
}

/// Atomic: writes a temporary sibling then renames it over `path`.
inline void save_weights(ModelGraph<float>& m, const std::filesystem::path& path) {
  const std::string bytes = encode_weights(m);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    detail::require(static_cast<bool>(out), "cannot write weights to ", tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    detail::require(static_cast<bool>(out), "failed writing weights to ", tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline ModelGraph<float> load_weights(const std::filesystem::path& path, const ArchitectureConfig* expected = nullptr) {
  std::ifstream in(path, std::ios::binary);
  detail::require(static_cast<bool>(in), "cannot read weights from ", path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_weights(bytes, expected);
}

}  // namespace driveguard
