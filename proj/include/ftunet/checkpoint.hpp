#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ftunet/architecture.hpp"
#include "ftunet/error.hpp"
#include "ftunet/graph.hpp"
#include "ftunet/hash.hpp"
#include "ftunet/network.hpp"
#include "ftunet/optimizer.hpp"

namespace ftunet {

struct NamedTensor {
  std::vector<int> shape;
  std::vector<float> data;

  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

struct EpochRecord {
  int epoch = 0;  // 1-based, counted within the training phase
  double train_loss = 0.0;
  std::optional<double> validation_loss;

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct Checkpoint {
  std::string architecture_fingerprint;
  ArchitectureSpec architecture;
  std::map<std::string, NamedTensor> tensors;
  std::vector<EpochRecord> training_log;
  nlohmann::json provenance = nlohmann::json::object();
  std::optional<AdamState> optimizer;

  // Content hash over fingerprint and tensor bytes.
  std::string id() const {
    Fnv1a h;
    h.str(architecture_fingerprint);
    for (const auto& [name, t] : tensors) {
      h.str(name);
      for (int d : t.shape) h.u64(static_cast<std::uint64_t>(d));
      h.bytes(t.data.data(), t.data.size() * sizeof(float));
    }
    return to_hex(h.value());
  }
};

inline void require_compatible(const Checkpoint& ckpt, const ModelGraph& g) {
  const auto fp = fingerprint(g);
  if (ckpt.architecture_fingerprint != fp)
    throw IncompatibleCheckpointError("checkpoint fingerprint " + ckpt.architecture_fingerprint +
                                      " does not match architecture " + fp);
}

inline Checkpoint snapshot(const Network<float>& net) {
  Checkpoint c;
  c.architecture_fingerprint = fingerprint(net.graph());
  c.architecture = net.graph().spec;
  for (const auto& t : net.tensor_layout()) {
    const auto& p = net.params()[t.layer];
    c.tensors[t.name] = NamedTensor{t.shape, t.is_bias ? p.bias : p.kernel};
  }
  return c;
}

inline void restore(Network<float>& net, const Checkpoint& c) {
  require_compatible(c, net.graph());
  for (const auto& t : net.tensor_layout()) {
    auto it = c.tensors.find(t.name);
    if (it == c.tensors.end()) throw IntegrityError("checkpoint lacks tensor " + t.name);
    if (it->second.shape != t.shape) throw IntegrityError("checkpoint tensor " + t.name + " has the wrong shape");
    auto& p = net.params()[t.layer];
    (t.is_bias ? p.bias : p.kernel) = it->second.data;
  }
}

namespace detail {

constexpr char kCheckpointMagic[8] = {'F', 'T', 'U', 'N', 'E', 'T', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>(v >> (8 * i)));
}
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>(v >> (8 * i)));
}
inline std::uint64_t get_le(const std::string& in, std::size_t at, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

inline void put_floats(std::string& out, const std::vector<float>& v) {
  const std::size_t at = out.size();
  out.resize(at + v.size() * 4);
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(out.data() + at, v.data(), v.size() * 4);
  } else {
    for (std::size_t i = 0; i < v.size(); ++i) {
      const auto bits = std::bit_cast<std::uint32_t>(v[i]);
      for (int b = 0; b < 4; ++b) out[at + 4 * i + b] = static_cast<char>(bits >> (8 * b));
    }
  }
}
inline std::vector<float> get_floats(const std::string& in, std::size_t at, std::size_t count) {
  std::vector<float> v(count);
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(v.data(), in.data() + at, count * 4);
  } else {
    for (std::size_t i = 0; i < count; ++i)
      v[i] = std::bit_cast<float>(static_cast<std::uint32_t>(get_le(in, at + 4 * i, 4)));
  }
  return v;
}

inline std::size_t element_count(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw IntegrityError("negative tensor dimension");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

}  // namespace detail

// Archive layout: 8-byte magic, u32 format version, u64 header length, JSON
// header, then the tensor payload as little-endian float32. The header lists
// every tensor's name, shape, byte offset and length, plus an FNV-1a checksum
// of the payload.
inline std::string encode_checkpoint(const Checkpoint& c) {
  using nlohmann::json;
  std::string payload;
  json table = json::array();
  auto append = [&](const std::string& section, const std::string& name, const std::vector<int>& shape,
                    const std::vector<float>& data) {
    table.push_back({{"section", section},
                     {"name", name},
                     {"shape", shape},
                     {"dtype", "float32-le"},
                     {"offset", payload.size()},
                     {"length", data.size() * 4}});
    detail::put_floats(payload, data);
  };
  for (const auto& [name, t] : c.tensors) append("weights", name, t.shape, t.data);
  if (c.optimizer) {
    for (const auto& [name, m] : c.optimizer->first_moment) append("adam_m", name, {static_cast<int>(m.size())}, m);
    for (const auto& [name, v] : c.optimizer->second_moment) append("adam_v", name, {static_cast<int>(v.size())}, v);
  }
  json log = json::array();
  for (const auto& e : c.training_log)
    log.push_back({{"epoch", e.epoch},
                   {"train_loss", e.train_loss},
                   {"validation_loss", e.validation_loss ? json(*e.validation_loss) : json(nullptr)}});
  json header = {{"format_version", detail::kCheckpointVersion},
                 {"architecture_fingerprint", c.architecture_fingerprint},
                 {"architecture", c.architecture},
                 {"provenance", c.provenance},
                 {"training_log", log},
                 {"optimizer_step", c.optimizer ? json(c.optimizer->step) : json(nullptr)},
                 {"tensors", table},
                 {"payload_bytes", payload.size()},
                 {"payload_fnv1a", to_hex(Fnv1a{}.bytes(payload.data(), payload.size()).value())}};
  const std::string hs = header.dump();
  std::string out(detail::kCheckpointMagic, 8);
  detail::put_u32(out, detail::kCheckpointVersion);
  detail::put_u64(out, hs.size());
  out += hs;
  out += payload;
  return out;
}

inline Checkpoint decode_checkpoint(const std::string& bytes) {
  using nlohmann::json;
  if (bytes.size() < 20 || std::memcmp(bytes.data(), detail::kCheckpointMagic, 8) != 0)
    throw IntegrityError("not a checkpoint archive");
  const auto version = static_cast<std::uint32_t>(detail::get_le(bytes, 8, 4));
  if (version != detail::kCheckpointVersion)
    throw IntegrityError("unsupported checkpoint format version " + std::to_string(version));
  const auto header_len = detail::get_le(bytes, 12, 8);
  if (header_len > bytes.size() - 20) throw IntegrityError("truncated checkpoint header");
  json header;
  try {
    header = json::parse(bytes.begin() + 20, bytes.begin() + 20 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const json::exception& e) {
    throw IntegrityError(std::string("corrupt checkpoint header: ") + e.what());
  }
  const std::size_t base = 20 + header_len;
  try {
    const auto declared = header.at("payload_bytes").get<std::size_t>();
    if (bytes.size() - base != declared)
      throw IntegrityError("checkpoint payload length " + std::to_string(bytes.size() - base) + " != declared " +
                           std::to_string(declared));
    const auto sum = to_hex(Fnv1a{}.bytes(bytes.data() + base, declared).value());
    if (sum != header.at("payload_fnv1a").get<std::string>()) throw IntegrityError("checkpoint payload checksum mismatch");

    Checkpoint c;
    c.architecture_fingerprint = header.at("architecture_fingerprint").get<std::string>();
    c.architecture = header.at("architecture").get<ArchitectureSpec>();
    c.provenance = header.at("provenance");
    for (const auto& e : header.at("training_log")) {
      EpochRecord r;
      r.epoch = e.at("epoch").get<int>();
      r.train_loss = e.at("train_loss").get<double>();
      if (!e.at("validation_loss").is_null()) r.validation_loss = e.at("validation_loss").get<double>();
      c.training_log.push_back(r);
    }
    if (!header.at("optimizer_step").is_null()) {
      c.optimizer = AdamState{};
      c.optimizer->step = header.at("optimizer_step").get<std::int64_t>();
    }
    for (const auto& t : header.at("tensors")) {
      const auto shape = t.at("shape").get<std::vector<int>>();
      const auto offset = t.at("offset").get<std::size_t>();
      const auto length = t.at("length").get<std::size_t>();
      const std::size_t count = detail::element_count(shape);
      if (length != count * 4 || offset > declared || length > declared - offset)
        throw IntegrityError("checkpoint tensor " + t.at("name").get<std::string>() + " has an inconsistent extent");
      auto data = detail::get_floats(bytes, base + offset, count);
      const auto section = t.at("section").get<std::string>();
      const auto name = t.at("name").get<std::string>();
      if (section == "weights") {
        c.tensors[name] = NamedTensor{shape, std::move(data)};
      } else if (c.optimizer && section == "adam_m") {
        c.optimizer->first_moment[name] = std::move(data);
      } else if (c.optimizer && section == "adam_v") {
        c.optimizer->second_moment[name] = std::move(data);
      } else {
        throw IntegrityError("unknown checkpoint section " + section);
      }
    }
    return c;
  } catch (const json::exception& e) {
    throw IntegrityError(std::string("malformed checkpoint header: ") + e.what());
  }
}

inline void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(c);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing checkpoint " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IntegrityError("cannot open checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelGraph& g) {
  auto c = load_checkpoint(path);
  require_compatible(c, g);
  return c;
}

}  // namespace ftunet
