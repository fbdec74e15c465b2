#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "ftunet/error.hpp"

namespace ftunet {

enum class UpsampleMode { nearest_resize_then_conv };
enum class FinalActivation { sigmoid };

NLOHMANN_JSON_SERIALIZE_ENUM(UpsampleMode, {{UpsampleMode::nearest_resize_then_conv, "nearest-resize-then-conv"}})
NLOHMANN_JSON_SERIALIZE_ENUM(FinalActivation, {{FinalActivation::sigmoid, "sigmoid"}})

// Declarative description of the U-Net variant.
struct ArchitectureSpec {
  int input_height = 256;
  int input_width = 256;
  int input_channels = 1;
  int depth = 5;  // number of contracting levels, bottleneck included
  int base_filters = 64;
  double dropout_rate = 0.5;
  UpsampleMode upsample_mode = UpsampleMode::nearest_resize_then_conv;
  FinalActivation final_activation = FinalActivation::sigmoid;

  int filters_at(int level) const { return base_filters << (level - 1); }

  // Throws ConfigError naming the first violated constraint.
  void validate() const {
    if (depth < 1) throw ConfigError("architecture.depth: must be >= 1");
    if (depth > 16) throw ConfigError("architecture.depth: must be <= 16");
    if (base_filters < 1) throw ConfigError("architecture.base_filters: must be >= 1");
    if (input_channels < 1) throw ConfigError("architecture.input_channels: must be >= 1");
    if (!(dropout_rate >= 0.0 && dropout_rate <= 1.0))
      throw ConfigError("architecture.dropout_rate: must lie in [0,1]");
    const int divisor = 1 << (depth - 1);
    if (input_height < 1 || input_height % divisor != 0)
      throw ConfigError("architecture.input_height: must be a positive multiple of 2^(depth-1) = " +
                        std::to_string(divisor));
    if (input_width < 1 || input_width % divisor != 0)
      throw ConfigError("architecture.input_width: must be a positive multiple of 2^(depth-1) = " +
                        std::to_string(divisor));
  }

  friend bool operator==(const ArchitectureSpec&, const ArchitectureSpec&) = default;
};

inline void to_json(nlohmann::json& j, const ArchitectureSpec& s) {
  j = nlohmann::json{{"input_height", s.input_height},   {"input_width", s.input_width},
                     {"input_channels", s.input_channels}, {"depth", s.depth},
                     {"base_filters", s.base_filters},     {"dropout_rate", s.dropout_rate},
                     {"upsample_mode", s.upsample_mode},   {"final_activation", s.final_activation}};
}

// Missing keys keep their defaults; wrong types raise ConfigError with the field name.
inline void from_json(const nlohmann::json& j, ArchitectureSpec& s) {
  auto read = [&](const char* key, auto& field) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(field);
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(std::string("architecture.") + key + ": wrong type");
    }
  };
  read("input_height", s.input_height);
  read("input_width", s.input_width);
  read("input_channels", s.input_channels);
  read("depth", s.depth);
  read("base_filters", s.base_filters);
  read("dropout_rate", s.dropout_rate);
  if (j.contains("upsample_mode") && j.at("upsample_mode") != "nearest-resize-then-conv")
    throw ConfigError("architecture.upsample_mode: only \"nearest-resize-then-conv\" is supported");
  if (j.contains("final_activation") && j.at("final_activation") != "sigmoid")
    throw ConfigError("architecture.final_activation: only \"sigmoid\" is supported");
}

}  // namespace ftunet
