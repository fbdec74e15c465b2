#pragma once

namespace ftunet {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace ftunet
