#pragma once

namespace uspine {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace uspine
