#pragma once

namespace fusionlasso {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace fusionlasso
