#pragma once

namespace longclip {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace longclip
