#pragma once

namespace pasta {
inline constexpr const char* kVersion = "0.1.0";
}
