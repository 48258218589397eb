#pragma once

namespace eit {

inline constexpr const char* version = "0.1.0";

}  // namespace eit
