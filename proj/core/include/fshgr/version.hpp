#pragma once

namespace fshgr {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace fshgr
