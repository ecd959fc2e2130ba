#pragma once

namespace mfgp {

inline constexpr const char *version = "0.1.0";

} // namespace mfgp
