#pragma once

namespace attnpca {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace attnpca
