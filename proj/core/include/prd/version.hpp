#pragma once

namespace prd {
inline constexpr const char* kLibraryVersion = "0.1.0";
inline constexpr int kRecordFormatVersion = 1;
}  // namespace prd
