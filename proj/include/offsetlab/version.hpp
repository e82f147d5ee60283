#pragma once

namespace offsetlab {

inline constexpr const char* kToolName = "offsetlab";
inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr int kReportSchemaVersion = 1;

}  // namespace offsetlab
