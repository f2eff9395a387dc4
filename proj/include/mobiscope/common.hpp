#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace mobiscope {

// Exit-code-bearing error categories. The CLI maps these to process exit
// codes; library callers catch them like any std::runtime_error.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;  // exit 1
};

struct MissingArtifactError : std::runtime_error {
  using std::runtime_error::runtime_error;  // exit 2
};

struct EstimationError : std::runtime_error {
  using std::runtime_error::runtime_error;  // exit 3
};

// Caller-contract violations (unsorted input, invalid arguments).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using DeviceIdx = std::uint32_t;

inline constexpr const char* kVersion = "0.1.0";

}  // namespace mobiscope
