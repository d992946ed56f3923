#pragma once

#include <stdexcept>
#include <string>

namespace rtp {

// Shape or argument mismatch in a tensor operation.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Invalid run configuration (divisibility violations, unknown strategy,
// malformed config file). Maps to CLI exit code 2.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Ring protocol violation: step-tag mismatch, shard-identity mismatch on
// replay, or a transport deadlock timeout.
struct ProtocolError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Operation invoked out of lifecycle order (e.g. backward without forward).
struct StateError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Index outside a container's valid range (e.g. token id outside vocab).
struct IndexError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

}  // namespace rtp
