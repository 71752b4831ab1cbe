#pragma once

#include <stdexcept>
#include <string>

namespace acdz {

// Shape or dimension mismatch in a numeric op.
struct ShapeError : std::invalid_argument {
  explicit ShapeError(const std::string& msg) : std::invalid_argument(msg) {}
};

// A distribution was requested over an empty support (all entries masked).
struct EmptySupportError : std::invalid_argument {
  explicit EmptySupportError(const std::string& msg) : std::invalid_argument(msg) {}
};

// A caller violated an API precondition.
struct ContractError : std::logic_error {
  explicit ContractError(const std::string& msg) : std::logic_error(msg) {}
};

// Invalid configuration value or unreadable config file.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Checkpoint file malformed or incompatible with the expected manifest.
struct CheckpointError : std::runtime_error {
  explicit CheckpointError(const std::string& msg) : std::runtime_error(msg) {}
};

// An action index pointing at a masked (illegal) catalog entry.
struct MaskedActionError : std::logic_error {
  explicit MaskedActionError(const std::string& msg) : std::logic_error(msg) {}
};

}  // namespace acdz
