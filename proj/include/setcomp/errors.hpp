#pragma once

#include <stdexcept>
#include <string>

namespace setcomp {

// Operation called on an object whose state cannot satisfy it (empty table,
// empty sampling pool).
class InvalidState : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Image directory ingestion failures; the message names the offending path.
class IngestionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EmptyStoreError : public IngestionError {
 public:
  using IngestionError::IngestionError;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised by training loops when the loss becomes non-finite.
class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace setcomp
