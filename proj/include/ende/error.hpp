#pragma once

#include <stdexcept>
#include <string>

namespace ende {

// Base for every error raised by the library. Domain errors (bad data,
// failed training, transport) map to exit code 1 in the CLI.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input data violates a corpus or annotation invariant.
class DataError : public Error {
 public:
  using Error::Error;
};

// Malformed text: bracketed trees, config files, JSON records.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : Error(what), offset_(offset) {}
  explicit ParseError(const std::string& what) : Error(what) {}

  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_ = 0;
};

// A caller broke an API precondition (e.g. backward without forward).
class ContractError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// The LM service could not be reached after all retries.
class TransportError : public Error {
 public:
  using Error::Error;
};

class TrainingDiverged : public Error {
 public:
  TrainingDiverged(const std::string& what, int epoch, int step)
      : Error(what), epoch_(epoch), step_(step) {}

  int epoch() const { return epoch_; }
  int step() const { return step_; }

 private:
  int epoch_;
  int step_;
};

}  // namespace ende
