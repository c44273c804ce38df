#pragma once

#include <stdexcept>
#include <string>

namespace chordlm {

// Bad input text (labels, files, configuration). Maps to CLI exit code 2.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public DataError {
 public:
  ParseError(const std::string& what, std::string token)
      : DataError(what), token_(std::move(token)) {}
  const std::string& token() const noexcept { return token_; }

 private:
  std::string token_;
};

// Invalid or unknown configuration keys. Exit code 1.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite losses, gradients, or an unreachable decode. Exit code 3.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TrainingDiverged : public NumericalError {
 public:
  TrainingDiverged(const std::string& what, int epoch, int batch)
      : NumericalError(what), epoch_(epoch), batch_(batch) {}
  int epoch() const noexcept { return epoch_; }
  int batch() const noexcept { return batch_; }

 private:
  int epoch_;
  int batch_;
};

class DecodeError : public NumericalError {
 public:
  DecodeError(const std::string& what, std::size_t frame)
      : NumericalError(what), frame_(frame) {}
  std::size_t frame() const noexcept { return frame_; }

 private:
  std::size_t frame_;
};

// Caller violated a precondition (shape mismatch, missing cache, ...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace chordlm
