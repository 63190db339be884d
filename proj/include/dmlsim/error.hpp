#pragma once

#include <stdexcept>
#include <string>

namespace dmlsim {

enum class ErrorKind {
  config,        // bad configuration value or out-of-range knob
  shape,         // tensor shape mismatch
  data,          // bad data (label out of range, ...)
  state,         // operation applied out of order / stale cache
  numeric,       // NaN/Inf or arithmetic overflow
  format,        // malformed input file
  incompatible,  // fingerprint or segmentation mismatch between artifacts
  io,            // filesystem failure
  protocol,      // internal protocol bug (e.g. cyclic event graph)
  validation,    // accounting cross-check failed
  generation,    // synthetic data generation failed
};

class SimError : public std::runtime_error {
 public:
  SimError(ErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& msg) {
  throw SimError(kind, msg);
}

}  // namespace dmlsim
