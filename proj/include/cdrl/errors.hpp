// Exception hierarchy shared by every module.
//
// All throwing code in the library throws one of these types so callers (and
// the CLI exit-code mapping) can distinguish user/config mistakes from missing
// or corrupt data files and from genuine runtime failures.
#pragma once

#include <stdexcept>
#include <string>

namespace cdrl {

// Base class for everything thrown by this library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid configuration: unknown key, unparsable value, out-of-range setting,
// bad command-line arguments.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Tensor/operand shapes do not line up for the requested operation.
class ShapeMismatch : public Error {
 public:
  explicit ShapeMismatch(const std::string& msg) : Error(msg) {}
};

// Environment stepped after reporting done without an intervening reset.
class StepAfterDone : public Error {
 public:
  explicit StepAfterDone(const std::string& msg) : Error(msg) {}
};

// A capability was requested from a component that does not provide it
// (e.g. masks from a plain reward-decomposition bundle).
class NotAvailable : public Error {
 public:
  explicit NotAvailable(const std::string& msg) : Error(msg) {}
};

// A training update was requested for a method that does not define it
// (e.g. a component TD update on a bundle without reward heads).
class WrongMethod : public Error {
 public:
  explicit WrongMethod(const std::string& msg) : Error(msg) {}
};

// A mask-based metric was requested from a bundle that has no maskers.
class NoMasks : public NotAvailable {
 public:
  explicit NoMasks(const std::string& msg) : NotAvailable(msg) {}
};

// Replay buffer asked for a batch larger than its current fill.
class InsufficientData : public Error {
 public:
  explicit InsufficientData(const std::string& msg) : Error(msg) {}
};

// A training loss evaluated to NaN or +/-inf.
class NonFiniteLoss : public Error {
 public:
  explicit NonFiniteLoss(const std::string& msg) : Error(msg) {}
};

// Filesystem-level failure: cannot open, read or write a path.
class IoError : public Error {
 public:
  explicit IoError(const std::string& msg) : Error(msg) {}
};

// A file opened fine but its contents violate the expected format
// (bad magic, truncated payload, wrong version, malformed record).
class FormatError : public Error {
 public:
  explicit FormatError(const std::string& msg) : Error(msg) {}
};

}  // namespace cdrl
