#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace nucleiquant {

enum class ErrorKind {
  kParse,
  kBadMagic,
  kUnsupportedDtype,
  kHeaderShapeMismatch,
  kDtypeMismatch,
  kShapeMismatch,
  kLabelInconsistency,
  kGroupMismatch,
  kShapeError,
  kConfigError,
  kVersionMismatch,
  kPathMismatch,
  kEmptyPair,
  kUndefinedClass,
  kNoInstancesAnywhere,
  kDegenerateTss,
  kAllDegenerate,
};

std::string_view to_string(ErrorKind kind);

// Single exception type for the library; callers branch on kind().
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message),
        kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace nucleiquant
