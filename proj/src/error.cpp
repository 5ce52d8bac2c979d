#include "nucleiquant/error.hpp"

namespace nucleiquant {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kParse: return "ParseError";
    case ErrorKind::kBadMagic: return "BadMagic";
    case ErrorKind::kUnsupportedDtype: return "UnsupportedDtype";
    case ErrorKind::kHeaderShapeMismatch: return "HeaderShapeMismatch";
    case ErrorKind::kDtypeMismatch: return "DtypeMismatch";
    case ErrorKind::kShapeMismatch: return "ShapeMismatch";
    case ErrorKind::kLabelInconsistency: return "LabelInconsistency";
    case ErrorKind::kGroupMismatch: return "GroupMismatch";
    case ErrorKind::kShapeError: return "ShapeError";
    case ErrorKind::kConfigError: return "ConfigError";
    case ErrorKind::kVersionMismatch: return "VersionMismatch";
    case ErrorKind::kPathMismatch: return "PathMismatch";
    case ErrorKind::kEmptyPair: return "EmptyPair";
    case ErrorKind::kUndefinedClass: return "UndefinedClass";
    case ErrorKind::kNoInstancesAnywhere: return "NoInstancesAnywhere";
    case ErrorKind::kDegenerateTss: return "DegenerateTSS";
    case ErrorKind::kAllDegenerate: return "AllDegenerate";
  }
  return "Unknown";
}

}  // namespace nucleiquant
