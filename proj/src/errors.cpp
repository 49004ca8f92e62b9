#include "unimatch/errors.hpp"

namespace unimatch {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Shape: return "shape";
    case ErrorKind::Singular: return "singular";
    case ErrorKind::Projection: return "projection";
    case ErrorKind::Graph: return "graph";
    case ErrorKind::Infeasible: return "infeasible";
    case ErrorKind::UndefinedScore: return "undefined-score";
    case ErrorKind::Data: return "data";
    case ErrorKind::Io: return "io";
    case ErrorKind::Version: return "version";
    case ErrorKind::Integrity: return "integrity";
    case ErrorKind::Numerical: return "numerical";
    case ErrorKind::Usage: return "usage";
  }
  return "unknown";
}

}  // namespace unimatch
