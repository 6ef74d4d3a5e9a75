#include "voxharm/error.hpp"

namespace voxharm {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::invalid_argument: return "invalid_argument";
    case ErrorKind::geometry_mismatch: return "geometry_mismatch";
    case ErrorKind::empty_input: return "empty_input";
    case ErrorKind::io: return "io";
    case ErrorKind::format: return "format";
    case ErrorKind::unsupported: return "unsupported";
    case ErrorKind::out_of_range: return "out_of_range";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::config: return "config";
  }
  return "unknown";
}

}  // namespace voxharm
