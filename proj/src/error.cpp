#include "spike_crown/error.hpp"

namespace spike_crown {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::domain: return "domain";
    case ErrorKind::precondition: return "precondition";
    case ErrorKind::config: return "config";
    case ErrorKind::no_ground_state: return "no_ground_state";
    case ErrorKind::iteration: return "iteration";
    case ErrorKind::decay_fit: return "decay_fit";
    case ErrorKind::integration: return "integration";
    case ErrorKind::non_unique_projection: return "non_unique_projection";
    case ErrorKind::parallel_curve_degeneracy: return "parallel_curve_degeneracy";
    case ErrorKind::chord_infeasible: return "chord_infeasible";
    case ErrorKind::closure: return "closure";
    case ErrorKind::no_critical_delta: return "no_critical_delta";
    case ErrorKind::packing_consistency: return "packing_consistency";
    case ErrorKind::property_violation: return "property_violation";
    case ErrorKind::projection_accuracy: return "projection_accuracy";
    case ErrorKind::boundary_trapped: return "boundary_trapped";
    case ErrorKind::linear_solve: return "linear_solve";
    case ErrorKind::newton_stall: return "newton_stall";
    case ErrorKind::newton_divergence: return "newton_divergence";
    case ErrorKind::peak_count: return "peak_count";
    case ErrorKind::io: return "io";
  }
  return "unknown";
}

bool is_precondition_error(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::domain:
    case ErrorKind::precondition:
    case ErrorKind::config:
    case ErrorKind::no_ground_state:
    case ErrorKind::io:
      return true;
    default:
      return false;
  }
}

}  // namespace spike_crown
