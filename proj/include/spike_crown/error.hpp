#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace spike_crown {

enum class ErrorKind {
  domain,
  precondition,
  config,
  no_ground_state,
  iteration,
  decay_fit,
  integration,
  non_unique_projection,
  parallel_curve_degeneracy,
  chord_infeasible,
  closure,
  no_critical_delta,
  packing_consistency,
  property_violation,
  projection_accuracy,
  boundary_trapped,
  linear_solve,
  newton_stall,
  newton_divergence,
  peak_count,
  io,
};

std::string_view to_string(ErrorKind kind);

/// True for errors caused by invalid input rather than a numerical failure.
bool is_precondition_error(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace spike_crown
