#pragma once

#include <stdexcept>
#include <string>

namespace cmdp {

enum class ErrorCode {
  precondition,
  policy_undefined,
  infeasible_problem,
  too_large,
  no_convergence,
  empty_feasible_set,
  infeasible_input,
  not_enumerable,
  inadmissible_decision,
  non_finite_support,
  parse_error,
  io_error,
  mismatched_scenario,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::precondition: return "precondition";
    case ErrorCode::policy_undefined: return "policy-undefined-at-state";
    case ErrorCode::infeasible_problem: return "infeasible-problem";
    case ErrorCode::too_large: return "too-large";
    case ErrorCode::no_convergence: return "no-convergence";
    case ErrorCode::empty_feasible_set: return "empty-feasible-set";
    case ErrorCode::infeasible_input: return "infeasible-input";
    case ErrorCode::not_enumerable: return "not-enumerable";
    case ErrorCode::inadmissible_decision: return "inadmissible-decision";
    case ErrorCode::non_finite_support: return "non-finite-support";
    case ErrorCode::parse_error: return "parse-error";
    case ErrorCode::io_error: return "io-error";
    case ErrorCode::mismatched_scenario: return "mismatched-scenario";
  }
  return "unknown";
}

/// Every failure raised by the library carries one of the codes above so that
/// callers (the CLI in particular) can map it to an exit status.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace cmdp
