#pragma once

#include <stdexcept>
#include <string>

namespace c3v {

// Error categories; exit_code() gives the process exit status the CLI uses.
enum class ErrorKind {
  config,                // bad configuration or unusable input files
  director_unreachable,  // transport failure talking to the director
  director_malformed,    // director answered but payload failed validation
  validation,            // trajectory/protocol validation failure
  depth_missing,         // no valid depth sample for a lift anchor
  refinement_diverged,   // optimizer left its sane region
  render_failure,        // rasterization/output failure
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

  static int exit_code(ErrorKind kind) {
    switch (kind) {
      case ErrorKind::config: return 2;
      case ErrorKind::director_unreachable: return 3;
      case ErrorKind::director_malformed: return 3;
      case ErrorKind::validation: return 4;
      case ErrorKind::depth_missing: return 5;
      case ErrorKind::refinement_diverged: return 6;
      case ErrorKind::render_failure: return 7;
    }
    return 1;
  }

  int exit_code() const { return exit_code(kind_); }

 private:
  ErrorKind kind_;
};

}  // namespace c3v
