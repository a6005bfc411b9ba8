#pragma once

#include <stdexcept>
#include <string>

namespace lmte {

/// Library-wide exception. `code()` is a short machine-readable tag
/// (e.g. "ragged_row", "degenerate_column") surfaced by the CLI and the
/// HTTP service in their JSON error bodies.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

}  // namespace lmte
