#pragma once

#include <stdexcept>
#include <string>

namespace abf {

// Base for every error raised by the library. `kind` is a stable
// machine-readable tag (the CLI prints it verbatim).
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}
  const std::string& kind() const { return kind_; }

 private:
  std::string kind_;
};

struct ShapeError : Error {
  ShapeError(const std::string& msg, int node = -1)
      : Error("shape_mismatch", msg), node_id(node) {}
  int node_id;
};

struct NonDifferentiableError : Error {
  explicit NonDifferentiableError(const std::string& msg)
      : Error("non_differentiable_node", msg) {}
};

struct PreconditionError : Error {
  explicit PreconditionError(const std::string& msg)
      : Error("precondition", msg) {}
};

struct FormatError : Error {
  FormatError(std::string kind, const std::string& msg)
      : Error(std::move(kind), msg) {}
};

struct MissingComponentError : Error {
  explicit MissingComponentError(std::string component)
      : Error("missing_component", "missing component: " + component),
        name(std::move(component)) {}
  std::string name;
};

struct TrainingDiverged : Error {
  TrainingDiverged(std::size_t epoch_index, const std::string& msg)
      : Error("divergence", msg), epoch(epoch_index) {}
  std::size_t epoch;
};

}  // namespace abf
