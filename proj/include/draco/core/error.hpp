#pragma once

#include <stdexcept>
#include <string>

namespace draco {

/// Broad failure category. The CLI maps each category to its own exit code.
enum class ErrorKind {
  shape,        // tensor or image dimensions disagree
  invalid,      // argument outside its documented range
  degenerate,   // input is valid but carries no usable information
  format,       // malformed file or text payload
  config,       // conflicting configuration
  graph,        // misuse of the autodiff tape
  numeric,      // non-finite values during training
  io,           // filesystem failure
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct ShapeError : Error {
  explicit ShapeError(const std::string& w) : Error(ErrorKind::shape, w) {}
};
struct InvalidArgument : Error {
  explicit InvalidArgument(const std::string& w) : Error(ErrorKind::invalid, w) {}
};
struct DegenerateInput : Error {
  explicit DegenerateInput(const std::string& w) : Error(ErrorKind::degenerate, w) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error(ErrorKind::config, w) {}
};
struct GraphError : Error {
  explicit GraphError(const std::string& w) : Error(ErrorKind::graph, w) {}
};
struct NumericError : Error {
  explicit NumericError(const std::string& w) : Error(ErrorKind::numeric, w) {}
};
struct IoError : Error {
  explicit IoError(const std::string& w) : Error(ErrorKind::io, w) {}
};

inline const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::shape: return "shape";
    case ErrorKind::invalid: return "invalid";
    case ErrorKind::degenerate: return "degenerate";
    case ErrorKind::format: return "format";
    case ErrorKind::config: return "config";
    case ErrorKind::graph: return "graph";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::io: return "io";
  }
  return "unknown";
}

}  // namespace draco
