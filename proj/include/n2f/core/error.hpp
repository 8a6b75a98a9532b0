#pragma once

#include <stdexcept>
#include <string>

namespace n2f {

// Error categories; the CLI maps these 1:1 onto process exit codes.
enum class ErrorKind {
  Usage = 1,  // bad arguments or configuration
  Data = 2,   // broken, inconsistent or missing data
  Check = 3,  // a verification step failed
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

// Arguments violate an operation's preconditions.
struct InvalidInputError : Error {
  explicit InvalidInputError(const std::string& msg) : Error(ErrorKind::Usage, msg) {}
};

// Files on disk are malformed or inconsistent.
struct DataError : Error {
  explicit DataError(const std::string& msg) : Error(ErrorKind::Data, msg) {}
};

// Point configuration has no well-defined plane (collinear, rank-deficient).
struct DegenerateGeometryError : Error {
  explicit DegenerateGeometryError(const std::string& msg) : Error(ErrorKind::Data, msg) {}
};

}  // namespace n2f
