#pragma once

#include <stdexcept>
#include <string>

namespace unimatch {

enum class ErrorKind {
  Shape,
  Singular,
  Projection,
  Graph,
  Infeasible,
  UndefinedScore,
  Data,
  Io,
  Version,
  Integrity,
  Numerical,
  Usage,
};

const char* to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Raised by the pseudo-inverse when U·Uᵀ is (close to) singular.
class SingularError : public Error {
 public:
  SingularError(const std::string& what, double condition)
      : Error(ErrorKind::Singular, what), condition_(condition) {}

  double condition() const noexcept { return condition_; }

 private:
  double condition_;
};

}  // namespace unimatch
