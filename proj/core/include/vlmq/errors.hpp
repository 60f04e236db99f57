// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace vlmq {

// Process exit codes used by the CLI: 0 ok, 2 validation, 3 numerical, 4 io.
enum class ErrorKind { Validation = 2, Numerical = 3, Io = 4 };

class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, const std::string &msg) : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }
  int exit_code() const { return static_cast<int>(kind_); }

private:
  ErrorKind kind_;
};

struct ShapeMismatch : Error {
  explicit ShapeMismatch(const std::string &m) : Error(ErrorKind::Validation, "shape mismatch: " + m) {}
};

struct InvalidSpec : Error {
  explicit InvalidSpec(const std::string &m) : Error(ErrorKind::Validation, "invalid spec: " + m) {}
};

struct InvalidRatio : Error {
  explicit InvalidRatio(const std::string &m) : Error(ErrorKind::Validation, "invalid ratio: " + m) {}
};

struct GroupParamsMissing : Error {
  explicit GroupParamsMissing(const std::string &m)
    : Error(ErrorKind::Validation, "group params missing: " + m) {}
};

struct MissingCrossTerm : Error {
  explicit MissingCrossTerm(const std::string &m)
    : Error(ErrorKind::Validation, "missing cross term: " + m) {}
};

struct NotPositiveDefinite : Error {
  explicit NotPositiveDefinite(const std::string &m)
    : Error(ErrorKind::Numerical, "not positive definite: " + m) {}
};

struct ZeroHessian : Error {
  explicit ZeroHessian(const std::string &m) : Error(ErrorKind::Numerical, "zero hessian: " + m) {}
};

struct SingularSystem : Error {
  explicit SingularSystem(const std::string &m)
    : Error(ErrorKind::Numerical, "singular system: " + m) {}
};

struct IoError : Error {
  explicit IoError(const std::string &m) : Error(ErrorKind::Io, "io error: " + m) {}
};

} // namespace vlmq
