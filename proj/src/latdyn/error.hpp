#pragma once

#include <stdexcept>
#include <string>

namespace latdyn {

/// Error categories shared by the C++ core and the C API status codes.
enum class ErrorCode {
  kInvalidArgument = 1,
  kDimension,
  kSpec,
  kState,
  kDivergence,
  kSolver,
  kIo,
  kFormat,
  kVersion,
  kChecksum,
  kNotFound,
  kInternal,
};

const char* error_code_name(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

#define LATDYN_DEFINE_ERROR(Name, Code) \
  class Name : public Error {           \
   public:                              \
    explicit Name(const std::string& what) : Error(ErrorCode::Code, what) {} \
  };

LATDYN_DEFINE_ERROR(InvalidArgument, kInvalidArgument)
LATDYN_DEFINE_ERROR(DimensionError, kDimension)
LATDYN_DEFINE_ERROR(SpecError, kSpec)
LATDYN_DEFINE_ERROR(StateError, kState)
LATDYN_DEFINE_ERROR(SolverError, kSolver)
LATDYN_DEFINE_ERROR(IoError, kIo)
LATDYN_DEFINE_ERROR(FormatError, kFormat)
LATDYN_DEFINE_ERROR(VersionError, kVersion)
LATDYN_DEFINE_ERROR(ChecksumError, kChecksum)
LATDYN_DEFINE_ERROR(NotFoundError, kNotFound)

#undef LATDYN_DEFINE_ERROR

/// Raised when a time integration or training loop produces non-finite values.
/// `step` is the offending step or iteration index.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, long step)
      : Error(ErrorCode::kDivergence, what), step_(step) {}
  long step() const noexcept { return step_; }

 private:
  long step_;
};

}  // namespace latdyn
