#pragma once

#include <stdexcept>
#include <string>

namespace esoafl {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define ESOAFL_DEFINE_ERROR(Name)      \
  class Name : public Error {          \
   public:                             \
    using Error::Error;                \
  }

ESOAFL_DEFINE_ERROR(InvalidSpecError);
ESOAFL_DEFINE_ERROR(ShapeError);
ESOAFL_DEFINE_ERROR(DomainError);
ESOAFL_DEFINE_ERROR(DegenerateScaleError);
ESOAFL_DEFINE_ERROR(ClippingError);
ESOAFL_DEFINE_ERROR(DivergedError);
ESOAFL_DEFINE_ERROR(NotApplicableError);
ESOAFL_DEFINE_ERROR(IllPosedFitError);
ESOAFL_DEFINE_ERROR(SolverStallError);
ESOAFL_DEFINE_ERROR(DiagnosticError);
ESOAFL_DEFINE_ERROR(ConfigError);

#undef ESOAFL_DEFINE_ERROR

}  // namespace esoafl
