#pragma once

#include <stdexcept>
#include <string>

namespace covshift {

// All library failures derive from Error so callers can catch one type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define COVSHIFT_ERROR(Name)                        \
  class Name : public Error {                       \
   public:                                          \
    explicit Name(const std::string& what)          \
        : Error(std::string(#Name ": ") + what) {}  \
  };

COVSHIFT_ERROR(ConfigurationError)
COVSHIFT_ERROR(InvalidDataError)
COVSHIFT_ERROR(DegenerateWeightError)
COVSHIFT_ERROR(PositivityError)
COVSHIFT_ERROR(UnboundedWeightError)
COVSHIFT_ERROR(NoSignalError)
COVSHIFT_ERROR(CurvatureDegenerateError)
COVSHIFT_ERROR(MissingDataError)
COVSHIFT_ERROR(NotApplicableError)
COVSHIFT_ERROR(IdentificationError)
COVSHIFT_ERROR(RadiusError)
COVSHIFT_ERROR(AbsoluteContinuityError)

#undef COVSHIFT_ERROR

}  // namespace covshift
