#pragma once

#include <stdexcept>
#include <string>

namespace apn {

// Base class for every error raised by the library. CLI exit codes are
// derived from the concrete type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define APN_DEFINE_ERROR(Name)              \
  class Name : public Error {               \
   public:                                  \
    using Error::Error;                     \
  };

APN_DEFINE_ERROR(ShapeMismatch)
APN_DEFINE_ERROR(NonFiniteError)
APN_DEFINE_ERROR(NotScalar)
APN_DEFINE_ERROR(ZeroNormVector)
APN_DEFINE_ERROR(TooFewPrototypes)
APN_DEFINE_ERROR(InvalidConfig)
APN_DEFINE_ERROR(InvalidSpec)
APN_DEFINE_ERROR(BadMagic)
APN_DEFINE_ERROR(TruncatedFile)
APN_DEFINE_ERROR(TooShort)
APN_DEFINE_ERROR(EmptyVideo)
APN_DEFINE_ERROR(SingleClass)
APN_DEFINE_ERROR(NegativeWeight)
APN_DEFINE_ERROR(CheckpointMismatch)

#undef APN_DEFINE_ERROR

// Raised by training when a step produces a non-finite loss.
class NonFiniteLoss : public Error {
 public:
  NonFiniteLoss(const std::string& what, long step) : Error(what), step_(step) {}
  long step() const noexcept { return step_; }

 private:
  long step_;
};

}  // namespace apn
