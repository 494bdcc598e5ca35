#pragma once

#include <stdexcept>
#include <string>

namespace eri {

/// Base class for every error raised by the library. The concrete type names
/// the failure; the message carries the details.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define ERI_DEFINE_ERROR(Name)              \
  class Name : public Error {               \
   public:                                  \
    explicit Name(const std::string& what)  \
        : Error(#Name ": " + what) {}       \
  }

ERI_DEFINE_ERROR(ShapeMismatch);
ERI_DEFINE_ERROR(AxisOutOfRange);
ERI_DEFINE_ERROR(NotScalar);
ERI_DEFINE_ERROR(NonFiniteGradient);
ERI_DEFINE_ERROR(LengthOutOfRange);
ERI_DEFINE_ERROR(BatchTooSmall);
ERI_DEFINE_ERROR(FrozenModel);
ERI_DEFINE_ERROR(FrozenViolation);
ERI_DEFINE_ERROR(LabelOutOfRange);
ERI_DEFINE_ERROR(ZeroVariance);
ERI_DEFINE_ERROR(ZeroDenominator);
ERI_DEFINE_ERROR(RowCountMismatch);
ERI_DEFINE_ERROR(EmptyVideo);
ERI_DEFINE_ERROR(ConfigInvalid);
ERI_DEFINE_ERROR(ChecksumFailure);
ERI_DEFINE_ERROR(VersionUnsupported);
ERI_DEFINE_ERROR(NameTableMismatch);
ERI_DEFINE_ERROR(SplitEmpty);
ERI_DEFINE_ERROR(IoError);

#undef ERI_DEFINE_ERROR

}  // namespace eri
