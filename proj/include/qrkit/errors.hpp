#pragma once

#include <stdexcept>
#include <string>

namespace qrkit {

/// Base for every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define QRKIT_DEFINE_ERROR(Name)     \
  class Name : public Error {        \
   public:                           \
    using Error::Error;              \
  };

QRKIT_DEFINE_ERROR(ArgumentError)
QRKIT_DEFINE_ERROR(LengthError)
QRKIT_DEFINE_ERROR(VocabError)
QRKIT_DEFINE_ERROR(NumericError)
QRKIT_DEFINE_ERROR(KeyError)
QRKIT_DEFINE_ERROR(IndexError)
QRKIT_DEFINE_ERROR(ContextOverflowError)
QRKIT_DEFINE_ERROR(DatasetError)
QRKIT_DEFINE_ERROR(DecodeError)
QRKIT_DEFINE_ERROR(MetricError)
QRKIT_DEFINE_ERROR(ParseError)
QRKIT_DEFINE_ERROR(IoError)

#undef QRKIT_DEFINE_ERROR

}  // namespace qrkit
