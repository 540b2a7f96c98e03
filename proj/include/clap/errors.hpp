// Exception types raised by the clap library.
#pragma once

#include <stdexcept>
#include <string>

namespace clap {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define CLAP_DEFINE_ERROR(Name)                                          \
  class Name : public Error {                                            \
   public:                                                               \
    explicit Name(const std::string& what) : Error(#Name ": " + what) {} \
  }

CLAP_DEFINE_ERROR(ShapeMismatch);
CLAP_DEFINE_ERROR(DegenerateInput);
CLAP_DEFINE_ERROR(InvalidRate);
CLAP_DEFINE_ERROR(InvalidLabel);
CLAP_DEFINE_ERROR(ContextMismatch);
CLAP_DEFINE_ERROR(InvalidConfig);
CLAP_DEFINE_ERROR(InvalidLayer);
CLAP_DEFINE_ERROR(CorruptCheckpoint);
CLAP_DEFINE_ERROR(DivergenceDetected);
CLAP_DEFINE_ERROR(EmptyDataset);
CLAP_DEFINE_ERROR(EmptyMatrix);
CLAP_DEFINE_ERROR(MalformedImage);
CLAP_DEFINE_ERROR(InsufficientData);

#undef CLAP_DEFINE_ERROR

}  // namespace clap
