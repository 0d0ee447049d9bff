#pragma once

#include <stdexcept>
#include <string>

namespace sara {

/// Base of every error raised by the library. `code()` is a stable,
/// machine-readable identifier used by the CLI and the HTTP service.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& what)
      : std::runtime_error(what), code_(std::move(code)) {}
  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

#define SARA_DEFINE_ERROR(Name, Code)                                  \
  class Name : public Error {                                          \
   public:                                                             \
    explicit Name(const std::string& what) : Error(Code, what) {}      \
    Name(std::string code, const std::string& what)                    \
        : Error(std::move(code), what) {}                              \
  };

SARA_DEFINE_ERROR(ShapeError, "shape_error")
SARA_DEFINE_ERROR(ArgumentError, "argument_error")
SARA_DEFINE_ERROR(IoError, "io_error")
SARA_DEFINE_ERROR(FormatError, "format_error")
SARA_DEFINE_ERROR(ConfigError, "config_error")
SARA_DEFINE_ERROR(GenerationError, "generation_error")
SARA_DEFINE_ERROR(TrainingError, "training_error")
SARA_DEFINE_ERROR(IntegrityError, "integrity_error")
SARA_DEFINE_ERROR(VersionError, "version_error")

#undef SARA_DEFINE_ERROR

}  // namespace sara
