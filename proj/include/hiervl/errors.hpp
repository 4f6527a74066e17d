#pragma once

#include <stdexcept>
#include <string>

namespace hiervl {

/// Base class for every error raised by the library. `kind()` is a short
/// machine-readable tag used by the CLI when reporting failures.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define HIERVL_DEFINE_ERROR(Name, tag)                                   \
  class Name : public Error {                                            \
   public:                                                               \
    explicit Name(const std::string& what) : Error(tag, what) {}         \
  };

HIERVL_DEFINE_ERROR(DimensionError, "dimension")
HIERVL_DEFINE_ERROR(NumericError, "numeric")
HIERVL_DEFINE_ERROR(ContractError, "contract")
HIERVL_DEFINE_ERROR(ConfigError, "config")
HIERVL_DEFINE_ERROR(ParseError, "parse")
HIERVL_DEFINE_ERROR(IntegrityError, "integrity")
HIERVL_DEFINE_ERROR(PathError, "path")
HIERVL_DEFINE_ERROR(DegenerateAggregateError, "degenerate-aggregate")
HIERVL_DEFINE_ERROR(TrainingAborted, "training-aborted")

#undef HIERVL_DEFINE_ERROR

}  // namespace hiervl
