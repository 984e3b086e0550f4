#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace bicro {

enum class ErrorKind {
  kDegenerateInput,
  kDegenerateDistribution,
  kDomain,
  kDimensionMismatch,
  kEmptyAnchorSet,
  kFitFailure,
  kTrainingDivergence,
  kGeneration,
  kPrecondition,
  kFormat,
  kConfig,
  kIo,
};

std::string_view to_string(ErrorKind kind);

// Single exception type for the library; callers branch on kind().
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace bicro
