#include "bicro/error.hpp"

namespace bicro {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kDegenerateInput: return "degenerate-input";
    case ErrorKind::kDegenerateDistribution: return "degenerate-distribution";
    case ErrorKind::kDomain: return "domain";
    case ErrorKind::kDimensionMismatch: return "dimension-mismatch";
    case ErrorKind::kEmptyAnchorSet: return "empty-anchor-set";
    case ErrorKind::kFitFailure: return "fit-failure";
    case ErrorKind::kTrainingDivergence: return "training-divergence";
    case ErrorKind::kGeneration: return "generation";
    case ErrorKind::kPrecondition: return "precondition";
    case ErrorKind::kFormat: return "format";
    case ErrorKind::kConfig: return "config";
    case ErrorKind::kIo: return "io";
  }
  return "unknown";
}

}  // namespace bicro
