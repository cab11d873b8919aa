#pragma once

#include <stdexcept>
#include <string>

namespace weblabel {

enum class errc {
  bad_config,
  bad_magic,
  dimension_mismatch,
  non_finite_value,
  io_failure,
  parse_error,
  unknown_class_name,
  stage_mismatch,
  empty_class,
  too_few_samples,
  empty_dataset,
  shape_mismatch,
  id_mismatch,
  invariant_violation,
};

inline const char* errc_name(errc code) {
  switch (code) {
    case errc::bad_config: return "BadConfig";
    case errc::bad_magic: return "BadMagic";
    case errc::dimension_mismatch: return "DimensionMismatch";
    case errc::non_finite_value: return "NonFiniteValue";
    case errc::io_failure: return "IoFailure";
    case errc::parse_error: return "ParseError";
    case errc::unknown_class_name: return "UnknownClassName";
    case errc::stage_mismatch: return "StageMismatch";
    case errc::empty_class: return "EmptyClass";
    case errc::too_few_samples: return "TooFewSamples";
    case errc::empty_dataset: return "EmptyDataset";
    case errc::shape_mismatch: return "ShapeMismatch";
    case errc::id_mismatch: return "IdMismatch";
    case errc::invariant_violation: return "InvariantViolation";
  }
  return "UnknownError";
}

class Error : public std::runtime_error {
 public:
  Error(errc code, const std::string& message)
      : std::runtime_error(std::string(errc_name(code)) + ": " + message),
        code_(code) {}

  errc code() const { return code_; }

  // Process exit code the CLI maps this error to.
  int exit_code() const {
    switch (code_) {
      case errc::bad_config:
        return 2;
      case errc::invariant_violation:
        return 4;
      default:
        return 3;
    }
  }

 private:
  errc code_;
};

}  // namespace weblabel
