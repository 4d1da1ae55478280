#pragma once

#include <stdexcept>
#include <string>

namespace clipfit {

// Base class for every error raised by the library. CLI maps subclasses to
// exit codes: ConfigError -> 2, NumericError -> 3, everything else -> 1.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape/dimension mismatch between tensors; message names both shapes.
struct DimensionError : Error {
  using Error::Error;
};

// Token id outside the configured vocabulary.
struct VocabularyError : Error {
  using Error::Error;
};

// Class label or row index out of range.
struct IndexError : Error {
  using Error::Error;
};

// Zero-norm vector, all-pad token sequence, or too few points to project.
struct DegenerateInputError : Error {
  using Error::Error;
};

// Unknown parameter, group, or strategy name.
struct NameError : Error {
  using Error::Error;
};

// Custom freeze predicate or ablation selector matched no parameters.
struct EmptyMaskError : Error {
  using Error::Error;
};

// Class-weight construction with zero prompts.
struct EmptyClassError : Error {
  using Error::Error;
};

// Training or evaluation on an empty split.
struct EmptyDatasetError : Error {
  using Error::Error;
};

// A class has fewer training examples than the requested shot count.
struct ShotError : Error {
  using Error::Error;
};

// Contrastive batch of size < 2 has no negatives.
struct ContrastiveDegenerateError : Error {
  using Error::Error;
};

// Snapshots taken from models with different parameter trees.
struct IncompatibleSnapshotError : Error {
  using Error::Error;
};

// A frozen parameter carries a gradient: the freeze mask was bypassed.
struct MaskViolationError : Error {
  using Error::Error;
};

// Invalid configuration file, spec, or flag combination.
struct ConfigError : Error {
  using Error::Error;
};

// Non-finite loss or other numeric failure; message names the step.
struct NumericError : Error {
  using Error::Error;
};

// File format or filesystem problem.
struct IoError : Error {
  using Error::Error;
};

}  // namespace clipfit
