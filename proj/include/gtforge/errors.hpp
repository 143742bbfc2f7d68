#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace gtforge {

/// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define GTFORGE_DEFINE_ERROR(Name)      \
  class Name : public Error {           \
   public:                              \
    using Error::Error;                 \
  };

// geometry
GTFORGE_DEFINE_ERROR(InvalidCamera)
GTFORGE_DEFINE_ERROR(PointBehindCamera)
GTFORGE_DEFINE_ERROR(CoincidentCenters)
GTFORGE_DEFINE_ERROR(NonPositiveHeight)
GTFORGE_DEFINE_ERROR(RayParallelToGround)
GTFORGE_DEFINE_ERROR(SizeMismatch)

// io
GTFORGE_DEFINE_ERROR(IoError)
GTFORGE_DEFINE_ERROR(FormatError)
GTFORGE_DEFINE_ERROR(UnsupportedFormat)

// surface / gtgen
GTFORGE_DEFINE_ERROR(DegenerateInput)
GTFORGE_DEFINE_ERROR(MeshCloudMismatch)

// registration
GTFORGE_DEFINE_ERROR(InsufficientGcps)
GTFORGE_DEFINE_ERROR(SolverDiverged)
GTFORGE_DEFINE_ERROR(NoCorrespondences)

// matcher
GTFORGE_DEFINE_ERROR(WindowTooLarge)
GTFORGE_DEFINE_ERROR(InvalidParams)

// evalkit
GTFORGE_DEFINE_ERROR(EmptySelection)
GTFORGE_DEFINE_ERROR(ZeroBaseline)
GTFORGE_DEFINE_ERROR(NonPositiveRatio)
GTFORGE_DEFINE_ERROR(MissingPrediction)
GTFORGE_DEFINE_ERROR(MissingBaseline)

// cli
GTFORGE_DEFINE_ERROR(ConfigError)
GTFORGE_DEFINE_ERROR(UsageError)

#undef GTFORGE_DEFINE_ERROR

/// Malformed input file; carries the byte offset where parsing stopped.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::uint64_t byte_offset)
      : Error(what + " (at byte " + std::to_string(byte_offset) + ")"),
        byte_offset_(byte_offset) {}

  std::uint64_t byte_offset() const { return byte_offset_; }

 private:
  std::uint64_t byte_offset_;
};

}  // namespace gtforge
