#pragma once
#include <stdexcept>
#include <string>

namespace crlab {

struct Error : std::runtime_error {
  std::string kind;
  Error(std::string k, const std::string& msg) : std::runtime_error(k + ": " + msg), kind(std::move(k)) {}
};

#define CRLAB_ERROR(Name)                                             \
  struct Name : Error {                                               \
    explicit Name(const std::string& msg) : Error(#Name, msg) {}      \
  }

CRLAB_ERROR(DegenerateChart);
CRLAB_ERROR(EigenvalueTie);
CRLAB_ERROR(SamplingTooCoarse);
CRLAB_ERROR(NewtonDiverged);
CRLAB_ERROR(EmptyGrid);
CRLAB_ERROR(DegreeOutOfRange);
CRLAB_ERROR(BadCoordinateFrame);
CRLAB_ERROR(OutOfChart);
CRLAB_ERROR(SingularPoint);
CRLAB_ERROR(CoverMismatch);
CRLAB_ERROR(ThresholdAmbiguous);
CRLAB_ERROR(NotContractive);
CRLAB_ERROR(ConfigInvalid);

#undef CRLAB_ERROR

}  // namespace crlab
