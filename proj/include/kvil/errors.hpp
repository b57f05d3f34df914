#pragma once

#include <stdexcept>
#include <string>

namespace kvil {

//! Base class of every error raised by the library.
class Error : public std::runtime_error
{
public:
  explicit Error(const std::string& what)
    : std::runtime_error(what)
  {}
};

#define KVIL_DEFINE_ERROR(Name)                                                \
  class Name : public Error                                                    \
  {                                                                            \
  public:                                                                      \
    explicit Name(const std::string& what)                                     \
      : Error(#Name ": " + what)                                               \
    {}                                                                         \
  }

// geometry
KVIL_DEFINE_ERROR(DegenerateGeometry);
KVIL_DEFINE_ERROR(EmptySequence);

// demonstration ingestion
KVIL_DEFINE_ERROR(ParseError);
KVIL_DEFINE_ERROR(SchemaError);
KVIL_DEFINE_ERROR(UnitError);
KVIL_DEFINE_ERROR(DegenerateObject);
KVIL_DEFINE_ERROR(InsufficientCandidates);
KVIL_DEFINE_ERROR(MissingCorrespondence);

// constraint estimation
KVIL_DEFINE_ERROR(NotOneShot);
KVIL_DEFINE_ERROR(FitDiverged);
KVIL_DEFINE_ERROR(InsufficientData);
KVIL_DEFINE_ERROR(OutOfChart);

// movement primitives
KVIL_DEFINE_ERROR(RankDeficient);

// controller / simulation
KVIL_DEFINE_ERROR(InsufficientTargets);
KVIL_DEFINE_ERROR(DegenerateRadius);
KVIL_DEFINE_ERROR(NumericalBlowup);

// synthetic harness
KVIL_DEFINE_ERROR(SpecIncompatible);

#undef KVIL_DEFINE_ERROR

} // namespace kvil
