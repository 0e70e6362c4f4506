#pragma once
#include <stdexcept>
#include <string>

namespace rlp {

// Base for every failure the solver can raise on purpose.  Callers that want
// to distinguish categories catch the concrete type; the CLI catches Error and
// maps it to a nonzero exit with the class name in the message.
struct Error : std::runtime_error {
  explicit Error(const std::string& what_, const char* kind_)
      : std::runtime_error(std::string(kind_) + ": " + what_), kind(kind_) {}
  const char* kind;
};

#define RLP_ERROR(Name)                                         \
  struct Name : Error {                                         \
    explicit Name(const std::string& m) : Error(m, #Name) {}    \
  }

RLP_ERROR(SonicProximity);
RLP_ERROR(DomainError);
RLP_ERROR(RootFailure);
RLP_ERROR(BranchUnreal);
RLP_ERROR(WindowCollapse);
RLP_ERROR(MatrixSingular);
RLP_ERROR(OutOfRadius);
RLP_ERROR(RecursionSingular);
RLP_ERROR(NoBlowUp);
RLP_ERROR(FitFailure);
RLP_ERROR(StiffnessFailure);
RLP_ERROR(Indeterminate);
RLP_ERROR(BracketLost);
RLP_ERROR(MatchFailure);
RLP_ERROR(InvariantBreach);
RLP_ERROR(RootCountError);
RLP_ERROR(ChartExhausted);
RLP_ERROR(ForbiddenRegion);
RLP_ERROR(MonotoneBreach);
RLP_ERROR(GaugeError);
RLP_ERROR(CharacteristicEscape);
RLP_ERROR(PositivityLoss);
RLP_ERROR(ContractionFailure);
RLP_ERROR(ConfigError);
RLP_ERROR(IoError);

#undef RLP_ERROR

}  // namespace rlp
