#include "blend/error.hpp"

namespace blend {

std::string_view error_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingColumn: return "MissingColumn";
    case ErrorCode::BadProbability: return "BadProbability";
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::EmptySample: return "EmptySample";
    case ErrorCode::MissingAuxiliary: return "MissingAuxiliary";
    case ErrorCode::BadValue: return "BadValue";
    case ErrorCode::UnknownVariable: return "UnknownVariable";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::AllSameClass: return "AllSameClass";
    case ErrorCode::GammaAtOne: return "GammaAtOne";
    case ErrorCode::ZeroConvenienceProb: return "ZeroConvenienceProb";
    case ErrorCode::RakingNonconvergence: return "RakingNonconvergence";
    case ErrorCode::WrongScheme: return "WrongScheme";
    case ErrorCode::DegenerateVariance: return "DegenerateVariance";
    case ErrorCode::NotEnoughUnits: return "NotEnoughUnits";
    case ErrorCode::TooFewUnits: return "TooFewUnits";
    case ErrorCode::ReplicateFailure: return "ReplicateFailure";
    case ErrorCode::BadSpec: return "BadSpec";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingColumn: return 10;
    case ErrorCode::BadProbability: return 11;
    case ErrorCode::DuplicateId: return 12;
    case ErrorCode::EmptySample: return 13;
    case ErrorCode::MissingAuxiliary: return 14;
    case ErrorCode::BadValue: return 15;
    case ErrorCode::UnknownVariable: return 16;
    case ErrorCode::RankDeficient: return 20;
    case ErrorCode::AllSameClass: return 21;
    case ErrorCode::GammaAtOne: return 22;
    case ErrorCode::ZeroConvenienceProb: return 23;
    case ErrorCode::RakingNonconvergence: return 30;
    case ErrorCode::WrongScheme: return 40;
    case ErrorCode::DegenerateVariance: return 41;
    case ErrorCode::NotEnoughUnits: return 42;
    case ErrorCode::TooFewUnits: return 43;
    case ErrorCode::ReplicateFailure: return 44;
    case ErrorCode::BadSpec: return 50;
    case ErrorCode::Io: return 51;
  }
  return 1;
}

}  // namespace blend
