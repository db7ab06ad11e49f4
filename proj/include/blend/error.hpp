#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace blend {

// Every failure the library reports carries one of these codes. The CLI maps
// each code to a distinct process exit status.
enum class ErrorCode {
  MissingColumn,
  BadProbability,
  DuplicateId,
  EmptySample,
  MissingAuxiliary,
  BadValue,
  UnknownVariable,
  RankDeficient,
  AllSameClass,
  GammaAtOne,
  ZeroConvenienceProb,
  RakingNonconvergence,
  WrongScheme,
  DegenerateVariance,
  NotEnoughUnits,
  TooFewUnits,
  ReplicateFailure,
  BadSpec,
  Io,
};

std::string_view error_name(ErrorCode code);

// Process exit status for an error class (0 is reserved for success, 1 for
// unexpected failures, 2 for usage errors).
int exit_code(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_name(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Raised by the jackknife when one replicate's pipeline throws.
class ReplicateError : public Error {
 public:
  ReplicateError(int group, const std::string& cause)
      : Error(ErrorCode::ReplicateFailure,
              "replicate group " + std::to_string(group) + " failed: " + cause),
        group_(group) {}

  int group() const noexcept { return group_; }

 private:
  int group_;
};

}  // namespace blend
