#pragma once

#include <stdexcept>
#include <string>

namespace cate {

enum class ErrorCode {
  // validation
  InvalidConfig,
  InvalidArgument,
  UnsupportedDimension,
  GridMismatch,
  UnmappedSite,
  // data
  IoError,
  MissingColumn,
  NonNumericValue,
  DuplicateUnit,
  NoTargetSite,
  MultipleTargetSites,
  TreatedUnitInTarget,
  InconsistentSite,
  InsufficientLocalData,
  NoPairs,
  NoTreatedClusters,
  NoControlClusters,
  EmptyUnitList,
  // numerical
  NotPSD,
  RankDeficient,
  CollinearScores,
  DegenerateVariance,
  AllCandidatesFailed,
};

enum class ErrorCategory { Validation = 1, Data = 2, Numerical = 3 };

ErrorCategory category(ErrorCode code);
const char* to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }
  ErrorCategory category() const noexcept { return cate::category(code_); }

 private:
  ErrorCode code_;
};

}  // namespace cate
