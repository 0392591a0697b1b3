#include "cate/error.hpp"

namespace cate {

ErrorCategory category(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidConfig:
    case ErrorCode::InvalidArgument:
    case ErrorCode::UnsupportedDimension:
    case ErrorCode::GridMismatch:
    case ErrorCode::UnmappedSite:
      return ErrorCategory::Validation;
    case ErrorCode::NotPSD:
    case ErrorCode::RankDeficient:
    case ErrorCode::CollinearScores:
    case ErrorCode::DegenerateVariance:
    case ErrorCode::AllCandidatesFailed:
      return ErrorCategory::Numerical;
    default:
      return ErrorCategory::Data;
  }
}

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::UnsupportedDimension: return "UnsupportedDimension";
    case ErrorCode::GridMismatch: return "GridMismatch";
    case ErrorCode::UnmappedSite: return "UnmappedSite";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::MissingColumn: return "MissingColumn";
    case ErrorCode::NonNumericValue: return "NonNumericValue";
    case ErrorCode::DuplicateUnit: return "DuplicateUnit";
    case ErrorCode::NoTargetSite: return "NoTargetSite";
    case ErrorCode::MultipleTargetSites: return "MultipleTargetSites";
    case ErrorCode::TreatedUnitInTarget: return "TreatedUnitInTarget";
    case ErrorCode::InconsistentSite: return "InconsistentSite";
    case ErrorCode::InsufficientLocalData: return "InsufficientLocalData";
    case ErrorCode::NoPairs: return "NoPairs";
    case ErrorCode::NoTreatedClusters: return "NoTreatedClusters";
    case ErrorCode::NoControlClusters: return "NoControlClusters";
    case ErrorCode::EmptyUnitList: return "EmptyUnitList";
    case ErrorCode::NotPSD: return "NotPSD";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::CollinearScores: return "CollinearScores";
    case ErrorCode::DegenerateVariance: return "DegenerateVariance";
    case ErrorCode::AllCandidatesFailed: return "AllCandidatesFailed";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

}  // namespace cate
