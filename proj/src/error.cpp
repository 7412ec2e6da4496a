#include "ppanel/error.hpp"

namespace ppanel {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingColumn: return "MissingColumn";
    case ErrorCode::DuplicateUnitWave: return "DuplicateUnitWave";
    case ErrorCode::NonNumericCell: return "NonNumericCell";
    case ErrorCode::ShareOutOfRange: return "ShareOutOfRange";
    case ErrorCode::NoAdult: return "NoAdult";
    case ErrorCode::EmptyResult: return "EmptyResult";
    case ErrorCode::UncoveredAge: return "UncoveredAge";
    case ErrorCode::EmptyCell: return "EmptyCell";
    case ErrorCode::NonPositiveWeight: return "NonPositiveWeight";
    case ErrorCode::NonPositivePrice: return "NonPositivePrice";
    case ErrorCode::NotBalanced: return "NotBalanced";
    case ErrorCode::ConfigInvalid: return "ConfigInvalid";
    case ErrorCode::InsufficientData: return "InsufficientData";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::NotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorCode::SingularSigma: return "SingularSigma";
    case ErrorCode::NotIdentified: return "NotIdentified";
    case ErrorCode::NoConvergence: return "NoConvergence";
    case ErrorCode::ZeroShare: return "ZeroShare";
    case ErrorCode::ZeroPriceElasticity: return "ZeroPriceElasticity";
  }
  return "Unknown";
}

bool is_numerical(ErrorCode code) {
  switch (code) {
    case ErrorCode::RankDeficient:
    case ErrorCode::NotPositiveDefinite:
    case ErrorCode::SingularSigma:
    case ErrorCode::NotIdentified:
    case ErrorCode::NoConvergence:
    case ErrorCode::ZeroShare:
    case ErrorCode::ZeroPriceElasticity:
      return true;
    default:
      return false;
  }
}

}  // namespace ppanel
