#include "oflw3/error.hpp"

namespace oflw3 {

std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::kInvalidArgument: return "InvalidArgument";
    case Errc::kNotFound: return "NotFound";
    case Errc::kDuplicateAddress: return "DuplicateAddress";
    case Errc::kBadNonce: return "BadNonce";
    case Errc::kInsufficientFunds: return "InsufficientFunds";
    case Errc::kUnknownContract: return "UnknownContract";
    case Errc::kInvalidCidIndex: return "InvalidCidIndex";
    case Errc::kNotBuyer: return "NotBuyer";
    case Errc::kEscrowOverdraw: return "EscrowOverdraw";
    case Errc::kReverted: return "Reverted";
    case Errc::kStoreUnavailable: return "StoreUnavailable";
    case Errc::kIntegrityViolation: return "IntegrityViolation";
    case Errc::kBadMagic: return "BadMagic";
    case Errc::kTruncatedPayload: return "TruncatedPayload";
    case Errc::kShapeMismatch: return "ShapeMismatch";
    case Errc::kTrainingDiverged: return "TrainingDiverged";
    case Errc::kArchMismatch: return "ArchMismatch";
    case Errc::kInvalidConfig: return "InvalidConfig";
    case Errc::kTooFewOwners: return "TooFewOwners";
    case Errc::kLengthMismatch: return "LengthMismatch";
    case Errc::kJobNotCollecting: return "JobNotCollecting";
  }
  return "Unknown";
}

std::optional<Errc> errc_from_string(std::string_view name) {
  for (int i = 0; i <= static_cast<int>(Errc::kJobNotCollecting); ++i) {
    if (to_string(static_cast<Errc>(i)) == name) return static_cast<Errc>(i);
  }
  return std::nullopt;
}

}  // namespace oflw3
