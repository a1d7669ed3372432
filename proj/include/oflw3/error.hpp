#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace oflw3 {

// Every failure that crosses a module boundary carries one of these codes.
// The HTTP layer renders them as {code, message}.
enum class Errc {
  kInvalidArgument,
  kNotFound,
  // ledger
  kDuplicateAddress,
  kBadNonce,
  kInsufficientFunds,
  // contract
  kUnknownContract,
  kInvalidCidIndex,
  kNotBuyer,
  kEscrowOverdraw,
  kReverted,
  // cidstore
  kStoreUnavailable,
  kIntegrityViolation,
  // learner
  kBadMagic,
  kTruncatedPayload,
  kShapeMismatch,
  kTrainingDiverged,
  // aggregator
  kArchMismatch,
  kInvalidConfig,
  // incentives
  kTooFewOwners,
  kLengthMismatch,
  // marketplace
  kJobNotCollecting,
};

std::string_view to_string(Errc code);
// Inverse of to_string; nullopt for unknown names.
std::optional<Errc> errc_from_string(std::string_view name);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(message), code_(code) {}
  explicit Error(Errc code) : Error(code, std::string(to_string(code))) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace oflw3
