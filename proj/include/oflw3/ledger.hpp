#pragma once

// Deterministic single-node account ledger: nonces, gas metering, contract
// creation and event logs. Every accepted transaction is its own block.
//
// Gas model:
//   transfer / call  tx_base + calldata bytes (contract calls skip the
//                    4-byte selector) + whatever the contract charges
//   creation         tx_base + create_base + code_deposit_per_byte x code
//                    size (+ constructor charges for registered kinds)
// Fees go to a reserved fee-sink address so that
//   sum(balances excluding sink) + sink balance == total_supply
// holds after every transaction.

#include <array>
#include <compare>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "oflw3/bytes.hpp"
#include "oflw3/hash.hpp"
#include "oflw3/wei.hpp"

namespace oflw3::ledger {

struct Address {
  std::array<std::uint8_t, 20> bytes{};

  // 0x-prefixed lowercase hex.
  std::string hex() const;
  static Address from_hex(std::string_view hex);
  // Deterministic address for a human label ("buyer", "owner-3").
  static Address from_label(std::string_view label);

  auto operator<=>(const Address&) const = default;
};

// All-zero address; collects every fee.
inline constexpr Address kFeeSink{};

struct Account {
  Address address;
  Wei balance = 0;
  std::uint64_t nonce = 0;
};

struct GasSchedule {
  std::uint64_t tx_base = 21'000;
  std::uint64_t calldata_nonzero_byte = 16;
  std::uint64_t calldata_zero_byte = 4;
  std::uint64_t storage_write_new = 20'000;
  std::uint64_t storage_write_update = 5'000;
  std::uint64_t create_base = 32'000;
  std::uint64_t code_deposit_per_byte = 200;
  Wei gas_price = 1'000'000'000;  // 1 gwei

  // Throws kInvalidConfig.
  void validate() const;
  std::uint64_t calldata_cost(ByteView data) const;
  Wei fee(std::uint64_t gas) const { return static_cast<Wei>(gas) * gas_price; }
};

struct Transaction {
  Address from;
  std::optional<Address> to;  // absent: contract creation
  Wei value = 0;
  Bytes calldata;
  std::uint64_t nonce = 0;

  Hash256 hash() const;
};

struct LogEntry {
  std::string event;
  Bytes payload;
  bool operator==(const LogEntry&) const = default;
};

enum class TxStatus { kSuccess, kReverted };

struct Receipt {
  Hash256 tx_hash;
  TxStatus status = TxStatus::kSuccess;
  std::string revert_reason;
  std::uint64_t gas_used = 0;
  Wei fee = 0;
  std::vector<LogEntry> logs;
  std::optional<Address> contract_address;
  std::uint64_t block = 0;
  Address from;
  std::optional<Address> to;

  bool ok() const { return status == TxStatus::kSuccess; }
  bool operator==(const Receipt&) const = default;
};

void to_json(nlohmann::json& j, const Address& a);
void from_json(const nlohmann::json& j, Address& a);
void to_json(nlohmann::json& j, const GasSchedule& s);
void from_json(const nlohmann::json& j, GasSchedule& s);
void to_json(nlohmann::json& j, const Receipt& r);
void from_json(const nlohmann::json& j, Receipt& r);

// ---------------------------------------------------------------------------
// Contract host interface. Contract behaviour lives in other modules and is
// plugged in through a ContractRegistry; the ledger only meters, dispatches
// and commits.

struct CallContext {
  Address self;
  Address caller;
  Wei value = 0;
  Wei self_balance = 0;
  const GasSchedule* schedule = nullptr;
};

struct CallResult {
  std::uint64_t gas = 0;  // on top of intrinsic gas
  std::vector<LogEntry> logs;
  std::vector<std::pair<Address, Wei>> transfers;  // paid out of `self`
  Bytes output;
  std::optional<std::string> revert;

  static CallResult reverted(std::string reason) {
    CallResult r;
    r.revert = std::move(reason);
    return r;
  }
};

class ContractCode {
 public:
  virtual ~ContractCode() = default;

  virtual std::string_view kind() const = 0;
  virtual std::size_t code_size() const = 0;
  virtual std::unique_ptr<ContractCode> clone() const = 0;
  // Mutating entry point; runs against a clone so a revert leaves no trace.
  virtual CallResult call(const CallContext& ctx, ByteView calldata) = 0;
  // Read-only entry point for zero-gas view calls.
  virtual CallResult view(const CallContext& ctx, ByteView calldata) const = 0;
  virtual nlohmann::json save() const = 0;
};

struct Construction {
  std::unique_ptr<ContractCode> code;
  CallResult result;  // constructor gas, logs, or a revert
};

struct ContractKind {
  std::string name;
  std::array<std::uint8_t, 4> tag{};  // creation calldata prefix
  std::function<Construction(const CallContext&, ByteView init_args)> create;
  std::function<std::unique_ptr<ContractCode>(const nlohmann::json&)> load;
};

class ContractRegistry {
 public:
  void add(ContractKind kind);
  const ContractKind* find_by_tag(ByteView calldata) const;
  const ContractKind* find_by_name(std::string_view name) const;

 private:
  std::vector<ContractKind> kinds_;
};

// ---------------------------------------------------------------------------

struct GenesisAccount {
  Address address;
  Wei balance = 0;
};

class Ledger {
 public:
  // Throws kDuplicateAddress, kInvalidConfig.
  static Ledger genesis(std::span<const GenesisAccount> accounts,
                        GasSchedule schedule,
                        std::shared_ptr<const ContractRegistry> registry = {});

  Ledger(Ledger&& other) noexcept;
  Ledger& operator=(Ledger&& other) noexcept;
  Ledger(const Ledger&) = delete;
  Ledger& operator=(const Ledger&) = delete;

  // Throws kBadNonce / kInsufficientFunds without touching state. Contract
  // failures come back as a Reverted receipt that still costs the fee.
  Receipt submit_tx(const Transaction& tx);
  // Fills in the sender's current nonce under the write lock.
  Receipt submit(const Address& from, std::optional<Address> to, Wei value,
                 Bytes calldata);
  // Executes against a scratch copy: what submit_tx would return right now.
  Receipt simulate(const Transaction& tx) const;

  // Zero-gas read. Throws kUnknownContract, or kReverted with the contract's
  // message.
  Bytes view_call(const Address& contract, ByteView calldata) const;

  Wei balance(const Address& address) const;
  std::uint64_t nonce(const Address& address) const;
  Receipt receipt(const Hash256& tx_hash) const;  // throws kNotFound
  std::vector<Receipt> receipts() const;
  bool is_contract(const Address& address) const;
  std::optional<std::string> contract_kind(const Address& address) const;

  std::uint64_t height() const;
  Wei total_supply() const;
  Wei fees_collected() const;
  // Sum of all balances, fee sink included.
  Wei balance_sum() const;
  GasSchedule schedule() const;

  // Canonical JSON: accounts sorted by address, receipts in order.
  nlohmann::json export_json() const;
  static Ledger import_json(const nlohmann::json& doc,
                            std::shared_ptr<const ContractRegistry> registry = {});

 private:
  struct State {
    std::map<Address, Account> accounts;
    std::map<Address, std::unique_ptr<ContractCode>> contracts;
    std::vector<Receipt> receipts;
    std::map<Hash256, std::size_t> receipt_index;
    std::uint64_t height = 0;
    Wei total_supply = 0;

    State() = default;
    State(const State& other);
    State& operator=(const State& other);
    State(State&&) noexcept = default;
    State& operator=(State&&) noexcept = default;
  };

  Ledger() = default;
  Receipt execute(State& state, const Transaction& tx) const;

  GasSchedule schedule_;
  std::shared_ptr<const ContractRegistry> registry_;
  State state_;
  mutable std::shared_mutex mutex_;
};

}  // namespace oflw3::ledger
