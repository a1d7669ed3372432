#include "oflw3/ledger.hpp"

#include <algorithm>
#include <mutex>

#include "oflw3/error.hpp"

namespace oflw3::ledger {
namespace {

// Code deployed without a registered kind: stored for its size and hash,
// accepts plain value transfers, reverts on anything else.
class InertCode final : public ContractCode {
 public:
  InertCode(std::size_t size, Hash256 code_hash) : size_(size), hash_(code_hash) {}

  std::string_view kind() const override { return "inert"; }
  std::size_t code_size() const override { return size_; }
  std::unique_ptr<ContractCode> clone() const override {
    return std::make_unique<InertCode>(*this);
  }
  CallResult call(const CallContext&, ByteView calldata) override {
    if (calldata.empty()) return {};
    return CallResult::reverted("UnknownMethod");
  }
  CallResult view(const CallContext&, ByteView) const override {
    return CallResult::reverted("UnknownMethod");
  }
  nlohmann::json save() const override {
    return {{"code_size", size_}, {"code_hash", hash_.hex()}};
  }

  static std::unique_ptr<ContractCode> load(const nlohmann::json& j) {
    return std::make_unique<InertCode>(
        j.at("code_size").get<std::size_t>(),
        Hash256::from_hex(j.at("code_hash").get<std::string>()));
  }

 private:
  std::size_t size_;
  Hash256 hash_;
};

Address contract_address_for(const Address& sender, std::uint64_t nonce) {
  Bytes preimage(sender.bytes.begin(), sender.bytes.end());
  put_be(preimage, nonce);
  const Hash256 h = sha256(preimage);
  Address out;
  std::copy_n(h.bytes.begin(), out.bytes.size(), out.bytes.begin());
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------

std::string Address::hex() const { return "0x" + to_hex(bytes); }

Address Address::from_hex(std::string_view hex) {
  const Bytes raw = oflw3::from_hex(hex);
  if (raw.size() != 20) {
    throw Error(Errc::kInvalidArgument, "address must be 20 bytes");
  }
  Address a;
  std::copy(raw.begin(), raw.end(), a.bytes.begin());
  return a;
}

Address Address::from_label(std::string_view label) {
  const Hash256 h = sha256("account:" + std::string(label));
  Address a;
  std::copy_n(h.bytes.begin(), a.bytes.size(), a.bytes.begin());
  return a;
}

void GasSchedule::validate() const {
  if (tx_base == 0 || calldata_nonzero_byte == 0 || calldata_zero_byte == 0 ||
      storage_write_new == 0 || storage_write_update == 0 || create_base == 0 ||
      code_deposit_per_byte == 0 || gas_price == 0) {
    throw Error(Errc::kInvalidConfig, "gas schedule fields must be positive");
  }
  if (storage_write_new < storage_write_update) {
    throw Error(Errc::kInvalidConfig,
                "storage_write_new must be >= storage_write_update");
  }
}

std::uint64_t GasSchedule::calldata_cost(ByteView data) const {
  std::uint64_t gas = 0;
  for (auto b : data) gas += b == 0 ? calldata_zero_byte : calldata_nonzero_byte;
  return gas;
}

Hash256 Transaction::hash() const {
  Bytes pre(from.bytes.begin(), from.bytes.end());
  pre.push_back(to ? 1 : 0);
  if (to) append(pre, to->bytes);
  put_be(pre, value);
  put_be(pre, nonce);
  put_be(pre, static_cast<std::uint64_t>(calldata.size()));
  append(pre, calldata);
  return sha256(pre);
}

// ---------------------------------------------------------------------------
// JSON

void to_json(nlohmann::json& j, const Address& a) { j = a.hex(); }
void from_json(const nlohmann::json& j, Address& a) {
  a = Address::from_hex(j.get<std::string>());
}

void to_json(nlohmann::json& j, const GasSchedule& s) {
  j = {{"tx_base", s.tx_base},
       {"calldata_nonzero_byte", s.calldata_nonzero_byte},
       {"calldata_zero_byte", s.calldata_zero_byte},
       {"storage_write_new", s.storage_write_new},
       {"storage_write_update", s.storage_write_update},
       {"create_base", s.create_base},
       {"code_deposit_per_byte", s.code_deposit_per_byte},
       {"gas_price_wei", wei_to_string(s.gas_price)}};
}

void from_json(const nlohmann::json& j, GasSchedule& s) {
  s = GasSchedule{};
  auto take = [&](const char* key, std::uint64_t& field) {
    if (j.contains(key)) field = j.at(key).get<std::uint64_t>();
  };
  take("tx_base", s.tx_base);
  take("calldata_nonzero_byte", s.calldata_nonzero_byte);
  take("calldata_zero_byte", s.calldata_zero_byte);
  take("storage_write_new", s.storage_write_new);
  take("storage_write_update", s.storage_write_update);
  take("create_base", s.create_base);
  take("code_deposit_per_byte", s.code_deposit_per_byte);
  if (j.contains("gas_price_wei")) {
    s.gas_price = parse_wei(j.at("gas_price_wei").get<std::string>());
  }
  s.validate();
}

void to_json(nlohmann::json& j, const Receipt& r) {
  nlohmann::json logs = nlohmann::json::array();
  for (const auto& log : r.logs) {
    logs.push_back({{"event", log.event}, {"payload", to_hex(log.payload)}});
  }
  j = {{"tx_hash", r.tx_hash.hex()},
       {"status", r.ok() ? "Success" : "Reverted"},
       {"gas_used", r.gas_used},
       {"fee_wei", wei_to_string(r.fee)},
       {"logs", std::move(logs)},
       {"block", r.block},
       {"from", r.from.hex()}};
  j["to"] = r.to ? nlohmann::json(r.to->hex()) : nlohmann::json(nullptr);
  j["contract_address"] = r.contract_address
                              ? nlohmann::json(r.contract_address->hex())
                              : nlohmann::json(nullptr);
  if (!r.ok()) j["revert_reason"] = r.revert_reason;
}

void from_json(const nlohmann::json& j, Receipt& r) {
  r = Receipt{};
  r.tx_hash = Hash256::from_hex(j.at("tx_hash").get<std::string>());
  r.status = j.at("status").get<std::string>() == "Success" ? TxStatus::kSuccess
                                                            : TxStatus::kReverted;
  r.revert_reason = j.value("revert_reason", std::string{});
  r.gas_used = j.at("gas_used").get<std::uint64_t>();
  r.fee = parse_wei(j.at("fee_wei").get<std::string>());
  for (const auto& log : j.at("logs")) {
    r.logs.push_back({log.at("event").get<std::string>(),
                      from_hex(log.at("payload").get<std::string>())});
  }
  r.block = j.at("block").get<std::uint64_t>();
  r.from = j.at("from").get<Address>();
  if (!j.at("to").is_null()) r.to = j.at("to").get<Address>();
  if (!j.at("contract_address").is_null()) {
    r.contract_address = j.at("contract_address").get<Address>();
  }
}

// ---------------------------------------------------------------------------

void ContractRegistry::add(ContractKind kind) {
  if (find_by_name(kind.name) != nullptr) {
    throw Error(Errc::kInvalidConfig, "contract kind registered twice: " + kind.name);
  }
  kinds_.push_back(std::move(kind));
}

const ContractKind* ContractRegistry::find_by_tag(ByteView calldata) const {
  if (calldata.size() < 4) return nullptr;
  for (const auto& k : kinds_) {
    if (std::equal(k.tag.begin(), k.tag.end(), calldata.begin())) return &k;
  }
  return nullptr;
}

const ContractKind* ContractRegistry::find_by_name(std::string_view name) const {
  for (const auto& k : kinds_) {
    if (k.name == name) return &k;
  }
  return nullptr;
}

// ---------------------------------------------------------------------------

Ledger::State::State(const State& other)
    : accounts(other.accounts),
      receipts(other.receipts),
      receipt_index(other.receipt_index),
      height(other.height),
      total_supply(other.total_supply) {
  for (const auto& [addr, code] : other.contracts) contracts.emplace(addr, code->clone());
}

Ledger::State& Ledger::State::operator=(const State& other) {
  if (this != &other) *this = State(other);
  return *this;
}

Ledger::Ledger(Ledger&& other) noexcept {
  std::unique_lock lock(other.mutex_);
  schedule_ = other.schedule_;
  registry_ = std::move(other.registry_);
  state_ = std::move(other.state_);
}

Ledger& Ledger::operator=(Ledger&& other) noexcept {
  if (this != &other) {
    std::scoped_lock lock(mutex_, other.mutex_);
    schedule_ = other.schedule_;
    registry_ = std::move(other.registry_);
    state_ = std::move(other.state_);
  }
  return *this;
}

Ledger Ledger::genesis(std::span<const GenesisAccount> accounts, GasSchedule schedule,
                       std::shared_ptr<const ContractRegistry> registry) {
  schedule.validate();
  Ledger ledger;
  ledger.schedule_ = schedule;
  ledger.registry_ = registry ? std::move(registry)
                              : std::make_shared<const ContractRegistry>();
  for (const auto& acct : accounts) {
    auto [it, inserted] =
        ledger.state_.accounts.emplace(acct.address, Account{acct.address, acct.balance, 0});
    if (!inserted) {
      throw Error(Errc::kDuplicateAddress, "duplicate genesis address " + acct.address.hex());
    }
    ledger.state_.total_supply += acct.balance;
  }
  return ledger;
}

Receipt Ledger::execute(State& state, const Transaction& tx) const {
  // Nothing below may mutate `state` until every rejection check has passed.
  auto sender_it = state.accounts.find(tx.from);
  const std::uint64_t expected_nonce =
      sender_it == state.accounts.end() ? 0 : sender_it->second.nonce;
  if (tx.nonce != expected_nonce) {
    throw Error(Errc::kBadNonce, "expected nonce " + std::to_string(expected_nonce) +
                                     ", got " + std::to_string(tx.nonce));
  }
  const Wei sender_balance =
      sender_it == state.accounts.end() ? 0 : sender_it->second.balance;

  Receipt receipt;
  receipt.tx_hash = tx.hash();
  receipt.from = tx.from;
  receipt.to = tx.to;

  CallContext ctx;
  ctx.caller = tx.from;
  ctx.value = tx.value;
  ctx.schedule = &schedule_;

  std::uint64_t intrinsic = schedule_.tx_base;
  std::unique_ptr<ContractCode> next_code;  // replaces (or creates) the target
  CallResult result;
  Address target;

  if (!tx.to) {
    intrinsic += schedule_.create_base;
    target = contract_address_for(tx.from, tx.nonce);
    ctx.self = target;
    ctx.self_balance = 0;
    if (state.contracts.count(target) != 0) {
      result = CallResult::reverted("AddressCollision");
    } else if (const ContractKind* kind = registry_->find_by_tag(tx.calldata)) {
      Construction built = kind->create(ctx, ByteView(tx.calldata).subspan(4));
      result = std::move(built.result);
      next_code = std::move(built.code);
    } else {
      next_code = std::make_unique<InertCode>(tx.calldata.size(), sha256(tx.calldata));
    }
    if (!result.revert && next_code) {
      result.gas += schedule_.code_deposit_per_byte * next_code->code_size();
    }
  } else {
    target = *tx.to;
    auto it = state.contracts.find(target);
    if (it != state.contracts.end()) {
      const ByteView data(tx.calldata);
      intrinsic += schedule_.calldata_cost(data.size() >= 4 ? data.subspan(4) : data);
    } else {
      intrinsic += schedule_.calldata_cost(tx.calldata);
    }
  }

  if (sender_balance < tx.value + schedule_.fee(intrinsic)) {
    throw Error(Errc::kInsufficientFunds, "balance does not cover value + fee");
  }

  if (tx.to) {
    auto it = state.contracts.find(target);
    if (it != state.contracts.end()) {
      ctx.self = target;
      auto acct = state.accounts.find(target);
      ctx.self_balance = acct == state.accounts.end() ? 0 : acct->second.balance;
      next_code = it->second->clone();
      result = next_code->call(ctx, tx.calldata);
    }
  }

  std::uint64_t gas = intrinsic;
  if (!result.revert) {
    gas += result.gas;
    if (sender_balance < tx.value + schedule_.fee(gas)) {
      throw Error(Errc::kInsufficientFunds, "balance does not cover value + fee");
    }
    Wei paid_out = 0;
    for (const auto& [to, amount] : result.transfers) paid_out += amount;
    Wei self_funds = ctx.self_balance + tx.value;
    if (paid_out > self_funds) result = CallResult::reverted("TransferExceedsBalance");
  }

  // The funds check guarantees the sender exists from here on.
  Account& sender = sender_it->second;
  receipt.fee = schedule_.fee(gas);
  receipt.gas_used = gas;
  sender.balance -= receipt.fee;
  sender.nonce += 1;
  state.accounts.try_emplace(kFeeSink, Account{kFeeSink}).first->second.balance += receipt.fee;

  if (result.revert) {
    receipt.status = TxStatus::kReverted;
    receipt.revert_reason = *result.revert;
  } else {
    sender.balance -= tx.value;
    state.accounts.try_emplace(target, Account{target}).first->second.balance += tx.value;
    for (const auto& [to, amount] : result.transfers) {
      state.accounts.at(target).balance -= amount;
      state.accounts.try_emplace(to, Account{to}).first->second.balance += amount;
    }
    if (next_code) state.contracts[target] = std::move(next_code);
    if (!tx.to) receipt.contract_address = target;
    receipt.logs = std::move(result.logs);
  }

  state.height += 1;
  receipt.block = state.height;
  state.receipt_index.emplace(receipt.tx_hash, state.receipts.size());
  state.receipts.push_back(receipt);
  return receipt;
}

Receipt Ledger::submit_tx(const Transaction& tx) {
  std::unique_lock lock(mutex_);
  return execute(state_, tx);
}

Receipt Ledger::submit(const Address& from, std::optional<Address> to, Wei value,
                       Bytes calldata) {
  std::unique_lock lock(mutex_);
  Transaction tx{from, to, value, std::move(calldata), 0};
  auto it = state_.accounts.find(from);
  tx.nonce = it == state_.accounts.end() ? 0 : it->second.nonce;
  return execute(state_, tx);
}

Receipt Ledger::simulate(const Transaction& tx) const {
  std::shared_lock lock(mutex_);
  State scratch = state_;
  return execute(scratch, tx);
}

Bytes Ledger::view_call(const Address& contract, ByteView calldata) const {
  std::shared_lock lock(mutex_);
  auto it = state_.contracts.find(contract);
  if (it == state_.contracts.end()) {
    throw Error(Errc::kUnknownContract, "no contract at " + contract.hex());
  }
  CallContext ctx;
  ctx.self = contract;
  ctx.schedule = &schedule_;
  auto acct = state_.accounts.find(contract);
  ctx.self_balance = acct == state_.accounts.end() ? 0 : acct->second.balance;
  CallResult r = it->second->view(ctx, calldata);
  if (r.revert) throw Error(Errc::kReverted, *r.revert);
  return std::move(r.output);
}

Wei Ledger::balance(const Address& address) const {
  std::shared_lock lock(mutex_);
  auto it = state_.accounts.find(address);
  return it == state_.accounts.end() ? 0 : it->second.balance;
}

std::uint64_t Ledger::nonce(const Address& address) const {
  std::shared_lock lock(mutex_);
  auto it = state_.accounts.find(address);
  return it == state_.accounts.end() ? 0 : it->second.nonce;
}

Receipt Ledger::receipt(const Hash256& tx_hash) const {
  std::shared_lock lock(mutex_);
  auto it = state_.receipt_index.find(tx_hash);
  if (it == state_.receipt_index.end()) {
    throw Error(Errc::kNotFound, "no receipt for " + tx_hash.hex());
  }
  return state_.receipts[it->second];
}

std::vector<Receipt> Ledger::receipts() const {
  std::shared_lock lock(mutex_);
  return state_.receipts;
}

bool Ledger::is_contract(const Address& address) const {
  std::shared_lock lock(mutex_);
  return state_.contracts.count(address) != 0;
}

std::optional<std::string> Ledger::contract_kind(const Address& address) const {
  std::shared_lock lock(mutex_);
  auto it = state_.contracts.find(address);
  if (it == state_.contracts.end()) return std::nullopt;
  return std::string(it->second->kind());
}

std::uint64_t Ledger::height() const {
  std::shared_lock lock(mutex_);
  return state_.height;
}

Wei Ledger::total_supply() const {
  std::shared_lock lock(mutex_);
  return state_.total_supply;
}

Wei Ledger::fees_collected() const { return balance(kFeeSink); }

Wei Ledger::balance_sum() const {
  std::shared_lock lock(mutex_);
  Wei sum = 0;
  for (const auto& [addr, acct] : state_.accounts) sum += acct.balance;
  return sum;
}

GasSchedule Ledger::schedule() const { return schedule_; }

nlohmann::json Ledger::export_json() const {
  std::shared_lock lock(mutex_);
  nlohmann::json accounts = nlohmann::json::array();
  for (const auto& [addr, acct] : state_.accounts) {
    accounts.push_back({{"address", addr.hex()},
                        {"balance_wei", wei_to_string(acct.balance)},
                        {"nonce", acct.nonce}});
  }
  nlohmann::json contracts = nlohmann::json::array();
  for (const auto& [addr, code] : state_.contracts) {
    contracts.push_back(
        {{"address", addr.hex()}, {"kind", code->kind()}, {"state", code->save()}});
  }
  nlohmann::json receipts = nlohmann::json::array();
  for (const auto& r : state_.receipts) receipts.push_back(r);
  return {{"schedule", schedule_},
          {"height", state_.height},
          {"total_supply_wei", wei_to_string(state_.total_supply)},
          {"accounts", std::move(accounts)},
          {"contracts", std::move(contracts)},
          {"receipts", std::move(receipts)}};
}

Ledger Ledger::import_json(const nlohmann::json& doc,
                           std::shared_ptr<const ContractRegistry> registry) {
  Ledger ledger;
  ledger.schedule_ = doc.at("schedule").get<GasSchedule>();
  ledger.registry_ = registry ? std::move(registry)
                              : std::make_shared<const ContractRegistry>();
  State& s = ledger.state_;
  s.height = doc.at("height").get<std::uint64_t>();
  s.total_supply = parse_wei(doc.at("total_supply_wei").get<std::string>());
  for (const auto& a : doc.at("accounts")) {
    Account acct{a.at("address").get<Address>(),
                 parse_wei(a.at("balance_wei").get<std::string>()),
                 a.at("nonce").get<std::uint64_t>()};
    if (!s.accounts.emplace(acct.address, acct).second) {
      throw Error(Errc::kDuplicateAddress, "duplicate account " + acct.address.hex());
    }
  }
  for (const auto& c : doc.at("contracts")) {
    const auto kind = c.at("kind").get<std::string>();
    std::unique_ptr<ContractCode> code;
    if (kind == "inert") {
      code = InertCode::load(c.at("state"));
    } else if (const ContractKind* k = ledger.registry_->find_by_name(kind)) {
      code = k->load(c.at("state"));
    } else {
      throw Error(Errc::kInvalidConfig, "unregistered contract kind " + kind);
    }
    s.contracts.emplace(c.at("address").get<Address>(), std::move(code));
  }
  for (const auto& r : doc.at("receipts")) {
    Receipt receipt = r.get<Receipt>();
    s.receipt_index.emplace(receipt.tx_hash, s.receipts.size());
    s.receipts.push_back(std::move(receipt));
  }
  if (ledger.balance_sum() != s.total_supply) {
    throw Error(Errc::kInvalidConfig, "imported ledger violates conservation");
  }
  return ledger;
}

}  // namespace oflw3::ledger
