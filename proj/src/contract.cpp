#include "oflw3/contract.hpp"

#include <algorithm>

#include "oflw3/error.hpp"

namespace oflw3::contract {
namespace {

using ledger::CallContext;
using ledger::CallResult;
using ledger::LogEntry;

constexpr std::size_t kWord = 32;
constexpr std::size_t kAddr = 20;

// Big-endian 32-byte word -> integer; nullopt when it does not fit.
template <typename T>
std::optional<T> read_word(ByteView w) {
  T value = 0;
  for (std::size_t i = 0; i < kWord; ++i) {
    if (i < kWord - sizeof(T)) {
      if (w[i] != 0) return std::nullopt;
      continue;
    }
    value = (value << 8) | w[i];
  }
  return value;
}

Bytes word(Wei value) {
  Bytes out;
  put_be(out, value, kWord);
  return out;
}

Address read_address(ByteView bytes) {
  Address a;
  std::copy_n(bytes.begin(), kAddr, a.bytes.begin());
  return a;
}

bool has_selector(ByteView calldata, std::string_view method) {
  const auto sel = selector(method);
  return calldata.size() >= 4 && std::equal(sel.begin(), sel.end(), calldata.begin());
}

class CidStorage final : public ledger::ContractCode {
 public:
  CidStorage(CidStorageState state, std::size_t code_size)
      : state_(std::move(state)), code_size_(code_size) {}

  std::string_view kind() const override { return kKindName; }
  std::size_t code_size() const override { return code_size_; }
  std::unique_ptr<ledger::ContractCode> clone() const override {
    return std::make_unique<CidStorage>(*this);
  }

  CallResult call(const CallContext& ctx, ByteView calldata) override {
    if (ctx.value != 0) return CallResult::reverted("NonPayable");
    const ByteView args = calldata.size() >= 4 ? calldata.subspan(4) : ByteView{};
    if (has_selector(calldata, "uploadCid")) return upload_cid(ctx, args);
    if (has_selector(calldata, "payout")) return payout(ctx, args);
    return CallResult::reverted("UnknownMethod");
  }

  CallResult view(const CallContext&, ByteView calldata) const override {
    const ByteView args = calldata.size() >= 4 ? calldata.subspan(4) : ByteView{};
    CallResult r;
    if (has_selector(calldata, "getCid") || has_selector(calldata, "getSubmitter")) {
      if (args.size() != kWord) return CallResult::reverted("BadCalldata");
      const auto index = read_word<std::uint64_t>(args);
      // require(index < cidCount, "Invalid CID index")
      if (!index || *index >= state_.cid_count()) {
        return CallResult::reverted(std::string(kInvalidCidIndex));
      }
      if (has_selector(calldata, "getCid")) {
        const auto& cid = state_.cids[*index];
        r.output.assign(cid.bytes().begin(), cid.bytes().end());
      } else {
        const auto& who = state_.submitters[*index];
        r.output.assign(who.bytes.begin(), who.bytes.end());
      }
    } else if (has_selector(calldata, "cidCount")) {
      r.output = word(state_.cid_count());
    } else if (has_selector(calldata, "escrowBalance")) {
      r.output = word(state_.escrow_balance);
    } else if (has_selector(calldata, "budget")) {
      r.output = word(state_.budget);
    } else if (has_selector(calldata, "buyer")) {
      r.output.assign(state_.buyer.bytes.begin(), state_.buyer.bytes.end());
    } else if (has_selector(calldata, "jobMeta")) {
      r.output = state_.job_meta;
    } else {
      return CallResult::reverted("UnknownMethod");
    }
    return r;
  }

  nlohmann::json save() const override {
    nlohmann::json cids = nlohmann::json::array();
    for (std::size_t i = 0; i < state_.cids.size(); ++i) {
      cids.push_back({{"cid", state_.cids[i].hex()}, {"submitter", state_.submitters[i]}});
    }
    return {{"code_size", code_size_},
            {"buyer", state_.buyer},
            {"budget_wei", wei_to_string(state_.budget)},
            {"escrow_wei", wei_to_string(state_.escrow_balance)},
            {"job_meta", to_hex(state_.job_meta)},
            {"cids", std::move(cids)}};
  }

  static std::unique_ptr<ledger::ContractCode> load(const nlohmann::json& j) {
    CidStorageState s;
    s.buyer = j.at("buyer").get<Address>();
    s.budget = parse_wei(j.at("budget_wei").get<std::string>());
    s.escrow_balance = parse_wei(j.at("escrow_wei").get<std::string>());
    s.job_meta = from_hex(j.at("job_meta").get<std::string>());
    for (const auto& e : j.at("cids")) {
      s.cids.push_back(cidstore::Cid::from_hex(e.at("cid").get<std::string>()));
      s.submitters.push_back(e.at("submitter").get<Address>());
    }
    return std::make_unique<CidStorage>(std::move(s), j.at("code_size").get<std::size_t>());
  }

 private:
  CallResult upload_cid(const CallContext& ctx, ByteView args) {
    if (args.size() != kWord) return CallResult::reverted("BadCalldata");
    cidstore::Cid cid;
    std::copy(args.begin(), args.end(), cid.digest.bytes.begin());
    // cids[cidCount] = cid; cidCount++; emit CidUploaded(cid);
    state_.cids.push_back(cid);
    state_.submitters.push_back(ctx.caller);
    CallResult r;
    r.gas = ctx.schedule->storage_write_new + ctx.schedule->storage_write_update;
    r.logs.push_back(LogEntry{"CidUploaded", Bytes(args.begin(), args.end())});
    r.output = word(state_.cid_count() - 1);
    return r;
  }

  CallResult payout(const CallContext& ctx, ByteView args) {
    if (args.size() < kWord) return CallResult::reverted("BadCalldata");
    const auto n = read_word<std::uint64_t>(args.first(kWord));
    constexpr std::size_t kEntry = kAddr + kWord;
    if (!n || args.size() != kWord + *n * kEntry) return CallResult::reverted("BadCalldata");
    if (ctx.caller != state_.buyer) return CallResult::reverted("NotBuyer");

    CallResult r;
    Wei total = 0;
    for (std::uint64_t i = 0; i < *n; ++i) {
      const ByteView entry = args.subspan(kWord + i * kEntry, kEntry);
      const auto amount = read_word<Wei>(entry.subspan(kAddr));
      if (!amount) return CallResult::reverted("EscrowOverdraw");
      total += *amount;
      if (total > state_.escrow_balance) return CallResult::reverted("EscrowOverdraw");
      r.transfers.emplace_back(read_address(entry), *amount);
      r.logs.push_back(LogEntry{"Payout", Bytes(entry.begin(), entry.end())});
    }
    state_.escrow_balance -= total;
    r.gas = *n * ctx.schedule->storage_write_update;
    return r;
  }

  CidStorageState state_;
  std::size_t code_size_;
};

ledger::Construction construct(const CidStorageConfig& config, const CallContext& ctx,
                               ByteView job_meta) {
  CidStorageState s;
  s.buyer = ctx.caller;
  s.budget = ctx.value;
  s.escrow_balance = ctx.value;
  s.job_meta.assign(job_meta.begin(), job_meta.end());

  ledger::Construction out;
  // Constructor arguments are metered as calldata; storage: buyer, escrow,
  // job_meta length slot, and one slot per 32 bytes of job_meta.
  const std::uint64_t slots = 3 + (job_meta.size() + kWord - 1) / kWord;
  out.result.gas = ctx.schedule->calldata_cost(job_meta) +
                   slots * ctx.schedule->storage_write_new;
  Bytes payload(s.buyer.bytes.begin(), s.buyer.bytes.end());
  append(payload, word(s.budget));
  out.result.logs.push_back(LogEntry{"JobDeployed", std::move(payload)});
  out.code = std::make_unique<CidStorage>(std::move(s), config.code_size);
  return out;
}

Bytes call_with(std::string_view method, ByteView args = {}) {
  const auto sel = selector(method);
  Bytes out(4 + args.size());
  std::copy(sel.begin(), sel.end(), out.begin());
  std::copy(args.begin(), args.end(), out.begin() + 4);
  return out;
}

void require_cid_storage(const Ledger& ledger, const Address& contract) {
  const auto kind = ledger.contract_kind(contract);
  if (!kind || *kind != kKindName) {
    throw Error(Errc::kUnknownContract, "no CidStorage contract at " + contract.hex());
  }
}

Bytes view(const Ledger& ledger, const Address& contract, const Bytes& calldata) {
  require_cid_storage(ledger, contract);
  try {
    return ledger.view_call(contract, calldata);
  } catch (const Error& e) {
    if (e.code() == Errc::kReverted && e.what() == kInvalidCidIndex) {
      throw Error(Errc::kInvalidCidIndex, std::string(kInvalidCidIndex));
    }
    throw;
  }
}

template <typename T>
T word_value(const Bytes& w) {
  return read_word<T>(w).value();
}

}  // namespace

std::array<std::uint8_t, 4> selector(std::string_view method) {
  const Hash256 h = sha256(method);
  return {h.bytes[0], h.bytes[1], h.bytes[2], h.bytes[3]};
}

Bytes encode_upload_cid(const cidstore::Cid& cid) {
  return call_with("uploadCid", cid.bytes());
}

Bytes encode_payout(std::span<const std::pair<Address, Wei>> recipients) {
  Bytes args = word(recipients.size());
  for (const auto& [to, amount] : recipients) {
    append(args, to.bytes);
    append(args, word(amount));
  }
  return call_with("payout", args);
}

Bytes encode_get_cid(std::uint64_t index) { return call_with("getCid", word(index)); }

Bytes encode_deploy(ByteView job_meta) { return call_with(kKindName, job_meta); }

void register_cid_storage(ledger::ContractRegistry& registry, CidStorageConfig config) {
  if (config.code_size == 0) {
    throw Error(Errc::kInvalidConfig, "contract code size must be positive");
  }
  registry.add(ledger::ContractKind{
      std::string(kKindName),
      selector(kKindName),
      [config](const CallContext& ctx, ByteView args) { return construct(config, ctx, args); },
      [](const nlohmann::json& j) { return CidStorage::load(j); },
  });
}

std::shared_ptr<const ledger::ContractRegistry> make_registry(CidStorageConfig config) {
  auto registry = std::make_shared<ledger::ContractRegistry>();
  register_cid_storage(*registry, config);
  return registry;
}

Deployment deploy(Ledger& ledger, const Address& buyer, Wei budget, ByteView job_meta) {
  Receipt r = ledger.submit(buyer, std::nullopt, budget, encode_deploy(job_meta));
  require_success(r);
  return {*r.contract_address, std::move(r)};
}

Receipt upload_cid(Ledger& ledger, const Address& contract, const Address& caller,
                   const cidstore::Cid& cid) {
  require_cid_storage(ledger, contract);
  return ledger.submit(caller, contract, 0, encode_upload_cid(cid));
}

Receipt payout(Ledger& ledger, const Address& contract, const Address& caller,
               std::span<const std::pair<Address, Wei>> recipients) {
  require_cid_storage(ledger, contract);
  return ledger.submit(caller, contract, 0, encode_payout(recipients));
}

cidstore::Cid get_cid(const Ledger& ledger, const Address& contract, std::uint64_t index) {
  const Bytes out = view(ledger, contract, encode_get_cid(index));
  cidstore::Cid cid;
  std::copy(out.begin(), out.end(), cid.digest.bytes.begin());
  return cid;
}

Address get_submitter(const Ledger& ledger, const Address& contract, std::uint64_t index) {
  return read_address(view(ledger, contract, call_with("getSubmitter", word(index))));
}

std::uint64_t cid_count(const Ledger& ledger, const Address& contract) {
  return word_value<std::uint64_t>(view(ledger, contract, call_with("cidCount")));
}

Wei escrow_balance(const Ledger& ledger, const Address& contract) {
  return word_value<Wei>(view(ledger, contract, call_with("escrowBalance")));
}

Wei budget(const Ledger& ledger, const Address& contract) {
  return word_value<Wei>(view(ledger, contract, call_with("budget")));
}

Address buyer(const Ledger& ledger, const Address& contract) {
  return read_address(view(ledger, contract, call_with("buyer")));
}

Bytes job_meta(const Ledger& ledger, const Address& contract) {
  return view(ledger, contract, call_with("jobMeta"));
}

void require_success(const Receipt& r) {
  if (r.ok()) return;
  const std::string& why = r.revert_reason;
  if (why == "NotBuyer") throw Error(Errc::kNotBuyer, why);
  if (why == "EscrowOverdraw") throw Error(Errc::kEscrowOverdraw, why);
  if (why == kInvalidCidIndex) throw Error(Errc::kInvalidCidIndex, why);
  throw Error(Errc::kReverted, why);
}

}  // namespace oflw3::contract
