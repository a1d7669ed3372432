#pragma once

// CidStorage: an append-only registry of 32-byte CIDs plus a buyer-funded
// escrow that only the buyer can pay out.
//
// Calldata encoding (shared by every client of the contract):
//   selector(name) = first 4 bytes of SHA-256(name)
//   calldata       = selector || arguments
// Arguments are fixed width and big-endian:
//   uint   32-byte word
//   cid    32 raw bytes
//   addr   20 raw bytes
// Methods:
//   uploadCid(cid)                              mutating
//   payout(uint n, n x (addr, uint amount))      mutating, buyer only
//   getCid(uint index) -> cid                    view
//   getSubmitter(uint index) -> addr             view
//   cidCount() / escrowBalance() / budget() -> uint, buyer() -> addr,
//   jobMeta() -> raw bytes                       views
// Deployment calldata is selector("CidStorage") || job_meta and must carry
// the budget as the transaction value.

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "oflw3/bytes.hpp"
#include "oflw3/cidstore.hpp"
#include "oflw3/ledger.hpp"

namespace oflw3::contract {

using ledger::Address;
using ledger::Ledger;
using ledger::Receipt;

inline constexpr std::string_view kInvalidCidIndex = "Invalid CID index";
inline constexpr std::string_view kKindName = "CidStorage";

struct CidStorageConfig {
  // Stand-in for the compiled bytecode length charged at deployment.
  std::size_t code_size = 4096;
};

struct CidStorageState {
  std::vector<cidstore::Cid> cids;
  std::vector<Address> submitters;
  Address buyer;
  Wei budget = 0;
  Wei escrow_balance = 0;
  Bytes job_meta;

  std::uint64_t cid_count() const { return cids.size(); }
};

std::array<std::uint8_t, 4> selector(std::string_view method);

Bytes encode_upload_cid(const cidstore::Cid& cid);
Bytes encode_payout(std::span<const std::pair<Address, Wei>> recipients);
Bytes encode_get_cid(std::uint64_t index);
Bytes encode_deploy(ByteView job_meta);

// Registers the CidStorage kind so the ledger can create and reload it.
void register_cid_storage(ledger::ContractRegistry& registry, CidStorageConfig config = {});
std::shared_ptr<const ledger::ContractRegistry> make_registry(CidStorageConfig config = {});

struct Deployment {
  Address address;
  Receipt receipt;
};

// Throws kInsufficientFunds.
Deployment deploy(Ledger& ledger, const Address& buyer, Wei budget, ByteView job_meta);
// Throws kUnknownContract when `contract` is not a CidStorage instance.
Receipt upload_cid(Ledger& ledger, const Address& contract, const Address& caller,
                   const cidstore::Cid& cid);
// A NotBuyer / EscrowOverdraw failure is a Reverted receipt: the caller
// still pays the fee, no wei moves.
Receipt payout(Ledger& ledger, const Address& contract, const Address& caller,
               std::span<const std::pair<Address, Wei>> recipients);

// Zero-gas views. get_cid throws kInvalidCidIndex with message exactly
// "Invalid CID index".
cidstore::Cid get_cid(const Ledger& ledger, const Address& contract, std::uint64_t index);
Address get_submitter(const Ledger& ledger, const Address& contract, std::uint64_t index);
std::uint64_t cid_count(const Ledger& ledger, const Address& contract);
Wei escrow_balance(const Ledger& ledger, const Address& contract);
Wei budget(const Ledger& ledger, const Address& contract);
Address buyer(const Ledger& ledger, const Address& contract);
Bytes job_meta(const Ledger& ledger, const Address& contract);

// Throws an Error mapped from the revert reason when `r` did not succeed.
void require_success(const Receipt& r);

}  // namespace oflw3::contract
