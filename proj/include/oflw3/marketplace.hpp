#pragma once

// The marketplace service: one in-process ledger, one blob store, and the
// buyer/owner workflow on top of them.
//
//   create_job       deploy CidStorage with the budget in escrow
//   submit_model     blob -> CAS, CID -> uploadCid tx (owner pays gas)
//   run_aggregation  read CIDs, fetch models, aggregate, leave-one-out,
//                    one payout tx per owner
//
// Job states: Created -> Collecting -> Aggregating -> Paid, or -> Failed.

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "oflw3/aggregator.hpp"
#include "oflw3/cidstore.hpp"
#include "oflw3/config.hpp"
#include "oflw3/incentives.hpp"
#include "oflw3/ledger.hpp"
#include "oflw3/learner.hpp"

namespace oflw3::marketplace {

using JobId = std::uint64_t;
using ledger::Address;

enum class JobState { kCreated, kCollecting, kAggregating, kPaid, kFailed };
std::string to_string(JobState s);

struct JobSpec {
  Address buyer;
  Wei budget = 0;
  learner::MlpArch arch;
  learner::ModelWeights init_model;
  aggregator::Method aggregator = aggregator::Method::kMatched;
  aggregator::MatchConfig match_config;
  nlohmann::json testset_ref;  // learner::load_dataset descriptor
  std::size_t min_owners = 2;

  void validate() const;  // kInvalidArgument / kInvalidConfig
};

// Step name -> seconds.
using StepTimings = std::map<std::string, double>;

inline constexpr const char* kBuyerSteps[] = {"deploy",    "download_cids", "retrieve_models",
                                              "aggregate", "loo",           "payout"};
inline constexpr const char* kOwnerSteps[] = {"train", "upload_model", "send_cid"};

struct Submission {
  std::uint64_t index = 0;
  Address owner;
  cidstore::Cid cid;
  Hash256 tx_hash;
  StepTimings timings;  // owner side
};

struct Exclusion {
  std::uint64_t index = 0;
  std::string reason;
};

struct Job {
  JobId id = 0;
  JobSpec spec;
  JobState state = JobState::kCreated;
  std::string failure;  // Errc name for Failed jobs
  std::optional<Address> contract;
  cidstore::Cid init_model_cid;
  std::optional<Hash256> deploy_tx;
  std::vector<Submission> submissions;
  StepTimings timings;  // buyer side
  std::optional<incentives::ContributionReport> report;
  std::optional<incentives::PaymentTable> payments;
  std::vector<Hash256> payout_txs;
  std::optional<cidstore::Cid> global_model_cid;
  std::vector<Exclusion> excluded;
};

nlohmann::json to_json(const Job& job);
// {"mode", "buyer": {...}, "owners": [{"index", "owner", steps...}],
//  "owner_totals": {...}}
nlohmann::json timings_json(const Job& job, config::TimingConfig::Mode mode);

// Duration estimates for the simulated clock.
class TimingModel {
 public:
  explicit TimingModel(config::TimingConfig cfg) : cfg_(cfg) {}

  bool simulated() const { return cfg_.mode == config::TimingConfig::Mode::kSimulated; }
  double transactions(std::size_t n) const { return cfg_.block_time_s * double(n); }
  double views(std::size_t n) const { return cfg_.view_latency_s * double(n); }
  double blob_transfer(std::uintmax_t bytes) const {
    return cfg_.cas_latency_s + double(bytes) / cfg_.cas_bytes_per_s;
  }
  double train(const learner::MlpArch& arch, std::size_t samples, std::size_t epochs) const;
  // Aggregating `members` models and evaluating the result on `test_rows`.
  double aggregate(aggregator::Method method, std::span<const learner::ModelWeights> members,
                   std::size_t global_hidden, std::size_t test_rows) const;

 private:
  config::TimingConfig cfg_;
};

struct SubmitResult {
  cidstore::Cid cid;
  std::uint64_t index = 0;
  ledger::Receipt receipt;
};

struct Estimate {
  std::uint64_t gas = 0;
  Wei fee = 0;
  std::size_t transactions = 0;
};

class Service {
 public:
  explicit Service(const config::ServiceConfig& cfg);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  // A deployment the buyer cannot afford leaves a Failed job behind.
  Job create_job(const JobSpec& spec);
  // Throws kNotFound, kJobNotCollecting, deserialize errors, kArchMismatch
  // (all before any tx), kInsufficientFunds.
  SubmitResult submit_model(JobId id, const Address& owner, ByteView model_bytes,
                            const StepTimings& owner_timings = {});
  // Throws kNotFound, kNotBuyer, kJobNotCollecting, kTooFewOwners (job left
  // Collecting). Later failures mark the job Failed and rethrow.
  Job run_aggregation(JobId id, const Address& caller);

  Job get_job(JobId id) const;  // kNotFound
  std::vector<Job> list_jobs() const;
  nlohmann::json timings(JobId id) const;

  // Fee quotes without mutating anything.
  Estimate estimate_create(const JobSpec& spec) const;
  Estimate estimate_submit(JobId id, const Address& owner, ByteView model_bytes) const;
  Estimate estimate_aggregate(JobId id, const Address& caller) const;

  ledger::Ledger& ledger() { return ledger_; }
  const ledger::Ledger& ledger() const { return ledger_; }
  cidstore::CidStore& cas() { return cas_; }
  const cidstore::CidStore& cas() const { return cas_; }
  const config::ServiceConfig& config() const { return cfg_; }

  // Ledger export plus every job, for offline inspection.
  nlohmann::json export_state() const;

 private:
  struct Slot;
  struct Plan;

  Slot& slot(JobId id) const;
  Bytes job_meta(const JobSpec& spec, const cidstore::Cid& init_cid) const;
  void check_aggregatable(const Job& job, const Address& caller) const;
  // Everything up to the payout transactions; touches neither the ledger
  // nor the blob store.
  Plan plan_aggregation(Slot& s) const;
  const learner::Dataset& testset(Slot& s) const;

  config::ServiceConfig cfg_;
  TimingModel timing_;
  ledger::Ledger ledger_;
  cidstore::CidStore cas_;
  mutable std::mutex jobs_mutex_;
  std::map<JobId, std::unique_ptr<Slot>> jobs_;
  JobId next_id_ = 1;
};

}  // namespace oflw3::marketplace
