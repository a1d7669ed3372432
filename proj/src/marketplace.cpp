#include "oflw3/marketplace.hpp"

#include <chrono>

#include "oflw3/contract.hpp"
#include "oflw3/error.hpp"

namespace oflw3::marketplace {

using cidstore::Cid;
using learner::ModelWeights;

std::string to_string(JobState s) {
  switch (s) {
    case JobState::kCreated: return "Created";
    case JobState::kCollecting: return "Collecting";
    case JobState::kAggregating: return "Aggregating";
    case JobState::kPaid: return "Paid";
    case JobState::kFailed: return "Failed";
  }
  return "Unknown";
}

void JobSpec::validate() const {
  if (budget == 0) throw Error(Errc::kInvalidArgument, "budget must be > 0");
  if (min_owners < 2) throw Error(Errc::kInvalidArgument, "min_owners must be >= 2");
  arch.validate();
  init_model.validate();
  if (init_model.arch != arch) throw Error(Errc::kShapeMismatch, "init model does not match arch");
  if (!testset_ref.is_object() || !testset_ref.contains("kind")) {
    throw Error(Errc::kInvalidConfig, "testset_ref needs a dataset descriptor");
  }
}

// ---------------------------------------------------------------------------
// Timing model

double TimingModel::train(const learner::MlpArch& arch, std::size_t samples,
                          std::size_t epochs) const {
  // forward 2P, backward 4P per sample
  const double flops = 6.0 * double(arch.parameter_count()) * double(samples) * double(epochs);
  return flops / cfg_.flops_per_s;
}

double TimingModel::aggregate(aggregator::Method method, std::span<const ModelWeights> members,
                              std::size_t global_hidden, std::size_t test_rows) const {
  if (members.empty()) return 0.0;
  const auto& arch = members.front().arch;
  const double n = double(members.size());
  const double p = double(arch.parameter_count());
  const double rows = double(test_rows);
  double flops = 0.0;
  switch (method) {
    case aggregator::Method::kNaive:
      flops = n * p + 2.0 * p * rows;
      break;
    case aggregator::Method::kMatched: {
      const double in = double(arch.input_width());
      const double out = double(arch.output_width());
      const double g = double(global_hidden);
      for (const auto& m : members) {
        const double h = arch.dims.size() > 2 ? double(m.arch.dims[1]) : 0.0;
        flops += 3.0 * h * g * (in + 1.0 + out);
      }
      const double pg = g * (in + 1.0) + out * (g + 1.0);
      flops += 2.0 * pg * rows;
      break;
    }
    case aggregator::Method::kEnsemble:
      flops = 2.0 * n * p * rows;
      break;
  }
  return flops / cfg_.flops_per_s;
}

namespace {

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

// Members must agree on input/output width and depth; naive averaging also
// needs the exact arch.
void check_model_fits(const JobSpec& spec, const ModelWeights& m) {
  const auto& a = spec.arch;
  if (m.arch.dims.size() != a.dims.size() || m.arch.input_width() != a.input_width() ||
      m.arch.output_width() != a.output_width()) {
    throw Error(Errc::kArchMismatch, "model does not fit the job arch");
  }
  if (spec.aggregator == aggregator::Method::kNaive && m.arch != a) {
    throw Error(Errc::kArchMismatch, "naive averaging needs the exact job arch");
  }
}

nlohmann::json steps_json(const StepTimings& t) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : t) j[k] = v;
  return j;
}

}  // namespace

nlohmann::json timings_json(const Job& job, config::TimingConfig::Mode mode) {
  nlohmann::json owners = nlohmann::json::array();
  StepTimings totals;
  for (const auto& s : job.submissions) {
    nlohmann::json row = steps_json(s.timings);
    row["index"] = s.index;
    row["owner"] = s.owner.hex();
    owners.push_back(std::move(row));
    for (const auto& [k, v] : s.timings) totals[k] += v;
  }
  double buyer_total = 0.0;
  for (const auto& [k, v] : job.timings) buyer_total += v;
  return {{"mode", config::to_string(mode)},
          {"unit", "seconds"},
          {"buyer", steps_json(job.timings)},
          {"buyer_total", buyer_total},
          {"owners", std::move(owners)},
          {"owner_totals", steps_json(totals)}};
}

nlohmann::json to_json(const Job& job) {
  nlohmann::json subs = nlohmann::json::array();
  std::vector<Address> owners;
  for (const auto& s : job.submissions) {
    subs.push_back({{"index", s.index},
                    {"owner", s.owner.hex()},
                    {"cid", s.cid.hex()},
                    {"tx", s.tx_hash.hex()}});
    owners.push_back(s.owner);
  }
  nlohmann::json excluded = nlohmann::json::array();
  for (const auto& e : job.excluded) excluded.push_back({{"index", e.index}, {"reason", e.reason}});
  nlohmann::json payouts = nlohmann::json::array();
  for (const auto& h : job.payout_txs) payouts.push_back(h.hex());

  nlohmann::json j{{"id", job.id},
                   {"state", to_string(job.state)},
                   {"buyer", job.spec.buyer.hex()},
                   {"budget_wei", wei_to_string(job.spec.budget)},
                   {"budget_eth", format_eth(job.spec.budget)},
                   {"arch", job.spec.arch},
                   {"aggregator", aggregator::to_string(job.spec.aggregator)},
                   {"match_config", job.spec.match_config},
                   {"min_owners", job.spec.min_owners},
                   {"testset_ref", job.spec.testset_ref},
                   {"init_model_cid", job.init_model_cid.hex()},
                   {"cid_count", job.submissions.size()},
                   {"submissions", std::move(subs)},
                   {"excluded", std::move(excluded)},
                   {"payout_txs", std::move(payouts)}};
  j["failure"] = job.failure.empty() ? nlohmann::json() : nlohmann::json(job.failure);
  j["contract"] = job.contract ? nlohmann::json(job.contract->hex()) : nlohmann::json();
  j["deploy_tx"] = job.deploy_tx ? nlohmann::json(job.deploy_tx->hex()) : nlohmann::json();
  j["global_model_cid"] =
      job.global_model_cid ? nlohmann::json(job.global_model_cid->hex()) : nlohmann::json();
  if (job.report) {
    j["report"] = incentives::to_json(*job.report, owners);
    // The aggregation ran with the resolved config; show that one.
    j["match_config"] = job.report->config;
  } else {
    j["report"] = nullptr;
  }
  j["payments"] = job.payments ? incentives::to_json(*job.payments) : nlohmann::json();
  return j;
}

// ---------------------------------------------------------------------------

struct Service::Slot {
  mutable std::mutex mutex;
  Job job;
  std::optional<learner::Dataset> test;
};

struct Service::Plan {
  std::vector<Address> owners;  // every submission, index order
  std::vector<std::uint64_t> valid_index;
  std::vector<ModelWeights> valid;
  std::vector<Exclusion> excluded;
  std::optional<ModelWeights> global;
  incentives::ContributionReport report;
  incentives::PaymentTable payments;
  StepTimings timings;
};

Service::Service(const config::ServiceConfig& cfg)
    : cfg_(cfg),
      timing_(cfg.timing),
      ledger_(ledger::Ledger::genesis(cfg.genesis, cfg.gas_schedule,
                                      contract::make_registry(cfg.contract))),
      cas_(cfg.cas_root) {}

Service::~Service() = default;

Service::Slot& Service::slot(JobId id) const {
  std::lock_guard lock(jobs_mutex_);
  auto it = jobs_.find(id);
  if (it == jobs_.end()) throw Error(Errc::kNotFound, "no job " + std::to_string(id));
  return *it->second;
}

Bytes Service::job_meta(const JobSpec& spec, const Cid& init_cid) const {
  const nlohmann::json meta{{"arch", spec.arch},
                            {"aggregator", aggregator::to_string(spec.aggregator)},
                            {"match_config", spec.match_config},
                            {"testset_ref", spec.testset_ref},
                            {"min_owners", spec.min_owners},
                            {"init_model_cid", init_cid.hex()}};
  const std::string text = meta.dump();
  return Bytes(text.begin(), text.end());
}

const learner::Dataset& Service::testset(Slot& s) const {
  if (!s.test) s.test = learner::load_dataset(s.job.spec.testset_ref);
  if (s.test->dim != s.job.spec.arch.input_width()) {
    throw Error(Errc::kShapeMismatch, "test set width does not match the job arch");
  }
  return *s.test;
}

Job Service::create_job(const JobSpec& spec) {
  spec.validate();
  const Bytes init_bytes = learner::serialize(spec.init_model);
  const Cid init_cid = cas_.put(init_bytes);

  auto fresh = std::make_unique<Slot>();
  Slot* s = fresh.get();
  std::unique_lock slot_lock(s->mutex);
  {
    std::lock_guard lock(jobs_mutex_);
    s->job.id = next_id_++;
    jobs_.emplace(s->job.id, std::move(fresh));
  }
  Job& job = s->job;
  job.spec = spec;
  job.init_model_cid = init_cid;

  Stopwatch watch;
  try {
    const auto d = contract::deploy(ledger_, spec.buyer, spec.budget, job_meta(spec, init_cid));
    job.contract = d.address;
    job.deploy_tx = d.receipt.tx_hash;
    job.state = JobState::kCollecting;
  } catch (const Error& e) {
    job.state = JobState::kFailed;
    job.failure = std::string(oflw3::to_string(e.code()));
  }
  job.timings["deploy"] = timing_.simulated() ? timing_.transactions(1) : watch.seconds();
  return job;
}

SubmitResult Service::submit_model(JobId id, const Address& owner, ByteView model_bytes,
                                   const StepTimings& owner_timings) {
  Slot& s = slot(id);
  std::lock_guard lock(s.mutex);
  Job& job = s.job;
  if (job.state != JobState::kCollecting) {
    throw Error(Errc::kJobNotCollecting, "job " + std::to_string(id) + " is " + to_string(job.state));
  }
  check_model_fits(job.spec, learner::deserialize(model_bytes));

  Submission sub;
  sub.owner = owner;
  if (auto it = owner_timings.find("train"); it != owner_timings.end()) {
    sub.timings["train"] = it->second;
  }
  Stopwatch upload_watch;
  sub.cid = cas_.put(model_bytes);
  sub.timings["upload_model"] =
      timing_.simulated() ? timing_.blob_transfer(model_bytes.size()) : upload_watch.seconds();

  Stopwatch send_watch;
  const auto receipt = contract::upload_cid(ledger_, *job.contract, owner, sub.cid);
  contract::require_success(receipt);
  sub.timings["send_cid"] = timing_.simulated() ? timing_.transactions(1) : send_watch.seconds();
  sub.tx_hash = receipt.tx_hash;
  sub.index = contract::cid_count(ledger_, *job.contract) - 1;
  job.submissions.push_back(sub);
  return {sub.cid, sub.index, receipt};
}

void Service::check_aggregatable(const Job& job, const Address& caller) const {
  if (caller != job.spec.buyer) throw Error(Errc::kNotBuyer, "only the buyer can aggregate");
  if (job.state != JobState::kCollecting) {
    throw Error(Errc::kJobNotCollecting, "job " + std::to_string(job.id) + " is " + to_string(job.state));
  }
  const std::uint64_t count = contract::cid_count(ledger_, *job.contract);
  if (count < job.spec.min_owners) {
    throw Error(Errc::kTooFewOwners, std::to_string(count) + " of " +
                                         std::to_string(job.spec.min_owners) + " models submitted");
  }
}

Service::Plan Service::plan_aggregation(Slot& s) const {
  const Job& job = s.job;
  const Address contract_addr = *job.contract;
  const std::uint64_t count = contract::cid_count(ledger_, contract_addr);

  Plan plan;
  // CIDs straight from the contract.
  Stopwatch watch;
  std::vector<Cid> cids;
  for (std::uint64_t i = 0; i < count; ++i) {
    cids.push_back(contract::get_cid(ledger_, contract_addr, i));
    plan.owners.push_back(contract::get_submitter(ledger_, contract_addr, i));
  }
  plan.timings["download_cids"] = timing_.simulated() ? timing_.views(2 * count + 1) : watch.seconds();

  // Models from the blob store. Anything unreadable is excluded.
  watch = Stopwatch();
  double simulated = 0.0;
  for (std::uint64_t i = 0; i < count; ++i) {
    try {
      std::uintmax_t size = 0;
      try {
        size = cas_.stat(cids[i]).size;
      } catch (const Error&) {
      }
      simulated += timing_.blob_transfer(size);
      ModelWeights m = learner::deserialize(cas_.get(cids[i]));
      check_model_fits(job.spec, m);
      plan.valid.push_back(std::move(m));
      plan.valid_index.push_back(i);
    } catch (const Error& e) {
      plan.excluded.push_back({i, std::string(oflw3::to_string(e.code())) + ": " + e.what()});
    }
  }
  plan.timings["retrieve_models"] = timing_.simulated() ? simulated : watch.seconds();
  if (plan.valid.size() < 2) {
    throw Error(Errc::kTooFewOwners, "fewer than two usable models after retrieval");
  }

  const learner::Dataset& test = testset(s);
  const auto method = job.spec.aggregator;
  const aggregator::MatchConfig resolved = aggregator::resolve(job.spec.match_config, plan.valid);
  watch = Stopwatch();
  std::size_t global_hidden = 0;
  if (method == aggregator::Method::kNaive) {
    plan.global = aggregator::aggregate_naive(plan.valid);
  } else if (method == aggregator::Method::kMatched) {
    plan.global = aggregator::aggregate_matched(plan.valid, resolved);
  }
  if (plan.global && plan.global->arch.dims.size() > 2) global_hidden = plan.global->arch.dims[1];
  plan.timings["aggregate"] =
      timing_.simulated() ? timing_.aggregate(method, plan.valid, global_hidden, test.size())
                          : watch.seconds();

  watch = Stopwatch();
  const auto loo = incentives::compute_loo(plan.valid, test, method, resolved, cfg_.threads);
  const std::size_t n_valid = plan.valid.size();
  plan.timings["loo"] =
      timing_.simulated()
          ? double(n_valid) * timing_.aggregate(method, std::span(plan.valid).first(n_valid - 1),
                                                global_hidden, test.size())
          : watch.seconds();

  // Excluded owners: dropping them changes nothing, so loo = full.
  std::vector<incentives::Ppm> loo_all(count, loo.acc_full);
  for (std::size_t k = 0; k < n_valid; ++k) loo_all[plan.valid_index[k]] = loo.loo[k];
  plan.report = incentives::make_report(loo.acc_full, std::move(loo_all));
  plan.report.method = method;
  plan.report.config = resolved;
  // Allocate over usable models only, so the equal-split fallback never
  // reaches an excluded owner.
  const auto amounts = incentives::allocate(loo.marginal, job.spec.budget);
  plan.payments.budget = job.spec.budget;
  for (std::uint64_t i = 0; i < count; ++i) plan.payments.entries.push_back({plan.owners[i], 0});
  for (std::size_t k = 0; k < n_valid; ++k) plan.payments.entries[plan.valid_index[k]].amount = amounts[k];
  return plan;
}

Job Service::run_aggregation(JobId id, const Address& caller) {
  Slot& s = slot(id);
  std::lock_guard lock(s.mutex);
  Job& job = s.job;
  check_aggregatable(job, caller);

  job.state = JobState::kAggregating;
  try {
    Plan plan = plan_aggregation(s);
    if (plan.global) job.global_model_cid = cas_.put(learner::serialize(*plan.global));

    Stopwatch watch;
    std::size_t sent = 0;
    for (const auto& e : plan.payments.entries) {
      if (e.amount == 0) continue;
      const std::pair<Address, Wei> one[] = {{e.owner, e.amount}};
      const auto r = contract::payout(ledger_, *job.contract, caller, one);
      contract::require_success(r);
      job.payout_txs.push_back(r.tx_hash);
      ++sent;
    }
    plan.timings["payout"] = timing_.simulated() ? timing_.transactions(sent) : watch.seconds();

    for (const auto& [k, v] : plan.timings) job.timings[k] = v;
    job.excluded = std::move(plan.excluded);
    job.report = std::move(plan.report);
    job.payments = std::move(plan.payments);
    job.state = JobState::kPaid;
  } catch (const Error& e) {
    job.state = JobState::kFailed;
    job.failure = std::string(oflw3::to_string(e.code()));
    throw;
  }
  return job;
}

Job Service::get_job(JobId id) const {
  Slot& s = slot(id);
  std::lock_guard lock(s.mutex);
  return s.job;
}

std::vector<Job> Service::list_jobs() const {
  std::vector<Slot*> slots;
  {
    std::lock_guard lock(jobs_mutex_);
    for (const auto& [id, s] : jobs_) slots.push_back(s.get());
  }
  std::vector<Job> out;
  for (Slot* s : slots) {
    std::lock_guard lock(s->mutex);
    out.push_back(s->job);
  }
  return out;
}

nlohmann::json Service::timings(JobId id) const {
  return timings_json(get_job(id), cfg_.timing.mode);
}

namespace {

Estimate quote(const ledger::Receipt& r) {
  return {r.gas_used, r.fee, 1};
}

}  // namespace

Estimate Service::estimate_create(const JobSpec& spec) const {
  spec.validate();
  const Cid init_cid = Cid::of(learner::serialize(spec.init_model));
  ledger::Transaction tx;
  tx.from = spec.buyer;
  tx.value = spec.budget;
  tx.calldata = contract::encode_deploy(job_meta(spec, init_cid));
  tx.nonce = ledger_.nonce(spec.buyer);
  return quote(ledger_.simulate(tx));
}

Estimate Service::estimate_submit(JobId id, const Address& owner, ByteView model_bytes) const {
  Slot& s = slot(id);
  std::lock_guard lock(s.mutex);
  if (s.job.state != JobState::kCollecting) {
    throw Error(Errc::kJobNotCollecting, "job " + std::to_string(id) + " is " + to_string(s.job.state));
  }
  check_model_fits(s.job.spec, learner::deserialize(model_bytes));
  ledger::Transaction tx;
  tx.from = owner;
  tx.to = *s.job.contract;
  tx.calldata = contract::encode_upload_cid(Cid::of(model_bytes));
  tx.nonce = ledger_.nonce(owner);
  return quote(ledger_.simulate(tx));
}

Estimate Service::estimate_aggregate(JobId id, const Address& caller) const {
  Slot& s = slot(id);
  std::lock_guard lock(s.mutex);
  check_aggregatable(s.job, caller);
  const Plan plan = plan_aggregation(s);
  Estimate total;
  for (const auto& e : plan.payments.entries) {
    if (e.amount == 0) continue;
    const std::pair<Address, Wei> one[] = {{e.owner, e.amount}};
    ledger::Transaction tx;
    tx.from = caller;
    tx.to = *s.job.contract;
    tx.calldata = contract::encode_payout(one);
    tx.nonce = ledger_.nonce(caller);
    const auto r = ledger_.simulate(tx);
    total.gas += r.gas_used;
    total.fee += r.fee;
    ++total.transactions;
  }
  return total;
}

nlohmann::json Service::export_state() const {
  nlohmann::json jobs = nlohmann::json::array();
  for (const auto& job : list_jobs()) jobs.push_back(to_json(job));
  return {{"ledger", ledger_.export_json()}, {"jobs", std::move(jobs)}};
}

}  // namespace oflw3::marketplace
