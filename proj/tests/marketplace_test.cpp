#include "oflw3/marketplace.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <set>
#include <thread>

#include <httplib.h>

#include "oflw3/contract.hpp"
#include "oflw3/dataset.hpp"
#include "oflw3/error.hpp"
#include "oflw3/http_api.hpp"
#include "test_util.hpp"

namespace oflw3::marketplace {
namespace {

using ledger::Address;
using learner::ModelWeights;
using nlohmann::json;

const Wei kBudget = 10'000'000'000'000'000ULL;

Errc code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return Errc::kInvalidArgument;
}

Address buyer() { return Address::from_label("buyer"); }
Address owner(std::size_t i) { return Address::from_label("owner-" + std::to_string(i)); }

learner::SyntheticSpec data_spec(std::uint64_t sample_seed, std::size_t samples) {
  learner::SyntheticSpec s;
  s.samples = samples;
  s.classes = 3;
  s.side = 6;
  s.prototype_seed = 5;
  s.sample_seed = sample_seed;
  return s;
}

const learner::MlpArch kArch{{36, 6, 3}};

struct Fixture {
  test::TempDir dir;
  std::unique_ptr<Service> service;

  explicit Fixture(Wei buyer_balance = kWeiPerEth) {
    config::ServiceConfig cfg;
    cfg.cas_root = dir.path() / "cas";
    cfg.threads = 2;
    cfg.genesis.push_back({buyer(), buyer_balance});
    for (std::size_t i = 0; i < 4; ++i) cfg.genesis.push_back({owner(i), kWeiPerEth / 10});
    cfg.genesis.push_back({Address::from_label("pauper"), 1000});
    service = std::make_unique<Service>(cfg);
  }

  JobSpec spec(Wei budget = kBudget) const {
    JobSpec s;
    s.buyer = buyer();
    s.budget = budget;
    s.arch = kArch;
    s.init_model = learner::init_weights(kArch, 7);
    s.testset_ref = learner::describe(data_spec(99, 150));
    return s;
  }

  Bytes trained(std::size_t i) const {
    const auto data = learner::make_synthetic(data_spec(10 + i, 90));
    learner::Hyperparams hp{16, 0.3, 5, i};
    return learner::serialize(learner::train(learner::init_weights(kArch, 7), data, hp));
  }

  Job job_with(std::size_t owners) {
    Job job = service->create_job(spec());
    for (std::size_t i = 0; i < owners; ++i) {
      service->submit_model(job.id, owner(i), trained(i), {{"train", 1.5}});
    }
    return service->get_job(job.id);
  }
};

TEST(ServiceTest, CreateJobEscrowsBudget) {
  Fixture f;
  const Job job = f.service->create_job(f.spec());
  EXPECT_EQ(job.state, JobState::kCollecting);
  ASSERT_TRUE(job.contract);
  const auto& ledger = f.service->ledger();
  EXPECT_EQ(contract::escrow_balance(ledger, *job.contract), kBudget);
  EXPECT_EQ(contract::cid_count(ledger, *job.contract), 0u);
  EXPECT_TRUE(job.timings.count("deploy"));
  EXPECT_TRUE(f.service->cas().contains(job.init_model_cid));
  // The metadata on chain points at the initial model.
  const Bytes meta = contract::job_meta(ledger, *job.contract);
  EXPECT_EQ(json::parse(meta.begin(), meta.end()).at("init_model_cid"), job.init_model_cid.hex());
}

TEST(ServiceTest, UnaffordableDeployLeavesFailedJob) {
  Fixture f;
  JobSpec s = f.spec();
  s.buyer = Address::from_label("pauper");
  const Job job = f.service->create_job(s);
  EXPECT_EQ(job.state, JobState::kFailed);
  EXPECT_EQ(job.failure, "InsufficientFunds");
  EXPECT_FALSE(job.contract);
  EXPECT_EQ(f.service->ledger().balance(s.buyer), 1000u);
}

TEST(ServiceTest, SpecValidation) {
  Fixture f;
  JobSpec s = f.spec();
  s.budget = 0;
  EXPECT_EQ(code_of([&] { f.service->create_job(s); }), Errc::kInvalidArgument);
  s = f.spec();
  s.min_owners = 1;
  EXPECT_EQ(code_of([&] { f.service->create_job(s); }), Errc::kInvalidArgument);
  s = f.spec();
  s.init_model = learner::init_weights({{36, 5, 3}}, 1);
  EXPECT_EQ(code_of([&] { f.service->create_job(s); }), Errc::kShapeMismatch);
}

TEST(ServiceTest, SubmitStoresBlobAndOwnerPaysGas) {
  Fixture f;
  const Job job = f.service->create_job(f.spec());
  const Bytes model = f.trained(0);
  const Wei before = f.service->ledger().balance(owner(0));
  const auto r = f.service->submit_model(job.id, owner(0), model);
  EXPECT_EQ(r.index, 0u);
  EXPECT_EQ(r.cid, cidstore::Cid::of(model));
  EXPECT_EQ(f.service->cas().get(r.cid), model);
  EXPECT_EQ(contract::cid_count(f.service->ledger(), *job.contract), 1u);
  EXPECT_EQ(f.service->ledger().balance(owner(0)), before - r.receipt.fee);
  EXPECT_GT(r.receipt.fee, 0u);
}

TEST(ServiceTest, GarbageIsRejectedBeforeAnyTransaction) {
  Fixture f;
  const Job job = f.service->create_job(f.spec());
  const auto height = f.service->ledger().height();
  const Wei balance = f.service->ledger().balance(owner(0));
  const std::string junk = "definitely not a model";
  EXPECT_EQ(code_of([&] { f.service->submit_model(job.id, owner(0), as_bytes(junk)); }),
            Errc::kBadMagic);
  EXPECT_EQ(f.service->ledger().height(), height);
  EXPECT_EQ(f.service->ledger().balance(owner(0)), balance);
  EXPECT_EQ(f.service->ledger().nonce(owner(0)), 0u);

  const Bytes other = learner::serialize(learner::init_weights({{36, 6, 4}}, 1));
  EXPECT_EQ(code_of([&] { f.service->submit_model(job.id, owner(0), other); }),
            Errc::kArchMismatch);
  EXPECT_EQ(f.service->ledger().height(), height);
}

TEST(ServiceTest, TooFewOwnersLeavesJobCollecting) {
  Fixture f;
  const Job job = f.job_with(1);
  EXPECT_EQ(code_of([&] { f.service->run_aggregation(job.id, buyer()); }), Errc::kTooFewOwners);
  EXPECT_EQ(f.service->get_job(job.id).state, JobState::kCollecting);
}

TEST(ServiceTest, OnlyBuyerAggregates) {
  Fixture f;
  const Job job = f.job_with(2);
  EXPECT_EQ(code_of([&] { f.service->run_aggregation(job.id, owner(0)); }), Errc::kNotBuyer);
  EXPECT_EQ(f.service->get_job(job.id).state, JobState::kCollecting);
}

TEST(ServiceTest, UnknownJob) {
  Fixture f;
  EXPECT_EQ(code_of([&] { f.service->get_job(42); }), Errc::kNotFound);
  EXPECT_EQ(code_of([&] { f.service->timings(42); }), Errc::kNotFound);
}

TEST(ServiceTest, FullRunPaysBudgetAndConserves) {
  Fixture f;
  const auto& ledger = f.service->ledger();
  std::vector<Wei> start;
  for (std::size_t i = 0; i < 3; ++i) start.push_back(ledger.balance(owner(i)));
  const Wei buyer_start = ledger.balance(buyer());

  const Job created = f.service->create_job(f.spec());
  std::vector<Wei> upload_fees;
  for (std::size_t i = 0; i < 3; ++i) {
    upload_fees.push_back(f.service->submit_model(created.id, owner(i), f.trained(i), {{"train", 2.0}}).receipt.fee);
  }
  const Job job = f.service->run_aggregation(created.id, buyer());

  EXPECT_EQ(job.state, JobState::kPaid);
  ASSERT_TRUE(job.payments && job.report);
  EXPECT_EQ(job.payments->total(), kBudget);
  EXPECT_EQ(contract::escrow_balance(ledger, *job.contract), 0u);
  ASSERT_TRUE(job.global_model_cid);
  EXPECT_NO_THROW(learner::deserialize(f.service->cas().get(*job.global_model_cid)));

  Wei buyer_fees = ledger.receipt(*job.deploy_tx).fee;
  for (const auto& h : job.payout_txs) buyer_fees += ledger.receipt(h).fee;
  EXPECT_EQ(buyer_start - ledger.balance(buyer()), kBudget + buyer_fees);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(ledger.balance(owner(i)), start[i] - upload_fees[i] + job.payments->entries[i].amount);
  }
  EXPECT_EQ(ledger.balance_sum(), ledger.total_supply());

  // Every buyer and owner step is timed.
  for (const char* k : kBuyerSteps) EXPECT_TRUE(job.timings.count(k)) << k;
  for (const auto& s : job.submissions) {
    for (const char* k : kOwnerSteps) EXPECT_TRUE(s.timings.count(k)) << k;
  }
  const json t = f.service->timings(job.id);
  EXPECT_EQ(t.at("mode"), "simulated");
  EXPECT_EQ(t.at("owners").size(), 3u);
  EXPECT_DOUBLE_EQ(t.at("owner_totals").at("train").get<double>(), 6.0);
  EXPECT_DOUBLE_EQ(t.at("buyer").at("payout").get<double>(), 12.0 * double(job.payout_txs.size()));

  // Terminal state.
  EXPECT_EQ(code_of([&] { f.service->submit_model(job.id, owner(3), f.trained(3)); }),
            Errc::kJobNotCollecting);
  EXPECT_EQ(code_of([&] { f.service->run_aggregation(job.id, buyer()); }), Errc::kJobNotCollecting);
}

TEST(ServiceTest, CorruptBlobIsExcludedAndPaidNothing) {
  Fixture f;
  const Job job = f.job_with(3);
  const auto path = f.service->cas().path_for(job.submissions[1].cid);
  {
    std::fstream io(path, std::ios::in | std::ios::out | std::ios::binary);
    io.seekp(100);
    io.put('\x5a');
  }
  const Job paid = f.service->run_aggregation(job.id, buyer());
  EXPECT_EQ(paid.state, JobState::kPaid);
  ASSERT_EQ(paid.excluded.size(), 1u);
  EXPECT_EQ(paid.excluded[0].index, 1u);
  EXPECT_NE(paid.excluded[0].reason.find("IntegrityViolation"), std::string::npos);
  EXPECT_EQ(paid.payments->entries[1].amount, 0u);
  EXPECT_EQ(paid.payments->entries[0].amount + paid.payments->entries[2].amount, kBudget);
  EXPECT_EQ(paid.report->marginal[1], 0u);
}

TEST(ServiceTest, MissingBlobIsExcludedToo) {
  Fixture f;
  const Job job = f.job_with(3);
  std::filesystem::remove(f.service->cas().path_for(job.submissions[0].cid));
  const Job paid = f.service->run_aggregation(job.id, buyer());
  ASSERT_EQ(paid.excluded.size(), 1u);
  EXPECT_EQ(paid.payments->entries[0].amount, 0u);
  EXPECT_EQ(paid.payments->total(), kBudget);
}

TEST(ServiceTest, LosingAllButOneModelFailsTheJob) {
  Fixture f;
  const Job job = f.job_with(2);
  std::filesystem::remove(f.service->cas().path_for(job.submissions[0].cid));
  EXPECT_EQ(code_of([&] { f.service->run_aggregation(job.id, buyer()); }), Errc::kTooFewOwners);
  const Job after = f.service->get_job(job.id);
  EXPECT_EQ(after.state, JobState::kFailed);
  EXPECT_EQ(after.failure, "TooFewOwners");
  EXPECT_EQ(contract::escrow_balance(f.service->ledger(), *after.contract), kBudget);
}

TEST(ServiceTest, EstimatesMatchReceipts) {
  Fixture f;
  const JobSpec spec = f.spec();
  const Estimate deploy = f.service->estimate_create(spec);
  const Job job = f.service->create_job(spec);
  EXPECT_EQ(deploy.fee, f.service->ledger().receipt(*job.deploy_tx).fee);
  EXPECT_EQ(deploy.gas, f.service->ledger().receipt(*job.deploy_tx).gas_used);

  for (std::size_t i = 0; i < 3; ++i) {
    const Bytes m = f.trained(i);
    const Estimate up = f.service->estimate_submit(job.id, owner(i), m);
    EXPECT_EQ(up.fee, f.service->submit_model(job.id, owner(i), m).receipt.fee);
  }
  const auto height = f.service->ledger().height();
  const Estimate agg = f.service->estimate_aggregate(job.id, buyer());
  EXPECT_EQ(f.service->ledger().height(), height);
  EXPECT_EQ(f.service->get_job(job.id).state, JobState::kCollecting);

  const Job paid = f.service->run_aggregation(job.id, buyer());
  Wei fees = 0;
  for (const auto& h : paid.payout_txs) fees += f.service->ledger().receipt(h).fee;
  EXPECT_EQ(agg.fee, fees);
  EXPECT_EQ(agg.transactions, paid.payout_txs.size());
}

TEST(ServiceTest, ConcurrentSubmissionsAreAllRecorded) {
  Fixture f;
  const Job job = f.service->create_job(f.spec());
  std::vector<Bytes> models;
  for (std::size_t i = 0; i < 4; ++i) models.push_back(f.trained(i));
  std::vector<std::thread> threads;
  for (std::size_t i = 0; i < 4; ++i) {
    threads.emplace_back([&, i] { f.service->submit_model(job.id, owner(i), models[i]); });
  }
  for (auto& t : threads) t.join();
  const Job after = f.service->get_job(job.id);
  ASSERT_EQ(after.submissions.size(), 4u);
  std::set<std::uint64_t> indices;
  for (const auto& s : after.submissions) {
    indices.insert(s.index);
    EXPECT_EQ(contract::get_submitter(f.service->ledger(), *job.contract, s.index), s.owner);
  }
  EXPECT_EQ(indices.size(), 4u);
  EXPECT_EQ(f.service->ledger().balance_sum(), f.service->ledger().total_supply());
}

TEST(ServiceTest, RepeatedRunsAreIdentical) {
  auto run = [] {
    Fixture f;
    const Job job = f.job_with(3);
    return to_json(f.service->run_aggregation(job.id, buyer())).dump();
  };
  EXPECT_EQ(run(), run());
}

// ---------------------------------------------------------------------------
// Router

using http_api::Request;
using http_api::Response;

Request req(std::string method, std::string path, const json& body = nullptr) {
  Request r;
  r.method = std::move(method);
  r.path = std::move(path);
  if (!body.is_null()) r.body = body.dump();
  return r;
}

json create_body(const Fixture& f) {
  return {{"buyer", buyer().hex()},
          {"budget_wei", wei_to_string(kBudget)},
          {"arch", kArch},
          {"init_seed", 7},
          {"aggregator", "ensemble-eval"},
          {"testset_ref", f.spec().testset_ref}};
}

TEST(HttpApiTest, JobLifecycle) {
  Fixture f;
  Service& s = *f.service;

  const Response quote = http_api::handle(s, req("POST", "/jobs", [&] {
    json b = create_body(f);
    b["dry_run"] = true;
    return b;
  }()));
  ASSERT_EQ(quote.status, 200) << quote.body;
  EXPECT_EQ(s.ledger().height(), 0u);

  const Response created = http_api::handle(s, req("POST", "/jobs", create_body(f)));
  ASSERT_EQ(created.status, 201) << created.body;
  const json job = created.json();
  EXPECT_EQ(job.at("state"), "Collecting");
  EXPECT_EQ(job.at("aggregator"), "ensemble");
  EXPECT_EQ(job.at("deploy_receipt").at("fee_wei"), quote.json().at("fee_wei"));
  const std::string id = std::to_string(job.at("id").get<JobId>());

  // JSON upload and raw upload.
  Response up = http_api::handle(
      s, req("POST", "/jobs/" + id + "/models",
             {{"owner", owner(0).hex()}, {"model_base64", base64_encode(f.trained(0))}, {"train_s", 1.0}}));
  ASSERT_EQ(up.status, 201) << up.body;
  EXPECT_EQ(up.json().at("cid").get<std::string>().size(), 64u);
  Request raw = req("POST", "/jobs/" + id + "/models");
  const Bytes m1 = f.trained(1);
  raw.body.assign(m1.begin(), m1.end());
  raw.headers["content-type"] = "application/octet-stream";
  raw.query["owner"] = owner(1).hex();
  up = http_api::handle(s, raw);
  ASSERT_EQ(up.status, 201) << up.body;
  EXPECT_EQ(up.json().at("index"), 1);

  const json cids = http_api::handle(s, req("GET", "/jobs/" + id + "/cids")).json();
  EXPECT_EQ(cids.at("count"), 2);
  EXPECT_EQ(cids.at("cids")[1].at("cid"), up.json().at("cid"));
  EXPECT_EQ(http_api::handle(s, req("GET", "/jobs/" + id + "/cids/1")).json().at("cid"),
            up.json().at("cid"));

  const Response bad_index = http_api::handle(s, req("GET", "/jobs/" + id + "/cids/5"));
  EXPECT_EQ(bad_index.status, 404);
  EXPECT_EQ(bad_index.json().at("message"), "Invalid CID index");
  EXPECT_EQ(bad_index.json().at("code"), "InvalidCidIndex");

  EXPECT_EQ(http_api::handle(s, req("GET", "/jobs/" + id + "/payments")).json().at("entries").size(), 0u);

  const Response not_buyer =
      http_api::handle(s, req("POST", "/jobs/" + id + "/aggregate", {{"caller", owner(0).hex()}}));
  EXPECT_EQ(not_buyer.status, 403);

  const Response agg =
      http_api::handle(s, req("POST", "/jobs/" + id + "/aggregate", {{"caller", buyer().hex()}}));
  ASSERT_EQ(agg.status, 200) << agg.body;
  EXPECT_EQ(agg.json().at("state"), "Paid");

  const json pay = http_api::handle(s, req("GET", "/jobs/" + id + "/payments")).json();
  EXPECT_EQ(pay.at("total_wei"), wei_to_string(kBudget));
  EXPECT_EQ(pay.at("entries").size(), 2u);

  const json t = http_api::handle(s, req("GET", "/jobs/" + id + "/timings")).json();
  for (const char* k : kBuyerSteps) EXPECT_TRUE(t.at("buyer").contains(k)) << k;
  EXPECT_TRUE(http_api::handle(s, req("GET", "/jobs/" + id + "/report")).json().at("report").is_object());

  const json acct =
      http_api::handle(s, req("GET", "/ledger/accounts/" + owner(0).hex())).json();
  EXPECT_EQ(acct.at("nonce"), 1);
  const std::string tx = agg.json().at("payout_txs")[0];
  const json receipt = http_api::handle(s, req("GET", "/ledger/receipts/" + tx)).json();
  EXPECT_EQ(receipt.at("status"), "Success");

  const json list = http_api::handle(s, req("GET", "/jobs")).json();
  EXPECT_EQ(list.at("jobs").size(), 1u);

  const Response again =
      http_api::handle(s, req("POST", "/jobs/" + id + "/models",
                              {{"owner", owner(2).hex()}, {"model_base64", base64_encode(f.trained(2))}}));
  EXPECT_EQ(again.status, 409);
  EXPECT_EQ(again.json().at("code"), "JobNotCollecting");
}

TEST(HttpApiTest, ErrorsUseTheEnvelope) {
  Fixture f;
  Service& s = *f.service;
  auto code = [&](const Response& r) { return r.json().at("code").get<std::string>(); };

  Response r = http_api::handle(s, req("GET", "/jobs/9"));
  EXPECT_EQ(r.status, 404);
  EXPECT_EQ(code(r), "NotFound");

  r = http_api::handle(s, req("GET", "/jobs/abc"));
  EXPECT_EQ(r.status, 400);

  Request malformed = req("POST", "/jobs");
  malformed.body = "{not json";
  r = http_api::handle(s, malformed);
  EXPECT_EQ(r.status, 400);
  EXPECT_EQ(code(r), "InvalidArgument");

  r = http_api::handle(s, req("GET", "/nowhere"));
  EXPECT_EQ(r.status, 404);

  json poor = create_body(f);
  poor["buyer"] = Address::from_label("pauper").hex();
  r = http_api::handle(s, req("POST", "/jobs", poor));
  EXPECT_EQ(r.status, 402);
  EXPECT_EQ(code(r), "InsufficientFunds");
  EXPECT_EQ(r.json().at("job").at("state"), "Failed");

  const std::string id = std::to_string(
      http_api::handle(s, req("POST", "/jobs", create_body(f))).json().at("id").get<JobId>());
  r = http_api::handle(s, req("POST", "/jobs/" + id + "/models",
                              {{"owner", owner(0).hex()}, {"model_base64", base64_encode(as_bytes("junk junk"))}}));
  EXPECT_EQ(r.status, 400);
  EXPECT_EQ(code(r), "BadMagic");

  r = http_api::handle(s, req("POST", "/jobs/" + id + "/aggregate", {{"caller", buyer().hex()}}));
  EXPECT_EQ(r.status, 409);
  EXPECT_EQ(code(r), "TooFewOwners");

  r = http_api::handle(s, req("GET", "/ledger/receipts/" + std::string(64, '0')));
  EXPECT_EQ(r.status, 404);

  r = http_api::handle(s, req("OPTIONS", "/jobs"));
  EXPECT_EQ(r.status, 204);
  EXPECT_EQ(r.headers.at("Access-Control-Allow-Origin"), "*");
}

TEST(HttpApiTest, CasRoundTrip) {
  Fixture f;
  Request put = req("POST", "/cas");
  put.body = std::string("\x00\x01payload", 9);
  put.headers["content-type"] = "application/octet-stream";
  const Response r = http_api::handle(*f.service, put);
  ASSERT_EQ(r.status, 201);
  const std::string cid = r.json().at("cid");
  const Response got = http_api::handle(*f.service, req("GET", "/cas/" + cid));
  EXPECT_EQ(got.body, put.body);
  EXPECT_EQ(got.content_type, "application/octet-stream");
  EXPECT_EQ(http_api::handle(*f.service, req("GET", "/cas/" + std::string(64, 'a'))).status, 404);
}

TEST(HttpServerTest, ServesOverSockets) {
  Fixture f;
  http_api::Server server(*f.service);
  const int port = server.bind("127.0.0.1", 0);
  std::thread t([&] { server.listen(); });

  httplib::Client client("127.0.0.1", port);
  auto res = client.Get("/ledger/accounts/" + buyer().hex());
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  EXPECT_EQ(json::parse(res->body).at("balance_wei"), wei_to_string(kWeiPerEth));
  EXPECT_EQ(res->get_header_value("Access-Control-Allow-Origin"), "*");

  res = client.Get("/jobs/1/cids/0");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 404);

  server.stop();
  t.join();
}

}  // namespace
}  // namespace oflw3::marketplace
