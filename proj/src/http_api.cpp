#include "oflw3/http_api.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <vector>

#include "oflw3/contract.hpp"
#include "oflw3/dataset.hpp"

namespace oflw3::http_api {

using ledger::Address;
using marketplace::JobId;
using marketplace::Service;
using nlohmann::json;

std::string Request::header(const std::string& name) const {
  std::string key = name;
  std::transform(key.begin(), key.end(), key.begin(), [](unsigned char c) { return std::tolower(c); });
  auto it = headers.find(key);
  return it == headers.end() ? std::string() : it->second;
}

int status_for(Errc code) {
  switch (code) {
    case Errc::kNotFound:
    case Errc::kInvalidCidIndex:
    case Errc::kUnknownContract:
      return 404;
    case Errc::kInvalidArgument:
    case Errc::kBadMagic:
    case Errc::kTruncatedPayload:
    case Errc::kShapeMismatch:
    case Errc::kArchMismatch:
    case Errc::kInvalidConfig:
    case Errc::kLengthMismatch:
    case Errc::kDuplicateAddress:
      return 400;
    case Errc::kInsufficientFunds:
      return 402;
    case Errc::kNotBuyer:
      return 403;
    case Errc::kBadNonce:
    case Errc::kJobNotCollecting:
    case Errc::kTooFewOwners:
    case Errc::kEscrowOverdraw:
      return 409;
    case Errc::kReverted:
    case Errc::kTrainingDiverged:
      return 422;
    case Errc::kIntegrityViolation:
    case Errc::kStoreUnavailable:
      return 500;
  }
  return 500;
}

namespace {

Response json_response(int status, const json& body) {
  Response r;
  r.status = status;
  r.body = body.dump();
  return r;
}

json envelope(Errc code, const std::string& message) {
  return {{"code", std::string(to_string(code))}, {"message", message}};
}

std::vector<std::string> split_path(const std::string& path) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < path.size()) {
    while (i < path.size() && path[i] == '/') ++i;
    std::size_t j = path.find('/', i);
    if (j == std::string::npos) j = path.size();
    if (j > i) out.push_back(path.substr(i, j - i));
    i = j;
  }
  return out;
}

std::uint64_t parse_u64(const std::string& s, const char* what) {
  std::uint64_t v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty()) {
    throw Error(Errc::kInvalidArgument, std::string("bad ") + what + " '" + s + "'");
  }
  return v;
}

Address parse_address(const json& body, const char* key) {
  if (!body.contains(key)) throw Error(Errc::kInvalidArgument, std::string("missing '") + key + "'");
  return Address::from_hex(body.at(key).get<std::string>());
}

json parse_body(const Request& req) {
  if (req.body.empty()) return json::object();
  try {
    json j = json::parse(req.body);
    if (!j.is_object()) throw Error(Errc::kInvalidArgument, "request body must be a JSON object");
    return j;
  } catch (const json::parse_error& e) {
    throw Error(Errc::kInvalidArgument, std::string("malformed JSON: ") + e.what());
  }
}

bool is_binary(const Request& req) {
  const std::string ct = req.header("content-type");
  return ct.rfind("application/octet-stream", 0) == 0;
}

bool flag(const json& body, const Request& req, const char* key) {
  if (body.contains(key)) return body.at(key).get<bool>();
  auto it = req.query.find(key);
  return it != req.query.end() && (it->second == "1" || it->second == "true");
}

json estimate_json(const marketplace::Estimate& e) {
  return {{"dry_run", true},
          {"gas", e.gas},
          {"fee_wei", wei_to_string(e.fee)},
          {"fee_eth", format_eth(e.fee)},
          {"transactions", e.transactions}};
}

marketplace::JobSpec job_spec(Service& service, const json& body) {
  marketplace::JobSpec spec;
  spec.buyer = parse_address(body, "buyer");
  spec.budget = parse_wei(body.at("budget_wei").get<std::string>());
  spec.arch = body.at("arch").get<learner::MlpArch>();
  if (body.contains("init_model_base64")) {
    spec.init_model = learner::deserialize(base64_decode(body.at("init_model_base64").get<std::string>()));
  } else if (body.contains("init_model_cid")) {
    const auto cid = cidstore::Cid::from_hex(body.at("init_model_cid").get<std::string>());
    spec.init_model = learner::deserialize(service.cas().get(cid));
  } else {
    spec.init_model = learner::init_weights(spec.arch, body.value("init_seed", std::uint64_t{0}));
  }
  if (body.contains("aggregator")) {
    spec.aggregator = aggregator::method_from_string(body.at("aggregator").get<std::string>());
  }
  if (body.contains("match_config")) {
    spec.match_config = body.at("match_config").get<aggregator::MatchConfig>();
  }
  spec.testset_ref = body.at("testset_ref");
  spec.min_owners = body.value("min_owners", spec.min_owners);
  return spec;
}

Response create_job(Service& service, const Request& req) {
  const json body = parse_body(req);
  const marketplace::JobSpec spec = job_spec(service, body);
  if (flag(body, req, "dry_run")) {
    json out = estimate_json(service.estimate_create(spec));
    out["from"] = spec.buyer.hex();
    out["to"] = nullptr;
    out["value_wei"] = wei_to_string(spec.budget);
    return json_response(200, out);
  }
  const marketplace::Job job = service.create_job(spec);
  json j = marketplace::to_json(job);
  if (job.state == marketplace::JobState::kFailed) {
    const Errc code = errc_from_string(job.failure).value_or(Errc::kInvalidArgument);
    json err = envelope(code, "deployment failed: " + job.failure);
    err["job"] = std::move(j);
    return json_response(status_for(code), err);
  }
  j["deploy_receipt"] = service.ledger().receipt(*job.deploy_tx);
  return json_response(201, j);
}

Response submit_model(Service& service, JobId id, const Request& req) {
  Address owner;
  Bytes model;
  json body = json::object();
  marketplace::StepTimings timings;
  if (is_binary(req)) {
    std::string who = req.header("x-owner");
    if (auto it = req.query.find("owner"); it != req.query.end()) who = it->second;
    if (who.empty()) throw Error(Errc::kInvalidArgument, "raw upload needs ?owner= or X-Owner");
    owner = Address::from_hex(who);
    model.assign(req.body.begin(), req.body.end());
    if (auto it = req.query.find("train_s"); it != req.query.end()) {
      timings["train"] = std::stod(it->second);
    }
  } else {
    body = parse_body(req);
    owner = parse_address(body, "owner");
    if (!body.contains("model_base64")) throw Error(Errc::kInvalidArgument, "missing 'model_base64'");
    model = base64_decode(body.at("model_base64").get<std::string>());
    if (body.contains("train_s")) timings["train"] = body.at("train_s").get<double>();
  }
  if (flag(body, req, "dry_run")) {
    json out = estimate_json(service.estimate_submit(id, owner, model));
    out["from"] = owner.hex();
    out["to"] = service.get_job(id).contract->hex();
    out["value_wei"] = "0";
    return json_response(200, out);
  }
  const auto r = service.submit_model(id, owner, model, timings);
  return json_response(201, {{"cid", r.cid.hex()},
                             {"index", r.index},
                             {"size", model.size()},
                             {"receipt", r.receipt}});
}

Response list_cids(Service& service, JobId id) {
  const auto job = service.get_job(id);
  json cids = json::array();
  std::uint64_t count = 0;
  if (job.contract) {
    const auto& ledger = service.ledger();
    count = contract::cid_count(ledger, *job.contract);
    for (std::uint64_t i = 0; i < count; ++i) {
      cids.push_back({{"index", i},
                      {"cid", contract::get_cid(ledger, *job.contract, i).hex()},
                      {"owner", contract::get_submitter(ledger, *job.contract, i).hex()}});
    }
  }
  return json_response(200, {{"count", count}, {"cids", std::move(cids)}});
}

Response get_cid(Service& service, JobId id, const std::string& index_text) {
  const auto job = service.get_job(id);
  if (!job.contract) throw Error(Errc::kJobNotCollecting, "job has no contract");
  const std::uint64_t index = parse_u64(index_text, "CID index");
  const auto cid = contract::get_cid(service.ledger(), *job.contract, index);
  return json_response(200, {{"index", index}, {"cid", cid.hex()}});
}

Response aggregate(Service& service, JobId id, const Request& req) {
  const json body = parse_body(req);
  const Address caller = parse_address(body, "caller");
  if (flag(body, req, "dry_run")) {
    json out = estimate_json(service.estimate_aggregate(id, caller));
    out["from"] = caller.hex();
    out["to"] = service.get_job(id).contract->hex();
    out["value_wei"] = "0";
    return json_response(200, out);
  }
  return json_response(200, marketplace::to_json(service.run_aggregation(id, caller)));
}

Response payments(Service& service, JobId id) {
  const auto job = service.get_job(id);
  if (job.payments && job.state == marketplace::JobState::kPaid) {
    return json_response(200, incentives::to_json(*job.payments));
  }
  incentives::PaymentTable empty;
  empty.budget = job.spec.budget;
  return json_response(200, incentives::to_json(empty));
}

Response report(Service& service, JobId id) {
  const auto job = service.get_job(id);
  if (!job.report) return json_response(200, {{"report", nullptr}});
  std::vector<Address> owners;
  for (const auto& s : job.submissions) owners.push_back(s.owner);
  return json_response(200, {{"report", incentives::to_json(*job.report, owners)}});
}

Response account(Service& service, const std::string& addr_text) {
  const Address a = Address::from_hex(addr_text);
  const auto& ledger = service.ledger();
  const Wei balance = ledger.balance(a);
  json j{{"address", a.hex()},
         {"balance_wei", wei_to_string(balance)},
         {"balance_eth", format_eth(balance)},
         {"nonce", ledger.nonce(a)},
         {"is_contract", ledger.is_contract(a)}};
  const auto kind = ledger.contract_kind(a);
  j["contract_kind"] = kind ? json(*kind) : json();
  return json_response(200, j);
}

Response ledger_summary(Service& service) {
  const auto& ledger = service.ledger();
  return json_response(200, {{"height", ledger.height()},
                             {"total_supply_wei", wei_to_string(ledger.total_supply())},
                             {"fees_collected_wei", wei_to_string(ledger.fees_collected())},
                             {"balance_sum_wei", wei_to_string(ledger.balance_sum())},
                             {"gas_schedule", ledger.schedule()}});
}

Response cas_put(Service& service, const Request& req) {
  Bytes payload;
  if (is_binary(req) || req.body.empty()) {
    payload.assign(req.body.begin(), req.body.end());
  } else {
    const json body = parse_body(req);
    if (!body.contains("data_base64")) throw Error(Errc::kInvalidArgument, "missing 'data_base64'");
    payload = base64_decode(body.at("data_base64").get<std::string>());
  }
  const auto cid = service.cas().put(payload);
  return json_response(201, {{"cid", cid.hex()}, {"size", payload.size()}});
}

Response cas_get(Service& service, const std::string& cid_text) {
  const Bytes data = service.cas().get(cidstore::Cid::from_hex(cid_text));
  Response r;
  r.content_type = "application/octet-stream";
  r.body.assign(data.begin(), data.end());
  return r;
}

Response not_found(const Request& req) {
  return json_response(404, envelope(Errc::kNotFound, "no route for " + req.method + " " + req.path));
}

Response route(Service& service, const Request& req) {
  const auto seg = split_path(req.path);
  const std::string& m = req.method;
  const std::size_t n = seg.size();

  if (n >= 1 && seg[0] == "jobs") {
    if (n == 1 && m == "POST") return create_job(service, req);
    if (n == 1 && m == "GET") {
      json jobs = json::array();
      for (const auto& job : service.list_jobs()) jobs.push_back(marketplace::to_json(job));
      return json_response(200, {{"jobs", std::move(jobs)}});
    }
    if (n < 2) return not_found(req);
    const JobId id = parse_u64(seg[1], "job id");
    if (n == 2 && m == "GET") return json_response(200, marketplace::to_json(service.get_job(id)));
    if (n == 3 && seg[2] == "models" && m == "POST") return submit_model(service, id, req);
    if (n == 3 && seg[2] == "cids" && m == "GET") return list_cids(service, id);
    if (n == 4 && seg[2] == "cids" && m == "GET") return get_cid(service, id, seg[3]);
    if (n == 3 && seg[2] == "aggregate" && m == "POST") return aggregate(service, id, req);
    if (n == 3 && seg[2] == "payments" && m == "GET") return payments(service, id);
    if (n == 3 && seg[2] == "timings" && m == "GET") return json_response(200, service.timings(id));
    if (n == 3 && seg[2] == "report" && m == "GET") return report(service, id);
    return not_found(req);
  }
  if (n >= 1 && seg[0] == "ledger" && m == "GET") {
    if (n == 1) return ledger_summary(service);
    if (n == 3 && seg[1] == "accounts") return account(service, seg[2]);
    if (n == 3 && seg[1] == "receipts") {
      return json_response(200, service.ledger().receipt(Hash256::from_hex(seg[2])));
    }
    return not_found(req);
  }
  if (n >= 1 && seg[0] == "cas") {
    if (n == 1 && m == "POST") return cas_put(service, req);
    if (n == 2 && m == "GET") return cas_get(service, seg[1]);
  }
  return not_found(req);
}

}  // namespace

Response error_response(Errc code, const std::string& message) {
  return json_response(status_for(code), envelope(code, message));
}

Response handle(Service& service, const Request& req) {
  Response r;
  if (req.method == "OPTIONS") {
    r.status = 204;
    r.content_type.clear();
  } else {
    try {
      r = route(service, req);
    } catch (const Error& e) {
      r = error_response(e.code(), e.what());
    } catch (const json::exception& e) {
      r = error_response(Errc::kInvalidArgument, std::string("bad request field: ") + e.what());
    } catch (const std::invalid_argument& e) {
      r = error_response(Errc::kInvalidArgument, e.what());
    } catch (const std::out_of_range& e) {
      r = error_response(Errc::kInvalidArgument, e.what());
    }
  }
  r.headers["Access-Control-Allow-Origin"] = "*";
  r.headers["Access-Control-Allow-Methods"] = "GET, POST, OPTIONS";
  r.headers["Access-Control-Allow-Headers"] = "Content-Type, X-Owner";
  return r;
}

}  // namespace oflw3::http_api
