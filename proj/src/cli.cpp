#include "oflw3/cli.hpp"

#include <atomic>
#include <chrono>
#include <csignal>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <httplib.h>

#include "oflw3/dataset.hpp"
#include "oflw3/error.hpp"
#include "oflw3/incentives.hpp"
#include "oflw3/scenario.hpp"

namespace oflw3::cli {

namespace fs = std::filesystem;
using ledger::Address;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Clients

json Client::call(const std::string& method, const std::string& path, const json& body) {
  http_api::Request req;
  req.method = method;
  req.path = path;
  if (!body.is_null()) {
    req.body = body.dump();
    req.headers["content-type"] = "application/json";
  }
  const http_api::Response r = send(req);
  json doc;
  try {
    doc = r.body.empty() ? json() : json::parse(r.body);
  } catch (const json::parse_error&) {
    throw Error(Errc::kInvalidArgument, method + " " + path + ": non-JSON response (" +
                                            std::to_string(r.status) + ")");
  }
  if (!r.ok()) {
    const std::string name = doc.is_object() ? doc.value("code", std::string()) : std::string();
    const std::string msg = doc.is_object() ? doc.value("message", std::string()) : r.body;
    throw Error(errc_from_string(name).value_or(Errc::kInvalidArgument), msg);
  }
  return doc;
}

http_api::Response InProcessClient::send(const http_api::Request& req) {
  return http_api::handle(service_, req);
}

struct HttpClient::Impl {
  httplib::Client client;
  explicit Impl(const std::string& url) : client(url) {
    client.set_read_timeout(600, 0);
    client.set_write_timeout(60, 0);
  }
};

HttpClient::HttpClient(const std::string& url) : impl_(std::make_unique<Impl>(url)) {
  if (!impl_->client.is_valid()) throw Error(Errc::kInvalidArgument, "bad server URL " + url);
}

HttpClient::~HttpClient() = default;

http_api::Response HttpClient::send(const http_api::Request& req) {
  std::string path = req.path;
  char sep = '?';
  for (const auto& [k, v] : req.query) {
    path += sep + httplib::detail::encode_query_param(k) + "=" + httplib::detail::encode_query_param(v);
    sep = '&';
  }
  httplib::Headers headers;
  std::string content_type = "application/json";
  for (const auto& [k, v] : req.headers) {
    if (k == "content-type") {
      content_type = v;
    } else {
      headers.emplace(k, v);
    }
  }
  httplib::Result res;
  if (req.method == "GET") {
    res = impl_->client.Get(path, headers);
  } else if (req.method == "POST") {
    res = impl_->client.Post(path, headers, req.body, content_type);
  } else if (req.method == "OPTIONS") {
    res = impl_->client.Options(path, headers);
  } else {
    throw Error(Errc::kInvalidArgument, "unsupported method " + req.method);
  }
  if (!res) {
    throw Error(Errc::kStoreUnavailable, "server unreachable: " + httplib::to_string(res.error()));
  }
  http_api::Response out;
  out.status = res->status;
  out.content_type = res->get_header_value("Content-Type");
  out.body = res->body;
  return out;
}

Address parse_address(const std::string& text) {
  if (text.rfind("0x", 0) == 0) return Address::from_hex(text);
  return Address::from_label(text);
}

// ---------------------------------------------------------------------------
// Demo

namespace {

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::kStoreUnavailable, "cannot write " + path.string());
  out << content;
  if (!out) throw Error(Errc::kStoreUnavailable, "write failed: " + path.string());
}

Bytes read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::kNotFound, "cannot read " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::string accuracy_text(double acc) { return incentives::format_ppm(incentives::to_ppm(acc)); }

json fee_entry(const json& receipt) {
  const Wei fee = parse_wei(receipt.at("fee_wei").get<std::string>());
  return {{"tx", receipt.at("tx_hash")},
          {"gas", receipt.at("gas_used")},
          {"fee_wei", wei_to_string(fee)},
          {"fee_eth", format_eth(fee)}};
}

Wei fee_of(const json& entry) { return parse_wei(entry.at("fee_wei").get<std::string>()); }

std::string loo_csv_from(const json& report) {
  incentives::ContributionReport r;
  std::vector<Address> owners;
  r.acc_full = report.at("acc_full_ppm").get<incentives::Ppm>();
  for (const auto& row : report.at("owners")) {
    r.loo.push_back(row.at("loo_ppm").get<incentives::Ppm>());
    r.marginal.push_back(row.at("marginal_ppm").get<incentives::Ppm>());
    owners.push_back(Address::from_hex(row.at("owner").get<std::string>()));
  }
  return incentives::loo_csv(r, owners);
}

std::string payments_csv_from(const json& payments) {
  incentives::PaymentTable t;
  t.budget = parse_wei(payments.at("budget_wei").get<std::string>());
  for (const auto& row : payments.at("entries")) {
    t.entries.push_back({Address::from_hex(row.at("owner").get<std::string>()),
                         parse_wei(row.at("amount_wei").get<std::string>())});
  }
  return incentives::payments_csv(t);
}

json gas_report(Client& client, const json& estimate, const json& deploy_receipt,
                const std::vector<json>& upload_receipts, const json& job, const json& payments) {
  json deploy = fee_entry(deploy_receipt);
  deploy["estimated_fee_wei"] = estimate.at("fee_wei");

  json uploads = json::array();
  Wei upload_total = 0;
  for (std::size_t i = 0; i < upload_receipts.size(); ++i) {
    json e = fee_entry(upload_receipts[i]);
    e["index"] = i;
    e["owner"] = upload_receipts[i].at("from");
    upload_total += fee_of(e);
    uploads.push_back(std::move(e));
  }

  // One payout tx per owner with a nonzero amount, in index order.
  json payouts = json::array();
  Wei payout_total = 0;
  std::size_t k = 0;
  const auto& txs = job.at("payout_txs");
  for (const auto& row : payments.at("entries")) {
    if (row.at("amount_wei") == "0") continue;
    if (k >= txs.size()) break;
    json e = fee_entry(client.call("GET", "/ledger/receipts/" + txs[k++].get<std::string>()));
    e["owner"] = row.at("owner");
    e["amount_wei"] = row.at("amount_wei");
    payout_total += fee_of(e);
    payouts.push_back(std::move(e));
  }

  const Wei deploy_fee = fee_of(deploy);
  const Wei upload_mean = uploads.empty() ? 0 : upload_total / uploads.size();
  const Wei payout_mean = payouts.empty() ? 0 : payout_total / payouts.size();
  json summary{{"deploy_fee_wei", wei_to_string(deploy_fee)},
               {"deploy_fee_eth", format_eth(deploy_fee)},
               {"upload_fee_mean_wei", wei_to_string(upload_mean)},
               {"payout_fee_mean_wei", wei_to_string(payout_mean)},
               {"buyer_fees_wei", wei_to_string(deploy_fee + payout_total)},
               {"owner_fees_wei", wei_to_string(upload_total)}};
  summary["deploy_over_upload"] = upload_mean ? double(deploy_fee) / double(upload_mean) : 0.0;
  summary["upload_over_payout"] = payout_mean ? double(upload_mean) / double(payout_mean) : 0.0;
  return {{"deploy", std::move(deploy)},
          {"upload_cid", std::move(uploads)},
          {"payout", std::move(payouts)},
          {"summary", std::move(summary)}};
}

}  // namespace

DemoResult run_demo(const config::Config& cfg, Client& client, const fs::path& out_dir,
                    std::ostream& log) {
  const auto& demo = cfg.demo;
  const auto& spec = demo.scenario;
  fs::create_directories(out_dir);

  // Owners: partition and train locally.
  log << "building scenario: " << spec.owners << " owners, seed " << spec.seed << "\n";
  const scenario::Scenario sc = scenario::build(spec);
  const marketplace::TimingModel timing(cfg.service.timing);
  std::vector<learner::ModelWeights> local;
  std::vector<double> train_s;
  if (timing.simulated()) {
    local = scenario::train_all(sc, spec, cfg.service.threads);
    for (const auto& p : sc.partitions) {
      train_s.push_back(timing.train(spec.arch, p.size(), spec.hyperparams.local_epochs));
    }
  } else {
    for (std::size_t i = 0; i < sc.partitions.size(); ++i) {
      learner::Hyperparams hp = spec.hyperparams;
      hp.seed = scenario::owner_train_seed(spec, i);
      const auto start = std::chrono::steady_clock::now();
      local.push_back(learner::train(sc.init, sc.partitions[i], hp));
      train_s.push_back(
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
    }
  }

  DemoResult result;
  std::ostringstream local_csv;
  local_csv << "index,owner,train_samples,classes_present,accuracy\n";
  for (std::size_t i = 0; i < local.size(); ++i) {
    const double acc = learner::evaluate(local[i], sc.test);
    result.local_accuracy.push_back(acc);
    std::vector<bool> seen(spec.arch.output_width(), false);
    for (auto l : sc.partitions[i].labels) seen[l] = true;
    std::size_t classes = 0;
    for (bool b : seen) classes += b;
    local_csv << i << ',' << demo.owner(i).hex() << ',' << sc.partitions[i].size() << ',' << classes
              << ',' << accuracy_text(acc) << '\n';
  }

  // Buyer: quote and deploy.
  json create{{"buyer", demo.buyer().hex()},
              {"budget_wei", wei_to_string(demo.budget)},
              {"arch", spec.arch},
              {"init_model_base64", base64_encode(learner::serialize(sc.init))},
              {"aggregator", aggregator::to_string(demo.aggregator)},
              {"match_config", demo.match_config},
              {"testset_ref", learner::describe(scenario::test_data_spec(spec))},
              {"min_owners", demo.min_owners}};
  json quote_body = create;
  quote_body["dry_run"] = true;
  const json estimate = client.call("POST", "/jobs", quote_body);
  const json created = client.call("POST", "/jobs", create);
  const std::string id = std::to_string(created.at("id").get<std::uint64_t>());
  log << "job " << id << " deployed at " << created.at("contract").get<std::string>() << "\n";

  // Owners: upload and register CIDs.
  std::vector<json> upload_receipts;
  std::vector<std::string> cids;
  for (std::size_t i = 0; i < local.size(); ++i) {
    const json r = client.call("POST", "/jobs/" + id + "/models",
                               {{"owner", demo.owner(i).hex()},
                                {"model_base64", base64_encode(learner::serialize(local[i]))},
                                {"train_s", train_s[i]}});
    cids.push_back(r.at("cid"));
    upload_receipts.push_back(r.at("receipt"));
  }
  const json onchain = client.call("GET", "/jobs/" + id + "/cids");
  for (std::size_t i = 0; i < cids.size(); ++i) {
    if (onchain.at("cids").at(i).at("cid") != cids[i]) {
      throw Error(Errc::kIntegrityViolation, "on-chain CID " + std::to_string(i) + " differs");
    }
  }
  log << cids.size() << " models submitted\n";

  // Buyer: aggregate and pay.
  client.call("POST", "/jobs/" + id + "/aggregate", {{"caller", demo.buyer().hex()}});
  result.job = client.call("GET", "/jobs/" + id);
  result.payments = client.call("GET", "/jobs/" + id + "/payments");
  result.timings = client.call("GET", "/jobs/" + id + "/timings");
  result.gas = gas_report(client, estimate, created.at("deploy_receipt"), upload_receipts,
                          result.job, result.payments);
  const json& report = result.job.at("report");
  result.aggregate_accuracy = report.at("acc_full_ppm").get<double>() / incentives::kPpmScale;

  local_csv << "aggregate,,"
            << [&] {
                 std::size_t n = 0;
                 for (const auto& p : sc.partitions) n += p.size();
                 return n;
               }()
            << ',' << spec.arch.output_width() << ',' << report.at("acc_full").get<std::string>()
            << '\n';

  write_file(out_dir / "local_accuracies.csv", local_csv.str());
  write_file(out_dir / "loo_accuracies.csv", loo_csv_from(report));
  write_file(out_dir / "payments.csv", payments_csv_from(result.payments));
  write_file(out_dir / "gas_report.json", result.gas.dump(2) + "\n");
  write_file(out_dir / "timings.json", result.timings.dump(2) + "\n");
  log << "job " << id << " " << result.job.at("state").get<std::string>() << ", paid "
      << result.payments.at("total_eth").get<std::string>() << " ETH\n";
  return result;
}

// ---------------------------------------------------------------------------
// Command line

namespace {

std::atomic<http_api::Server*> g_server{nullptr};

extern "C" void on_signal(int) {
  if (auto* s = g_server.load()) s->stop();
}

void print_table(std::ostream& out, const json& payments) {
  out << "index  owner                                       amount (ETH)\n";
  for (const auto& row : payments.at("entries")) {
    out << std::left << std::setw(7) << row.at("index").get<std::size_t>()
        << row.at("owner").get<std::string>() << "  " << row.at("amount_eth").get<std::string>()
        << "\n";
  }
  out << "total" << std::string(46, ' ') << payments.at("total_eth").get<std::string>() << "\n";
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"oflw3: one-shot federated learning marketplace"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "report";
  std::string server_url;
  bool in_process = false;
  app.add_option("--config", config_path, "JSON config file");
  app.add_option("--seed", seed, "scenario seed");
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--server", server_url, "marketplace URL, e.g. http://127.0.0.1:8080");
  app.add_flag("--in-process", in_process, "run the marketplace inside this process (default)");

  auto* demo = app.add_subcommand("demo", "run the seeded end-to-end scenario");

  auto* serve = app.add_subcommand("serve", "serve the HTTP API");
  std::string host = "127.0.0.1";
  int port = 8080;
  serve->add_option("--host", host);
  serve->add_option("--port", port);

  auto* train = app.add_subcommand("train", "train one owner's local model");
  std::size_t owner_index = 0;
  std::string model_out;
  train->add_option("--owner", owner_index, "owner index")->required();
  train->add_option("--model-out", model_out, "model file (default <out>/owner-<i>.oflw)");

  auto* deploy = app.add_subcommand("deploy", "deploy a job contract with the budget in escrow");
  std::string buyer_arg;
  std::string budget_arg;
  bool dry_run = false;
  deploy->add_option("--buyer", buyer_arg, "address or label");
  deploy->add_option("--budget-wei", budget_arg);
  deploy->add_flag("--dry-run", dry_run, "quote the fee only");

  auto* upload = app.add_subcommand("upload", "store a model and, with --job, register its CID");
  std::string model_path;
  std::uint64_t job_id = 0;
  std::string owner_arg;
  upload->add_option("model", model_path, "model file")->required();
  upload->add_option("--job", job_id);
  upload->add_option("--owner", owner_arg, "address or label");
  upload->add_flag("--dry-run", dry_run, "quote the fee only");

  auto* aggregate = app.add_subcommand("aggregate", "aggregate a job and pay the owners");
  std::string caller_arg;
  aggregate->add_option("--job", job_id)->required();
  aggregate->add_option("--caller", caller_arg, "address or label (default: config buyer)");
  aggregate->add_flag("--dry-run", dry_run, "quote the fee only");

  auto* balance = app.add_subcommand("balance", "print an account balance");
  std::string address_arg;
  balance->add_option("address", address_arg, "address or label")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    config::Config cfg = config_path.empty() ? config::defaults() : config::load(config_path);
    if (seed) cfg.demo.scenario.seed = *seed;
    if (!server_url.empty() && in_process) {
      throw Error(Errc::kInvalidArgument, "--server and --in-process are exclusive");
    }

    std::unique_ptr<marketplace::Service> service;
    std::unique_ptr<Client> client;
    // In-process blob stores live under --out unless the config pins them.
    auto connect = [&]() -> Client& {
      if (!server_url.empty()) {
        client = std::make_unique<HttpClient>(server_url);
      } else {
        config::ServiceConfig sc = cfg.service;
        if (sc.cas_root.is_relative()) sc.cas_root = fs::path(out_dir) / sc.cas_root;
        service = std::make_unique<marketplace::Service>(sc);
        client = std::make_unique<InProcessClient>(*service);
      }
      return *client;
    };

    if (*demo) {
      Client& c = connect();
      const DemoResult r = run_demo(cfg, c, out_dir, err);
      out << "aggregate accuracy " << accuracy_text(r.aggregate_accuracy) << " ("
          << r.job.at("aggregator").get<std::string>() << ")\n";
      print_table(out, r.payments);
      out << "report written to " << out_dir << "\n";
      return 0;
    }

    if (*serve) {
      marketplace::Service svc(cfg.service);
      http_api::Server server(svc);
      const int bound = server.bind(host, port);
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      out << "listening on http://" << host << ":" << bound << std::endl;
      server.listen();
      g_server = nullptr;
      return 0;
    }

    if (*train) {
      const auto& spec = cfg.demo.scenario;
      const scenario::Scenario sc = scenario::build(spec);
      if (owner_index >= sc.partitions.size()) {
        throw Error(Errc::kInvalidArgument, "owner index out of range");
      }
      learner::Hyperparams hp = spec.hyperparams;
      hp.seed = scenario::owner_train_seed(spec, owner_index);
      const auto model = learner::train(sc.init, sc.partitions[owner_index], hp);
      fs::path path = model_out.empty()
                          ? fs::path(out_dir) / ("owner-" + std::to_string(owner_index) + ".oflw")
                          : fs::path(model_out);
      if (path.has_parent_path()) fs::create_directories(path.parent_path());
      const Bytes bytes = learner::serialize(model);
      write_file(path, std::string(bytes.begin(), bytes.end()));
      const learner::ModelSidecar side{spec.arch, hp, cfg.demo.owner(owner_index).hex()};
      write_file(path.string() + ".json", json(side).dump(2) + "\n");
      out << path.string() << " " << bytes.size() << " bytes, local accuracy "
          << accuracy_text(learner::evaluate(model, sc.test)) << "\n";
      return 0;
    }

    if (*deploy) {
      Client& c = connect();
      const auto& spec = cfg.demo.scenario;
      const Address buyer = buyer_arg.empty() ? cfg.demo.buyer() : parse_address(buyer_arg);
      json body{{"buyer", buyer.hex()},
                {"budget_wei", budget_arg.empty() ? wei_to_string(cfg.demo.budget) : budget_arg},
                {"arch", spec.arch},
                {"init_seed", scenario::init_seed(spec)},
                {"aggregator", aggregator::to_string(cfg.demo.aggregator)},
                {"match_config", cfg.demo.match_config},
                {"testset_ref", learner::describe(scenario::test_data_spec(spec))},
                {"min_owners", cfg.demo.min_owners},
                {"dry_run", dry_run}};
      const json r = c.call("POST", "/jobs", body);
      if (dry_run) {
        out << "deploy fee " << r.at("fee_eth").get<std::string>() << " ETH (" << r.at("gas")
            << " gas)\n";
      } else {
        out << "job " << r.at("id") << " contract " << r.at("contract").get<std::string>()
            << " fee " << format_eth(parse_wei(r.at("deploy_receipt").at("fee_wei").get<std::string>()))
            << " ETH\n";
      }
      return 0;
    }

    if (*upload) {
      Client& c = connect();
      const Bytes bytes = read_file(model_path);
      if (upload->count("--job") == 0) {
        http_api::Request req;
        req.method = "POST";
        req.path = "/cas";
        req.headers["content-type"] = "application/octet-stream";
        req.body.assign(bytes.begin(), bytes.end());
        const auto r = c.send(req);
        if (!r.ok()) {
          const json e = r.json();
          throw Error(errc_from_string(e.value("code", "")).value_or(Errc::kInvalidArgument),
                      e.value("message", ""));
        }
        out << r.json().at("cid").get<std::string>() << "\n";
        return 0;
      }
      const Address owner = owner_arg.empty() ? cfg.demo.owner(0) : parse_address(owner_arg);
      const json r = c.call("POST", "/jobs/" + std::to_string(job_id) + "/models",
                            {{"owner", owner.hex()},
                             {"model_base64", base64_encode(bytes)},
                             {"dry_run", dry_run}});
      if (dry_run) {
        out << "upload fee " << r.at("fee_eth").get<std::string>() << " ETH\n";
      } else {
        out << r.at("cid").get<std::string>() << "\n";
      }
      return 0;
    }

    if (*aggregate) {
      Client& c = connect();
      const Address caller = caller_arg.empty() ? cfg.demo.buyer() : parse_address(caller_arg);
      const std::string id = std::to_string(job_id);
      const json r = c.call("POST", "/jobs/" + id + "/aggregate",
                            {{"caller", caller.hex()}, {"dry_run", dry_run}});
      if (dry_run) {
        out << "payout fees " << r.at("fee_eth").get<std::string>() << " ETH over "
            << r.at("transactions") << " transactions\n";
      } else {
        print_table(out, c.call("GET", "/jobs/" + id + "/payments"));
      }
      return 0;
    }

    if (*balance) {
      Client& c = connect();
      const json r = c.call("GET", "/ledger/accounts/" + parse_address(address_arg).hex());
      out << r.at("address").get<std::string>() << " " << r.at("balance_eth").get<std::string>()
          << " ETH (" << r.at("balance_wei").get<std::string>() << " wei)\n";
      return 0;
    }
  } catch (const Error& e) {
    err << "error: " << to_string(e.code()) << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace oflw3::cli
