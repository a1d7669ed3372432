#pragma once

// Command-line driver. Everything the binary does goes through run() so
// tests can call it with captured streams; every marketplace interaction
// goes through a Client, which is either the in-process router or a remote
// server.

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "oflw3/config.hpp"
#include "oflw3/http_api.hpp"
#include "oflw3/marketplace.hpp"

namespace oflw3::cli {

class Client {
 public:
  virtual ~Client() = default;
  virtual http_api::Response send(const http_api::Request& req) = 0;

  // JSON in, JSON out. Non-2xx responses become an Error carrying the
  // envelope's code and message.
  nlohmann::json call(const std::string& method, const std::string& path,
                      const nlohmann::json& body = nullptr);
};

class InProcessClient : public Client {
 public:
  explicit InProcessClient(marketplace::Service& service) : service_(service) {}
  http_api::Response send(const http_api::Request& req) override;

 private:
  marketplace::Service& service_;
};

class HttpClient : public Client {
 public:
  explicit HttpClient(const std::string& url);  // http://host:port
  ~HttpClient() override;
  http_api::Response send(const http_api::Request& req) override;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// "0x.." is taken as hex, anything else as a label ("buyer", "owner-3").
ledger::Address parse_address(const std::string& text);

// Report bundle file names, in write order.
inline constexpr const char* kBundleFiles[] = {"local_accuracies.csv", "loo_accuracies.csv",
                                               "payments.csv", "gas_report.json", "timings.json"};

struct DemoResult {
  nlohmann::json job;       // final GET /jobs/{id}
  nlohmann::json payments;  // GET /jobs/{id}/payments
  nlohmann::json timings;   // GET /jobs/{id}/timings
  nlohmann::json gas;       // gas_report.json
  std::vector<double> local_accuracy;
  double aggregate_accuracy = 0.0;
};

// Trains the owners locally, then drives deploy, submissions, aggregation
// and payout through `client` and writes the report bundle into `out_dir`.
DemoResult run_demo(const config::Config& cfg, Client& client, const std::filesystem::path& out_dir,
                    std::ostream& log);

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace oflw3::cli
