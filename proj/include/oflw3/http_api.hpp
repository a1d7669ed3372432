#pragma once

// HTTP + JSON surface of the marketplace. The router is a pure function of
// (service, request) so tests and the in-process CLI use it without sockets;
// Server only adapts it to cpp-httplib.
//
//   POST /jobs                      create (or {"dry_run": true} for a quote)
//   GET  /jobs                      all jobs
//   GET  /jobs/{id}
//   POST /jobs/{id}/models          JSON {"owner", "model_base64"} or raw
//                                   application/octet-stream with ?owner=
//   GET  /jobs/{id}/cids
//   GET  /jobs/{id}/cids/{index}
//   POST /jobs/{id}/aggregate       {"caller", "dry_run"}
//   GET  /jobs/{id}/payments
//   GET  /jobs/{id}/timings
//   GET  /jobs/{id}/report
//   GET  /ledger                    height, supply, fees
//   GET  /ledger/accounts/{addr}
//   GET  /ledger/receipts/{hash}
//   POST /cas                       raw body -> {"cid", "size"}
//   GET  /cas/{cid}
//
// Errors: {"code": "<Errc name>", "message": "..."}.

#include <cstdint>
#include <map>
#include <memory>
#include <string>

#include <nlohmann/json.hpp>

#include "oflw3/error.hpp"
#include "oflw3/marketplace.hpp"

namespace oflw3::http_api {

struct Request {
  std::string method;
  std::string path;
  std::map<std::string, std::string> query;
  std::map<std::string, std::string> headers;  // lowercase names
  std::string body;

  std::string header(const std::string& name) const;
};

struct Response {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
  std::map<std::string, std::string> headers;

  bool ok() const { return status >= 200 && status < 300; }
  nlohmann::json json() const { return nlohmann::json::parse(body); }
};

int status_for(Errc code);
Response error_response(Errc code, const std::string& message);

Response handle(marketplace::Service& service, const Request& req);

// Blocking cpp-httplib server around handle().
class Server {
 public:
  explicit Server(marketplace::Service& service);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  // Binds; port 0 picks a free one. Throws kStoreUnavailable when binding fails.
  int bind(const std::string& host, int port);
  void listen();  // blocks until stop()
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace oflw3::http_api
