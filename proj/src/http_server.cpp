#include <httplib.h>

#include "oflw3/http_api.hpp"

namespace oflw3::http_api {

struct Server::Impl {
  marketplace::Service& service;
  httplib::Server server;

  explicit Impl(marketplace::Service& s) : service(s) {}

  void serve(const httplib::Request& in, httplib::Response& out) {
    Request req;
    req.method = in.method;
    req.path = in.path;
    for (const auto& [k, v] : in.params) req.query[k] = v;
    for (const auto& [k, v] : in.headers) {
      std::string key = k;
      for (auto& c : key) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      req.headers[key] = v;
    }
    req.body = in.body;

    const Response r = handle(service, req);
    out.status = r.status;
    for (const auto& [k, v] : r.headers) out.set_header(k, v);
    if (!r.content_type.empty()) out.set_content(r.body, r.content_type);
  }
};

Server::Server(marketplace::Service& service) : impl_(std::make_unique<Impl>(service)) {
  auto fn = [this](const httplib::Request& in, httplib::Response& out) { impl_->serve(in, out); };
  impl_->server.Get(".*", fn);
  impl_->server.Post(".*", fn);
  impl_->server.Options(".*", fn);
}

Server::~Server() { stop(); }

int Server::bind(const std::string& host, int port) {
  if (port == 0) {
    const int p = impl_->server.bind_to_any_port(host);
    if (p < 0) throw Error(Errc::kStoreUnavailable, "cannot bind " + host);
    return p;
  }
  if (!impl_->server.bind_to_port(host, port)) {
    throw Error(Errc::kStoreUnavailable, "cannot bind " + host + ":" + std::to_string(port));
  }
  return port;
}

void Server::listen() { impl_->server.listen_after_bind(); }

void Server::stop() {
  if (impl_->server.is_running()) impl_->server.stop();
}

}  // namespace oflw3::http_api
