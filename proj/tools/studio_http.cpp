#include "studio_http.hpp"

#include <httplib.h>

#include "linkfold/io.hpp"

namespace linkfold::studio {

HttpServer::HttpServer(Service& service, std::optional<std::filesystem::path> openapi)
    : service_(service), server_(std::make_unique<httplib::Server>()) {
  if (openapi) openapi_ = io::read_text(*openapi);

  const auto forward = [this](const httplib::Request& req, httplib::Response& res) {
    if (req.method == "GET" && req.path == "/openapi.yaml" && openapi_) {
      res.set_content(*openapi_, "application/yaml");
      return;
    }
    Request r;
    r.method = req.method;
    r.path = req.path;
    for (const auto& [k, v] : req.params) r.query.emplace(k, v);  // first value wins
    r.body = req.body;
    const Response out = service_.handle(r);
    res.status = out.status;
    if (out.revision) res.set_header("X-Revision", std::to_string(*out.revision));
    res.set_content(out.body, out.content_type);
  };
  server_->Get(".*", forward);
  server_->Post(".*", forward);
  server_->Patch(".*", forward);
  server_->Delete(".*", forward);
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) return server_->bind_to_any_port(host);
  return server_->bind_to_port(host, port) ? port : -1;
}

bool HttpServer::listen() { return server_->listen_after_bind(); }

void HttpServer::stop() {
  if (server_->is_running()) server_->stop();
}

void HttpServer::wait_until_ready() const { server_->wait_until_ready(); }

}  // namespace linkfold::studio
