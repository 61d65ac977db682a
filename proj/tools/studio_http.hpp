#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "linkfold/studio.hpp"

namespace httplib {
class Server;
}

namespace linkfold::studio {

/// HTTP/1.1 front end for a Service. Every route is forwarded verbatim;
/// `GET /openapi.yaml` serves the schema file when one is configured.
class HttpServer {
 public:
  explicit HttpServer(Service& service, std::optional<std::filesystem::path> openapi = std::nullopt);
  ~HttpServer();

  /// Binds to `port` (0 picks a free one) and returns the bound port, or -1.
  int bind(const std::string& host, int port);
  /// Serves until stop() is called.
  bool listen();
  void stop();
  void wait_until_ready() const;

 private:
  Service& service_;
  std::optional<std::string> openapi_;
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace linkfold::studio
