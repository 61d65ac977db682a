#include <CLI11.hpp>

#include <csignal>
#include <iostream>
#include <pthread.h>
#include <thread>

#include "linkfold/error.hpp"
#include "linkfold/io.hpp"
#include "linkfold/studio.hpp"
#include "studio_http.hpp"

int main(int argc, char** argv) {
  CLI::App app{"linkfold-studio: HTTP service behind the browser studio"};
  int port = 8080;
  std::string host = "127.0.0.1";
  std::string project, snapshot, openapi;
  std::size_t concurrency = 2;
  app.add_option("--port", port, "listen port (0 picks a free port)")->check(CLI::Range(0, 65535));
  app.add_option("--host", host, "listen address");
  app.add_option("--project", project, "project loaded into the first session");
  app.add_option("--concurrency", concurrency, "job workers")->check(CLI::PositiveNumber);
  app.add_option("--snapshot", snapshot, "write the sessions here on shutdown");
  app.add_option("--openapi", openapi, "schema file served at /openapi.yaml");
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 64;
  }

  // Block termination signals before any thread starts; one thread waits for them.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  try {
    linkfold::studio::ServiceOptions opts;
    opts.concurrency = concurrency;
    if (!project.empty()) opts.default_project = linkfold::io::load_project(project);
    if (!snapshot.empty()) opts.snapshot_path = snapshot;
    linkfold::studio::Service service(opts);
    if (opts.default_project) service.create_session(*opts.default_project);

    linkfold::studio::HttpServer server(service, openapi.empty() ? std::nullopt : std::optional<std::filesystem::path>(openapi));
    const int bound = server.bind(host, port);
    if (bound < 0) {
      std::cerr << "cannot bind " << host << ":" << port << "\n";
      return 1;
    }
    std::cout << "listening on http://" << host << ":" << bound << std::endl;

    std::thread waiter([&] {
      int sig = 0;
      sigwait(&signals, &sig);
      server.stop();
    });
    waiter.detach();
    server.listen();
    service.shutdown();
    if (!snapshot.empty()) std::cout << "snapshot written to " << snapshot << std::endl;
  } catch (const linkfold::ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
