#pragma once

// JSON prediction service over a loaded bundle. PredictionService holds the
// request logic; HttpServer puts it on HTTP/1.1.

#include <memory>
#include <string>

#include "vbac/bundle.hpp"

namespace vbac {

struct ServiceResponse {
  int status;
  std::string body;  // JSON
};

class PredictionService {
 public:
  explicit PredictionService(ModelBundle bundle);

  // POST /predict   {"features": {...}}
  ServiceResponse predict(const std::string& body) const;
  // POST /whatif    {"features": {...}, "field": name, "grid": [...]}
  ServiceResponse whatif(const std::string& body) const;
  // GET /metadata
  ServiceResponse metadata() const;
  // GET /healthz
  ServiceResponse healthz() const;

  const ModelBundle& bundle() const { return bundle_; }

 private:
  ModelBundle bundle_;
  std::string metadata_;
};

class HttpServer {
 public:
  explicit HttpServer(const PredictionService& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  // Binds; port 0 picks a free port. Returns the bound port.
  int bind(const std::string& host, int port);
  // Blocks until stop().
  void listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace vbac
