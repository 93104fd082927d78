#pragma once

// JSON over HTTP front end for CampaignService. All routes live under /v1;
// see docs/api.md for the request and response bodies.

#include <memory>
#include <string>

#include "ibws/campaign.hpp"

namespace ibws {

class HttpServer {
 public:
  explicit HttpServer(CampaignService& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  // Binds an ephemeral port and returns it (or -1).
  int bind_any(const std::string& host = "127.0.0.1");
  bool bind(const std::string& host, int port);
  // Blocks until stop() is called.
  bool serve();
  void stop();
  void wait_until_ready() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace ibws
