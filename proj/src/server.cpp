#include "ibws/server.hpp"

#include "httplib.h"

namespace ibws {

using nlohmann::json;

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& what) {
  send_json(res, status, json{{"error", what}});
}

int status_for(CampaignError::Code c) {
  switch (c) {
    case CampaignError::Code::invalid: return 400;
    case CampaignError::Code::not_found: return 404;
    case CampaignError::Code::expired: return 410;
    case CampaignError::Code::incomplete: return 409;
    case CampaignError::Code::conflict: return 409;
  }
  return 500;
}

template <typename F>
httplib::Server::Handler guarded(F f) {
  return [f](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const CampaignError& e) {
      send_error(res, status_for(e.code()), e.what());
    } catch (const json::exception& e) {
      send_error(res, 400, std::string("malformed JSON: ") + e.what());
    } catch (const std::invalid_argument& e) {
      send_error(res, 400, e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, e.what());
    }
  };
}

json task_body(const Task& t, const CampaignHost& host, const std::string& campaign_id) {
  json j = to_json(t);
  j["campaign_id"] = campaign_id;
  const auto cfg = host.describe().at("config");
  std::map<std::string, std::string> text;
  for (const auto& it : cfg.at("items")) text[it.at("id")] = it.value("text", "");
  const auto& ids = t.query ? t.query->item_ids : t.items;
  j["items"] = json::array();
  for (const auto& id : ids) j["items"].push_back({{"id", id}, {"text", text[id]}});
  if (!t.query) j["protocol"] = cfg.at("protocol");
  return j;
}

}  // namespace

struct HttpServer::Impl {
  CampaignService& service;
  httplib::Server http;

  explicit Impl(CampaignService& s) : service(s) { routes(); }

  void routes() {
    http.Post("/v1/campaigns", guarded([this](const httplib::Request& req, httplib::Response& res) {
      CampaignConfig cfg = campaign_config_from_json(json::parse(req.body));
      std::string id = service.create(cfg);
      send_json(res, 201, service.get(id).describe());
    }));

    http.Get("/v1/campaigns", guarded([this](const httplib::Request&, httplib::Response& res) {
      send_json(res, 200, json{{"campaigns", service.ids()}});
    }));

    http.Get("/v1/campaigns/:id", guarded([this](const httplib::Request& req, httplib::Response& res) {
      send_json(res, 200, service.get(req.path_params.at("id")).describe());
    }));

    http.Get("/v1/campaigns/:id/tasks/next",
             guarded([this](const httplib::Request& req, httplib::Response& res) {
               const std::string id = req.path_params.at("id");
               auto& host = service.get(id);
               std::string worker = req.get_param_value("worker");
               if (worker.empty()) throw CampaignError(CampaignError::Code::invalid, "worker is required");
               auto task = host.next_task(worker, service.now());
               json body;
               body["status"] = host.progress().at("status");
               body["task"] = task ? task_body(*task, host, id) : json(nullptr);
               send_json(res, 200, body);
             }));

    http.Post("/v1/campaigns/:id/responses",
              guarded([this](const httplib::Request& req, httplib::Response& res) {
                auto& host = service.get(req.path_params.at("id"));
                Submission sub = submission_from_json(json::parse(req.body), host.protocol());
                Ack ack = host.submit(sub, service.now());
                send_json(res, ack.duplicate ? 200 : 201,
                          json{{"lease_id", sub.lease_id},
                               {"accepted", true},
                               {"duplicate", ack.duplicate},
                               {"status", ack.completed ? "complete" : "open"}});
              }));

    http.Get("/v1/campaigns/:id/progress",
             guarded([this](const httplib::Request& req, httplib::Response& res) {
               send_json(res, 200, service.get(req.path_params.at("id")).progress());
             }));

    http.Get("/v1/campaigns/:id/results",
             guarded([this](const httplib::Request& req, httplib::Response& res) {
               send_json(res, 200, service.get(req.path_params.at("id")).results());
             }));

    http.Get("/v1/campaigns/:id/export",
             guarded([this](const httplib::Request& req, httplib::Response& res) {
               res.status = 200;
               res.set_content(service.get(req.path_params.at("id")).export_log(),
                               "application/x-ndjson");
             }));
  }
};

HttpServer::HttpServer(CampaignService& service) : impl_(std::make_unique<Impl>(service)) {}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind_any(const std::string& host) { return impl_->http.bind_to_any_port(host); }

bool HttpServer::bind(const std::string& host, int port) {
  return impl_->http.bind_to_port(host, port);
}

bool HttpServer::serve() { return impl_->http.listen_after_bind(); }

void HttpServer::stop() {
  if (impl_->http.is_running()) impl_->http.stop();
}

void HttpServer::wait_until_ready() const { impl_->http.wait_until_ready(); }

}  // namespace ibws
