#include "vbac/serve.hpp"

#include <httplib.h>

#include <cmath>
#include <nlohmann/json.hpp>

#include "vbac/errors.hpp"

namespace vbac {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

// A request rejected with an HTTP status and a JSON error body.
struct Rejection {
  int status;
  ordered_json body;
};

Rejection reject(int status, std::string code, std::string message, std::string field = {}) {
  ordered_json body;
  body["error"] = std::move(code);
  if (!field.empty()) body["field"] = std::move(field);
  body["message"] = std::move(message);
  return {status, std::move(body)};
}

ServiceResponse respond(int status, const ordered_json& body) { return {status, body.dump()}; }

const EncodedField* find_encoded(const ModelBundle& bundle, const std::string& name) {
  for (const auto& f : bundle.preprocessor.encoder().fields())
    if (f.name == name) return &f;
  return nullptr;
}

// Checks and stores one value into the record.
void assign(const EncodedField& f, const json& value, DeliveryRecord& record) {
  if (f.field.numeric()) {
    if (!value.is_number()) throw reject(400, "invalid_value", "expected a number", f.name);
    const double v = value.get<double>();
    if (!std::isfinite(v) || v < 0) throw reject(400, "invalid_value", "expected a finite non-negative number", f.name);
    record.numeric[f.field.index] = v;
    return;
  }
  if (!value.is_string()) throw reject(400, "invalid_value", "expected a string level", f.name);
  const auto level = value.get<std::string>();
  if (!std::binary_search(f.levels.begin(), f.levels.end(), level)) {
    auto r = reject(422, "unseen_level", "level '" + level + "' was not seen in training", f.name);
    r.body["level"] = level;
    r.body["allowed"] = f.levels;
    throw r;
  }
  record.categorical[f.field.index] = level;
}

json parse_body(const std::string& body) {
  try {
    auto j = json::parse(body);
    if (!j.is_object()) throw reject(400, "invalid_request", "request body must be a JSON object");
    return j;
  } catch (const json::parse_error& e) {
    throw reject(400, "invalid_json", e.what());
  }
}

DeliveryRecord record_from(const ModelBundle& bundle, const json& request) {
  const auto it = request.find("features");
  if (it == request.end() || !it->is_object())
    throw reject(400, "invalid_request", "request needs a \"features\" object");
  DeliveryRecord record;
  for (const auto& [key, value] : it->items()) {
    const auto* f = find_encoded(bundle, key);
    if (f == nullptr) throw reject(400, "unknown_field", "'" + key + "' is not a model predictor", key);
    assign(*f, value, record);
  }
  for (const auto& f : bundle.preprocessor.encoder().fields())
    if (!it->contains(f.name)) throw reject(400, "missing_field", "'" + f.name + "' is required", f.name);
  return record;
}

ordered_json prediction_json(const ModelBundle& bundle, double p) {
  ordered_json j;
  j["probability"] = p;
  j["predicted_class"] = p >= bundle.threshold ? 1 : 0;
  j["label"] = p >= bundle.threshold ? "vbac" : "repeat_cesarean";
  j["threshold"] = bundle.threshold;
  return j;
}

template <typename F>
ServiceResponse guarded(F&& body) {
  try {
    return body();
  } catch (const Rejection& r) {
    return respond(r.status, r.body);
  } catch (const UnseenLevelError& e) {
    auto r = reject(422, "unseen_level", e.what(), e.field());
    r.body["level"] = e.level();
    r.body["allowed"] = e.allowed();
    return respond(r.status, r.body);
  } catch (const DataError& e) {
    return respond(400, reject(400, "invalid_value", e.what()).body);
  }
}

}  // namespace

PredictionService::PredictionService(ModelBundle bundle) : bundle_(std::move(bundle)) {
  bundle_.validate();
  ordered_json j;
  j["family"] = family_name(bundle_.family());
  j["threshold"] = bundle_.threshold;
  j["config_hash"] = bundle_.metadata.config_hash;
  j["fields"] = ordered_json::array();
  for (const auto& f : bundle_.preprocessor.encoder().fields()) {
    ordered_json field;
    field["name"] = f.name;
    if (f.field.numeric()) {
      field["type"] = "numeric";
      field["min"] = f.observed_min;
      field["max"] = f.observed_max;
    } else {
      field["type"] = "categorical";
      field["levels"] = f.levels;
    }
    j["fields"].push_back(std::move(field));
  }
  j["features"] = ordered_json::array();
  for (const auto& c : bundle_.preprocessor.output_columns()) j["features"].push_back(c.name());
  j["eval"] = bundle_.metadata.eval_summary.empty() ? ordered_json() : ordered_json::parse(bundle_.metadata.eval_summary);
  metadata_ = j.dump();
}

ServiceResponse PredictionService::predict(const std::string& body) const {
  return guarded([&] {
    const auto request = parse_body(body);
    const auto record = record_from(bundle_, request);
    return respond(200, prediction_json(bundle_, bundle_.predict_row(record)));
  });
}

ServiceResponse PredictionService::whatif(const std::string& body) const {
  return guarded([&] {
    const auto request = parse_body(body);
    const auto field_it = request.find("field");
    if (field_it == request.end() || !field_it->is_string())
      throw reject(400, "invalid_request", "request needs a \"field\" name");
    const auto name = field_it->get<std::string>();
    const auto* f = find_encoded(bundle_, name);
    if (f == nullptr) throw reject(400, "not_sweepable", "'" + name + "' is not a model predictor", name);
    const auto grid_it = request.find("grid");
    if (grid_it == request.end() || !grid_it->is_array() || grid_it->empty())
      throw reject(400, "invalid_request", "request needs a non-empty \"grid\" array", name);
    const DeliveryRecord base = record_from(bundle_, request);

    ordered_json out;
    out["field"] = name;
    out["threshold"] = bundle_.threshold;
    out["results"] = ordered_json::array();
    for (const auto& value : *grid_it) {
      DeliveryRecord r = base;
      assign(*f, value, r);
      const double p = bundle_.predict_row(r);
      ordered_json point;
      point["value"] = value;
      point["probability"] = p;
      point["predicted_class"] = p >= bundle_.threshold ? 1 : 0;
      out["results"].push_back(std::move(point));
    }
    return respond(200, out);
  });
}

ServiceResponse PredictionService::metadata() const { return {200, metadata_}; }

ServiceResponse PredictionService::healthz() const { return {200, R"({"status":"ok"})"}; }

struct HttpServer::Impl {
  httplib::Server server;
};

HttpServer::HttpServer(const PredictionService& service) : impl_(std::make_unique<Impl>()) {
  auto& s = impl_->server;
  auto send = [](httplib::Response& res, const ServiceResponse& r) {
    res.status = r.status;
    res.set_content(r.body, "application/json");
  };
  s.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                         {"Access-Control-Allow-Headers", "Content-Type"},
                         {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
  s.Post("/predict", [&service, send](const httplib::Request& req, httplib::Response& res) {
    send(res, service.predict(req.body));
  });
  s.Post("/whatif", [&service, send](const httplib::Request& req, httplib::Response& res) {
    send(res, service.whatif(req.body));
  });
  s.Get("/metadata", [&service, send](const httplib::Request&, httplib::Response& res) { send(res, service.metadata()); });
  s.Get("/healthz", [&service, send](const httplib::Request&, httplib::Response& res) { send(res, service.healthz()); });
  s.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  auto& s = impl_->server;
  if (port == 0) {
    const int bound = s.bind_to_any_port(host);
    if (bound <= 0) throw Error("could not bind " + host);
    return bound;
  }
  if (!s.bind_to_port(host, port)) throw Error("could not bind " + host + ":" + std::to_string(port));
  return port;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

void HttpServer::stop() {
  if (impl_ && impl_->server.is_running()) impl_->server.stop();
}

}  // namespace vbac
