#pragma once

// Eigen before httplib: <resolv.h> defines a `_res` macro that breaks Eigen.
#include "meshlearn/service.hpp"

#include <httplib.h>

namespace meshlearn {

/// Registers the service routes on an httplib server. httplib runs handlers
/// on a thread pool; the service serializes per session.
inline void bind_routes(httplib::Server& server, InferenceService& service) {
  auto reply = [](httplib::Response& res, const HttpResponse& r) {
    res.status = r.status;
    res.set_content(r.body, "application/json");
  };
  server.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
  server.Options(R"(/session.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Methods", "POST, PUT, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });
  server.Post("/session", [&service, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, service.create_session(req.body));
  });
  server.Post(R"(/session/([^/]+)/step)", [&service, reply](const httplib::Request& req, httplib::Response& res) {
    std::optional<std::string> n;
    if (req.has_param("n")) n = req.get_param_value("n");
    reply(res, service.step(req.matches[1], n ? std::optional<std::string_view>(*n) : std::nullopt));
  });
  server.Put(R"(/session/([^/]+)/env)", [&service, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, service.update_env(req.matches[1], req.body));
  });
}

}  // namespace meshlearn
