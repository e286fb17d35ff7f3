#include "pruneforge/api.hpp"

#include <functional>

#include "httplib.h"

using nlohmann::json;

namespace pruneforge {
namespace {

constexpr const char* kJson = "application/json";

void send_error(httplib::Response& res, int status, const std::string& message) {
  res.status = status;
  res.set_content(json{{"error", message}}.dump(), kJson);
}

// Runs a handler and maps exceptions onto HTTP statuses.
httplib::Server::Handler guarded(std::function<void(const httplib::Request&, httplib::Response&)> fn) {
  return [fn = std::move(fn)](const httplib::Request& req, httplib::Response& res) {
    try {
      fn(req, res);
    } catch (const NotFoundError& e) {
      send_error(res, 404, e.what());
    } catch (const ConflictError& e) {
      send_error(res, 409, e.what());
    } catch (const json::exception& e) {
      send_error(res, 400, std::string("malformed request: ") + e.what());
    } catch (const std::exception& e) {
      send_error(res, 400, e.what());
    }
  };
}

std::size_t layer_param(const httplib::Request& req, std::size_t index) {
  const std::string text = req.matches[static_cast<int>(index)].str();
  try {
    return std::stoul(text);
  } catch (const std::exception&) {
    throw Error("invalid layer '" + text + "'");
  }
}

void send_text(httplib::Response& res, int status, const std::string& body) {
  res.status = status;
  res.set_content(body, kJson);
}

void send_optional(httplib::Response& res, const std::optional<std::string>& body, const std::string& what) {
  if (!body) throw NotFoundError(what + " is not available");
  send_text(res, 200, *body);
}

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  return json::parse(req.body);
}

}  // namespace

void register_routes(httplib::Server& server, SessionManager& sessions) {
  const std::string session = R"(/api/sessions/([A-Za-z0-9_.\-]+))";
  const std::string layer = session + R"(/layers/(\d+))";

  server.Get("/api/health", guarded([](const httplib::Request&, httplib::Response& res) {
               send_text(res, 200, json{{"status", "ok"}}.dump());
             }));

  server.Get("/api/sessions", guarded([&sessions](const httplib::Request&, httplib::Response& res) {
               send_text(res, 200, json{{"sessions", sessions.list_sessions()}}.dump());
             }));

  server.Post("/api/sessions", guarded([&sessions](const httplib::Request& req, httplib::Response& res) {
                const SessionConfig config = parse_body(req).get<SessionConfig>();
                const std::string id = sessions.start_session(config);
                send_text(res, 201, sessions.describe(id).dump());
              }));

  server.Get(session, guarded([&sessions](const httplib::Request& req, httplib::Response& res) {
               send_text(res, 200, sessions.describe(req.matches[1]).dump());
             }));

  server.Post(layer + "/prepare", guarded([&sessions](const httplib::Request& req, httplib::Response& res) {
                send_text(res, 200, sessions.prepare_layer(req.matches[1], layer_param(req, 2)));
              }));

  server.Get(layer + "/scores", guarded([&sessions](const httplib::Request& req, httplib::Response& res) {
               const std::size_t l = layer_param(req, 2);
               send_optional(res, sessions.layer_scores(req.matches[1], l), "scores for layer " + std::to_string(l));
             }));

  server.Get(layer + "/projection", guarded([&sessions](const httplib::Request& req, httplib::Response& res) {
               const std::size_t l = layer_param(req, 2);
               send_optional(res, sessions.layer_projection(req.matches[1], l),
                             "projection for layer " + std::to_string(l));
             }));

  server.Get(layer + "/weight-projection",
             guarded([&sessions](const httplib::Request& req, httplib::Response& res) {
               send_text(res, 200, sessions.weight_projection(req.matches[1], layer_param(req, 2)));
             }));

  server.Get(layer + "/decisions", guarded([&sessions](const httplib::Request& req, httplib::Response& res) {
               const std::size_t l = layer_param(req, 2);
               const auto d = sessions.decisions(req.matches[1], l);
               if (!d) throw NotFoundError("no decisions for layer " + std::to_string(l));
               send_text(res, 200, d->dump());
             }));

  server.Put(layer + "/decisions", guarded([&sessions](const httplib::Request& req, httplib::Response& res) {
               const json body = parse_body(req);
               const auto remove = body.at("remove").get<std::vector<std::size_t>>();
               send_text(res, 200, sessions.submit_decisions(req.matches[1], layer_param(req, 2), remove).dump());
             }));

  server.Get(layer + "/record", guarded([&sessions](const httplib::Request& req, httplib::Response& res) {
               const std::size_t l = layer_param(req, 2);
               send_optional(res, sessions.layer_record(req.matches[1], l),
                             "commit record for layer " + std::to_string(l));
             }));

  server.Post(layer + "/commit", guarded([&sessions](const httplib::Request& req, httplib::Response& res) {
                send_text(res, 202, json(sessions.commit_layer(req.matches[1], layer_param(req, 2))).dump());
              }));

  server.Get(session + R"(/jobs/([A-Za-z0-9_.\-]+))",
             guarded([&sessions](const httplib::Request& req, httplib::Response& res) {
               send_text(res, 200, json(sessions.job(req.matches[1], req.matches[2])).dump());
             }));

  server.Post(session + "/finalize", guarded([&sessions](const httplib::Request& req, httplib::Response& res) {
                send_text(res, 202, json(sessions.finalize(req.matches[1])).dump());
              }));

  server.Get(session + "/metrics", guarded([&sessions](const httplib::Request& req, httplib::Response& res) {
               send_text(res, 200, sessions.metrics(req.matches[1]).dump());
             }));

  server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) {
      res.set_content(json{{"error", "no such route"}}.dump(), kJson);
    }
  });
}

void serve(SessionManager& sessions, const std::string& host, int port) {
  httplib::Server server;
  register_routes(server, sessions);
  if (!server.listen(host, port)) {
    throw Error("could not listen on " + host + ":" + std::to_string(port));
  }
}

}  // namespace pruneforge
