#pragma once

#include <string>

#include "pruneforge/session.hpp"

namespace httplib {
class Server;
}

namespace pruneforge {

/// Registers the JSON API under /api on `server`. Every route answers with
/// application/json; failures carry {"error": message} with status 400
/// (invalid request), 404 (unknown session, layer record or job) or 409
/// (request conflicts with the session state).
///
///   GET  /api/health
///   GET  /api/sessions
///   POST /api/sessions                                   -> 201 session
///   GET  /api/sessions/{id}
///   POST /api/sessions/{id}/layers/{l}/prepare
///   GET  /api/sessions/{id}/layers/{l}/scores
///   GET  /api/sessions/{id}/layers/{l}/projection
///   GET  /api/sessions/{id}/layers/{l}/weight-projection
///   GET  /api/sessions/{id}/layers/{l}/decisions
///   PUT  /api/sessions/{id}/layers/{l}/decisions          body {"remove": [k...]}
///   GET  /api/sessions/{id}/layers/{l}/record
///   POST /api/sessions/{id}/layers/{l}/commit             -> 202 job
///   GET  /api/sessions/{id}/jobs/{jid}
///   POST /api/sessions/{id}/finalize                      -> 202 job
///   GET  /api/sessions/{id}/metrics
void register_routes(httplib::Server& server, SessionManager& sessions);

/// Blocking server on host:port until `server.stop()` or process exit.
void serve(SessionManager& sessions, const std::string& host, int port);

}  // namespace pruneforge
