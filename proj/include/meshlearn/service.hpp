#pragma once

#include <chrono>
#include <functional>
#include <json.hpp>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include "meshlearn/io.hpp"

namespace meshlearn {

struct ServiceOptions {
  double mesh_dx = 0.05;
  std::chrono::seconds ttl{600};
  int max_steps_per_request = 1000;
};

struct HttpResponse {
  int status = 200;
  std::string body;  // JSON
};

/// Request handling of the interactive Heat2D endpoint, independent of the
/// HTTP transport:
///   POST /session              {obstacles, sources} -> 201 mesh, tags, u0
///   POST /session/{id}/step?n= -> n snapshots (n = 0: the current field)
///   PUT  /session/{id}/env     {obstacles, sources} -> tags, reset field
/// Parameter errors are 422 with the offending field, unknown sessions 404.
class InferenceService {
 public:
  using Clock = std::function<std::chrono::steady_clock::time_point()>;

  InferenceService(Checkpoint checkpoint, ServiceOptions options = {}, Clock clock = &std::chrono::steady_clock::now)
      : checkpoint_(std::move(checkpoint)), options_(options), clock_(std::move(clock)) {
    if (checkpoint_.params.config.dim != 2)
      throw ConsistencyError("the service needs a 2D checkpoint, got " + std::to_string(checkpoint_.params.config.dim) + "D");
    mesh_ = std::make_shared<const Mesh>(build_regular_tri_2d({}, options_.mesh_dx));
  }

  std::shared_ptr<const Mesh> mesh() const { return mesh_; }
  std::size_t session_count() const {
    std::lock_guard lock(sessions_mutex_);
    return sessions_.size();
  }

  HttpResponse create_session(std::string_view body) {
    EnvSpec spec;
    if (auto err = parse_env_spec(body, spec)) return *err;
    auto s = std::make_shared<Session>(build_heat2d_environment(mesh_, spec), checkpoint_.params);
    std::string id;
    {
      std::lock_guard lock(sessions_mutex_);
      purge_expired_locked();
      id = "s" + std::to_string(++next_id_);
      s->last_used = clock_();
      sessions_.emplace(id, s);
    }
    std::lock_guard lock(s->mutex);
    nlohmann::ordered_json j;
    j["session"] = id;
    j["nodes"] = mesh_->vertex_count();
    std::vector<double> pos;
    pos.reserve(static_cast<std::size_t>(2 * mesh_->vertex_count()));
    for (Index v = 0; v < mesh_->vertex_count(); ++v) pos.insert(pos.end(), mesh_->position(v).begin(), mesh_->position(v).end());
    j["positions"] = pos;
    std::vector<Index> tri;
    for (Index e = 0; e < mesh_->element_count(); ++e) tri.insert(tri.end(), mesh_->element(e).begin(), mesh_->element(e).end());
    j["elements"] = tri;
    write_state(j, *s);
    return {201, j.dump()};
  }

  HttpResponse step(const std::string& id, std::optional<std::string_view> n_text) {
    long n = 1;
    if (n_text) {
      const auto [p, ec] = std::from_chars(n_text->data(), n_text->data() + n_text->size(), n);
      if (ec != std::errc{} || p != n_text->data() + n_text->size() || n < 0 || n > options_.max_steps_per_request)
        return unprocessable("n", "n must be an integer in [0, " + std::to_string(options_.max_steps_per_request) + "]");
    }
    auto s = find(id);
    if (!s) return not_found(id);
    std::lock_guard lock(s->mutex);
    nlohmann::ordered_json j;
    j["session"] = id;
    nlohmann::ordered_json snaps = nlohmann::ordered_json::array();
    if (n == 0) snaps.push_back(as_vector(s->field));
    for (long k = 0; k < n; ++k) {
      s->field = s->stepper(s->field);
      ++s->step;
      snaps.push_back(as_vector(s->field));
    }
    j["step"] = s->step;
    j["snapshots"] = std::move(snaps);
    return {200, j.dump()};
  }

  HttpResponse update_env(const std::string& id, std::string_view body) {
    EnvSpec spec;
    if (auto err = parse_env_spec(body, spec)) return *err;
    auto s = find(id);
    if (!s) return not_found(id);
    std::lock_guard lock(s->mutex);
    s->reset(build_heat2d_environment(mesh_, spec), checkpoint_.params);
    nlohmann::ordered_json j;
    j["session"] = id;
    write_state(j, *s);
    return {200, j.dump()};
  }

  /// Routes a request by method and path; `n` is the raw query parameter.
  HttpResponse handle(std::string_view method, std::string_view path, std::optional<std::string_view> n, std::string_view body) {
    if (path == "/session") return method == "POST" ? create_session(body) : method_not_allowed();
    constexpr std::string_view prefix = "/session/";
    if (path.starts_with(prefix)) {
      std::string_view rest = path.substr(prefix.size());
      const auto slash = rest.find('/');
      if (slash != std::string_view::npos) {
        const std::string id(rest.substr(0, slash));
        const std::string_view action = rest.substr(slash + 1);
        if (action == "step") return method == "POST" ? step(id, n) : method_not_allowed();
        if (action == "env") return method == "PUT" ? update_env(id, body) : method_not_allowed();
      }
    }
    return {404, error_json("no such endpoint", "path")};
  }

 private:
  struct Session {
    Session(Environment e, const GNParams& params) : env(std::move(e)), stepper(params, env), field(env.u0) {}
    void reset(Environment e, const GNParams& params) {
      env = std::move(e);
      stepper = Stepper(params, env);
      field = env.u0;
      step = 0;
    }
    std::mutex mutex;
    Environment env;
    Stepper stepper;
    Field field;
    long step = 0;
    std::chrono::steady_clock::time_point last_used;
  };

  static std::vector<double> as_vector(const Field& u) { return {u.data(), u.data() + u.size()}; }

  static void write_state(nlohmann::ordered_json& j, const Session& s) {
    std::vector<int> tags;
    tags.reserve(s.env.node_types.size());
    for (NodeType t : s.env.node_types) tags.push_back(static_cast<int>(t));
    j["node_types"] = tags;
    j["obstacle_nodes"] = node_type_mask(s.env, NodeType::Obstacle).size();
    j["step"] = s.step;
    j["field"] = as_vector(s.field);
  }

  static std::string error_json(const std::string& message, const std::string& field) {
    nlohmann::ordered_json j;
    j["error"] = message;
    j["field"] = field;
    return j.dump();
  }
  static HttpResponse unprocessable(const std::string& field, const std::string& message) { return {422, error_json(message, field)}; }
  static HttpResponse not_found(const std::string& id) { return {404, error_json("unknown session '" + id + "'", "session")}; }
  static HttpResponse method_not_allowed() { return {405, error_json("method not allowed", "method")}; }

  /// Fills `spec` from the request body or returns the 422 to send.
  static std::optional<HttpResponse> parse_env_spec(std::string_view body, EnvSpec& spec) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::parse_error&) {
      return unprocessable("body", "body must be a JSON object with obstacles and sources");
    }
    if (!j.is_object()) return unprocessable("body", "body must be a JSON object with obstacles and sources");
    for (const char* key : {"obstacles", "sources"})
      if (!j.contains(key) || !j[key].is_array()) return unprocessable(key, std::string(key) + " must be an array");
    auto number = [](const nlohmann::json& obj, const char* key, double& out) {
      if (!obj.is_object() || !obj.contains(key) || !obj[key].is_number()) return false;
      out = obj[key].get<double>();
      return true;
    };
    auto point = [](const nlohmann::json& obj, std::array<double, 2>& out) {
      if (!obj.is_object() || !obj.contains("center")) return false;
      const auto& c = obj["center"];
      if (!c.is_array() || c.size() != 2 || !c[0].is_number() || !c[1].is_number()) return false;
      out = {c[0].get<double>(), c[1].get<double>()};
      return true;
    };
    for (const auto& o : j["obstacles"]) {
      Obstacle ob;
      if (!point(o, ob.center)) return unprocessable("center", "obstacle center must be [x, y]");
      if (!number(o, "radius", ob.radius)) return unprocessable("radius", "obstacle radius must be a number");
      spec.obstacles.push_back(ob);
    }
    for (const auto& s : j["sources"]) {
      HeatSource hs;
      if (!point(s, hs.center)) return unprocessable("center", "source center must be [x, y]");
      if (!number(s, "amplitude", hs.amplitude)) return unprocessable("amplitude", "source amplitude must be a number");
      if (!number(s, "sharpness", hs.sharpness)) return unprocessable("sharpness", "source sharpness must be a number");
      spec.sources.push_back(hs);
    }
    if (auto bad = first_out_of_range(spec)) return unprocessable(*bad, *bad + " is outside the allowed range");
    return std::nullopt;
  }

  std::shared_ptr<Session> find(const std::string& id) {
    std::lock_guard lock(sessions_mutex_);
    purge_expired_locked();
    auto it = sessions_.find(id);
    if (it == sessions_.end()) return nullptr;
    it->second->last_used = clock_();
    return it->second;
  }

  void purge_expired_locked() {
    const auto now = clock_();
    std::erase_if(sessions_, [&](const auto& kv) { return now - kv.second->last_used > options_.ttl; });
  }

  Checkpoint checkpoint_;
  ServiceOptions options_;
  Clock clock_;
  std::shared_ptr<const Mesh> mesh_;
  mutable std::mutex sessions_mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  long next_id_ = 0;
};

}  // namespace meshlearn
