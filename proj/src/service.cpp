#include "cod/service.hpp"

#include <ctime>
#include <random>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "cod/error.hpp"
#include "cod/rng.hpp"

namespace cod::service {

using nlohmann::json;

struct Service::Session {
    std::string id;
    std::chrono::system_clock::time_point created_at;
    Clock::time_point last_active;
    std::optional<Clock::time_point> finished_at;
    engine::SessionConfig cfg;
    std::unique_ptr<belief::BeliefBackend> backend;
    engine::DialogueState state;
    engine::DiagnosticTrace trace;
    std::optional<engine::Diagnose> final;
    bool busy = false;
};

namespace {

Reply error_reply(int status, const std::string& message) { return {status, json{{"error", message}}}; }

std::string iso_utc(std::chrono::system_clock::time_point t) {
    const std::time_t tt = std::chrono::system_clock::to_time_t(t);
    std::tm tm{};
    gmtime_r(&tt, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// Overrides from a create-session body. Anything malformed here is a bad
// config (422), not a bad request.
engine::SessionConfig config_from(const json& body, engine::SessionConfig cfg) {
    auto number = [&](const char* key) -> std::optional<json> {
        if (!body.contains(key) || body[key].is_null()) return std::nullopt;
        if (!body[key].is_number()) throw ConfigError(std::string(key) + " must be a number");
        return std::optional<json>(std::in_place, body[key]);
    };
    auto integer = [&](const char* key) -> std::optional<std::int64_t> {
        auto v = number(key);
        if (!v) return std::nullopt;
        if (!v->is_number_integer()) throw ConfigError(std::string(key) + " must be an integer");
        return v->get<std::int64_t>();
    };
    if (auto v = number("tau")) cfg.tau = v->get<double>();
    if (auto v = integer("max_rounds")) {
        if (*v < 0 || *v > 1000) throw ConfigError("max_rounds out of range");
        cfg.max_rounds = static_cast<int>(*v);
    }
    if (auto v = integer("k")) {
        if (*v < 1) throw ConfigError("k must be at least 1");
        cfg.k = static_cast<std::size_t>(*v);
    }
    if (body.contains("backend") && !body["backend"].is_null()) {
        if (!body["backend"].is_string()) throw ConfigError("backend must be a string");
        cfg.backend.kind = belief::backend_kind_from_string(body["backend"].get<std::string>());
    }
    cfg.validate();
    cfg.backend.validate();
    return cfg;
}

} // namespace

Service::Service(const knowledge::DiseaseDB& db, const retriever::RetrieverModel& model, ServiceOptions options,
                 BackendFactory factory, std::function<Clock::time_point()> clock)
    : db_(&db), model_(&model), options_(std::move(options)), factory_(std::move(factory)), clock_(std::move(clock)) {
    if (!model.bound_to(db)) throw DataError("retriever model does not match the disease database");
    options_.defaults.validate();
    if (!factory_) factory_ = belief::make_backend;
    if (!clock_) clock_ = [] { return Clock::now(); };
    std::random_device rd;
    id_state_ = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
}

Service::~Service() = default;

std::string Service::new_id() {
    Rng rng(id_state_++);
    char buf[33];
    std::snprintf(buf, sizeof buf, "%016llx%016llx", static_cast<unsigned long long>(rng.next()),
                  static_cast<unsigned long long>(rng.next()));
    return buf;
}

std::shared_ptr<Service::Session> Service::find(const std::string& id) const {
    const auto it = sessions_.find(id);
    return it == sessions_.end() ? nullptr : it->second;
}

std::size_t Service::evict_expired() {
    const auto now = clock_();
    std::lock_guard lock(mutex_);
    return std::erase_if(sessions_, [&](const auto& kv) {
        const Session& s = *kv.second;
        if (s.busy) return false;
        if (s.finished_at) return now - *s.finished_at >= options_.finished_ttl;
        return now - s.last_active >= options_.idle_ttl;
    });
}

std::size_t Service::live_sessions() const {
    std::lock_guard lock(mutex_);
    return sessions_.size();
}

json Service::final_payload(const engine::Diagnose& dx) const {
    const auto& rec = db_->at(dx.disease);
    return {{"disease", rec.id},
            {"name", rec.name},
            {"confidence", dx.confidence},
            {"treatment", rec.treatment},
            {"forced", dx.forced}};
}

json Service::snapshot(const Session& s) const {
    json rounds = json::array();
    for (const auto& r : s.trace.rounds) rounds.push_back(engine::to_json(r));
    json present = json::array(), absent = json::array();
    for (const auto& x : s.state.evidence.present) present.push_back(x.str());
    for (const auto& x : s.state.evidence.absent) absent.push_back(x.str());
    json j = {{"session_id", s.id},
              {"created_at", iso_utc(s.created_at)},
              {"status", s.finished_at ? "finished" : "awaiting_answer"},
              {"config",
               {{"tau", s.cfg.tau},
                {"max_rounds", s.cfg.max_rounds},
                {"k", s.cfg.k},
                {"backend", belief::to_string(s.cfg.backend.kind)}}},
              {"state",
               {{"round", s.state.round},
                {"inquiries", s.state.inquiries()},
                {"present", present},
                {"absent", absent},
                {"pending", s.state.pending ? json(s.state.pending->str()) : json(nullptr)},
                {"candidates", s.state.candidates.ids()}}},
              {"trace", rounds}};
    if (s.final) j["final"] = final_payload(*s.final);
    return j;
}

Reply Service::create_session(const json& body) {
    evict_expired();
    if (!body.is_object()) return error_reply(400, "request body must be a JSON object");
    if (!body.contains("symptoms") || !body["symptoms"].is_array())
        return error_reply(400, "symptoms must be a list");
    std::vector<std::string> symptoms;
    for (const auto& s : body["symptoms"]) {
        if (!s.is_string()) return error_reply(400, "symptoms must be strings");
        symptoms.push_back(s.get<std::string>());
    }
    if (symptoms.empty()) return error_reply(400, "no symptoms given");

    auto session = std::make_shared<Session>();
    try {
        session->cfg = config_from(body, options_.defaults);
        session->backend = factory_(session->cfg.backend);
    } catch (const ConfigError& e) {
        return error_reply(422, e.what());
    }

    std::optional<engine::StepOutcome> step;
    try {
        const engine::Engine eng(*db_, *model_, *session->backend, session->cfg);
        step = eng.step(session->state, engine::Opening::structured(symptoms));
    } catch (const NoSymptomsError&) {
        return error_reply(400, "no recognizable symptoms");
    } catch (const BackendError& e) {
        return error_reply(502, e.what());
    } catch (const Error& e) {
        return error_reply(500, e.what());
    }

    auto& out = *step;
    const auto now = clock_();
    session->created_at = std::chrono::system_clock::now();
    session->last_active = now;
    session->state = std::move(out.state);
    session->trace.rounds.push_back(out.round);
    if (const auto* dx = std::get_if<engine::Diagnose>(&out.decision)) {
        session->final = *dx;
        session->finished_at = now;
    }

    json reply = {{"round_1", engine::to_json(out.round)}};
    if (session->final) reply["final"] = final_payload(*session->final);
    {
        std::lock_guard lock(mutex_);
        do session->id = new_id();
        while (sessions_.contains(session->id));
        sessions_.emplace(session->id, session);
        reply["session_id"] = session->id;
    }
    return {201, reply};
}

Reply Service::answer(const std::string& session_id, const json& body) {
    evict_expired();
    std::shared_ptr<Session> s;
    engine::DialogueState state;
    {
        std::lock_guard lock(mutex_);
        s = find(session_id);
        if (!s) return error_reply(404, "unknown session");
        if (s->finished_at) return error_reply(409, "session already finished");
        if (s->busy) return error_reply(409, "an answer for this session is already being processed");
        if (!body.is_object() || !body.contains("answer") || !body["answer"].is_string())
            return error_reply(400, "answer must be \"yes\" or \"no\"");
        const auto a = body["answer"].get<std::string>();
        if (a != "yes" && a != "no") return error_reply(400, "answer must be \"yes\" or \"no\"");
        s->busy = true;
        state = s->state;
    }
    const bool present = body["answer"].get<std::string>() == "yes";

    std::optional<engine::StepOutcome> step;
    try {
        const engine::Engine eng(*db_, *model_, *s->backend, s->cfg);
        step = eng.step(state, engine::Answer{present});
    } catch (const Error& e) {
        std::lock_guard lock(mutex_);
        s->busy = false;
        s->last_active = clock_();
        return error_reply(dynamic_cast<const BackendError*>(&e) ? 502 : 500, e.what());
    }

    auto& out = *step;
    std::lock_guard lock(mutex_);
    const auto now = clock_();
    s->state = std::move(out.state);
    s->trace.rounds.push_back(out.round);
    s->last_active = now;
    s->busy = false;
    json reply = {{"round_" + std::to_string(out.round.round), engine::to_json(out.round)}};
    if (const auto* dx = std::get_if<engine::Diagnose>(&out.decision)) {
        s->final = *dx;
        s->finished_at = now;
        reply["final"] = final_payload(*dx);
    }
    return {200, reply};
}

Reply Service::get_session(const std::string& session_id) {
    evict_expired();
    std::lock_guard lock(mutex_);
    const auto s = find(session_id);
    if (!s) return error_reply(404, "unknown session");
    return {200, snapshot(*s)};
}

Reply Service::health() {
    evict_expired();
    return {200,
            {{"status", "ok"},
             {"diseases", db_->diseases().size()},
             {"symptoms", db_->symptom_vocab().size()},
             {"sessions", live_sessions()}}};
}

Reply Service::config() const {
    const auto& d = options_.defaults;
    json diseases = json::array();
    for (const auto& rec : db_->diseases()) diseases.push_back({{"id", rec.id}, {"name", rec.name}});
    json vocab = json::array();
    for (const auto& s : db_->symptom_vocab()) vocab.push_back(s.str());
    return {200,
            {{"tau", d.tau},
             {"max_rounds", d.max_rounds},
             {"k", d.k},
             {"backend", belief::to_string(d.backend.kind)},
             {"entropy_mode", engine::to_string(d.entropy_mode)},
             {"vocabulary", vocab},
             {"diseases", diseases}}};
}

void Service::mount(httplib::Server& server) {
    auto send = [](httplib::Response& res, const Reply& r) {
        res.status = r.status;
        res.set_content(r.body.dump(), "application/json");
    };
    auto parsed = [](const httplib::Request& req) { return json::parse(req.body, nullptr, false); };

    server.Post("/api/sessions", [=, this](const httplib::Request& req, httplib::Response& res) {
        const auto body = parsed(req);
        send(res, body.is_discarded() ? error_reply(400, "malformed JSON") : create_session(body));
    });
    server.Post(R"(/api/sessions/([^/]+)/answer)", [=, this](const httplib::Request& req, httplib::Response& res) {
        const auto body = parsed(req);
        send(res, answer(req.matches[1], body.is_discarded() ? json() : body));
    });
    server.Get(R"(/api/sessions/([^/]+))", [=, this](const httplib::Request& req, httplib::Response& res) {
        send(res, get_session(req.matches[1]));
    });
    server.Get("/api/health", [=, this](const httplib::Request&, httplib::Response& res) { send(res, health()); });
    server.Get("/api/config", [=, this](const httplib::Request&, httplib::Response& res) { send(res, config()); });

    if (!options_.static_dir.empty() && !server.set_mount_point("/", options_.static_dir.string()))
        throw ConfigError("static directory not found: " + options_.static_dir.string());
}

std::pair<std::string, int> parse_listen(const std::string& listen) {
    std::string host = "127.0.0.1";
    std::string port = listen;
    if (const auto colon = listen.rfind(':'); colon != std::string::npos) {
        host = listen.substr(0, colon);
        port = listen.substr(colon + 1);
    }
    try {
        std::size_t used = 0;
        const int p = std::stoi(port, &used);
        if (used != port.size() || p < 0 || p > 65535) throw std::out_of_range("port");
        return {host.empty() ? "127.0.0.1" : host, p};
    } catch (const std::exception&) {
        throw ConfigError("bad listen address \"" + listen + "\"");
    }
}

void serve(Service& service, const std::string& host, int port) {
    httplib::Server server;
    service.mount(server);
    spdlog::info("listening on {}:{}", host, port);
    if (!server.listen(host, port)) throw Error("cannot listen on " + host + ":" + std::to_string(port));
}

} // namespace cod::service
