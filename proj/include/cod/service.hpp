/**
 * @file service.hpp
 * @brief Live diagnostic sessions over HTTP.
 *
 * The handlers are plain functions from a JSON body to a status and a JSON
 * reply, so they can be exercised without a socket; mount() wires them to an
 * httplib server. Sessions live in memory and are dropped ten minutes after
 * they finish or after an hour without activity.
 */

#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "cod/engine.hpp"

namespace httplib {
class Server;
}

namespace cod::service {

using Clock = std::chrono::steady_clock;

struct ServiceOptions {
    engine::SessionConfig defaults;
    std::filesystem::path static_dir; // empty: nothing served at /
    std::chrono::seconds finished_ttl{600};
    std::chrono::seconds idle_ttl{3600};
};

struct Reply {
    int status = 200;
    nlohmann::json body;
};

/// Builds the belief backend for a new session.
using BackendFactory = std::function<std::unique_ptr<belief::BeliefBackend>(const belief::BackendConfig&)>;

class Service {
public:
    Service(const knowledge::DiseaseDB& db, const retriever::RetrieverModel& model, ServiceOptions options,
            BackendFactory factory = {}, std::function<Clock::time_point()> clock = {});
    ~Service();

    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    Reply create_session(const nlohmann::json& body);
    Reply answer(const std::string& session_id, const nlohmann::json& body);
    Reply get_session(const std::string& session_id);
    Reply health();
    Reply config() const;

    /// Drops expired sessions; returns how many were removed.
    std::size_t evict_expired();
    std::size_t live_sessions() const;

    void mount(httplib::Server& server);

private:
    struct Session;

    std::shared_ptr<Session> find(const std::string& id) const;
    std::string new_id();
    nlohmann::json snapshot(const Session& s) const;
    nlohmann::json final_payload(const engine::Diagnose& dx) const;

    const knowledge::DiseaseDB* db_;
    const retriever::RetrieverModel* model_;
    ServiceOptions options_;
    BackendFactory factory_;
    std::function<Clock::time_point()> clock_;

    mutable std::mutex mutex_;
    std::map<std::string, std::shared_ptr<Session>> sessions_;
    std::uint64_t id_state_;
};

/// Blocks serving on host:port until the process is stopped.
void serve(Service& service, const std::string& host, int port);

/// Splits "host:port"; a bare port binds 127.0.0.1.
std::pair<std::string, int> parse_listen(const std::string& listen);

} // namespace cod::service
