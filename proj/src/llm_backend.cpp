#include "cod/llm_backend.hpp"

#include <fstream>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "cod/error.hpp"

namespace cod::belief {

using nlohmann::json;

// ---- transport ------------------------------------------------------------

Transport http_transport(const LlmSettings& settings) {
    const auto& url = settings.endpoint;
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw ConfigError("llm endpoint must be an absolute URL: " + url);
    const auto path_start = url.find('/', scheme_end + 3);
    const std::string origin = path_start == std::string::npos ? url : url.substr(0, path_start);
    const std::string path = path_start == std::string::npos ? "/" : url.substr(path_start);
    const auto timeout = settings.timeout;
    const auto api_key = settings.api_key;

    return [origin, path, timeout, api_key](const std::string& body) -> std::string {
        httplib::Client client(origin);
        const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout);
        const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout - secs);
        client.set_connection_timeout(secs.count(), usecs.count());
        client.set_read_timeout(secs.count(), usecs.count());
        httplib::Headers headers;
        if (!api_key.empty()) headers.emplace("Authorization", "Bearer " + api_key);
        auto res = client.Post(path, headers, body, "application/json");
        if (!res) throw BackendError("llm request to " + origin + path + " failed: " + httplib::to_string(res.error()));
        if (res->status < 200 || res->status >= 300)
            throw BackendError("llm endpoint returned HTTP " + std::to_string(res->status));
        return res->body;
    };
}

// ---- templates ------------------------------------------------------------

const std::map<std::string, std::string>& PromptTemplates::builtin() {
    static const std::map<std::string, std::string> templates = {
        {"reasoning",
         R"(You are a physician working through a differential diagnosis. Study the patient's symptoms below, discuss how well each candidate disease accounts for them, and then give a confidence for every candidate.

Reply with a single JSON object holding two keys: "analysis" (your reasoning as text) and "distribution" (an object mapping each candidate disease name to its confidence; the confidences add up to 1). Use an object, not a list, for the distribution. For example:
{"analysis": "...", "distribution": {"Influenza": 0.6, "Common cold": 0.3, "Strep throat": 0.1}}

Symptoms the patient reported first: {explicit_syms}
Symptoms confirmed on questioning: {implicit_syms}
Symptoms the patient denied: {absent_syms}

Candidate diseases: {candidate_diseases}

Give the analysis first, then the distribution.)"},
        {"rethink",
         R"(Your assessment was rejected: it placed high confidence on a disease that is probably wrong. Go through the evidence again and return a revised analysis and confidence distribution in exactly the same JSON format as before, for example:
{"analysis": "...", "distribution": {"Influenza": 0.6, "Common cold": 0.3, "Strep throat": 0.1}})"},
    };
    return templates;
}

PromptTemplates::PromptTemplates() : templates_(builtin()) {}

PromptTemplates::PromptTemplates(const std::filesystem::path& dir) : templates_(builtin()) {
    if (dir.empty()) return;
    if (!std::filesystem::is_directory(dir)) throw ConfigError("prompt directory not found: " + dir.string());
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.path().extension() != ".txt") continue;
        std::ifstream in(entry.path(), std::ios::binary);
        std::ostringstream ss;
        ss << in.rdbuf();
        auto text = ss.str();
        while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.pop_back();
        templates_[entry.path().stem().string()] = std::move(text);
    }
}

const std::string& PromptTemplates::get(const std::string& id) const {
    auto it = templates_.find(id);
    if (it == templates_.end()) throw ConfigError("unknown prompt template \"" + id + "\"");
    return it->second;
}

std::string PromptTemplates::render(const std::string& id, const std::map<std::string, std::string>& vars) const {
    const auto& tpl = get(id);
    std::string out;
    out.reserve(tpl.size());
    for (std::size_t i = 0; i < tpl.size();) {
        if (tpl[i] == '{') {
            const auto close = tpl.find('}', i);
            if (close != std::string::npos) {
                auto it = vars.find(tpl.substr(i + 1, close - i - 1));
                if (it != vars.end()) {
                    out += it->second;
                    i = close + 1;
                    continue;
                }
            }
        }
        out.push_back(tpl[i++]);
    }
    return out;
}

// ---- replies --------------------------------------------------------------

LlmReply parse_llm_reply(const std::string& body) {
    json j = json::parse(body, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("distribution")) {
        const auto open = body.find('{');
        const auto close = body.rfind('}');
        if (open == std::string::npos || close == std::string::npos || close < open)
            throw BackendError("llm reply contains no JSON object");
        j = json::parse(body.substr(open, close - open + 1), nullptr, false);
        if (j.is_discarded()) throw BackendError("llm reply is not valid JSON");
    }
    const auto dist = j.find("distribution");
    if (dist == j.end() || !dist->is_object()) throw BackendError("llm reply has no \"distribution\" object");
    LlmReply reply;
    if (auto a = j.find("analysis"); a != j.end()) reply.analysis = a->is_string() ? a->get<std::string>() : a->dump();
    for (const auto& [name, value] : dist->items()) {
        if (!value.is_number()) throw BackendError("confidence for \"" + name + "\" is not a number");
        reply.distribution[name] = value.get<double>();
    }
    if (reply.distribution.empty()) throw BackendError("llm reply has an empty distribution");
    return reply;
}

// ---- backend --------------------------------------------------------------

LlmBackend::LlmBackend(LlmSettings settings, Transport transport)
    : settings_(std::move(settings)), transport_(std::move(transport)), templates_(settings_.prompt_dir) {
    if (!transport_) throw ConfigError("llm backend requires a transport");
    templates_.get(settings_.template_id);
}

namespace {

std::string join(const SymptomSet& set) {
    if (set.empty()) return "none";
    std::string out;
    for (const auto& s : set) out += (out.empty() ? "" : ", ") + s.str();
    return out;
}

} // namespace

std::string LlmBackend::render_reasoning_prompt(const AssessRequest& request) const {
    SymptomSet opening, inquired;
    for (const auto& s : request.evidence.present)
        (request.opening_symptoms.contains(s) ? opening : inquired).insert(s);
    std::string candidates;
    for (const auto& c : request.candidates.entries)
        candidates += (candidates.empty() ? "" : ", ") + request.db.at(c.disease).name;
    return templates_.render(settings_.template_id, {{"explicit_syms", join(opening)},
                                                     {"implicit_syms", join(inquired)},
                                                     {"absent_syms", join(request.evidence.absent)},
                                                     {"candidate_diseases", candidates}});
}

std::string LlmBackend::call(const std::string& template_id, const std::string& prompt) {
    json body = {{"template_id", template_id}, {"rendered_prompt", prompt}};
    if (!settings_.model.empty()) body["model"] = settings_.model;
    const auto payload = body.dump();
    auto delay = settings_.backoff;
    for (int attempt = 0;; ++attempt) {
        try {
            return transport_(payload);
        } catch (const BackendError& e) {
            if (attempt >= settings_.max_retries) throw;
            spdlog::warn("llm call failed (attempt {}): {}; retrying", attempt + 1, e.what());
            std::this_thread::sleep_for(delay);
            delay *= 2;
        }
    }
}

Assessment LlmBackend::to_assessment(const LlmReply& reply, const AssessRequest& request) const {
    Assessment a;
    std::map<std::string, double> by_id;
    for (const auto& [name, value] : reply.distribution) {
        const auto* d = request.db.find_by_id_or_name(name);
        by_id[d ? d->id : name] += value;
    }
    a.confidence = validate_distribution(by_id, request.candidates, &a.warnings);
    a.reasoning.text = reply.analysis;
    a.reasoning.structured = analyze_candidates(request.evidence, request.candidates, request.db);
    return a;
}

Assessment LlmBackend::ask(const AssessRequest& request, const std::string& template_id, const std::string& prompt) {
    auto body = call(template_id, prompt);
    try {
        auto a = to_assessment(parse_llm_reply(body), request);
        a.transcript = prompt + "\n\n" + body;
        return a;
    } catch (const Error& first) {
        // one corrective round trip before giving up
        spdlog::warn("unusable llm reply ({}); asking the model to rethink", first.what());
        const auto retry_prompt = prompt + "\n\n" + body + "\n\n" + templates_.get("rethink");
        body = call("rethink", retry_prompt);
        try {
            auto a = to_assessment(parse_llm_reply(body), request);
            a.transcript = retry_prompt + "\n\n" + body;
            return a;
        } catch (const Error& second) {
            throw BackendError(std::string("llm reply unusable after rethink: ") + second.what());
        }
    }
}

Assessment LlmBackend::assess(const AssessRequest& request) {
    if (request.candidates.entries.empty()) throw DataError("no candidate diseases");
    return ask(request, settings_.template_id, render_reasoning_prompt(request));
}

std::optional<Assessment> LlmBackend::rethink(const AssessRequest& request, const Assessment& rejected) {
    const auto& history = rejected.transcript.empty() ? render_reasoning_prompt(request) : rejected.transcript;
    return ask(request, "rethink", history + "\n\n" + templates_.get("rethink"));
}

} // namespace cod::belief
