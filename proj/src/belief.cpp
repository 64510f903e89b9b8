#include "cod/belief.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <spdlog/spdlog.h>

#include "cod/error.hpp"
#include "cod/llm_backend.hpp"

namespace cod::belief {

void SymptomEvidence::validate() const {
    for (const auto& s : present)
        if (absent.contains(s)) throw DataError("symptom \"" + s.str() + "\" is both present and absent");
}

ConfidenceDistribution ConfidenceDistribution::uniform(const std::vector<std::string>& ids) {
    std::map<std::string, double> m;
    for (const auto& id : ids) m[id] = 0.0;
    for (auto& [id, v] : m) v = 1.0 / static_cast<double>(m.size());
    return ConfidenceDistribution(std::move(m));
}

double ConfidenceDistribution::at(const std::string& id) const {
    auto it = entries_.find(id);
    if (it == entries_.end()) throw DataError("disease \"" + id + "\" is not in the distribution");
    return it->second;
}

double ConfidenceDistribution::get(const std::string& id) const noexcept {
    auto it = entries_.find(id);
    return it == entries_.end() ? 0.0 : it->second;
}

std::pair<std::string, double> ConfidenceDistribution::argmax() const {
    if (entries_.empty()) throw DataError("argmax of an empty distribution");
    auto best = entries_.begin();
    for (auto it = entries_.begin(); it != entries_.end(); ++it)
        if (it->second > best->second) best = it; // strict: earlier (smaller) id wins ties
    return *best;
}

double ConfidenceDistribution::sum() const noexcept {
    double s = 0.0;
    for (const auto& [_, v] : entries_) s += v;
    return s;
}

std::vector<DiseaseAnalysis> analyze_candidates(const SymptomEvidence& evidence, const CandidateSet& candidates,
                                                const DiseaseDB& db) {
    std::vector<DiseaseAnalysis> out;
    for (const auto& c : candidates.entries) {
        const auto& d = db.at(c.disease);
        DiseaseAnalysis a{d.id, {}, {}};
        for (const auto& s : evidence.present) (d.has_symptom(s) ? a.matched : a.contradicting).push_back(s);
        for (const auto& s : evidence.absent)
            if (d.has_symptom(s)) a.contradicting.push_back(s);
        out.push_back(std::move(a));
    }
    return out;
}

void BackendConfig::validate() const {
    switch (kind) {
    case BackendKind::bayes:
        if (!(bayes.smoothing_alpha > 0.0) || !std::isfinite(bayes.smoothing_alpha))
            throw ConfigError("smoothing_alpha must be positive");
        break;
    case BackendKind::llm:
        if (llm.endpoint.empty()) throw ConfigError("llm backend requires an endpoint");
        if (llm.max_retries < 0) throw ConfigError("max_retries must be non-negative");
        if (llm.timeout.count() <= 0) throw ConfigError("timeout must be positive");
        break;
    }
}

std::string to_string(BackendKind kind) { return kind == BackendKind::bayes ? "bayes" : "llm"; }

BackendKind backend_kind_from_string(std::string_view name) {
    if (name == "bayes") return BackendKind::bayes;
    if (name == "llm") return BackendKind::llm;
    throw ConfigError("unknown backend \"" + std::string(name) + "\"");
}

// ---- bayes ----------------------------------------------------------------

double symptom_likelihood(const DiseaseRecord& disease, const SymptomId& s, double alpha) {
    const double n = static_cast<double>(disease.symptom_profile.size());
    return (disease.weight(s) * n + alpha) / (n + 2.0 * alpha);
}

BayesBackend::BayesBackend(BayesSettings settings) : settings_(settings) {
    if (!(settings_.smoothing_alpha > 0.0)) throw ConfigError("smoothing_alpha must be positive");
}

std::map<std::string, double> BayesBackend::posterior(const SymptomEvidence& evidence,
                                                      const std::vector<std::string>& ids,
                                                      const DiseaseDB& db) const {
    if (ids.empty()) throw DataError("no candidate diseases");
    evidence.validate();
    const double alpha = settings_.smoothing_alpha;

    std::vector<double> log_score(ids.size(), 0.0);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const auto& d = db.at(ids[i]);
        double acc = 0.0;
        for (const auto& s : evidence.present) acc += std::log(symptom_likelihood(d, s, alpha));
        if (settings_.absent_penalty)
            for (const auto& s : evidence.absent) acc += std::log1p(-symptom_likelihood(d, s, alpha));
        log_score[i] = acc;
    }
    const double top = *std::max_element(log_score.begin(), log_score.end());
    double z = 0.0;
    for (auto& v : log_score) {
        v = std::exp(v - top);
        z += v;
    }
    std::map<std::string, double> out;
    for (std::size_t i = 0; i < ids.size(); ++i) out[ids[i]] = log_score[i] / z;
    return out;
}

Assessment BayesBackend::assess(const AssessRequest& request) {
    const auto ids = request.candidates.ids();
    Assessment a;
    a.confidence = ConfidenceDistribution(posterior(request.evidence, ids, request.db));
    a.reasoning.structured = analyze_candidates(request.evidence, request.candidates, request.db);

    std::ostringstream text;
    for (const auto& da : a.reasoning.structured) {
        text << request.db.at(da.disease).name << ": ";
        if (da.matched.empty()) {
            text << "no reported symptom is typical";
        } else {
            text << "consistent with";
            for (const auto& s : da.matched) text << ' ' << s.str() << (&s == &da.matched.back() ? "" : ",");
        }
        if (!da.contradicting.empty()) {
            text << "; speaks against:";
            for (const auto& s : da.contradicting) text << ' ' << s.str() << (&s == &da.contradicting.back() ? "" : ",");
        }
        text << ". ";
    }
    a.reasoning.text = text.str();
    if (!a.reasoning.text.empty()) a.reasoning.text.pop_back();
    return a;
}

std::unique_ptr<BeliefBackend> make_backend(const BackendConfig& config) {
    config.validate();
    if (config.kind == BackendKind::bayes) return std::make_unique<BayesBackend>(config.bayes);
    return std::make_unique<LlmBackend>(config.llm, http_transport(config.llm));
}

Assessment assess_confidence(const BackendConfig& config, const SymptomEvidence& evidence,
                             const CandidateSet& candidates, const DiseaseDB& db) {
    if (candidates.entries.empty()) throw DataError("no candidate diseases");
    auto backend = make_backend(config);
    return backend->assess(AssessRequest{evidence, candidates, db, evidence.present});
}

// ---- repair and verification ---------------------------------------------

ConfidenceDistribution validate_distribution(const std::map<std::string, double>& raw, const CandidateSet& candidates,
                                             std::vector<std::string>* warnings) {
    if (raw.empty()) throw DataError("empty confidence distribution");
    auto warn = [&](std::string msg) {
        spdlog::warn("{}", msg);
        if (warnings) warnings->push_back(std::move(msg));
    };
    for (const auto& [id, v] : raw) {
        if (!std::isfinite(v)) throw DataError("non-finite confidence for \"" + id + "\"");
        if (v < 0.0) throw DataError("negative confidence for \"" + id + "\"");
    }

    std::map<std::string, double> kept;
    for (const auto& c : candidates.entries) {
        auto it = raw.find(c.disease);
        if (it == raw.end()) {
            warn("confidence missing for candidate \"" + c.disease + "\"; set to 0");
            kept[c.disease] = 0.0;
        } else {
            kept[c.disease] = it->second;
        }
    }
    for (const auto& [id, v] : raw)
        if (!candidates.contains(id)) warn("dropping confidence for non-candidate \"" + id + "\"");

    double total = 0.0;
    for (const auto& [_, v] : kept) total += v;
    if (!(total > 0.0)) {
        warn("confidence distribution sums to zero; using uniform");
        return ConfidenceDistribution::uniform(candidates.ids());
    }
    for (auto& [_, v] : kept) v /= total;
    return ConfidenceDistribution(std::move(kept));
}

Verification verify_against_target(const ConfidenceDistribution& dist, const std::string& target, double tau) {
    for (const auto& [id, v] : dist.entries())
        if (id != target && v >= tau) return Verification::erroneous;
    return Verification::valid;
}

} // namespace cod::belief
