#include "cod/engine.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "cod/error.hpp"

namespace cod::engine {

using nlohmann::json;

namespace {
// Reductions closer than this are treated as ties.
constexpr double kTieTolerance = 1e-12;
} // namespace

std::string to_string(EntropyMode mode) { return mode == EntropyMode::present_only ? "present-only" : "expected"; }

EntropyMode entropy_mode_from_string(std::string_view name) {
    if (name == "present-only") return EntropyMode::present_only;
    if (name == "expected") return EntropyMode::expected;
    throw ConfigError("unknown entropy mode \"" + std::string(name) + "\"");
}

void SessionConfig::validate() const {
    if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("tau must lie in (0,1)");
    if (max_rounds < 0) throw ConfigError("max_rounds must be non-negative");
    if (k < 1) throw ConfigError("k must be at least 1");
    if (candidate_pool_limit < 1) throw ConfigError("candidate_pool_limit must be at least 1");
    backend.validate();
}

std::string question_for(const SymptomId& s) { return "Do you have " + s.str() + "?"; }

Opening Opening::structured(const std::vector<std::string>& symptoms) {
    return Opening{json{{"symptoms", symptoms}}.dump()};
}

// ---- symptom abstraction ---------------------------------------------------

namespace {

std::vector<std::string> words_of(std::string_view text) {
    std::vector<std::string> words;
    std::string cur;
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isalnum(c) || c == '\'' || c == '-') {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            words.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) words.push_back(std::move(cur));
    return words;
}

} // namespace

SymptomSet abstract_symptoms(const std::string& message, const DiseaseDB& db, std::vector<std::string>* warnings) {
    SymptomSet found;
    const auto first = message.find_first_not_of(" \t\r\n");
    const json structured = first != std::string::npos && message[first] == '{'
                                ? json::parse(message, nullptr, false)
                                : json(json::value_t::discarded);

    if (!structured.is_discarded() && structured.is_object() && structured.contains("symptoms")) {
        const auto& list = structured["symptoms"];
        if (!list.is_array()) throw DataError("\"symptoms\" must be an array");
        for (const auto& item : list) {
            if (!item.is_string()) throw DataError("symptom entries must be strings");
            const auto norm = knowledge::normalize_symptom(item.get<std::string>());
            if (norm.empty()) continue;
            SymptomId s(norm);
            if (db.in_vocab(s)) {
                found.insert(std::move(s));
            } else {
                spdlog::warn("ignoring unrecognized symptom \"{}\"", norm);
                if (warnings) warnings->push_back("unrecognized symptom \"" + norm + "\"");
            }
        }
    } else {
        // longest vocabulary phrase starting at each word
        std::map<std::string, std::size_t> phrase_len;
        std::size_t longest = 1;
        for (const auto& s : db.symptom_vocab()) {
            const auto n = words_of(s.str()).size();
            phrase_len[s.str()] = n;
            longest = std::max(longest, n);
        }
        const auto words = words_of(message);
        for (std::size_t i = 0; i < words.size();) {
            std::size_t matched = 0;
            for (std::size_t len = std::min(longest, words.size() - i); len >= 1 && !matched; --len) {
                std::string phrase = words[i];
                for (std::size_t j = 1; j < len; ++j) phrase += ' ' + words[i + j];
                auto it = phrase_len.find(phrase);
                if (it != phrase_len.end() && it->second == len) {
                    found.insert(SymptomId(phrase));
                    matched = len;
                }
            }
            i += matched ? matched : 1;
        }
    }
    if (found.empty()) throw NoSymptomsError();
    return found;
}

// ---- entropy and decisions ---------------------------------------------------

double entropy(const ConfidenceDistribution& dist) {
    double h = 0.0;
    for (const auto& [_, c] : dist.entries())
        if (c > 0.0) h -= c * std::log(c);
    return std::max(h, 0.0);
}

Decision decide(const ConfidenceDistribution& dist, double tau, const InquiryChooser& choose_inquiry) {
    const auto [disease, c_max] = dist.argmax();
    if (c_max > tau) return Diagnose{disease, c_max, false};
    return choose_inquiry();
}

std::vector<SymptomId> candidate_symptom_pool(const DialogueState& state, const DiseaseDB& db, std::size_t limit) {
    if (state.candidates.entries.empty()) throw DataError("no candidate diseases");
    std::map<SymptomId, double> best_weight;
    for (const auto& c : state.candidates.entries) {
        for (const auto& e : db.at(c.disease).symptom_profile) {
            if (state.evidence.known(e.symptom)) continue;
            if (std::find(state.asked.begin(), state.asked.end(), e.symptom) != state.asked.end()) continue;
            if (state.pending && *state.pending == e.symptom) continue;
            auto& w = best_weight[e.symptom];
            w = std::max(w, e.weight);
        }
    }
    std::vector<std::pair<SymptomId, double>> ranked(best_weight.begin(), best_weight.end());
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    if (ranked.size() > limit) ranked.resize(limit);
    std::vector<SymptomId> pool;
    pool.reserve(ranked.size());
    for (auto& [s, _] : ranked) pool.push_back(s);
    return pool;
}

InquiryChoice select_inquiry(const DialogueState& state, const ConfidenceDistribution& dist,
                             const std::vector<SymptomId>& pool, BeliefBackend& backend, const DiseaseDB& db,
                             const SessionConfig& cfg) {
    if (pool.empty()) throw DataError("empty inquiry pool");
    const double h_now = entropy(dist);
    const double alpha = cfg.backend.bayes.smoothing_alpha;

    auto entropy_with = [&](const SymptomId& s, bool present) {
        SymptomEvidence ev = state.evidence;
        (present ? ev.present : ev.absent).insert(s);
        return entropy(backend.assess(AssessRequest{ev, state.candidates, db, state.opening}).confidence);
    };

    std::optional<InquiryChoice> best;
    for (const auto& s : pool) {
        double h_after = 0.0;
        if (cfg.entropy_mode == EntropyMode::present_only) {
            h_after = entropy_with(s, true);
        } else {
            double p_yes = 0.0;
            for (const auto& [id, c] : dist.entries()) p_yes += c * belief::symptom_likelihood(db.at(id), s, alpha);
            p_yes = std::clamp(p_yes, 0.0, 1.0);
            h_after = p_yes * entropy_with(s, true) + (1.0 - p_yes) * entropy_with(s, false);
        }
        const double reduction = h_now - h_after;
        if (!best || reduction > best->reduction + kTieTolerance ||
            (std::abs(reduction - best->reduction) <= kTieTolerance && s < best->symptom))
            best = InquiryChoice{s, reduction};
    }
    return *best;
}

// ---- engine ---------------------------------------------------------------

Engine::Engine(const DiseaseDB& db, const RetrieverModel& model, BeliefBackend& backend, SessionConfig cfg)
    : db_(&db), model_(&model), backend_(&backend), cfg_(std::move(cfg)) {
    cfg_.validate();
    if (!model.bound_to(db)) throw DataError("retriever model fingerprint does not match the disease catalog");
}

StepOutcome Engine::step(const DialogueState& state, const PatientInput& input, const StepHooks& hooks) const {
    if (state.finished) throw Error("session already finished");

    DialogueState next = state;
    TraceRound round;
    round.round = state.round + 1;

    if (const auto* opening = std::get_if<Opening>(&input)) {
        if (state.pending) throw DataError("an answer to \"" + state.pending->str() + "\" is expected");
        round.abstracted_symptoms = abstract_symptoms(opening->text, *db_, &round.warnings);
        for (const auto& s : round.abstracted_symptoms) {
            next.evidence.absent.erase(s);
            next.evidence.present.insert(s);
            if (state.round == 0) next.opening.insert(s);
        }
    } else {
        const auto& answer = std::get<Answer>(input);
        if (!state.pending) throw DataError("no inquiry is awaiting an answer");
        const auto& s = *state.pending;
        (answer.present ? next.evidence.present : next.evidence.absent).insert(s);
        if (answer.present) round.abstracted_symptoms.insert(s);
        next.asked.push_back(s);
        next.pending.reset();
    }
    if (next.evidence.present.empty()) throw NoSymptomsError();

    if (state.round == 0 || cfg_.rerecall_each_round)
        next.candidates = retriever::recall_top_k(*model_, *db_, next.evidence.present, cfg_.k);

    const AssessRequest request{next.evidence, next.candidates, *db_, next.opening};
    auto assessment = backend_->assess(request);
    if (hooks.review) assessment = hooks.review(request, std::move(assessment));

    round.evidence = next.evidence;
    for (const auto& c : next.candidates.entries) {
        const auto& d = db_->at(c.disease);
        KnowledgeSnippet snip{d.id, d.name, d.overview, c.score, {}};
        for (const auto& e : d.symptom_profile) snip.symptoms.push_back(e.symptom.str());
        round.candidates.push_back(std::move(snip));
    }
    round.reasoning = std::move(assessment.reasoning);
    round.confidence = std::move(assessment.confidence);
    round.entropy = entropy(round.confidence);
    for (auto& w : assessment.warnings) round.warnings.push_back(std::move(w));

    const bool budget_left = next.inquiries() < static_cast<std::size_t>(cfg_.max_rounds);
    std::vector<SymptomId> pool;
    if (budget_left && round.confidence.argmax().second <= cfg_.tau) {
        pool = hooks.pool ? hooks.pool(next, round.confidence)
                          : candidate_symptom_pool(next, *db_, cfg_.candidate_pool_limit);
        if (pool.empty()) round.warnings.push_back("no informative question remains; diagnosing");
    }
    Decision decision;
    if (!budget_left || (pool.empty() && round.confidence.argmax().second <= cfg_.tau)) {
        const auto [disease, c] = round.confidence.argmax();
        decision = Diagnose{disease, c, !(c > cfg_.tau)};
    } else {
        decision = decide(round.confidence, cfg_.tau, [&] {
            const auto choice = select_inquiry(next, round.confidence, pool, *backend_, *db_, cfg_);
            return Inquire{choice.symptom, question_for(choice.symptom), choice.reduction};
        });
    }
    round.decision = decision;

    next.round = round.round;
    if (const auto* inq = std::get_if<Inquire>(&decision)) {
        next.pending = inq->symptom;
    } else {
        next.finished = true;
    }
    return StepOutcome{std::move(round), std::move(decision), std::move(next)};
}

// ---- serialization ----------------------------------------------------------

namespace {

json symptom_list(const SymptomSet& set) {
    json arr = json::array();
    for (const auto& s : set) arr.push_back(s.str());
    return arr;
}

json symptom_list(const std::vector<SymptomId>& v) {
    json arr = json::array();
    for (const auto& s : v) arr.push_back(s.str());
    return arr;
}

} // namespace

json to_json(const Decision& d) {
    if (const auto* inq = std::get_if<Inquire>(&d))
        return {{"kind", "inquire"}, {"symptom", inq->symptom.str()}, {"question", inq->question_text},
                {"reduction", inq->reduction}};
    const auto& dx = std::get<Diagnose>(d);
    return {{"kind", "diagnose"}, {"disease", dx.disease}, {"confidence", dx.confidence}, {"forced", dx.forced}};
}

json to_json(const TraceRound& r) {
    json candidates = json::array();
    for (const auto& c : r.candidates)
        candidates.push_back({{"disease", c.disease}, {"name", c.name}, {"overview", c.overview},
                              {"score", c.score}, {"symptoms", c.symptoms}});
    json structured = json::array();
    for (const auto& a : r.reasoning.structured)
        structured.push_back(
            {{"disease", a.disease}, {"matched", symptom_list(a.matched)}, {"contradicting", symptom_list(a.contradicting)}});
    json confidence = json::object();
    for (const auto& [id, c] : r.confidence.entries()) confidence[id] = c;
    return {{"round", r.round},
            {"abstracted_symptoms", symptom_list(r.abstracted_symptoms)},
            {"evidence", {{"present", symptom_list(r.evidence.present)}, {"absent", symptom_list(r.evidence.absent)}}},
            {"candidates", candidates},
            {"reasoning", {{"text", r.reasoning.text}, {"structured", structured}}},
            {"confidence", confidence},
            {"entropy", r.entropy},
            {"decision", to_json(r.decision)},
            {"warnings", r.warnings}};
}

namespace {

SymptomSet symptom_set_from(const json& arr) {
    SymptomSet out;
    for (const auto& s : arr) out.insert(SymptomId(s.get<std::string>()));
    return out;
}

std::vector<SymptomId> symptom_vec_from(const json& arr) {
    std::vector<SymptomId> out;
    for (const auto& s : arr) out.emplace_back(s.get<std::string>());
    return out;
}

} // namespace

Decision decision_from_json(const json& j) {
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "inquire")
        return Inquire{SymptomId(j.at("symptom").get<std::string>()), j.at("question").get<std::string>(),
                       j.at("reduction").get<double>()};
    if (kind == "diagnose")
        return Diagnose{j.at("disease").get<std::string>(), j.at("confidence").get<double>(), j.at("forced").get<bool>()};
    throw DataError("unknown decision kind \"" + kind + "\"");
}

TraceRound trace_round_from_json(const json& j) {
    TraceRound r;
    r.round = j.at("round").get<int>();
    r.abstracted_symptoms = symptom_set_from(j.at("abstracted_symptoms"));
    r.evidence.present = symptom_set_from(j.at("evidence").at("present"));
    r.evidence.absent = symptom_set_from(j.at("evidence").at("absent"));
    for (const auto& c : j.at("candidates"))
        r.candidates.push_back({c.at("disease").get<std::string>(), c.at("name").get<std::string>(),
                                c.at("overview").get<std::string>(), c.at("score").get<double>(),
                                c.at("symptoms").get<std::vector<std::string>>()});
    r.reasoning.text = j.at("reasoning").at("text").get<std::string>();
    for (const auto& a : j.at("reasoning").at("structured"))
        r.reasoning.structured.push_back({a.at("disease").get<std::string>(), symptom_vec_from(a.at("matched")),
                                          symptom_vec_from(a.at("contradicting"))});
    r.confidence = ConfidenceDistribution(j.at("confidence").get<std::map<std::string, double>>());
    r.entropy = j.at("entropy").get<double>();
    r.decision = decision_from_json(j.at("decision"));
    r.warnings = j.at("warnings").get<std::vector<std::string>>();
    return r;
}

void export_trace(const DiagnosticTrace& trace, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    for (const auto& r : trace.rounds) out << to_json(r).dump() << '\n';
    if (!out) throw DataError("write failed for " + path.string());
}

} // namespace cod::engine
