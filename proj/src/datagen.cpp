#include "cod/datagen.hpp"

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cod/error.hpp"
#include "cod/simeval.hpp"

namespace cod::datagen {

using nlohmann::json;

void DatagenConfig::validate() const {
    session.validate();
    if (!(verify_tau > 0.0 && verify_tau < 1.0)) throw ConfigError("verify_tau must lie in (0,1)");
    if (rethink_limit < 0) throw ConfigError("rethink_limit must be non-negative");
}

std::optional<SymptomId> generated_symptom(const engine::DialogueState& state,
                                           const belief::ConfidenceDistribution& dist, const DiseaseDB& db) {
    const auto& leader = db.at(dist.argmax().first);
    std::optional<knowledge::ProfileEntry> best;
    for (const auto& e : leader.symptom_profile) {
        if (state.evidence.known(e.symptom)) continue;
        if (state.pending && *state.pending == e.symptom) continue;
        if (std::find(state.asked.begin(), state.asked.end(), e.symptom) != state.asked.end()) continue;
        if (!best || e.weight > best->weight || (e.weight == best->weight && e.symptom < best->symptom)) best = e;
    }
    if (!best) return std::nullopt;
    return best->symptom;
}

std::vector<SymptomId> training_inquiry_pool(const CaseRecord& c, const engine::DialogueState& state,
                                             const belief::ConfidenceDistribution& dist, const DiseaseDB& db) {
    knowledge::SymptomSet pool;
    for (const auto& s : c.implicit_symptoms) {
        if (state.evidence.known(s)) continue;
        if (std::find(state.asked.begin(), state.asked.end(), s) != state.asked.end()) continue;
        pool.insert(s);
    }
    if (auto gen = generated_symptom(state, dist, db)) pool.insert(*gen);
    return {pool.begin(), pool.end()};
}

namespace {

struct Discard {
    std::string reason;
    bool during_review = true;
};

std::string join(const knowledge::SymptomSet& set) {
    std::string out;
    std::size_t i = 0;
    for (const auto& s : set) {
        if (i > 0) out += (i + 1 == set.size()) ? " and " : ", ";
        out += s.str();
        ++i;
    }
    return out;
}

std::string agent_text(const engine::Decision& d, const DiseaseDB& db) {
    if (const auto* inq = std::get_if<engine::Inquire>(&d)) return inq->question_text;
    const auto& dx = std::get<engine::Diagnose>(d);
    const auto& rec = db.at(dx.disease);
    std::string text = "The most likely diagnosis is " + rec.name + ".";
    if (!rec.treatment.empty()) text += " Recommended treatment: " + rec.treatment;
    return text;
}

} // namespace

CoDRecord build_cod_record(const CaseRecord& c, const DatagenConfig& cfg, const DiseaseDB& db,
                           const RetrieverModel& model, BeliefBackend& backend) {
    cfg.validate();
    knowledge::validate_case(c, db);

    CoDRecord record;
    record.case_id = c.case_id;
    record.target = c.target;

    RoundVerification current;
    engine::StepHooks hooks;
    hooks.pool = [&](const engine::DialogueState& state, const belief::ConfidenceDistribution& dist) {
        return training_inquiry_pool(c, state, dist, db);
    };
    hooks.review = [&](const belief::AssessRequest& request, belief::Assessment a) {
        current = RoundVerification{};
        while (belief::verify_against_target(a.confidence, c.target, cfg.verify_tau) == belief::Verification::erroneous) {
            if (current.rethinks >= cfg.rethink_limit)
                throw Discard{"confidence verification failed after " + std::to_string(current.rethinks) + " rethinks"};
            auto revised = backend.rethink(request, a);
            if (!revised) throw Discard{"confidence verification failed; backend cannot rethink"};
            a = std::move(*revised);
            ++current.rethinks;
            current.status = RoundStatus::rethought;
        }
        return a;
    };

    const engine::Engine eng(db, model, backend, cfg.session);
    engine::DialogueState state;
    std::vector<std::string> opening;
    for (const auto& s : c.explicit_symptoms) opening.push_back(s.str());
    engine::PatientInput input = engine::Opening::structured(opening);
    record.turns.push_back({"patient", "I have " + join(c.explicit_symptoms) + ".", std::nullopt});
    try {
        while (true) {
            auto out = eng.step(state, input, hooks);
            record.verification.push_back(current);
            record.turns.push_back({"agent", agent_text(out.decision, db), out.round});
            state = std::move(out.state);
            if (const auto* dx = std::get_if<engine::Diagnose>(&out.decision)) {
                record.final_diagnosis = dx->disease;
                if (dx->disease != c.target) throw Discard{"final diagnosis \"" + dx->disease + "\" is not the target", false};
                break;
            }
            const auto& s = std::get<engine::Inquire>(out.decision).symptom;
            const bool yes = simeval::simulate_patient_answer(c, s);
            record.turns.push_back({"patient", yes ? "Yes, I have " + s.str() + "." : "No, I don't have " + s.str() + ".",
                                    std::nullopt});
            input = engine::Answer{yes};
        }
    } catch (const Discard& d) {
        record.status = RecordStatus::discarded;
        record.discard_reason = d.reason;
        if (d.during_review) record.verification.push_back({RoundStatus::discarded, current.rethinks});
    }
    return record;
}

bool reverify(const CoDRecord& record, double tau) {
    if (record.status != RecordStatus::retained) return false;
    if (record.final_diagnosis != record.target) return false;
    for (const auto& t : record.turns) {
        if (!t.round) continue;
        if (belief::verify_against_target(t.round->confidence, record.target, tau) == belief::Verification::erroneous)
            return false;
    }
    return true;
}

// ---- serialization --------------------------------------------------------

namespace {

std::string to_string(RoundStatus s) {
    switch (s) {
    case RoundStatus::valid: return "valid";
    case RoundStatus::rethought: return "rethought";
    case RoundStatus::discarded: return "discarded";
    }
    return "valid";
}

RoundStatus round_status_from(const std::string& s) {
    if (s == "valid") return RoundStatus::valid;
    if (s == "rethought") return RoundStatus::rethought;
    if (s == "discarded") return RoundStatus::discarded;
    throw DataError("unknown verification status \"" + s + "\"");
}

} // namespace

json to_json(const CoDRecord& r) {
    json turns = json::array();
    for (const auto& t : r.turns) {
        json jt = {{"role", t.role}, {"text", t.text}};
        if (t.round) jt["round"] = engine::to_json(*t.round);
        turns.push_back(std::move(jt));
    }
    json verification = json::array();
    for (const auto& v : r.verification) verification.push_back({{"status", to_string(v.status)}, {"rethinks", v.rethinks}});
    json j = {{"case_id", r.case_id},
              {"target", r.target},
              {"turns", turns},
              {"verification", verification},
              {"final_diagnosis", r.final_diagnosis},
              {"status", r.status == RecordStatus::retained ? "retained" : "discarded"}};
    if (!r.discard_reason.empty()) j["discard_reason"] = r.discard_reason;
    return j;
}

CoDRecord record_from_json(const json& j) {
    CoDRecord r;
    r.case_id = j.at("case_id").get<std::string>();
    r.target = j.at("target").get<std::string>();
    for (const auto& jt : j.at("turns")) {
        Turn t{jt.at("role").get<std::string>(), jt.at("text").get<std::string>(), std::nullopt};
        if (jt.contains("round")) t.round = engine::trace_round_from_json(jt.at("round"));
        r.turns.push_back(std::move(t));
    }
    for (const auto& jv : j.at("verification"))
        r.verification.push_back({round_status_from(jv.at("status").get<std::string>()), jv.at("rethinks").get<int>()});
    r.final_diagnosis = j.at("final_diagnosis").get<std::string>();
    r.status = j.at("status").get<std::string>() == "retained" ? RecordStatus::retained : RecordStatus::discarded;
    r.discard_reason = j.value("discard_reason", "");
    return r;
}

std::size_t export_training_set(const std::vector<CoDRecord>& records, const std::filesystem::path& path,
                                double verify_tau) {
    for (const auto& r : records) {
        if (r.status != RecordStatus::retained)
            throw DataError("record \"" + r.case_id + "\" was discarded and cannot be exported");
        if (!reverify(r, verify_tau)) throw DataError("record \"" + r.case_id + "\" fails re-verification");
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    for (const auto& r : records) out << to_json(r).dump() << '\n';
    if (!out) throw DataError("write failed for " + path.string());
    return records.size();
}

std::vector<CoDRecord> load_training_set(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read " + path.string());
    std::vector<CoDRecord> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            out.push_back(record_from_json(json::parse(line)));
        } catch (const json::exception& e) {
            throw DataError("line " + std::to_string(line_no) + ": malformed training record: " + e.what());
        }
    }
    return out;
}

} // namespace cod::datagen
