#include "cod/simeval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "cod/error.hpp"
#include "cod/rng.hpp"

namespace cod::simeval {

using nlohmann::json;

bool simulate_patient_answer(const CaseRecord& c, const SymptomId& symptom) {
    return c.explicit_symptoms.contains(symptom) || c.implicit_symptoms.contains(symptom);
}

SessionResult run_dialogue(const CaseRecord& c, const SessionConfig& cfg, const DiseaseDB& db,
                           const RetrieverModel& model, BeliefBackend& backend) {
    try {
        const engine::Engine eng(db, model, backend, cfg);
        std::vector<std::string> opening;
        for (const auto& s : c.explicit_symptoms) opening.push_back(s.str());

        SessionResult result;
        result.case_id = c.case_id;
        result.target = c.target;

        engine::DialogueState state;
        engine::PatientInput input = engine::Opening::structured(opening);
        while (true) {
            auto out = eng.step(state, input);
            result.per_round_entropy.push_back(out.round.entropy);
            result.trace.rounds.push_back(std::move(out.round));
            state = std::move(out.state);
            if (const auto* dx = std::get_if<engine::Diagnose>(&out.decision)) {
                result.diagnosed = dx->disease;
                result.correct = dx->disease == c.target;
                result.forced = dx->forced;
                result.final_confidence = dx->confidence;
                break;
            }
            const auto& inq = std::get<engine::Inquire>(out.decision);
            input = engine::Answer{simulate_patient_answer(c, inq.symptom)};
        }
        result.inquiries = state.inquiries();
        return result;
    } catch (const Error& e) {
        throw Error("case \"" + c.case_id + "\": " + e.what());
    }
}

double standard_error(const std::vector<double>& values) {
    if (values.size() < 2) return 0.0;
    const double n = static_cast<double>(values.size());
    const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    return std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
}

std::vector<SessionResult> run_sessions(const std::vector<CaseRecord>& cases, const SessionConfig& cfg,
                                        const DiseaseDB& db, const RetrieverModel& model, BeliefBackend& backend) {
    std::vector<SessionResult> results;
    results.reserve(cases.size());
    for (const auto& c : cases) results.push_back(run_dialogue(c, cfg, db, model, backend));
    return results;
}

EvalReport summarize(std::vector<SessionResult> results, const SessionConfig& cfg,
                     const std::vector<std::uint64_t>& seeds) {
    if (results.empty()) throw DataError("no sessions to summarize");
    if (seeds.empty()) throw ConfigError("at least one seed is required");
    std::sort(results.begin(), results.end(), [](const auto& a, const auto& b) { return a.case_id < b.case_id; });

    const double n = static_cast<double>(results.size());
    EvalReport report;
    for (const auto& r : results) {
        report.accuracy += r.correct ? 1.0 : 0.0;
        report.mean_inquiries += static_cast<double>(r.inquiries);
        report.diagnosis_rate += r.forced ? 0.0 : 1.0;
    }
    report.accuracy /= n;
    report.mean_inquiries /= n;
    report.diagnosis_rate /= n;

    const auto max_rounds = static_cast<std::size_t>(cfg.max_rounds);
    for (std::size_t round = 0; round < max_rounds; ++round) {
        double sum = 0.0;
        std::size_t active = 0;
        for (const auto& r : results) {
            if (r.per_round_entropy.size() > round) {
                sum += r.per_round_entropy[round];
                ++active;
            }
        }
        if (active == 0) break;
        report.entropy_by_round.push_back(sum / static_cast<double>(active));
    }

    std::vector<double> seed_a, seed_n;
    for (auto seed : seeds) {
        Rng rng(seed);
        SeedRow row{seed, 0.0, 0.0};
        for (std::size_t i = 0; i < results.size(); ++i) {
            const auto& r = results[rng.below(results.size())];
            row.accuracy += r.correct ? 1.0 : 0.0;
            row.mean_inquiries += static_cast<double>(r.inquiries);
        }
        row.accuracy /= n;
        row.mean_inquiries /= n;
        seed_a.push_back(row.accuracy);
        seed_n.push_back(row.mean_inquiries);
        report.per_seed.push_back(row);
    }
    report.stderr_a = standard_error(seed_a);
    report.stderr_n = standard_error(seed_n);
    return report;
}

EvalReport run_benchmark(const std::vector<CaseRecord>& cases, const SessionConfig& cfg,
                         const std::vector<std::uint64_t>& seeds, const DiseaseDB& db, const RetrieverModel& model,
                         BeliefBackend& backend) {
    if (cases.empty()) throw DataError("no benchmark cases");
    if (seeds.empty()) throw ConfigError("at least one seed is required");
    return summarize(run_sessions(cases, cfg, db, model, backend), cfg, seeds);
}

namespace {

void require_ascending(const std::vector<double>& taus) {
    if (taus.empty()) throw ConfigError("no thresholds given");
    if (!std::is_sorted(taus.begin(), taus.end())) throw ConfigError("thresholds must be sorted ascending");
}

} // namespace

std::vector<SweepRow> sweep_tau(const std::vector<CaseRecord>& cases, const SessionConfig& cfg,
                                const std::vector<double>& taus, const std::vector<std::uint64_t>& seeds,
                                const DiseaseDB& db, const RetrieverModel& model, BeliefBackend& backend) {
    require_ascending(taus);
    std::vector<SweepRow> rows;
    for (double tau : taus) {
        auto c = cfg;
        c.tau = tau;
        rows.push_back({tau, run_benchmark(cases, c, seeds, db, model, backend)});
    }
    return rows;
}

std::vector<DirectDiagnosis> diagnose_without_inquiry(const std::vector<CaseRecord>& cases, const SessionConfig& cfg,
                                                      const DiseaseDB& db, const RetrieverModel& model,
                                                      BeliefBackend& backend) {
    std::vector<DirectDiagnosis> out;
    out.reserve(cases.size());
    for (const auto& c : cases) {
        belief::SymptomEvidence ev{c.all_symptoms(), {}};
        const auto candidates = retriever::recall_top_k(model, db, ev.present, cfg.k);
        const auto a = backend.assess(belief::AssessRequest{ev, candidates, db, c.explicit_symptoms});
        const auto [disease, c_max] = a.confidence.argmax();
        out.push_back({c.case_id, c_max, disease == c.target});
    }
    return out;
}

std::vector<CurvePoint> curve_from(const std::vector<DirectDiagnosis>& direct, const std::vector<double>& taus) {
    require_ascending(taus);
    std::vector<CurvePoint> curve;
    for (double tau : taus) {
        std::size_t above = 0, correct = 0;
        for (const auto& d : direct) {
            if (d.c_max > tau) {
                ++above;
                if (d.correct) ++correct;
            }
        }
        CurvePoint p{tau, direct.empty() ? 0.0 : static_cast<double>(above) / static_cast<double>(direct.size()), {}};
        if (above > 0) p.accuracy = static_cast<double>(correct) / static_cast<double>(above);
        curve.push_back(p);
    }
    return curve;
}

std::vector<CurvePoint> threshold_curve(const std::vector<CaseRecord>& cases, const SessionConfig& cfg,
                                        const std::vector<double>& taus, const DiseaseDB& db,
                                        const RetrieverModel& model, BeliefBackend& backend) {
    require_ascending(taus);
    return curve_from(diagnose_without_inquiry(cases, cfg, db, model, backend), taus);
}

json to_json(const EvalReport& r) {
    json per_seed = json::array();
    for (const auto& row : r.per_seed)
        per_seed.push_back({{"seed", row.seed}, {"accuracy", row.accuracy}, {"mean_inquiries", row.mean_inquiries}});
    return {{"accuracy", r.accuracy},
            {"mean_inquiries", r.mean_inquiries},
            {"diagnosis_rate", r.diagnosis_rate},
            {"entropy_by_round", r.entropy_by_round},
            {"per_seed", per_seed},
            {"stderr_a", r.stderr_a},
            {"stderr_n", r.stderr_n}};
}

json to_json(const SessionResult& r) {
    return {{"case_id", r.case_id},
            {"target", r.target},
            {"diagnosed", r.diagnosed},
            {"correct", r.correct},
            {"inquiries", r.inquiries},
            {"forced", r.forced},
            {"per_round_entropy", r.per_round_entropy},
            {"final_confidence", r.final_confidence}};
}

} // namespace cod::simeval
