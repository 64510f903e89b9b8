/**
 * @file simeval.hpp
 * @brief Simulated patients and the benchmark runner: accuracy, inquiry
 *        counts, tau sweeps, entropy by round and confidence-threshold curves.
 */

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "cod/engine.hpp"

namespace cod::simeval {

using engine::DiagnosticTrace;
using engine::SessionConfig;
using knowledge::CaseRecord;
using knowledge::DiseaseDB;
using knowledge::SymptomId;
using retriever::RetrieverModel;
using belief::BeliefBackend;

/// Yes iff the symptom belongs to the case's explicit or implicit set.
bool simulate_patient_answer(const CaseRecord& c, const SymptomId& symptom);

struct SessionResult {
    std::string case_id;
    std::string target;
    std::string diagnosed;
    bool correct = false;
    std::size_t inquiries = 0;
    bool forced = false;
    std::vector<double> per_round_entropy;
    double final_confidence = 0.0;
    DiagnosticTrace trace;
};

/// Opens with the explicit symptoms and answers every inquiry from the
/// case until the engine diagnoses. Errors are rethrown with the case id.
SessionResult run_dialogue(const CaseRecord& c, const SessionConfig& cfg, const DiseaseDB& db,
                           const RetrieverModel& model, BeliefBackend& backend);

struct SeedRow {
    std::uint64_t seed = 0;
    double accuracy = 0.0;
    double mean_inquiries = 0.0;
};

struct EvalReport {
    double accuracy = 0.0;
    double mean_inquiries = 0.0;
    double diagnosis_rate = 0.0; // sessions ending in an unforced diagnosis
    std::vector<double> entropy_by_round;
    std::vector<SeedRow> per_seed;
    double stderr_a = 0.0;
    double stderr_n = 0.0;
};

/// Sample standard deviation of `values` divided by sqrt(size); 0 for a
/// single value.
double standard_error(const std::vector<double>& values);

/// Aggregates finished sessions. Each seed draws a bootstrap replicate of
/// the session results (sorted by case id); the replicate means give the
/// per-seed rows and the standard errors. Entropy by round averages the
/// sessions still active in that round, for rounds 1..max_rounds.
EvalReport summarize(std::vector<SessionResult> results, const SessionConfig& cfg,
                     const std::vector<std::uint64_t>& seeds);

std::vector<SessionResult> run_sessions(const std::vector<CaseRecord>& cases, const SessionConfig& cfg,
                                        const DiseaseDB& db, const RetrieverModel& model, BeliefBackend& backend);

EvalReport run_benchmark(const std::vector<CaseRecord>& cases, const SessionConfig& cfg,
                         const std::vector<std::uint64_t>& seeds, const DiseaseDB& db, const RetrieverModel& model,
                         BeliefBackend& backend);

struct SweepRow {
    double tau = 0.0;
    EvalReport report;
};

/// One benchmark per tau, everything else fixed. `taus` must be ascending.
std::vector<SweepRow> sweep_tau(const std::vector<CaseRecord>& cases, const SessionConfig& cfg,
                                const std::vector<double>& taus, const std::vector<std::uint64_t>& seeds,
                                const DiseaseDB& db, const RetrieverModel& model, BeliefBackend& backend);

struct CurvePoint {
    double tau = 0.0;
    double rate = 0.0;                 // fraction of cases with c_max > tau
    std::optional<double> accuracy;    // accuracy among those; absent when rate is 0
};

/// Top confidence and correctness of one case with every symptom known and
/// no inquiry.
struct DirectDiagnosis {
    std::string case_id;
    double c_max = 0.0;
    bool correct = false;
};

std::vector<DirectDiagnosis> diagnose_without_inquiry(const std::vector<CaseRecord>& cases, const SessionConfig& cfg,
                                                      const DiseaseDB& db, const RetrieverModel& model,
                                                      BeliefBackend& backend);

std::vector<CurvePoint> curve_from(const std::vector<DirectDiagnosis>& direct, const std::vector<double>& taus);

/// `taus` must be ascending; tau = 0 is allowed here.
std::vector<CurvePoint> threshold_curve(const std::vector<CaseRecord>& cases, const SessionConfig& cfg,
                                        const std::vector<double>& taus, const DiseaseDB& db,
                                        const RetrieverModel& model, BeliefBackend& backend);

nlohmann::json to_json(const EvalReport& r);
nlohmann::json to_json(const SessionResult& r);

} // namespace cod::simeval
