/**
 * @file datagen.hpp
 * @brief Builds annotated diagnostic dialogues from synthetic cases for
 *        model training.
 *
 * Every confidence assessment is checked against the case's target: a round
 * is erroneous when any other candidate reaches the verification threshold.
 * Backends able to reconsider (the language-model adapter) are asked to
 * rethink up to a limit; otherwise the record is discarded. Inquiries draw
 * from the case's remaining implicit symptoms plus one generated symptom,
 * the top-weight unasked symptom of the current leading disease.
 */

#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "cod/engine.hpp"

namespace cod::datagen {

using engine::SessionConfig;
using engine::TraceRound;
using knowledge::CaseRecord;
using knowledge::DiseaseDB;
using knowledge::SymptomId;
using retriever::RetrieverModel;
using belief::BeliefBackend;

struct Turn {
    std::string role; // "patient" | "agent"
    std::string text;
    std::optional<TraceRound> round; // agent turns only
};

enum class RoundStatus { valid, rethought, discarded };

struct RoundVerification {
    RoundStatus status = RoundStatus::valid;
    int rethinks = 0;
};

enum class RecordStatus { retained, discarded };

struct CoDRecord {
    std::string case_id;
    std::string target;
    std::vector<Turn> turns;
    std::vector<RoundVerification> verification;
    std::string final_diagnosis;
    RecordStatus status = RecordStatus::retained;
    std::string discard_reason;
};

struct DatagenConfig {
    SessionConfig session;
    double verify_tau = 0.5;
    int rethink_limit = 3;

    void validate() const;
};

/// Training-time inquiry pool: implicit symptoms not yet asked or known,
/// plus the generated symptom (if any), ordered by token.
std::vector<SymptomId> training_inquiry_pool(const CaseRecord& c, const engine::DialogueState& state,
                                             const belief::ConfidenceDistribution& dist, const DiseaseDB& db);

/// Highest-weight profile symptom of the leading disease that has not been
/// asked or answered; ties by token.
std::optional<SymptomId> generated_symptom(const engine::DialogueState& state,
                                           const belief::ConfidenceDistribution& dist, const DiseaseDB& db);

CoDRecord build_cod_record(const CaseRecord& c, const DatagenConfig& cfg, const DiseaseDB& db,
                           const RetrieverModel& model, BeliefBackend& backend);

/// True when no agent round assigns a non-target candidate confidence >= tau
/// and the record ends with the target diagnosis.
bool reverify(const CoDRecord& record, double tau);

nlohmann::json to_json(const CoDRecord& r);
CoDRecord record_from_json(const nlohmann::json& j);

/// Writes retained records as JSONL; throws DataError if any record is
/// discarded or fails re-verification.
std::size_t export_training_set(const std::vector<CoDRecord>& records, const std::filesystem::path& path,
                                double verify_tau);
std::vector<CoDRecord> load_training_set(const std::filesystem::path& path);

} // namespace cod::datagen
