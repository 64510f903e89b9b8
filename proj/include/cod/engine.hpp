/**
 * @file engine.hpp
 * @brief The per-round diagnostic loop: symptom abstraction, candidate
 *        recall, confidence assessment, the threshold decision and
 *        entropy-driven inquiry selection.
 *
 * Each round produces a TraceRound. A round diagnoses when the top
 * confidence strictly exceeds tau and otherwise asks about the symptom whose
 * answer is expected to reduce the entropy of the confidence distribution
 * the most. Once max_rounds questions have been answered the next round
 * diagnoses the argmax regardless of tau and flags it as forced.
 */

#pragma once

#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "cod/belief.hpp"
#include "cod/knowledge.hpp"
#include "cod/retriever.hpp"

namespace cod::engine {

using belief::Assessment;
using belief::AssessRequest;
using belief::BeliefBackend;
using belief::ConfidenceDistribution;
using belief::ReasoningTrace;
using belief::SymptomEvidence;
using knowledge::DiseaseDB;
using knowledge::SymptomId;
using knowledge::SymptomSet;
using retriever::CandidateSet;
using retriever::RetrieverModel;

enum class EntropyMode {
    present_only, // H(C|s) with s assumed present
    expected,     // answer-weighted: P(yes) H(C|s present) + P(no) H(C|s absent)
};

std::string to_string(EntropyMode mode);
EntropyMode entropy_mode_from_string(std::string_view name);

struct SessionConfig {
    double tau = 0.5;
    int max_rounds = 5;
    std::size_t k = 5;
    belief::BackendConfig backend;
    bool rerecall_each_round = true;
    EntropyMode entropy_mode = EntropyMode::present_only;
    std::size_t candidate_pool_limit = 20;

    /// Throws ConfigError unless 0 < tau < 1, max_rounds >= 0, k >= 1.
    void validate() const;
};

struct Inquire {
    SymptomId symptom;
    std::string question_text;
    double reduction = 0.0;
    friend bool operator==(const Inquire&, const Inquire&) = default;
};

struct Diagnose {
    std::string disease;
    double confidence = 0.0;
    bool forced = false;
    friend bool operator==(const Diagnose&, const Diagnose&) = default;
};

using Decision = std::variant<Inquire, Diagnose>;

inline bool is_diagnosis(const Decision& d) { return std::holds_alternative<Diagnose>(d); }

std::string question_for(const SymptomId& s);

struct KnowledgeSnippet {
    std::string disease;
    std::string name;
    std::string overview;
    double score = 0.0;
    std::vector<std::string> symptoms;
    friend bool operator==(const KnowledgeSnippet&, const KnowledgeSnippet&) = default;
};

struct TraceRound {
    int round = 0;
    SymptomSet abstracted_symptoms;
    SymptomEvidence evidence; // evidence the confidence was computed from
    std::vector<KnowledgeSnippet> candidates;
    ReasoningTrace reasoning;
    ConfidenceDistribution confidence;
    double entropy = 0.0;
    Decision decision;
    std::vector<std::string> warnings;
};

struct DiagnosticTrace {
    std::vector<TraceRound> rounds;
};

struct DialogueState {
    SymptomEvidence evidence;
    SymptomSet opening;                 // symptoms from the first message
    CandidateSet candidates;
    std::vector<SymptomId> asked;       // answered inquiries, in order
    std::optional<SymptomId> pending;   // awaiting an answer
    int round = 0;
    bool finished = false;

    std::size_t inquiries() const noexcept { return asked.size(); }
};

/// Opening message: either `{"symptoms": [...]}` or free text.
struct Opening {
    std::string text;
    static Opening structured(const std::vector<std::string>& symptoms);
};

/// Reply to the pending inquiry.
struct Answer {
    bool present = false;
};

using PatientInput = std::variant<Opening, Answer>;

// ---- building blocks -----------------------------------------------------

/// Structured messages keep their vocabulary symptoms (others are dropped
/// with a warning); free text is scanned for the longest vocabulary phrase
/// at each word. Throws NoSymptomsError when nothing is recognized.
SymptomSet abstract_symptoms(const std::string& message, const DiseaseDB& db,
                             std::vector<std::string>* warnings = nullptr);

/// Natural-log entropy, 0 log 0 = 0.
double entropy(const ConfidenceDistribution& dist);

using InquiryChooser = std::function<Inquire()>;

/// Diagnose(argmax) iff c_max > tau, otherwise the chooser's inquiry.
Decision decide(const ConfidenceDistribution& dist, double tau, const InquiryChooser& choose_inquiry);

/// Union of candidate profile symptoms minus everything known or asked,
/// ordered by descending max profile weight (ties by token) and truncated.
/// An empty result means no informative question remains.
std::vector<SymptomId> candidate_symptom_pool(const DialogueState& state, const DiseaseDB& db, std::size_t limit);

struct InquiryChoice {
    SymptomId symptom;
    double reduction = 0.0;
};

/// argmax over `pool` of H(C) - H(C|s); ties by ascending token.
/// Throws DataError on an empty pool.
InquiryChoice select_inquiry(const DialogueState& state, const ConfidenceDistribution& dist,
                             const std::vector<SymptomId>& pool, BeliefBackend& backend, const DiseaseDB& db,
                             const SessionConfig& cfg);

// ---- the session step ----------------------------------------------------

struct StepOutcome {
    TraceRound round;
    Decision decision;
    DialogueState state;
};

/// Optional overrides used by training-data generation.
struct StepHooks {
    /// Replaces candidate_symptom_pool.
    std::function<std::vector<SymptomId>(const DialogueState&, const ConfidenceDistribution&)> pool;
    /// Inspects (and may replace or reject by throwing) each assessment.
    std::function<Assessment(const AssessRequest&, Assessment)> review;
};

class Engine {
public:
    Engine(const DiseaseDB& db, const RetrieverModel& model, BeliefBackend& backend, SessionConfig cfg);

    /// Runs one round. The input state is never modified; on error nothing
    /// changes.
    StepOutcome step(const DialogueState& state, const PatientInput& input, const StepHooks& hooks = {}) const;

    const SessionConfig& config() const noexcept { return cfg_; }
    const DiseaseDB& db() const noexcept { return *db_; }

private:
    const DiseaseDB* db_;
    const RetrieverModel* model_;
    BeliefBackend* backend_;
    SessionConfig cfg_;
};

// ---- serialization -------------------------------------------------------

nlohmann::json to_json(const Decision& d);
nlohmann::json to_json(const TraceRound& r);
Decision decision_from_json(const nlohmann::json& j);
TraceRound trace_round_from_json(const nlohmann::json& j);
void export_trace(const DiagnosticTrace& trace, const std::filesystem::path& path);

} // namespace cod::engine
