/**
 * @file belief.hpp
 * @brief Confidence distributions over candidate diseases and the backends
 *        that produce them.
 *
 * Two backends share one interface: a deterministic naive-Bayes posterior
 * over the candidate set, and an adapter for an external language model
 * (see llm_backend.hpp). Every distribution leaving this module is
 * restricted to the candidates, non-negative, and sums to one.
 */

#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cod/knowledge.hpp"
#include "cod/retriever.hpp"

namespace cod::belief {

using knowledge::DiseaseDB;
using knowledge::DiseaseRecord;
using knowledge::SymptomId;
using knowledge::SymptomSet;
using retriever::CandidateSet;

/// Accumulated answers: symptoms confirmed present and symptoms denied.
struct SymptomEvidence {
    SymptomSet present;
    SymptomSet absent;

    /// Throws DataError if the two sets intersect.
    void validate() const;
    bool known(const SymptomId& s) const { return present.contains(s) || absent.contains(s); }
    friend bool operator==(const SymptomEvidence&, const SymptomEvidence&) = default;
};

class ConfidenceDistribution {
public:
    ConfidenceDistribution() = default;
    /// Takes values as-is; use validate_distribution for untrusted input.
    explicit ConfidenceDistribution(std::map<std::string, double> entries) : entries_(std::move(entries)) {}

    static ConfidenceDistribution uniform(const std::vector<std::string>& ids);

    const std::map<std::string, double>& entries() const noexcept { return entries_; }
    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }
    double at(const std::string& id) const;
    double get(const std::string& id) const noexcept; // 0 when absent
    bool contains(const std::string& id) const noexcept { return entries_.contains(id); }

    /// Highest confidence; ties go to the lexicographically smallest id.
    std::pair<std::string, double> argmax() const;
    double sum() const noexcept;

    friend bool operator==(const ConfidenceDistribution&, const ConfidenceDistribution&) = default;

private:
    std::map<std::string, double> entries_;
};

struct DiseaseAnalysis {
    std::string disease;
    std::vector<SymptomId> matched;       // known-present symptoms in the profile
    std::vector<SymptomId> contradicting; // present but off-profile, or in-profile but denied
    friend bool operator==(const DiseaseAnalysis&, const DiseaseAnalysis&) = default;
};

struct ReasoningTrace {
    std::string text;
    std::vector<DiseaseAnalysis> structured;
    friend bool operator==(const ReasoningTrace&, const ReasoningTrace&) = default;
};

/// Per-candidate symptom bookkeeping derived from the catalog.
std::vector<DiseaseAnalysis> analyze_candidates(const SymptomEvidence& evidence, const CandidateSet& candidates,
                                                const DiseaseDB& db);

enum class BackendKind { bayes, llm };

struct BayesSettings {
    double smoothing_alpha = 0.01;
    bool absent_penalty = true;
};

struct LlmSettings {
    std::string endpoint;
    std::string model;
    std::string template_id = "reasoning";
    std::string api_key;
    std::filesystem::path prompt_dir; // empty: built-in templates
    std::chrono::milliseconds timeout{30000};
    int max_retries = 2;
    std::chrono::milliseconds backoff{250}; // doubled after each failed attempt
};

struct BackendConfig {
    BackendKind kind = BackendKind::bayes;
    BayesSettings bayes;
    LlmSettings llm;

    /// Throws ConfigError for out-of-range settings of the active kind.
    void validate() const;
};

std::string to_string(BackendKind kind);
BackendKind backend_kind_from_string(std::string_view name);

struct Assessment {
    ReasoningTrace reasoning;
    ConfidenceDistribution confidence;
    std::vector<std::string> warnings;
    std::string transcript; // prompt and reply exchanged with a remote backend, if any
};

struct AssessRequest {
    const SymptomEvidence& evidence;
    const CandidateSet& candidates;
    const DiseaseDB& db;
    SymptomSet opening_symptoms; // the patient's self-reported complaints
};

class BeliefBackend {
public:
    virtual ~BeliefBackend() = default;

    virtual Assessment assess(const AssessRequest& request) = 0;

    /// Regenerate after `rejected` failed verification. Backends that cannot
    /// change their answer return nullopt.
    virtual std::optional<Assessment> rethink(const AssessRequest& request, const Assessment& rejected) {
        (void)request;
        (void)rejected;
        return std::nullopt;
    }

    virtual BackendKind kind() const noexcept = 0;
};

/// p(s|d) = (w(s,d) * n_d + alpha) / (n_d + 2 * alpha), with w = 0 off-profile
/// and n_d the profile size.
double symptom_likelihood(const DiseaseRecord& disease, const SymptomId& s, double alpha);

class BayesBackend final : public BeliefBackend {
public:
    explicit BayesBackend(BayesSettings settings = {});

    /// Uniform-prior posterior over `ids`, renormalized over those ids only.
    std::map<std::string, double> posterior(const SymptomEvidence& evidence, const std::vector<std::string>& ids,
                                            const DiseaseDB& db) const;

    Assessment assess(const AssessRequest& request) override;
    BackendKind kind() const noexcept override { return BackendKind::bayes; }
    const BayesSettings& settings() const noexcept { return settings_; }

private:
    BayesSettings settings_;
};

/// Builds the backend named by `config` (LLM transport over HTTP).
std::unique_ptr<BeliefBackend> make_backend(const BackendConfig& config);

Assessment assess_confidence(const BackendConfig& config, const SymptomEvidence& evidence,
                             const CandidateSet& candidates, const DiseaseDB& db);

/// Restricts `raw` to the candidate ids (extraneous keys dropped, missing
/// ones zero-filled) and renormalizes. A zero total yields the uniform
/// distribution. Negative or non-finite values throw DataError. Repairs
/// are reported through `warnings` when given.
ConfidenceDistribution validate_distribution(const std::map<std::string, double>& raw, const CandidateSet& candidates,
                                             std::vector<std::string>* warnings = nullptr);

enum class Verification { valid, erroneous };

/// Erroneous iff some non-target candidate has confidence >= tau.
Verification verify_against_target(const ConfidenceDistribution& dist, const std::string& target, double tau);

} // namespace cod::belief
