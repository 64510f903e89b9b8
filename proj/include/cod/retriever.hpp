/**
 * @file retriever.hpp
 * @brief Dual-encoder disease retriever: free embedding tables for symptoms
 *        and diseases, cosine top-k recall, softmax contrastive training and
 *        ranking metrics.
 *
 * A symptom set is encoded as the L2-normalized mean of its member vectors.
 * Training minimizes, per case,
 *
 *     -log( exp(cos(q, e_target)) / sum_d exp(cos(q, e_d)) )
 *
 * with the denominator over the whole catalog.
 */

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "cod/knowledge.hpp"

namespace cod::retriever {

using knowledge::CaseRecord;
using knowledge::DiseaseDB;
using knowledge::SymptomId;
using knowledge::SymptomSet;

/// FNV-1a over vocabulary tokens and disease ids in catalog order.
std::uint64_t vocab_fingerprint(const DiseaseDB& db);

class RetrieverModel {
public:
    RetrieverModel() = default;
    /// Zero-initialized tables sized for `db`.
    RetrieverModel(const DiseaseDB& db, std::size_t dim);
    RetrieverModel(std::size_t dim, std::size_t n_symptoms, std::size_t n_diseases, std::uint64_t fingerprint,
                   std::vector<float> symptom_vectors, std::vector<float> disease_vectors);

    std::size_t dim() const noexcept { return dim_; }
    std::size_t n_symptoms() const noexcept { return n_symptoms_; }
    std::size_t n_diseases() const noexcept { return n_diseases_; }
    std::uint64_t fingerprint() const noexcept { return fingerprint_; }

    std::span<const float> symptom_vector(std::size_t i) const;
    std::span<const float> disease_vector(std::size_t i) const;
    std::span<float> symptom_vector(std::size_t i);
    std::span<float> disease_vector(std::size_t i);

    const std::vector<float>& symptom_table() const noexcept { return symptoms_; }
    const std::vector<float>& disease_table() const noexcept { return diseases_; }

    bool bound_to(const DiseaseDB& db) const { return fingerprint_ == vocab_fingerprint(db); }

    friend bool operator==(const RetrieverModel&, const RetrieverModel&) = default;

private:
    std::size_t dim_ = 0;
    std::size_t n_symptoms_ = 0;
    std::size_t n_diseases_ = 0;
    std::uint64_t fingerprint_ = 0;
    std::vector<float> symptoms_;
    std::vector<float> diseases_;
};

struct CandidateEntry {
    std::string disease;
    double score = 0.0;
    friend bool operator==(const CandidateEntry&, const CandidateEntry&) = default;
};

struct CandidateSet {
    std::vector<CandidateEntry> entries; // descending score, ties by ascending id
    std::size_t k = 0;

    bool contains(std::string_view id) const noexcept;
    std::vector<std::string> ids() const;
    friend bool operator==(const CandidateSet&, const CandidateSet&) = default;
};

struct RetrieverEvalReport {
    double mrr_at_100 = 0.0;
    std::map<std::size_t, double> recall_at; // k -> ratio
};

inline constexpr std::size_t kRecallCutoffs[] = {3, 5, 10, 30, 50, 100};

/// Normalized mean of the member symptom vectors. Symptoms outside the
/// vocabulary are dropped with a warning; throws NoSymptomsError if none remain.
std::vector<double> encode_symptoms(const RetrieverModel& model, const DiseaseDB& db, const SymptomSet& symptoms);

/// Exact top-k by cosine similarity. Throws DataError on fingerprint mismatch.
CandidateSet recall_top_k(const RetrieverModel& model, const DiseaseDB& db, const SymptomSet& symptoms, std::size_t k);

/// Full-catalog scores in catalog order.
std::vector<double> score_all(const RetrieverModel& model, const DiseaseDB& db, const SymptomSet& symptoms);

struct TrainParams {
    std::size_t dim = 64;
    std::size_t epochs = 200;
    double learning_rate = 0.05;
    std::uint64_t seed = 1;
    double init_scale = 0.1;
};

struct TrainResult {
    RetrieverModel model;
    double initial_loss = 0.0;
    double final_loss = 0.0;
    std::vector<double> loss_history; // mean loss before each epoch's update, then final
};

/// Seeded small-random initialization used by train_retriever.
RetrieverModel init_model(const DiseaseDB& db, std::size_t dim, std::uint64_t seed, double scale = 0.1);

/// Full-batch gradient descent on the mean contrastive loss.
TrainResult train_retriever(const DiseaseDB& db, const std::vector<CaseRecord>& cases, const TrainParams& hp);

RetrieverEvalReport eval_retriever(const RetrieverModel& model, const DiseaseDB& db, const std::vector<CaseRecord>& cases);

// ---- loss surface, exposed for gradient checks ---------------------------

/// A training example reduced to vocabulary indices.
struct EncodedCase {
    std::vector<std::size_t> symptoms;
    std::size_t target = 0;
};

std::vector<EncodedCase> encode_cases(const DiseaseDB& db, const std::vector<CaseRecord>& cases);

/// Mean contrastive loss over `cases` for parameters laid out as
/// [symptom table | disease table], row-major with `dim` columns. When
/// `grad` is non-null it receives the analytic gradient (same layout).
double contrastive_loss(std::span<const double> params, std::size_t dim, std::size_t n_symptoms,
                        std::size_t n_diseases, const std::vector<EncodedCase>& cases, std::vector<double>* grad);

// ---- persistence ---------------------------------------------------------

/// Binary layout (little-endian): "CODR", u32 version, u32 dim,
/// u32 n_symptoms, u32 n_diseases, u64 fingerprint, then f32 symptom rows
/// followed by f32 disease rows in catalog order.
void save_model(const RetrieverModel& model, const std::filesystem::path& path);
RetrieverModel load_model(const std::filesystem::path& path);
std::string serialize_model(const RetrieverModel& model);
RetrieverModel deserialize_model(std::string_view bytes);

} // namespace cod::retriever
