#include "cod/retriever.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <spdlog/spdlog.h>

#include "cod/error.hpp"
#include "cod/rng.hpp"

namespace cod::retriever {

namespace {

constexpr double kNormFloor = 1e-12;

template <typename T>
double dot(std::span<const T> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
    return s;
}

template <typename T>
double norm(std::span<const T> a) {
    double s = 0.0;
    for (auto x : a) s += static_cast<double>(x) * static_cast<double>(x);
    return std::sqrt(s);
}

bool ranks_before(const CandidateEntry& a, const CandidateEntry& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.disease < b.disease;
}

} // namespace

std::uint64_t vocab_fingerprint(const DiseaseDB& db) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](std::string_view s) {
        for (unsigned char c : s) {
            h ^= c;
            h *= 0x100000001b3ULL;
        }
        h ^= 0xff; // separator
        h *= 0x100000001b3ULL;
    };
    for (const auto& s : db.symptom_vocab()) mix(s.str());
    mix("\x01");
    for (const auto& d : db.diseases()) mix(d.id);
    return h;
}

// ---- model ----------------------------------------------------------------

RetrieverModel::RetrieverModel(const DiseaseDB& db, std::size_t dim)
    : dim_(dim),
      n_symptoms_(db.symptom_vocab().size()),
      n_diseases_(db.size()),
      fingerprint_(vocab_fingerprint(db)),
      symptoms_(n_symptoms_ * dim, 0.0f),
      diseases_(n_diseases_ * dim, 0.0f) {
    if (dim == 0) throw ConfigError("embedding dimension must be positive");
}

RetrieverModel::RetrieverModel(std::size_t dim, std::size_t n_symptoms, std::size_t n_diseases,
                               std::uint64_t fingerprint, std::vector<float> symptom_vectors,
                               std::vector<float> disease_vectors)
    : dim_(dim),
      n_symptoms_(n_symptoms),
      n_diseases_(n_diseases),
      fingerprint_(fingerprint),
      symptoms_(std::move(symptom_vectors)),
      diseases_(std::move(disease_vectors)) {
    if (dim == 0) throw ConfigError("embedding dimension must be positive");
    if (symptoms_.size() != n_symptoms * dim || diseases_.size() != n_diseases * dim)
        throw DataError("embedding table size does not match header");
    auto finite = [](float x) { return std::isfinite(x); };
    if (!std::all_of(symptoms_.begin(), symptoms_.end(), finite) ||
        !std::all_of(diseases_.begin(), diseases_.end(), finite))
        throw NumericError("embedding tables contain non-finite values");
}

std::span<const float> RetrieverModel::symptom_vector(std::size_t i) const {
    return std::span<const float>(symptoms_).subspan(i * dim_, dim_);
}
std::span<const float> RetrieverModel::disease_vector(std::size_t i) const {
    return std::span<const float>(diseases_).subspan(i * dim_, dim_);
}
std::span<float> RetrieverModel::symptom_vector(std::size_t i) { return std::span<float>(symptoms_).subspan(i * dim_, dim_); }
std::span<float> RetrieverModel::disease_vector(std::size_t i) { return std::span<float>(diseases_).subspan(i * dim_, dim_); }

bool CandidateSet::contains(std::string_view id) const noexcept {
    return std::any_of(entries.begin(), entries.end(), [&](const auto& e) { return e.disease == id; });
}

std::vector<std::string> CandidateSet::ids() const {
    std::vector<std::string> out;
    out.reserve(entries.size());
    for (const auto& e : entries) out.push_back(e.disease);
    return out;
}

// ---- inference ------------------------------------------------------------

std::vector<double> encode_symptoms(const RetrieverModel& model, const DiseaseDB& db, const SymptomSet& symptoms) {
    std::vector<double> q(model.dim(), 0.0);
    std::size_t used = 0;
    for (const auto& s : symptoms) {
        const auto idx = db.vocab_index(s);
        if (!idx) {
            spdlog::warn("dropping unknown symptom \"{}\"", s.str());
            continue;
        }
        const auto v = model.symptom_vector(*idx);
        for (std::size_t i = 0; i < q.size(); ++i) q[i] += v[i];
        ++used;
    }
    if (used == 0) throw NoSymptomsError("no known symptoms to encode");
    for (auto& x : q) x /= static_cast<double>(used);
    const double n = norm(std::span<const double>(q));
    if (n > kNormFloor)
        for (auto& x : q) x /= n;
    return q;
}

std::vector<double> score_all(const RetrieverModel& model, const DiseaseDB& db, const SymptomSet& symptoms) {
    if (!model.bound_to(db)) throw DataError("retriever model fingerprint does not match the disease catalog");
    const auto q = encode_symptoms(model, db, symptoms);
    std::vector<double> scores(db.size());
    for (std::size_t d = 0; d < db.size(); ++d) {
        const auto e = model.disease_vector(d);
        const double n = norm(e);
        scores[d] = n > kNormFloor ? dot(e, std::span<const double>(q)) / n : 0.0;
    }
    return scores;
}

CandidateSet recall_top_k(const RetrieverModel& model, const DiseaseDB& db, const SymptomSet& symptoms, std::size_t k) {
    if (k == 0) throw ConfigError("k must be at least 1");
    const auto scores = score_all(model, db, symptoms);
    std::vector<CandidateEntry> all;
    all.reserve(scores.size());
    for (std::size_t d = 0; d < scores.size(); ++d) all.push_back({db.diseases()[d].id, scores[d]});
    const auto take = std::min(k, all.size());
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(take), all.end(), ranks_before);
    all.resize(take);
    return CandidateSet{std::move(all), k};
}

// ---- training -------------------------------------------------------------

std::vector<EncodedCase> encode_cases(const DiseaseDB& db, const std::vector<CaseRecord>& cases) {
    std::vector<EncodedCase> out;
    out.reserve(cases.size());
    for (const auto& c : cases) {
        const auto target = db.index_of(c.target);
        if (!target) throw DataError("case \"" + c.case_id + "\" targets unknown disease \"" + c.target + "\"");
        EncodedCase ec{{}, *target};
        for (const auto& s : c.all_symptoms()) {
            if (auto idx = db.vocab_index(s)) ec.symptoms.push_back(*idx);
        }
        if (ec.symptoms.empty()) throw DataError("case \"" + c.case_id + "\" has no symptom in the vocabulary");
        out.push_back(std::move(ec));
    }
    return out;
}

double contrastive_loss(std::span<const double> params, std::size_t dim, std::size_t n_symptoms, std::size_t n_diseases,
                        const std::vector<EncodedCase>& cases, std::vector<double>* grad) {
    if (params.size() != (n_symptoms + n_diseases) * dim) throw DataError("parameter vector has the wrong size");
    if (grad) grad->assign(params.size(), 0.0);
    if (cases.empty()) return 0.0;

    const auto sym_row = [&](std::size_t i) { return params.subspan(i * dim, dim); };
    const auto dis_off = n_symptoms * dim;
    const auto dis_row = [&](std::size_t d) { return params.subspan(dis_off + d * dim, dim); };

    // disease unit vectors are shared by every case
    std::vector<double> dis_unit(n_diseases * dim, 0.0);
    std::vector<double> dis_norm(n_diseases, 0.0);
    for (std::size_t d = 0; d < n_diseases; ++d) {
        const auto e = dis_row(d);
        dis_norm[d] = norm(e);
        if (dis_norm[d] > kNormFloor)
            for (std::size_t i = 0; i < dim; ++i) dis_unit[d * dim + i] = e[i] / dis_norm[d];
    }

    std::vector<double> q(dim), q_unit(dim), sims(n_diseases), probs(n_diseases), g_sum(dim);
    double total = 0.0;
    for (const auto& c : cases) {
        std::fill(q.begin(), q.end(), 0.0);
        for (auto s : c.symptoms) {
            const auto u = sym_row(s);
            for (std::size_t i = 0; i < dim; ++i) q[i] += u[i];
        }
        const double m = static_cast<double>(c.symptoms.size());
        for (auto& x : q) x /= m;
        const double q_norm = norm(std::span<const double>(q));
        for (std::size_t i = 0; i < dim; ++i) q_unit[i] = q_norm > kNormFloor ? q[i] / q_norm : 0.0;

        double max_sim = -2.0;
        for (std::size_t d = 0; d < n_diseases; ++d) {
            double s = 0.0;
            for (std::size_t i = 0; i < dim; ++i) s += q_unit[i] * dis_unit[d * dim + i];
            sims[d] = s;
            max_sim = std::max(max_sim, s);
        }
        double z = 0.0;
        for (std::size_t d = 0; d < n_diseases; ++d) z += std::exp(sims[d] - max_sim);
        const double log_z = max_sim + std::log(z);
        total += log_z - sims[c.target];
        if (!grad) continue;

        for (std::size_t d = 0; d < n_diseases; ++d) probs[d] = std::exp(sims[d] - log_z);

        // dL/dsim_d = p_d - [d == target]
        std::fill(g_sum.begin(), g_sum.end(), 0.0);
        for (std::size_t d = 0; d < n_diseases; ++d) {
            const double g = probs[d] - (d == c.target ? 1.0 : 0.0);
            for (std::size_t i = 0; i < dim; ++i) g_sum[i] += g * dis_unit[d * dim + i];
            if (dis_norm[d] <= kNormFloor) continue;
            double proj = 0.0;
            for (std::size_t i = 0; i < dim; ++i) proj += dis_unit[d * dim + i] * q_unit[i];
            auto* out = grad->data() + dis_off + d * dim;
            for (std::size_t i = 0; i < dim; ++i) out[i] += g * (q_unit[i] - dis_unit[d * dim + i] * proj) / dis_norm[d];
        }
        if (q_norm <= kNormFloor) continue;
        double proj = 0.0;
        for (std::size_t i = 0; i < dim; ++i) proj += q_unit[i] * g_sum[i];
        for (auto s : c.symptoms) {
            auto* out = grad->data() + s * dim;
            for (std::size_t i = 0; i < dim; ++i) out[i] += (g_sum[i] - q_unit[i] * proj) / (q_norm * m);
        }
    }
    const double n = static_cast<double>(cases.size());
    if (grad)
        for (auto& g : *grad) g /= n;
    return total / n;
}

RetrieverModel init_model(const DiseaseDB& db, std::size_t dim, std::uint64_t seed, double scale) {
    RetrieverModel model(db, dim);
    Rng rng(seed);
    for (std::size_t i = 0; i < model.n_symptoms(); ++i)
        for (auto& x : model.symptom_vector(i)) x = static_cast<float>((rng.uniform() * 2.0 - 1.0) * scale);
    for (std::size_t d = 0; d < model.n_diseases(); ++d)
        for (auto& x : model.disease_vector(d)) x = static_cast<float>((rng.uniform() * 2.0 - 1.0) * scale);
    return model;
}

TrainResult train_retriever(const DiseaseDB& db, const std::vector<CaseRecord>& cases, const TrainParams& hp) {
    if (cases.empty()) throw DataError("no training cases");
    if (db.symptom_vocab().empty()) throw DataError("empty symptom vocabulary");
    if (hp.dim == 0) throw ConfigError("embedding dimension must be positive");
    if (!(hp.learning_rate > 0.0)) throw ConfigError("learning rate must be positive");

    const auto encoded = encode_cases(db, cases);
    auto model = init_model(db, hp.dim, hp.seed, hp.init_scale);
    const auto n_sym = model.n_symptoms();
    const auto n_dis = model.n_diseases();

    std::vector<double> params;
    params.reserve((n_sym + n_dis) * hp.dim);
    for (float x : model.symptom_table()) params.push_back(x);
    for (float x : model.disease_table()) params.push_back(x);

    TrainResult result;
    std::vector<double> grad;
    for (std::size_t epoch = 0; epoch < hp.epochs; ++epoch) {
        const double loss = contrastive_loss(params, hp.dim, n_sym, n_dis, encoded, &grad);
        if (!std::isfinite(loss)) throw NumericError("non-finite loss at epoch " + std::to_string(epoch));
        result.loss_history.push_back(loss);
        for (std::size_t i = 0; i < params.size(); ++i) params[i] -= hp.learning_rate * grad[i];
    }
    const double final_loss = contrastive_loss(params, hp.dim, n_sym, n_dis, encoded, nullptr);
    if (!std::isfinite(final_loss)) throw NumericError("non-finite loss at epoch " + std::to_string(hp.epochs));
    result.loss_history.push_back(final_loss);
    result.initial_loss = result.loss_history.front();
    result.final_loss = final_loss;

    if (hp.epochs > 0) {
        std::vector<float> sym(params.begin(), params.begin() + static_cast<std::ptrdiff_t>(n_sym * hp.dim));
        std::vector<float> dis(params.begin() + static_cast<std::ptrdiff_t>(n_sym * hp.dim), params.end());
        model = RetrieverModel(hp.dim, n_sym, n_dis, model.fingerprint(), std::move(sym), std::move(dis));
    }
    result.model = std::move(model);
    return result;
}

RetrieverEvalReport eval_retriever(const RetrieverModel& model, const DiseaseDB& db, const std::vector<CaseRecord>& cases) {
    if (cases.empty()) throw DataError("no evaluation cases");
    RetrieverEvalReport report;
    std::map<std::size_t, std::size_t> hits;
    for (auto k : kRecallCutoffs) hits[k] = 0;
    double rr_sum = 0.0;

    for (const auto& c : cases) {
        const auto scores = score_all(model, db, c.all_symptoms());
        const auto t = db.index_of(c.target);
        if (!t) throw DataError("case \"" + c.case_id + "\" targets unknown disease \"" + c.target + "\"");
        const CandidateEntry target{c.target, scores[*t]};
        std::size_t rank = 1;
        for (std::size_t d = 0; d < scores.size(); ++d)
            if (d != *t && ranks_before({db.diseases()[d].id, scores[d]}, target)) ++rank;
        if (rank <= 100) rr_sum += 1.0 / static_cast<double>(rank);
        for (auto k : kRecallCutoffs)
            if (rank <= k) ++hits[k];
    }
    const double n = static_cast<double>(cases.size());
    report.mrr_at_100 = rr_sum / n;
    for (auto [k, h] : hits) report.recall_at[k] = static_cast<double>(h) / n;
    return report;
}

// ---- persistence ----------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'C', 'O', 'D', 'R'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put_le(std::string& out, T value) {
    using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
    U bits = std::bit_cast<U>(value);
    for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(std::string_view in, std::size_t& pos) {
    using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
    if (pos + sizeof(U) > in.size()) throw DataError("retriever model file is truncated");
    U bits = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) bits |= static_cast<U>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
    pos += sizeof(U);
    return std::bit_cast<T>(bits);
}

} // namespace

std::string serialize_model(const RetrieverModel& model) {
    std::string out(kMagic, sizeof(kMagic));
    put_le(out, kVersion);
    put_le(out, static_cast<std::uint32_t>(model.dim()));
    put_le(out, static_cast<std::uint32_t>(model.n_symptoms()));
    put_le(out, static_cast<std::uint32_t>(model.n_diseases()));
    put_le(out, model.fingerprint());
    for (float x : model.symptom_table()) put_le(out, x);
    for (float x : model.disease_table()) put_le(out, x);
    return out;
}

RetrieverModel deserialize_model(std::string_view bytes) {
    if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
        throw DataError("not a retriever model file");
    std::size_t pos = sizeof(kMagic);
    if (get_le<std::uint32_t>(bytes, pos) != kVersion) throw DataError("unsupported retriever model version");
    const auto dim = get_le<std::uint32_t>(bytes, pos);
    const auto n_sym = get_le<std::uint32_t>(bytes, pos);
    const auto n_dis = get_le<std::uint32_t>(bytes, pos);
    const auto fp = get_le<std::uint64_t>(bytes, pos);
    std::vector<float> sym(static_cast<std::size_t>(n_sym) * dim), dis(static_cast<std::size_t>(n_dis) * dim);
    for (auto& x : sym) x = get_le<float>(bytes, pos);
    for (auto& x : dis) x = get_le<float>(bytes, pos);
    if (pos != bytes.size()) throw DataError("trailing bytes in retriever model file");
    return RetrieverModel(dim, n_sym, n_dis, fp, std::move(sym), std::move(dis));
}

void save_model(const RetrieverModel& model, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    const auto bytes = serialize_model(model);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed for " + path.string());
}

RetrieverModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return deserialize_model(ss.str());
}

} // namespace cod::retriever
