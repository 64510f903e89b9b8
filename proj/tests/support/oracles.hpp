/**
 * @file oracles.hpp
 * @brief Reference implementations the library is checked against. They are
 *        written for clarity, not speed, and share no code with src/.
 */

#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "cod/belief.hpp"
#include "cod/knowledge.hpp"
#include "cod/retriever.hpp"

namespace cod::testing {

// ---- retrieval ---------------------------------------------------------------

/// Cosine of the summed query vector against every disease, fully sorted.
inline std::vector<retriever::CandidateEntry> brute_force_ranking(const retriever::RetrieverModel& model,
                                                                  const knowledge::DiseaseDB& db,
                                                                  const knowledge::SymptomSet& query) {
    const auto dim = model.dim();
    std::vector<double> sum(dim, 0.0);
    for (const auto& s : query) {
        const auto& vocab = db.symptom_vocab();
        const auto it = std::find(vocab.begin(), vocab.end(), s);
        if (it == vocab.end()) continue;
        const auto row = model.symptom_vector(static_cast<std::size_t>(it - vocab.begin()));
        for (std::size_t i = 0; i < dim; ++i) sum[i] += row[i];
    }
    double qn = 0.0;
    for (double x : sum) qn += x * x;
    qn = std::sqrt(qn);

    std::vector<retriever::CandidateEntry> all;
    for (std::size_t d = 0; d < db.size(); ++d) {
        const auto row = model.disease_vector(d);
        double dot = 0.0, en = 0.0;
        for (std::size_t i = 0; i < dim; ++i) {
            dot += sum[i] * row[i];
            en += static_cast<double>(row[i]) * row[i];
        }
        en = std::sqrt(en);
        all.push_back({db.diseases()[d].id, (qn > 0 && en > 0) ? dot / (qn * en) : 0.0});
    }
    std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
        return a.score != b.score ? a.score > b.score : a.disease < b.disease;
    });
    return all;
}

// ---- naive Bayes -------------------------------------------------------------

using Rational = boost::multiprecision::cpp_rational;

/// Posterior by explicit enumeration of every joint symptom assignment
/// consistent with the evidence, in exact rational arithmetic. Each symptom
/// is present given d with probability (w n_d + alpha)/(n_d + 2 alpha).
/// When `absent_penalty` is false denied symptoms are treated as unobserved.
inline std::map<std::string, double> enumerate_posterior(const knowledge::DiseaseDB& db,
                                                         const std::vector<std::string>& ids,
                                                         const belief::SymptomEvidence& ev,
                                                         bool absent_penalty = true) {
    const Rational alpha(1, 100);
    const auto& vocab = db.symptom_vocab();
    const std::size_t n = vocab.size();

    std::map<std::string, Rational> joint;
    Rational total = 0;
    for (const auto& id : ids) {
        const auto& d = db.at(id);
        const Rational nd = static_cast<long>(d.symptom_profile.size());
        std::vector<Rational> p(n);
        for (std::size_t s = 0; s < n; ++s) p[s] = (Rational(d.weight(vocab[s])) * nd + alpha) / (nd + 2 * alpha);

        Rational mass = 0;
        for (std::size_t mask = 0; mask < (std::size_t{1} << n); ++mask) {
            bool consistent = true;
            Rational term = 1;
            for (std::size_t s = 0; s < n && consistent; ++s) {
                const bool on = (mask >> s) & 1u;
                if (ev.present.contains(vocab[s]) && !on) consistent = false;
                if (absent_penalty && ev.absent.contains(vocab[s]) && on) consistent = false;
                term *= on ? p[s] : 1 - p[s];
            }
            if (consistent) mass += term;
        }
        // uniform prior cancels in the normalization
        joint[id] = mass;
        total += mass;
    }
    std::map<std::string, double> out;
    for (const auto& [id, m] : joint) out[id] = static_cast<double>(m / total);
    return out;
}

// ---- gradients ---------------------------------------------------------------

struct GradientCheck {
    double rel_error = 0.0;   // ||analytic - numeric|| / max(||analytic||, ||numeric||)
    double worst_component = 0.0; // max |a_i - n_i| / max(1e-3, |a_i|, |n_i|)
};

/// Central differences of retriever::contrastive_loss at `params`.
inline GradientCheck check_gradient(const std::vector<double>& params, std::size_t dim, std::size_t n_sym,
                                    std::size_t n_dis, const std::vector<retriever::EncodedCase>& cases,
                                    double step) {
    std::vector<double> analytic;
    retriever::contrastive_loss(params, dim, n_sym, n_dis, cases, &analytic);
    std::vector<double> numeric(params.size());
    auto probe = params;
    for (std::size_t i = 0; i < params.size(); ++i) {
        probe[i] = params[i] + step;
        const double up = retriever::contrastive_loss(probe, dim, n_sym, n_dis, cases, nullptr);
        probe[i] = params[i] - step;
        const double down = retriever::contrastive_loss(probe, dim, n_sym, n_dis, cases, nullptr);
        probe[i] = params[i];
        numeric[i] = (up - down) / (2 * step);
    }
    double diff = 0.0, na = 0.0, nn = 0.0;
    GradientCheck out;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double d = analytic[i] - numeric[i];
        diff += d * d;
        na += analytic[i] * analytic[i];
        nn += numeric[i] * numeric[i];
        out.worst_component = std::max(
            out.worst_component, std::abs(d) / std::max({1e-3, std::abs(analytic[i]), std::abs(numeric[i])}));
    }
    const double scale = std::max(std::sqrt(na), std::sqrt(nn));
    out.rel_error = scale > 0 ? std::sqrt(diff) / scale : 0.0;
    return out;
}

} // namespace cod::testing
