/**
 * @file fixtures.hpp
 * @brief Small catalogs, random generators and scratch directories shared by
 *        the unit and acceptance tests.
 */

#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "cod/knowledge.hpp"
#include "cod/retriever.hpp"

namespace cod::testing {

using Profile = std::vector<std::pair<std::string, double>>;

inline knowledge::DiseaseRecord disease(std::string id, const Profile& profile, std::string name = {}) {
    knowledge::DiseaseRecord d;
    d.name = name.empty() ? id : std::move(name);
    d.id = std::move(id);
    d.overview = "about " + d.name;
    d.treatment = "treat " + d.name;
    d.department = "general";
    for (const auto& [s, w] : profile) d.symptom_profile.push_back({knowledge::SymptomId(s), w});
    return d;
}

/// Three diseases over four symptoms, each with one dominant symptom.
inline knowledge::DiseaseDB toy_db() {
    return knowledge::DiseaseDB({
        disease("alpha", {{"fever", 0.9}, {"cough", 0.5}, {"rash", 0.1}}, "Alpha fever"),
        disease("beta", {{"cough", 0.9}, {"fever", 0.3}, {"nausea", 0.2}}, "Beta cough"),
        disease("gamma", {{"rash", 1.0}, {"nausea", 0.6}}, "Gamma rash"),
    });
}

/// Random catalog over symptoms s0..s{n_symptoms-1}; every disease gets at
/// least one symptom and weights are drawn from a coarse grid that includes 1.
inline knowledge::DiseaseDB random_db(std::mt19937_64& rng, std::size_t n_diseases, std::size_t n_symptoms) {
    static constexpr double grid[] = {0.1, 0.25, 0.5, 0.75, 0.9, 1.0};
    std::vector<knowledge::DiseaseRecord> out;
    for (std::size_t d = 0; d < n_diseases; ++d) {
        Profile p;
        for (std::size_t s = 0; s < n_symptoms; ++s)
            if (rng() % 2 == 0) p.emplace_back("s" + std::to_string(s), grid[rng() % 6]);
        if (p.empty()) p.emplace_back("s" + std::to_string(rng() % n_symptoms), grid[rng() % 6]);
        out.push_back(disease("d" + std::to_string(d), p));
    }
    return knowledge::DiseaseDB(std::move(out));
}

inline retriever::CandidateSet all_candidates(const knowledge::DiseaseDB& db) {
    retriever::CandidateSet c;
    for (const auto& d : db.diseases()) c.entries.push_back({d.id, 1.0});
    c.k = db.size();
    return c;
}

inline std::filesystem::path demo_catalog() { return std::filesystem::path(COD_DATA_DIR) / "demo_diseases.jsonl"; }

class ScratchDir {
public:
    explicit ScratchDir(const std::string& tag) {
        path_ = std::filesystem::temp_directory_path() /
                ("cod-" + tag + "-" + std::to_string(std::random_device{}()));
        std::filesystem::create_directories(path_);
    }
    ~ScratchDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    ScratchDir(const ScratchDir&) = delete;
    ScratchDir& operator=(const ScratchDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

} // namespace cod::testing
