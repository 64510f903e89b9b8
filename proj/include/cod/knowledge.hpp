/**
 * @file knowledge.hpp
 * @brief Disease catalog, symptom vocabulary, patient case records and the
 *        seeded synthetic case generator.
 */

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace cod::knowledge {

/// Lowercase, trim, collapse internal whitespace runs to one space.
std::string normalize_symptom(std::string_view raw);

/// Canonical symptom token. Construction normalizes; an empty result throws.
class SymptomId {
public:
    SymptomId() = default;
    explicit SymptomId(std::string_view raw);

    const std::string& str() const noexcept { return token_; }
    bool empty() const noexcept { return token_.empty(); }

    friend auto operator<=>(const SymptomId&, const SymptomId&) = default;
    friend bool operator==(const SymptomId&, const SymptomId&) = default;

private:
    std::string token_;
};

using SymptomSet = std::set<SymptomId>;

struct ProfileEntry {
    SymptomId symptom;
    double weight = 0.0; // prevalence of the symptom given the disease, in (0,1]
};

struct DiseaseRecord {
    std::string id;
    std::string name;
    std::string overview;
    std::string treatment;
    std::string department;
    std::vector<ProfileEntry> symptom_profile;

    /// Profile weight of `s`, or 0 when the symptom is not in the profile.
    double weight(const SymptomId& s) const noexcept;
    bool has_symptom(const SymptomId& s) const noexcept { return weight(s) > 0.0; }
};

/// Validated, immutable disease catalog.
class DiseaseDB {
public:
    DiseaseDB() = default;
    /// Throws DataError on duplicate ids, empty profiles, duplicate profile
    /// symptoms or weights outside (0,1].
    explicit DiseaseDB(std::vector<DiseaseRecord> diseases);

    const std::vector<DiseaseRecord>& diseases() const noexcept { return diseases_; }
    const std::vector<SymptomId>& symptom_vocab() const noexcept { return vocab_; }
    std::size_t size() const noexcept { return diseases_.size(); }
    bool empty() const noexcept { return diseases_.empty(); }

    const DiseaseRecord* find(std::string_view id) const noexcept;
    /// Throws DataError for unknown ids.
    const DiseaseRecord& at(std::string_view id) const;
    std::optional<std::size_t> index_of(std::string_view id) const noexcept;
    /// Resolve by id first, then by case-insensitive display name.
    const DiseaseRecord* find_by_id_or_name(std::string_view key) const noexcept;

    bool in_vocab(const SymptomId& s) const noexcept;
    std::optional<std::size_t> vocab_index(const SymptomId& s) const noexcept;

private:
    std::vector<DiseaseRecord> diseases_;
    std::vector<SymptomId> vocab_;
    std::unordered_map<std::string, std::size_t> by_id_;
    std::unordered_map<std::string, std::size_t> vocab_pos_;
};

struct Demographics {
    std::string gender;
    std::string age;
    friend bool operator==(const Demographics&, const Demographics&) = default;
};

struct CaseRecord {
    std::string case_id;
    std::string target;
    SymptomSet explicit_symptoms;
    SymptomSet implicit_symptoms;
    std::optional<Demographics> demographics;

    SymptomSet all_symptoms() const;
    friend bool operator==(const CaseRecord&, const CaseRecord&) = default;
};

/// Checks the case invariants against `db`; throws DataError naming the case.
void validate_case(const CaseRecord& c, const DiseaseDB& db);

// ---- persistence -------------------------------------------------------

DiseaseDB load_disease_db(const std::filesystem::path& path);
DiseaseDB parse_disease_db(std::string_view jsonl);
void save_disease_db(const DiseaseDB& db, const std::filesystem::path& path);
std::string dump_disease_db(const DiseaseDB& db);

/// Loads cases; when `db` is given each case is validated against it.
std::vector<CaseRecord> load_cases(const std::filesystem::path& path, const DiseaseDB* db = nullptr);
std::vector<CaseRecord> parse_cases(std::string_view jsonl, const DiseaseDB* db = nullptr);
void save_cases(const std::vector<CaseRecord>& cases, const std::filesystem::path& path);
std::string dump_cases(const std::vector<CaseRecord>& cases);

// ---- synthesis -----------------------------------------------------------

/// Number of explicit symptoms for the i-th case of a disease. Cycles
/// through 1, 1, 2, 2, 4 so that five cases per disease give two
/// single-complaint cases, two with two complaints and one with more than three.
std::size_t explicit_quota(std::size_t case_index);

/// Generates `per_disease` cases for every disease with at least two profile
/// symptoms. Explicit and implicit symptoms are drawn weight-proportionally
/// without replacement; 2-4 implicit symptoms when the profile allows.
std::vector<CaseRecord> synthesize_cases(const DiseaseDB& db, std::size_t per_disease, std::uint64_t seed);

struct CaseSplit {
    std::vector<CaseRecord> train;
    std::vector<CaseRecord> eval;
};

/// Seeded shuffle followed by a cut; |eval| = round(eval_fraction * N).
CaseSplit split_cases(const std::vector<CaseRecord>& cases, double eval_fraction, std::uint64_t seed);

} // namespace cod::knowledge

template <>
struct std::hash<cod::knowledge::SymptomId> {
    std::size_t operator()(const cod::knowledge::SymptomId& s) const noexcept {
        return std::hash<std::string>{}(s.str());
    }
};
