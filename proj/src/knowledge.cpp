#include "cod/knowledge.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "cod/error.hpp"
#include "cod/rng.hpp"

namespace cod::knowledge {

using nlohmann::json;

std::string normalize_symptom(std::string_view raw) {
    std::string out;
    out.reserve(raw.size());
    bool pending_space = false;
    for (char ch : raw) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isspace(c)) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) {
            out.push_back(' ');
            pending_space = false;
        }
        out.push_back(static_cast<char>(std::tolower(c)));
    }
    return out;
}

SymptomId::SymptomId(std::string_view raw) : token_(normalize_symptom(raw)) {
    if (token_.empty()) throw DataError("empty symptom token");
}

double DiseaseRecord::weight(const SymptomId& s) const noexcept {
    for (const auto& e : symptom_profile)
        if (e.symptom == s) return e.weight;
    return 0.0;
}

DiseaseDB::DiseaseDB(std::vector<DiseaseRecord> diseases) : diseases_(std::move(diseases)) {
    std::set<SymptomId> vocab;
    for (std::size_t i = 0; i < diseases_.size(); ++i) {
        const auto& d = diseases_[i];
        if (d.id.empty()) throw DataError("disease with empty id at position " + std::to_string(i));
        if (!by_id_.emplace(d.id, i).second) throw DataError("duplicate disease id \"" + d.id + "\"");
        if (d.symptom_profile.empty()) throw DataError("disease \"" + d.id + "\" has an empty symptom profile");
        std::set<SymptomId> seen;
        for (const auto& e : d.symptom_profile) {
            if (!(e.weight > 0.0 && e.weight <= 1.0))
                throw DataError("weight out of range for disease \"" + d.id + "\" symptom \"" + e.symptom.str() + "\"");
            if (!seen.insert(e.symptom).second)
                throw DataError("duplicate symptom \"" + e.symptom.str() + "\" in disease \"" + d.id + "\"");
            vocab.insert(e.symptom);
        }
    }
    vocab_.assign(vocab.begin(), vocab.end());
    for (std::size_t i = 0; i < vocab_.size(); ++i) vocab_pos_.emplace(vocab_[i].str(), i);
}

const DiseaseRecord* DiseaseDB::find(std::string_view id) const noexcept {
    auto it = by_id_.find(std::string(id));
    return it == by_id_.end() ? nullptr : &diseases_[it->second];
}

const DiseaseRecord& DiseaseDB::at(std::string_view id) const {
    if (const auto* d = find(id)) return *d;
    throw DataError("unknown disease id \"" + std::string(id) + "\"");
}

std::optional<std::size_t> DiseaseDB::index_of(std::string_view id) const noexcept {
    auto it = by_id_.find(std::string(id));
    if (it == by_id_.end()) return std::nullopt;
    return it->second;
}

const DiseaseRecord* DiseaseDB::find_by_id_or_name(std::string_view key) const noexcept {
    if (const auto* d = find(key)) return d;
    const auto wanted = normalize_symptom(key);
    for (const auto& d : diseases_)
        if (normalize_symptom(d.name) == wanted) return &d;
    return nullptr;
}

bool DiseaseDB::in_vocab(const SymptomId& s) const noexcept { return vocab_pos_.contains(s.str()); }

std::optional<std::size_t> DiseaseDB::vocab_index(const SymptomId& s) const noexcept {
    auto it = vocab_pos_.find(s.str());
    if (it == vocab_pos_.end()) return std::nullopt;
    return it->second;
}

SymptomSet CaseRecord::all_symptoms() const {
    SymptomSet all = explicit_symptoms;
    all.insert(implicit_symptoms.begin(), implicit_symptoms.end());
    return all;
}

void validate_case(const CaseRecord& c, const DiseaseDB& db) {
    const auto where = "case \"" + c.case_id + "\": ";
    if (c.case_id.empty()) throw DataError("case with empty case_id");
    if (!db.find(c.target)) throw DataError(where + "unknown target \"" + c.target + "\"");
    if (c.explicit_symptoms.empty()) throw DataError(where + "no explicit symptoms");
    for (const auto& s : c.explicit_symptoms) {
        if (c.implicit_symptoms.contains(s)) throw DataError(where + "symptom \"" + s.str() + "\" is both explicit and implicit");
        if (!db.in_vocab(s)) throw DataError(where + "symptom \"" + s.str() + "\" not in vocabulary");
    }
    for (const auto& s : c.implicit_symptoms)
        if (!db.in_vocab(s)) throw DataError(where + "symptom \"" + s.str() + "\" not in vocabulary");
}

// ---- persistence -------------------------------------------------------

namespace {

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out << content;
    if (!out) throw DataError("write failed for " + path.string());
}

template <typename Fn>
void for_each_line(std::string_view text, Fn&& fn) {
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        auto end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        ++line_no;
        auto line = text.substr(pos, end - pos);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.find_first_not_of(" \t") != std::string_view::npos) fn(line, line_no);
        pos = end + 1;
    }
}

std::string str_field(const json& j, const char* key, bool required) {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) {
        if (required) throw DataError(std::string("missing field \"") + key + "\"");
        return {};
    }
    return it->get<std::string>();
}

SymptomSet symptom_array(const json& j, const char* key) {
    SymptomSet out;
    for (const auto& s : j.at(key)) {
        if (!out.insert(SymptomId(s.get<std::string>())).second)
            throw DataError(std::string("duplicate symptom in \"") + key + "\"");
    }
    return out;
}

json symptoms_json(const SymptomSet& set) {
    json arr = json::array();
    for (const auto& s : set) arr.push_back(s.str());
    return arr;
}

} // namespace

DiseaseDB parse_disease_db(std::string_view jsonl) {
    std::vector<DiseaseRecord> records;
    for_each_line(jsonl, [&](std::string_view line, std::size_t line_no) {
        try {
            const auto j = json::parse(line);
            DiseaseRecord d;
            d.id = str_field(j, "id", true);
            d.name = str_field(j, "name", false);
            if (d.name.empty()) d.name = d.id;
            d.overview = str_field(j, "overview", false);
            d.treatment = str_field(j, "treatment", false);
            d.department = str_field(j, "department", false);
            for (const auto& e : j.at("symptoms"))
                d.symptom_profile.push_back({SymptomId(e.at("s").get<std::string>()), e.at("w").get<double>()});
            records.push_back(std::move(d));
        } catch (const json::exception& e) {
            throw DataError("line " + std::to_string(line_no) + ": malformed disease record: " + e.what());
        } catch (const DataError& e) {
            throw DataError("line " + std::to_string(line_no) + ": " + e.what());
        }
    });
    return DiseaseDB(std::move(records));
}

DiseaseDB load_disease_db(const std::filesystem::path& path) { return parse_disease_db(read_file(path)); }

std::string dump_disease_db(const DiseaseDB& db) {
    std::string out;
    for (const auto& d : db.diseases()) {
        json syms = json::array();
        for (const auto& e : d.symptom_profile) syms.push_back({{"s", e.symptom.str()}, {"w", e.weight}});
        json j = {{"id", d.id},           {"name", d.name},   {"overview", d.overview}, {"treatment", d.treatment},
                  {"department", d.department}, {"symptoms", syms}};
        out += j.dump() + "\n";
    }
    return out;
}

void save_disease_db(const DiseaseDB& db, const std::filesystem::path& path) { write_file(path, dump_disease_db(db)); }

std::vector<CaseRecord> parse_cases(std::string_view jsonl, const DiseaseDB* db) {
    std::vector<CaseRecord> cases;
    std::set<std::string> ids;
    for_each_line(jsonl, [&](std::string_view line, std::size_t line_no) {
        try {
            const auto j = json::parse(line);
            CaseRecord c;
            c.case_id = str_field(j, "case_id", true);
            c.target = str_field(j, "target", true);
            c.explicit_symptoms = symptom_array(j, "explicit");
            c.implicit_symptoms = j.contains("implicit") ? symptom_array(j, "implicit") : SymptomSet{};
            if (auto it = j.find("demographics"); it != j.end() && !it->is_null())
                c.demographics = Demographics{str_field(*it, "gender", false), str_field(*it, "age", false)};
            if (!ids.insert(c.case_id).second) throw DataError("duplicate case_id \"" + c.case_id + "\"");
            if (c.explicit_symptoms.empty()) throw DataError("case \"" + c.case_id + "\": no explicit symptoms");
            if (db) validate_case(c, *db);
            cases.push_back(std::move(c));
        } catch (const json::exception& e) {
            throw DataError("line " + std::to_string(line_no) + ": malformed case record: " + e.what());
        } catch (const DataError& e) {
            throw DataError("line " + std::to_string(line_no) + ": " + e.what());
        }
    });
    return cases;
}

std::vector<CaseRecord> load_cases(const std::filesystem::path& path, const DiseaseDB* db) {
    return parse_cases(read_file(path), db);
}

std::string dump_cases(const std::vector<CaseRecord>& cases) {
    std::string out;
    for (const auto& c : cases) {
        json demo = nullptr;
        if (c.demographics) demo = {{"gender", c.demographics->gender}, {"age", c.demographics->age}};
        json j = {{"case_id", c.case_id},
                  {"target", c.target},
                  {"explicit", symptoms_json(c.explicit_symptoms)},
                  {"implicit", symptoms_json(c.implicit_symptoms)},
                  {"demographics", demo}};
        out += j.dump() + "\n";
    }
    return out;
}

void save_cases(const std::vector<CaseRecord>& cases, const std::filesystem::path& path) {
    write_file(path, dump_cases(cases));
}

// ---- synthesis -----------------------------------------------------------

std::size_t explicit_quota(std::size_t case_index) {
    static constexpr std::size_t pattern[] = {1, 1, 2, 2, 4};
    return pattern[case_index % 5];
}

namespace {

// Sequential weight-proportional draws without replacement.
std::vector<ProfileEntry> draw_weighted(std::vector<ProfileEntry>& pool, std::size_t count, Rng& rng) {
    std::vector<ProfileEntry> picked;
    while (picked.size() < count && !pool.empty()) {
        double total = 0.0;
        for (const auto& e : pool) total += e.weight;
        double u = rng.uniform() * total;
        std::size_t chosen = pool.size() - 1;
        for (std::size_t i = 0; i < pool.size(); ++i) {
            if (u < pool[i].weight) {
                chosen = i;
                break;
            }
            u -= pool[i].weight;
        }
        picked.push_back(pool[chosen]);
        pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(chosen));
    }
    return picked;
}

} // namespace

std::vector<CaseRecord> synthesize_cases(const DiseaseDB& db, std::size_t per_disease, std::uint64_t seed) {
    if (per_disease == 0) throw ConfigError("per_disease must be at least 1");
    if (db.empty()) throw DataError("cannot synthesize cases from an empty disease catalog");

    static constexpr const char* genders[] = {"female", "male"};
    static constexpr const char* ages[] = {"child", "adult", "elderly"};

    Rng rng(seed);
    std::vector<CaseRecord> cases;
    for (const auto& d : db.diseases()) {
        if (d.symptom_profile.size() < 2) {
            spdlog::warn("skipping disease \"{}\": profile has fewer than two symptoms", d.id);
            continue;
        }
        Demographics demo{genders[rng.below(2)], ages[rng.below(3)]};
        for (std::size_t i = 0; i < per_disease; ++i) {
            auto pool = d.symptom_profile;
            const auto n_explicit = std::min(explicit_quota(i), pool.size());
            const auto n_implicit = static_cast<std::size_t>(rng.between(2, 4));

            CaseRecord c;
            c.case_id = d.id + "-" + std::to_string(i + 1);
            c.target = d.id;
            for (const auto& e : draw_weighted(pool, n_explicit, rng)) c.explicit_symptoms.insert(e.symptom);
            for (const auto& e : draw_weighted(pool, n_implicit, rng)) c.implicit_symptoms.insert(e.symptom);
            c.demographics = demo;
            cases.push_back(std::move(c));
        }
    }
    return cases;
}

CaseSplit split_cases(const std::vector<CaseRecord>& cases, double eval_fraction, std::uint64_t seed) {
    if (!(eval_fraction > 0.0 && eval_fraction < 1.0)) throw ConfigError("eval_fraction must lie in (0,1)");
    if (cases.empty()) throw DataError("cannot split an empty case list");

    std::vector<std::size_t> order(cases.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(seed);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    const auto n_eval = static_cast<std::size_t>(std::llround(eval_fraction * static_cast<double>(cases.size())));
    CaseSplit split;
    for (std::size_t i = 0; i < order.size(); ++i)
        (i < n_eval ? split.eval : split.train).push_back(cases[order[i]]);
    return split;
}

} // namespace cod::knowledge
