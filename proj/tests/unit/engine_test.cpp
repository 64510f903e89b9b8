/**
 * @file engine_test.cpp
 * @brief Symptom abstraction, the threshold rule, inquiry selection against
 *        an exhaustive oracle, and full session steps.
 */

#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "cod/engine.hpp"
#include "cod/error.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace cod;
using namespace cod::engine;
using cod::knowledge::SymptomId;
using nlohmann::json;

namespace {

/// Symptoms are one-hot; each disease vector is its weight profile.
retriever::RetrieverModel profile_model(const knowledge::DiseaseDB& db) {
    const auto n = db.symptom_vocab().size();
    retriever::RetrieverModel m(db, n);
    for (std::size_t i = 0; i < n; ++i) m.symptom_vector(i)[i] = 1.0f;
    for (std::size_t d = 0; d < db.size(); ++d)
        for (const auto& e : db.diseases()[d].symptom_profile)
            m.disease_vector(d)[*db.vocab_index(e.symptom)] = static_cast<float>(e.weight);
    return m;
}

double oracle_entropy(const std::map<std::string, double>& p) {
    double h = 0;
    for (const auto& [_, v] : p)
        if (v > 0) h -= v * std::log(v);
    return h;
}

} // namespace

TEST(AbstractionTest, StructuredMessageKeepsKnownSymptoms) {
    const auto db = cod::testing::toy_db();
    std::vector<std::string> warnings;
    const auto s = abstract_symptoms(Opening::structured({"Fever", "hiccups", " rash "}).text, db, &warnings);
    EXPECT_EQ(s, (knowledge::SymptomSet{SymptomId("fever"), SymptomId("rash")}));
    ASSERT_EQ(warnings.size(), 1u);
    EXPECT_NE(warnings[0].find("hiccups"), std::string::npos);
    EXPECT_THROW(abstract_symptoms(R"({"symptoms": "fever"})", db), DataError);
    EXPECT_THROW(abstract_symptoms(R"({"symptoms": ["hiccups"]})", db), NoSymptomsError);
}

TEST(AbstractionTest, FreeTextPrefersLongestPhrase) {
    const knowledge::DiseaseDB db({cod::testing::disease("a", {{"pain", 0.5}, {"chest pain", 0.5}, {"fever", 0.5}}),
                                   cod::testing::disease("b", {{"sore throat", 0.5}})});
    const auto s = abstract_symptoms("I've had Chest  pain, a SORE throat and some fever.", db);
    EXPECT_EQ(s, (knowledge::SymptomSet{SymptomId("chest pain"), SymptomId("fever"), SymptomId("sore throat")}));
    EXPECT_THROW(abstract_symptoms("I feel odd", db), NoSymptomsError);
}

TEST(EntropyTest, KnownValues) {
    using belief::ConfidenceDistribution;
    EXPECT_DOUBLE_EQ(entropy(ConfidenceDistribution({{"a", 1.0}, {"b", 0.0}})), 0.0);
    EXPECT_NEAR(entropy(ConfidenceDistribution::uniform({"a", "b", "c", "d"})), std::log(4.0), 1e-15);
    EXPECT_NEAR(entropy(ConfidenceDistribution({{"a", 0.25}, {"b", 0.75}})),
                -(0.25 * std::log(0.25) + 0.75 * std::log(0.75)), 1e-15);
}

TEST(DecideTest, EqualityAtThresholdAlwaysInquires) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.01, 0.99);
    const Inquire q{SymptomId("x"), "Do you have x?", 0.1};
    int inquiries = 0;
    const int trials = 10000;
    for (int i = 0; i < trials; ++i) {
        const double top = u(rng);
        std::map<std::string, double> m{{"top", top}};
        const double rest = 1.0 - top;
        const int n_rest = 1 + static_cast<int>(rng() % 4);
        for (int j = 0; j < n_rest; ++j) m["r" + std::to_string(j)] = std::min(top, rest / n_rest);
        const belief::ConfidenceDistribution d(m);
        const double c_max = d.argmax().second;
        if (std::holds_alternative<Inquire>(decide(d, c_max, [&] { return q; }))) ++inquiries;
    }
    EXPECT_EQ(inquiries, trials);
}

TEST(DecideTest, StrictlyAboveDiagnosesArgmax) {
    const belief::ConfidenceDistribution d({{"b", 0.6}, {"a", 0.4}});
    const auto out = decide(d, 0.5999, [] { return Inquire{}; });
    ASSERT_TRUE(is_diagnosis(out));
    EXPECT_EQ(std::get<Diagnose>(out).disease, "b");
    EXPECT_FALSE(std::get<Diagnose>(out).forced);
    EXPECT_FALSE(is_diagnosis(decide(d, 0.6, [] { return Inquire{}; })));
}

TEST(PoolTest, OrderedByWeightExcludingKnownAndAsked) {
    const auto db = cod::testing::toy_db();
    DialogueState st;
    st.candidates = cod::testing::all_candidates(db);
    st.evidence.present = {SymptomId("fever")};
    st.asked = {SymptomId("nausea")};
    st.evidence.absent = {SymptomId("nausea")};
    const auto pool = candidate_symptom_pool(st, db, 10);
    EXPECT_EQ(pool, (std::vector<SymptomId>{SymptomId("rash"), SymptomId("cough")}));
    EXPECT_EQ(candidate_symptom_pool(st, db, 1).size(), 1u);
    st.candidates.entries.clear();
    EXPECT_THROW(candidate_symptom_pool(st, db, 10), DataError);
}

TEST(SelectInquiryTest, MatchesExhaustiveOracle) {
    std::mt19937_64 rng(8);
    for (const auto mode : {EntropyMode::present_only, EntropyMode::expected}) {
        for (int trial = 0; trial < 150; ++trial) {
            const auto db = cod::testing::random_db(rng, 2 + rng() % 3, 2 + rng() % 5);
            DialogueState st;
            st.candidates = cod::testing::all_candidates(db);
            const auto& vocab = db.symptom_vocab();
            st.evidence.present.insert(vocab[rng() % vocab.size()]);
            const auto pool = candidate_symptom_pool(st, db, 100);
            if (pool.empty()) continue;

            SessionConfig cfg;
            cfg.entropy_mode = mode;
            belief::BayesBackend bayes;
            const auto ids = st.candidates.ids();
            const auto now = cod::testing::enumerate_posterior(db, ids, st.evidence);
            const auto choice = select_inquiry(st, belief::ConfidenceDistribution(bayes.posterior(st.evidence, ids, db)),
                                               pool, bayes, db, cfg);

            std::map<SymptomId, double> reduction;
            for (const auto& s : pool) {
                auto yes = st.evidence, no = st.evidence;
                yes.present.insert(s);
                no.absent.insert(s);
                const double h_yes = oracle_entropy(cod::testing::enumerate_posterior(db, ids, yes));
                double after = h_yes;
                if (mode == EntropyMode::expected) {
                    double p_yes = 0;
                    for (const auto& [id, c] : now) {
                        const auto& d = db.at(id);
                        const double n = static_cast<double>(d.symptom_profile.size());
                        p_yes += c * (d.weight(s) * n + 0.01) / (n + 0.02);
                    }
                    after = p_yes * h_yes + (1 - p_yes) * oracle_entropy(cod::testing::enumerate_posterior(db, ids, no));
                }
                reduction[s] = oracle_entropy(now) - after;
            }
            double best = -1e300;
            for (const auto& [_, r] : reduction) best = std::max(best, r);
            std::vector<SymptomId> winners;
            for (const auto& [s, r] : reduction)
                if (r >= best - 1e-9) winners.push_back(s);

            EXPECT_GE(reduction.at(choice.symptom), best - 1e-9) << "trial " << trial;
            EXPECT_NEAR(choice.reduction, reduction.at(choice.symptom), 1e-9);
            if (winners.size() == 1) { EXPECT_EQ(choice.symptom, winners[0]) << "trial " << trial; }
        }
    }
}

TEST(SelectInquiryTest, TieGoesToSmallestToken) {
    const knowledge::DiseaseDB db({cod::testing::disease("a", {{"x", 0.5}, {"p", 0.9}, {"q", 0.1}}),
                                   cod::testing::disease("b", {{"x", 0.5}, {"p", 0.1}, {"q", 0.9}})});
    DialogueState st;
    st.candidates = cod::testing::all_candidates(db);
    st.evidence.present = {SymptomId("x")};
    belief::BayesBackend bayes;
    const auto dist = belief::ConfidenceDistribution::uniform({"a", "b"});
    const auto c = select_inquiry(st, dist, {SymptomId("q"), SymptomId("p")}, bayes, db, SessionConfig{});
    EXPECT_EQ(c.symptom, SymptomId("p"));
    EXPECT_THROW(select_inquiry(st, dist, {}, bayes, db, SessionConfig{}), DataError);
}

class EngineTest : public ::testing::Test {
protected:
    knowledge::DiseaseDB db = cod::testing::toy_db();
    retriever::RetrieverModel model = profile_model(db);
    belief::BayesBackend bayes;
};

TEST_F(EngineTest, DialogueRunsToConfidentDiagnosis) {
    SessionConfig cfg;
    cfg.k = 3;
    const Engine eng(db, model, bayes, cfg);
    auto out = eng.step(DialogueState{}, Opening{"I have a cough"});
    EXPECT_EQ(out.round.round, 1);
    EXPECT_EQ(out.state.opening, (knowledge::SymptomSet{SymptomId("cough")}));
    EXPECT_EQ(out.round.candidates.size(), 3u);
    EXPECT_NEAR(out.round.confidence.sum(), 1.0, 1e-12);

    int guard = 0;
    while (!is_diagnosis(out.decision) && guard++ < 10) {
        const auto& q = std::get<Inquire>(out.decision);
        EXPECT_EQ(out.state.pending, q.symptom);
        EXPECT_EQ(q.question_text, "Do you have " + q.symptom.str() + "?");
        const bool yes = q.symptom == SymptomId("nausea");
        out = eng.step(out.state, Answer{yes});
    }
    ASSERT_TRUE(is_diagnosis(out.decision));
    EXPECT_TRUE(out.state.finished);
    EXPECT_GT(std::get<Diagnose>(out.decision).confidence, cfg.tau);
    EXPECT_THROW(eng.step(out.state, Answer{true}), Error);
}

TEST_F(EngineTest, BudgetExhaustionForcesDiagnosis) {
    SessionConfig cfg;
    cfg.tau = 0.99;
    cfg.max_rounds = 1;
    const Engine eng(db, model, bayes, cfg);
    auto out = eng.step(DialogueState{}, Opening::structured({"nausea"}));
    ASSERT_FALSE(is_diagnosis(out.decision));
    out = eng.step(out.state, Answer{false});
    ASSERT_TRUE(is_diagnosis(out.decision));
    EXPECT_TRUE(std::get<Diagnose>(out.decision).forced);
    EXPECT_EQ(out.state.inquiries(), 1u);

    cfg.max_rounds = 0;
    const Engine none(db, model, bayes, cfg);
    EXPECT_TRUE(std::get<Diagnose>(none.step(DialogueState{}, Opening::structured({"fever"})).decision).forced);
}

TEST_F(EngineTest, InputStateIsNeverModified) {
    SessionConfig cfg;
    cfg.tau = 0.99;
    const Engine eng(db, model, bayes, cfg);
    const auto first = eng.step(DialogueState{}, Opening::structured({"fever"}));
    const auto snapshot = first.state;
    (void)eng.step(first.state, Answer{true});
    EXPECT_EQ(first.state.evidence, snapshot.evidence);
    EXPECT_EQ(first.state.pending, snapshot.pending);
    EXPECT_EQ(first.state.round, snapshot.round);

    EXPECT_THROW(eng.step(first.state, Opening{"fever"}), DataError);
    EXPECT_THROW(eng.step(DialogueState{}, Answer{true}), DataError);
    EXPECT_THROW(eng.step(DialogueState{}, Opening{"nothing relevant"}), NoSymptomsError);
}

TEST_F(EngineTest, RejectsMismatchedModelAndBadConfig) {
    const knowledge::DiseaseDB other({cod::testing::disease("x", {{"fever", 1.0}})});
    EXPECT_THROW(Engine(other, model, bayes, SessionConfig{}), DataError);
    SessionConfig bad;
    bad.tau = 1.0;
    EXPECT_THROW(Engine(db, model, bayes, bad), ConfigError);
    bad = {};
    bad.k = 0;
    EXPECT_THROW(bad.validate(), ConfigError);
    bad = {};
    bad.max_rounds = -1;
    EXPECT_THROW(bad.validate(), ConfigError);
    EXPECT_EQ(entropy_mode_from_string("expected"), EntropyMode::expected);
    EXPECT_THROW(entropy_mode_from_string("mean"), ConfigError);
}

TEST_F(EngineTest, TraceRoundTripsThroughJson) {
    const Engine eng(db, model, bayes, SessionConfig{});
    DiagnosticTrace trace;
    auto out = eng.step(DialogueState{}, Opening::structured({"cough", "hiccups"}));
    trace.rounds.push_back(out.round);
    while (!is_diagnosis(out.decision)) {
        out = eng.step(out.state, Answer{true});
        trace.rounds.push_back(out.round);
    }
    for (const auto& r : trace.rounds) {
        const auto j = to_json(r);
        const auto back = trace_round_from_json(j);
        EXPECT_EQ(to_json(back), j);
        EXPECT_EQ(back.decision, r.decision);
        EXPECT_EQ(back.confidence, r.confidence);
    }
    EXPECT_FALSE(trace.rounds[0].warnings.empty());

    cod::testing::ScratchDir dir("trace");
    export_trace(trace, dir / "trace.jsonl");
    std::ifstream in(dir / "trace.jsonl");
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        const auto j = json::parse(line);
        for (const char* key : {"round", "abstracted_symptoms", "evidence", "candidates", "reasoning", "confidence",
                                "entropy", "decision", "warnings"})
            EXPECT_TRUE(j.contains(key)) << key;
        ++n;
    }
    EXPECT_EQ(n, trace.rounds.size());
}

TEST_F(EngineTest, ExpectedModeRunsOnFullCatalog) {
    SessionConfig cfg;
    cfg.entropy_mode = EntropyMode::expected;
    const Engine eng(db, model, bayes, cfg);
    auto out = eng.step(DialogueState{}, Opening::structured({"fever"}));
    if (!is_diagnosis(out.decision)) { EXPECT_GE(std::get<Inquire>(out.decision).reduction, 0.0); }
}
