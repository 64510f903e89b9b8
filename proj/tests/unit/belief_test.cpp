/**
 * @file belief_test.cpp
 * @brief Naive-Bayes posterior against exact enumeration, distribution
 *        repair, verification and argmax ties.
 */

#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "cod/belief.hpp"
#include "cod/error.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace cod;
using namespace cod::belief;
using cod::knowledge::SymptomId;

namespace {

SymptomEvidence random_evidence(const knowledge::DiseaseDB& db, std::mt19937_64& rng) {
    SymptomEvidence ev;
    for (const auto& s : db.symptom_vocab()) {
        switch (rng() % 3) {
        case 0: ev.present.insert(s); break;
        case 1: ev.absent.insert(s); break;
        default: break;
        }
    }
    return ev;
}

} // namespace

TEST(LikelihoodTest, SmoothedProfileWeight) {
    const auto db = cod::testing::toy_db();
    const auto& alpha = db.at("alpha");
    EXPECT_DOUBLE_EQ(symptom_likelihood(alpha, SymptomId("fever"), 0.01), (0.9 * 3 + 0.01) / (3 + 0.02));
    EXPECT_DOUBLE_EQ(symptom_likelihood(alpha, SymptomId("nausea"), 0.01), 0.01 / 3.02);
    // a weight of one stays just below certainty
    const auto& gamma = db.at("gamma");
    EXPECT_LT(symptom_likelihood(gamma, SymptomId("rash"), 0.01), 1.0);
    EXPECT_GT(symptom_likelihood(gamma, SymptomId("rash"), 0.01), 0.99);
}

TEST(BayesTest, MatchesEnumerationOracleOnSmallCatalogs) {
    std::mt19937_64 rng(21);
    const BayesBackend bayes;
    for (std::size_t nd = 1; nd <= 4; ++nd) {
        for (std::size_t ns = 1; ns <= 6; ++ns) {
            for (int rep = 0; rep < 3; ++rep) {
                const auto db = cod::testing::random_db(rng, nd, ns);
                std::vector<std::string> ids;
                for (const auto& d : db.diseases()) ids.push_back(d.id);
                for (int e = 0; e < 12; ++e) {
                    const auto ev = random_evidence(db, rng);
                    const auto got = bayes.posterior(ev, ids, db);
                    const auto want = cod::testing::enumerate_posterior(db, ids, ev);
                    for (const auto& id : ids) EXPECT_NEAR(got.at(id), want.at(id), 1e-9) << nd << "x" << ns << " " << id;
                }
            }
        }
    }
}

TEST(BayesTest, WithoutAbsentPenaltyDeniedSymptomsAreIgnored) {
    std::mt19937_64 rng(4);
    const BayesBackend bayes(BayesSettings{0.01, false});
    const auto db = cod::testing::random_db(rng, 4, 5);
    std::vector<std::string> ids;
    for (const auto& d : db.diseases()) ids.push_back(d.id);
    for (int e = 0; e < 20; ++e) {
        const auto ev = random_evidence(db, rng);
        const auto got = bayes.posterior(ev, ids, db);
        const auto want = cod::testing::enumerate_posterior(db, ids, ev, false);
        for (const auto& id : ids) EXPECT_NEAR(got.at(id), want.at(id), 1e-9);
    }
}

TEST(BayesTest, PosteriorRestrictedToCandidates) {
    const auto db = cod::testing::toy_db();
    const BayesBackend bayes;
    SymptomEvidence ev{{SymptomId("fever")}, {}};
    const auto post = bayes.posterior(ev, {"beta", "gamma"}, db);
    EXPECT_EQ(post.size(), 2u);
    EXPECT_NEAR(post.at("beta") + post.at("gamma"), 1.0, 1e-15);
    EXPECT_GT(post.at("beta"), post.at("gamma"));
    EXPECT_THROW(bayes.posterior(ev, {}, db), DataError);
    EXPECT_THROW(bayes.posterior({{SymptomId("fever")}, {SymptomId("fever")}}, {"beta"}, db), DataError);
}

TEST(BayesTest, DenyingADefiningSymptomAlmostRulesOut) {
    const auto db = cod::testing::toy_db();
    const BayesBackend bayes;
    const std::vector<std::string> ids{"alpha", "beta", "gamma"};
    const auto open = bayes.posterior({{SymptomId("nausea")}, {}}, ids, db);
    const auto denied = bayes.posterior({{SymptomId("nausea")}, {SymptomId("rash")}}, ids, db);
    EXPECT_EQ(open.at("gamma"), std::max({open.at("alpha"), open.at("beta"), open.at("gamma")}));
    // 1 - p(rash|gamma) is about 0.005
    EXPECT_LT(denied.at("gamma"), open.at("gamma") / 40);
}

TEST(BayesTest, AssessmentExplainsEachCandidate) {
    const auto db = cod::testing::toy_db();
    const auto cands = cod::testing::all_candidates(db);
    SymptomEvidence ev{{SymptomId("fever"), SymptomId("rash")}, {SymptomId("cough")}};
    BayesBackend bayes;
    const auto a = bayes.assess(AssessRequest{ev, cands, db, ev.present});
    ASSERT_EQ(a.reasoning.structured.size(), 3u);
    const auto& alpha = a.reasoning.structured[0];
    EXPECT_EQ(alpha.disease, "alpha");
    EXPECT_EQ(alpha.matched, (std::vector<SymptomId>{SymptomId("fever"), SymptomId("rash")}));
    EXPECT_EQ(alpha.contradicting, (std::vector<SymptomId>{SymptomId("cough")}));
    EXPECT_NE(a.reasoning.text.find("Alpha fever"), std::string::npos);
    EXPECT_NEAR(a.confidence.sum(), 1.0, 1e-12);
}

TEST(NormalizationTest, FuzzedAssessmentsSumToOne) {
    std::mt19937_64 rng(77);
    BackendConfig cfg;
    for (int i = 0; i < 2000; ++i) {
        const auto db = cod::testing::random_db(rng, 1 + rng() % 12, 1 + rng() % 15);
        retriever::CandidateSet cands;
        for (const auto& d : db.diseases())
            if (rng() % 3 != 0 || cands.entries.empty()) cands.entries.push_back({d.id, 0.0});
        cands.k = cands.entries.size();
        const auto a = assess_confidence(cfg, random_evidence(db, rng), cands, db);
        EXPECT_NEAR(a.confidence.sum(), 1.0, 1e-9);
        EXPECT_EQ(a.confidence.size(), cands.entries.size());
        for (const auto& [id, v] : a.confidence.entries()) {
            EXPECT_GE(v, 0.0);
            EXPECT_TRUE(cands.contains(id));
        }
    }
}

TEST(ValidateDistributionTest, RepairsAndWarns) {
    const auto db = cod::testing::toy_db();
    const auto cands = cod::testing::all_candidates(db);
    std::vector<std::string> warnings;
    const auto d = validate_distribution({{"alpha", 2.0}, {"beta", 2.0}, {"zeta", 5.0}}, cands, &warnings);
    EXPECT_DOUBLE_EQ(d.at("alpha"), 0.5);
    EXPECT_DOUBLE_EQ(d.at("beta"), 0.5);
    EXPECT_DOUBLE_EQ(d.at("gamma"), 0.0);
    EXPECT_FALSE(d.contains("zeta"));
    EXPECT_EQ(warnings.size(), 2u);

    const auto zero = validate_distribution({{"alpha", 0.0}}, cands);
    EXPECT_DOUBLE_EQ(zero.at("gamma"), 1.0 / 3.0);

    EXPECT_THROW(validate_distribution({{"alpha", -0.1}}, cands), DataError);
    EXPECT_THROW(validate_distribution({{"alpha", std::nan("")}}, cands), DataError);
    EXPECT_THROW(validate_distribution({}, cands), DataError);
}

TEST(VerificationTest, NonTargetAtThresholdIsErroneous) {
    const ConfidenceDistribution d({{"a", 0.5}, {"b", 0.3}, {"c", 0.2}});
    EXPECT_EQ(verify_against_target(d, "a", 0.5), Verification::valid);
    EXPECT_EQ(verify_against_target(d, "b", 0.5), Verification::erroneous);
    EXPECT_EQ(verify_against_target(d, "b", 0.51), Verification::valid);
    EXPECT_EQ(verify_against_target(d, "c", 0.3), Verification::erroneous);
}

TEST(DistributionTest, ArgmaxBreaksTiesBySmallestId) {
    const ConfidenceDistribution d({{"m", 0.4}, {"b", 0.4}, {"z", 0.2}});
    EXPECT_EQ(d.argmax().first, "b");
    EXPECT_THROW(ConfidenceDistribution().argmax(), DataError);
    const auto u = ConfidenceDistribution::uniform({"x", "y", "z", "w"});
    EXPECT_DOUBLE_EQ(u.at("w"), 0.25);
}

TEST(BackendConfigTest, ValidatesActiveKind) {
    BackendConfig cfg;
    cfg.bayes.smoothing_alpha = 0;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = {};
    cfg.kind = BackendKind::llm;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg.llm.endpoint = "http://localhost:1/v1";
    EXPECT_NO_THROW(cfg.validate());
    EXPECT_EQ(backend_kind_from_string("llm"), BackendKind::llm);
    EXPECT_THROW(backend_kind_from_string("oracle"), ConfigError);
}
