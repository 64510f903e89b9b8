/**
 * @file cod.cpp
 * @brief Command-line entry point: data synthesis, retriever training,
 *        benchmarks, training-data generation, the HTTP service and a
 *        terminal session.
 */

#include <cstdlib>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "cod/datagen.hpp"
#include "cod/error.hpp"
#include "cod/service.hpp"
#include "cod/simeval.hpp"

namespace {

using namespace cod;
using nlohmann::json;

std::string env_or(const char* name, std::string fallback = {}) {
    const char* v = std::getenv(name);
    return v ? std::string(v) : fallback;
}

struct SessionFlags {
    engine::SessionConfig cfg;
    std::string backend = "bayes";
    std::string entropy_mode = "present-only";
    std::string llm_endpoint = env_or("COD_LLM_ENDPOINT");
    std::string llm_model;
    std::string prompt_dir;

    void add(CLI::App& app, bool with_tau = true) {
        if (with_tau) app.add_option("--tau", cfg.tau, "confidence threshold")->capture_default_str();
        app.add_option("--max-rounds", cfg.max_rounds, "inquiry cap L")->capture_default_str();
        app.add_option("--k", cfg.k, "candidate diseases per round")->capture_default_str();
        app.add_option("--backend", backend, "bayes or llm")->capture_default_str();
        app.add_option("--entropy-mode", entropy_mode, "present-only or expected")->capture_default_str();
        app.add_option("--pool-limit", cfg.candidate_pool_limit, "inquiry candidates considered per round")
            ->capture_default_str();
        app.add_option("--llm-endpoint", llm_endpoint, "reasoning endpoint (default $COD_LLM_ENDPOINT)");
        app.add_option("--llm-model", llm_model, "model name forwarded to the endpoint");
        app.add_option("--prompt-dir", prompt_dir, "directory with <template>.txt overrides");
    }

    engine::SessionConfig resolve() const {
        auto c = cfg;
        c.backend.kind = belief::backend_kind_from_string(backend);
        c.entropy_mode = engine::entropy_mode_from_string(entropy_mode);
        c.backend.llm.endpoint = llm_endpoint;
        c.backend.llm.model = llm_model;
        c.backend.llm.api_key = env_or("COD_LLM_API_KEY");
        c.backend.llm.prompt_dir = prompt_dir;
        c.validate();
        c.backend.validate();
        return c;
    }
};

void write_json(const json& j, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write " + path);
    out << j.dump(2) << '\n';
}

json sweep_json(const std::vector<simeval::SweepRow>& rows) {
    json arr = json::array();
    for (const auto& r : rows) {
        auto j = simeval::to_json(r.report);
        j["tau"] = r.tau;
        arr.push_back(std::move(j));
    }
    return arr;
}

int run_interactive(const knowledge::DiseaseDB& db, const retriever::RetrieverModel& model,
                    const engine::SessionConfig& cfg) {
    auto backend = belief::make_backend(cfg.backend);
    const engine::Engine eng(db, model, *backend, cfg);
    engine::DialogueState state;

    std::cout << "Describe your symptoms (empty line to quit):\n> " << std::flush;
    std::string line;
    if (!std::getline(std::cin, line) || line.empty()) return 0;
    engine::PatientInput input = engine::Opening{line};
    while (true) {
        std::optional<engine::StepOutcome> out;
        try {
            out = eng.step(state, input);
        } catch (const NoSymptomsError&) {
            std::cout << "No known symptom recognized. Try again:\n> " << std::flush;
            if (!std::getline(std::cin, line) || line.empty()) return 0;
            input = engine::Opening{line};
            continue;
        }
        state = out->state;
        const auto& r = out->round;
        std::cout << fmt::format("[round {}] entropy {:.3f}\n", r.round, r.entropy);
        for (const auto& [id, c] : r.confidence.entries())
            std::cout << fmt::format("  {:<32} {:.3f}\n", db.at(id).name, c);
        if (const auto* dx = std::get_if<engine::Diagnose>(&out->decision)) {
            const auto& rec = db.at(dx->disease);
            std::cout << fmt::format("Diagnosis: {} ({:.3f}{})\nTreatment: {}\n", rec.name, dx->confidence,
                                     dx->forced ? ", inquiry limit reached" : "", rec.treatment);
            return 0;
        }
        std::cout << std::get<engine::Inquire>(out->decision).question_text << " [y/n]\n> " << std::flush;
        while (true) {
            if (!std::getline(std::cin, line)) return 0;
            const auto a = knowledge::normalize_symptom(line);
            if (a == "y" || a == "yes") { input = engine::Answer{true}; break; }
            if (a == "n" || a == "no") { input = engine::Answer{false}; break; }
            std::cout << "Please answer y or n.\n> " << std::flush;
        }
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Chain-of-diagnosis toolkit"};
    app.require_subcommand(1);

    std::string db_path, cases_path, model_path, out_path, report_path, trace_path;
    std::uint64_t seed = 42;
    SessionFlags flags;
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    std::vector<double> taus{0.4, 0.5, 0.6, 0.7};

    auto* synth = app.add_subcommand("synth", "synthesize cases from a disease database");
    std::size_t per_disease = 5;
    synth->add_option("--db", db_path)->required();
    synth->add_option("--per-disease", per_disease)->capture_default_str();
    synth->add_option("--seed", seed)->capture_default_str();
    synth->add_option("--out", out_path)->required();

    auto* train = app.add_subcommand("train-retriever", "train symptom and disease embeddings");
    retriever::TrainParams hp;
    double holdout = 0.0;
    std::uint64_t split_seed = 1;
    std::string holdout_path;
    train->add_option("--db", db_path)->required();
    train->add_option("--cases", cases_path)->required();
    train->add_option("--dim", hp.dim)->capture_default_str();
    train->add_option("--epochs", hp.epochs)->capture_default_str();
    train->add_option("--lr", hp.learning_rate)->capture_default_str();
    train->add_option("--seed", hp.seed)->capture_default_str();
    train->add_option("--holdout", holdout, "fraction of cases kept out of training")->capture_default_str();
    train->add_option("--split-seed", split_seed)->capture_default_str();
    train->add_option("--holdout-out", holdout_path, "where to write the held-out cases");
    train->add_option("--out", out_path)->required();

    auto* evr = app.add_subcommand("eval-retriever", "Recall@k and MRR@100 of a trained retriever");
    evr->add_option("--db", db_path)->required();
    evr->add_option("--model", model_path)->required();
    evr->add_option("--cases", cases_path)->required();

    auto* eval = app.add_subcommand("eval", "run the simulated-patient benchmark");
    auto* sweep = app.add_subcommand("sweep", "benchmark across thresholds");
    auto* curve = app.add_subcommand("curve", "diagnosis rate and accuracy against threshold, no inquiry");
    for (auto* sc : {eval, sweep, curve}) {
        sc->add_option("--db", db_path)->required();
        sc->add_option("--cases", cases_path)->required();
        sc->add_option("--model", model_path)->required();
        flags.add(*sc, sc == eval);
    }
    for (auto* sc : {eval, sweep}) {
        sc->add_option("--seeds", seeds)->delimiter(',')->capture_default_str();
        sc->add_option("--report", report_path, "write the report as JSON");
    }
    eval->add_option("--trace", trace_path, "write every round as JSONL");
    sweep->add_option("--taus", taus)->delimiter(',')->capture_default_str();
    curve->add_option("--taus", taus)->delimiter(',')->capture_default_str();
    curve->add_option("--out", out_path, "CSV destination (default stdout)");

    auto* gen = app.add_subcommand("datagen", "build verified training dialogues");
    double verify_tau = -1.0;
    int rethink_limit = 3;
    gen->add_option("--db", db_path)->required();
    gen->add_option("--cases", cases_path)->required();
    gen->add_option("--model", model_path)->required();
    flags.add(*gen);
    gen->add_option("--verify-tau", verify_tau, "verification threshold (default: --tau)");
    gen->add_option("--rethink-limit", rethink_limit)->capture_default_str();
    gen->add_option("--out", out_path)->required();

    auto* serve = app.add_subcommand("serve", "HTTP session service");
    std::string listen = "127.0.0.1:8080", static_dir;
    serve->add_option("--db", db_path)->required();
    serve->add_option("--model", model_path)->required();
    serve->add_option("--listen", listen)->capture_default_str();
    serve->add_option("--static-dir", static_dir, "console assets served at /");
    flags.add(*serve);

    auto* repl = app.add_subcommand("interactive", "answer the engine's questions in the terminal");
    repl->add_option("--db", db_path)->required();
    repl->add_option("--model", model_path)->required();
    flags.add(*repl);

    CLI11_PARSE(app, argc, argv);

    try {
        const auto db = knowledge::load_disease_db(db_path);

        if (*synth) {
            const auto cases = knowledge::synthesize_cases(db, per_disease, seed);
            knowledge::save_cases(cases, out_path);
            std::cout << "wrote " << cases.size() << " cases to " << out_path << '\n';
            return 0;
        }

        if (*train) {
            auto cases = knowledge::load_cases(cases_path, &db);
            if (holdout > 0.0) {
                auto split = knowledge::split_cases(cases, holdout, split_seed);
                if (!holdout_path.empty()) knowledge::save_cases(split.eval, holdout_path);
                cases = std::move(split.train);
            }
            const auto result = retriever::train_retriever(db, cases, hp);
            retriever::save_model(result.model, out_path);
            std::cout << fmt::format("trained on {} cases: loss {:.4f} -> {:.4f}\n", cases.size(),
                                     result.initial_loss, result.final_loss);
            return 0;
        }

        if (*evr) {
            const auto model = retriever::load_model(model_path);
            const auto report = retriever::eval_retriever(model, db, knowledge::load_cases(cases_path, &db));
            std::cout << fmt::format("{:<10} {:>8}\n", "metric", "value");
            std::cout << fmt::format("{:<10} {:>8.4f}\n", "MRR@100", report.mrr_at_100);
            for (const auto& [k, v] : report.recall_at) std::cout << fmt::format("{:<10} {:>8.4f}\n", fmt::format("Recall@{}", k), v);
            return 0;
        }

        const auto model = retriever::load_model(model_path);

        if (*eval || *sweep || *curve) {
            const auto cfg = flags.resolve();
            const auto cases = knowledge::load_cases(cases_path, &db);
            auto backend = belief::make_backend(cfg.backend);
            if (*eval) {
                const auto results = simeval::run_sessions(cases, cfg, db, model, *backend);
                const auto report = simeval::summarize(results, cfg, seeds);
                if (!report_path.empty()) write_json(simeval::to_json(report), report_path);
                if (!trace_path.empty()) {
                    std::ofstream out(trace_path, std::ios::trunc);
                    if (!out) throw DataError("cannot write " + trace_path);
                    for (const auto& r : results)
                        for (const auto& round : r.trace.rounds) {
                            auto j = engine::to_json(round);
                            j["case_id"] = r.case_id;
                            out << j.dump() << '\n';
                        }
                }
                std::cout << fmt::format("a = {:.4f} (se {:.4f})  n = {:.3f} (se {:.3f})  diagnosis rate = {:.4f}\n",
                                         report.accuracy, report.stderr_a, report.mean_inquiries, report.stderr_n,
                                         report.diagnosis_rate);
                return 0;
            }
            if (*sweep) {
                const auto rows = simeval::sweep_tau(cases, cfg, taus, seeds, db, model, *backend);
                std::cout << "tau,accuracy,stderr_a,mean_inquiries,stderr_n\n";
                for (const auto& r : rows)
                    std::cout << fmt::format("{},{:.4f},{:.4f},{:.4f},{:.4f}\n", r.tau, r.report.accuracy,
                                             r.report.stderr_a, r.report.mean_inquiries, r.report.stderr_n);
                if (!report_path.empty()) write_json(sweep_json(rows), report_path);
                return 0;
            }
            const auto points = simeval::threshold_curve(cases, cfg, taus, db, model, *backend);
            std::ofstream file;
            if (!out_path.empty()) {
                file.open(out_path, std::ios::trunc);
                if (!file) throw DataError("cannot write " + out_path);
            }
            std::ostream& os = out_path.empty() ? std::cout : file;
            os << "tau,rate,accuracy\n";
            for (const auto& p : points)
                os << fmt::format("{},{:.6f},{}\n", p.tau, p.rate, p.accuracy ? fmt::format("{:.6f}", *p.accuracy) : "");
            return 0;
        }

        if (*gen) {
            datagen::DatagenConfig dcfg;
            dcfg.session = flags.resolve();
            dcfg.verify_tau = verify_tau < 0.0 ? dcfg.session.tau : verify_tau;
            dcfg.rethink_limit = rethink_limit;
            dcfg.validate();
            auto backend = belief::make_backend(dcfg.session.backend);
            std::vector<datagen::CoDRecord> kept;
            std::size_t discarded = 0;
            for (const auto& c : knowledge::load_cases(cases_path, &db)) {
                auto rec = datagen::build_cod_record(c, dcfg, db, model, *backend);
                if (rec.status == datagen::RecordStatus::retained) {
                    kept.push_back(std::move(rec));
                } else {
                    ++discarded;
                    spdlog::info("discarded {}: {}", rec.case_id, rec.discard_reason);
                }
            }
            datagen::export_training_set(kept, out_path, dcfg.verify_tau);
            std::cout << fmt::format("retained {} records, discarded {}; wrote {}\n", kept.size(), discarded, out_path);
            return 0;
        }

        if (*serve) {
            service::ServiceOptions opts;
            opts.defaults = flags.resolve();
            opts.static_dir = static_dir;
            service::Service svc(db, model, opts);
            const auto [host, port] = service::parse_listen(listen);
            service::serve(svc, host, port);
            return 0;
        }

        if (*repl) return run_interactive(db, model, flags.resolve());
    } catch (const cod::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
