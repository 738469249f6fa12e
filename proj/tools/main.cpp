#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>

#include "scl/commands.hpp"

namespace cmd = scl::commands;

int main(int argc, char** argv) {
    CLI::App app{"Single-layer attention lab: set complement task, theory checks, "
                 "training, random search, and Othello data tooling"};
    app.require_subcommand(1);

    cmd::VerifyTheoryArgs vt;
    std::string vt_norm = "identity";
    auto* verify = app.add_subcommand("verify-theory",
                                      "Certify the hardcoded model: precision, ranks, "
                                      "balance, and length decay");
    verify->add_option("--v", vt.v, "vocabulary size")->check(CLI::Range(2, 64));
    verify->add_option("--C", vt.C, "target precision of the hardcoded model");
    verify->add_option("--norm", vt_norm, "identity|rmsnorm")
        ->check(CLI::IsMember({"identity", "rmsnorm"}));
    verify->add_option("--eq-tol", vt.eq_tol, "tolerance for the equality branch");
    verify->add_option("--tau", vt.tau, "relative singular value cutoff");
    verify->add_option("--cap", vt.exhaustive_cap_v, "largest v enumerated exhaustively");
    verify->add_option("--out", vt.out, "write the JSON report here");

    cmd::TrainArgs tr;
    auto* train = app.add_subcommand("train", "One training run from a JSON config");
    train->add_option("--config", tr.config, "run config JSON")->required();
    train->add_option("--out", tr.out_dir, "output directory (default $SCL_OUT_DIR)");
    train->add_flag("--strict", tr.strict, "exit nonzero on divergence");

    cmd::SearchArgs se;
    auto* search = app.add_subcommand("search", "Random hyperparameter sweep");
    search->add_option("--config", se.config, "sweep config JSON")->required();
    search->add_option("--out", se.out_dir, "output directory (default $SCL_OUT_DIR)");
    search->add_option("--jobs", se.jobs, "worker threads (overrides config)");
    search->add_flag("--resume", se.resume, "skip members already in records.jsonl");

    cmd::SummarizeArgs su;
    auto* summarize = app.add_subcommand("summarize", "Quantile summaries of sweep records");
    summarize->add_option("--in", su.in_dir, "sweep output directory")->required();
    summarize->add_option("--out", su.out_csv, "CSV path (default <in>/summary.csv)");
    summarize->add_option("--group", su.group, "gap|gap-dims");

    cmd::OthelloGenArgs og;
    auto* ogen = app.add_subcommand("othello-gen", "Random Othello game corpus");
    ogen->add_option("--count", og.count, "number of games")->required();
    ogen->add_option("--seed", og.seed, "global seed");
    ogen->add_option("--min-len", og.min_len, "shortest truncation length");
    ogen->add_option("--max-len", og.max_len, "longest truncation length");
    ogen->add_option("--out", og.out, "corpus path")->required();
    ogen->add_flag("--masks", og.masks, "write the legal-move mask sidecar");
    ogen->add_flag("--no-pass-games", og.no_pass_games, "redraw games containing a pass");

    cmd::OthelloEvalArgs oe;
    auto* oeval = app.add_subcommand("othello-eval",
                                     "Score external next-move logits against the rules");
    oeval->add_option("--logits", oe.logits, "JSONL of {tokens, logits} lines")->required();
    oeval->add_option("--masks", oe.masks, "mask sidecar for cross-checking");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return 0;  // --help
        std::cerr << e.what() << '\n';
        return cmd::kExitUsage;
    }

    const auto default_out = [](std::filesystem::path& dir, const char* sub) {
        if (!dir.empty()) return true;
        if (const char* env = std::getenv("SCL_OUT_DIR")) {
            dir = std::filesystem::path(env) / sub;
            return true;
        }
        std::cerr << sub << ": --out is required (or set SCL_OUT_DIR)\n";
        return false;
    };

    try {
        if (*verify) {
            vt.norm = scl::norm_mode_from_name(vt_norm);
            return cmd::verify_theory(vt);
        }
        if (*train) {
            if (!default_out(tr.out_dir, "train")) return cmd::kExitUsage;
            return cmd::train(tr);
        }
        if (*search) {
            if (!default_out(se.out_dir, "search")) return cmd::kExitUsage;
            return cmd::search(se);
        }
        if (*summarize) return cmd::summarize(su);
        if (*ogen) return cmd::othello_gen(og);
        if (*oeval) return cmd::othello_eval(oe);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return cmd::kExitIo;
    }
    return cmd::kExitUsage;
}
