#include "scl/commands.hpp"

#include <fstream>
#include <iostream>
#include <sstream>

#include "scl/bema.hpp"
#include "scl/io.hpp"
#include "scl/metrics.hpp"
#include "scl/othello.hpp"
#include "scl/search.hpp"
#include "scl/theory.hpp"
#include "scl/train.hpp"

namespace scl::commands {

namespace {
nlohmann::json precision_report_json(const PrecisionReport& r) {
    nlohmann::json lengths = nlohmann::json::array();
    for (const auto& l : r.lengths)
        lengths.push_back({{"s", l.s},
                           {"min_displacement", l.min_displacement},
                           {"min_displacement_final", l.min_displacement_final},
                           {"max_equality_deviation", l.max_equality_deviation},
                           {"sequences_checked", l.sequences_checked},
                           {"exhaustive", l.exhaustive},
                           {"passes", l.passes}});
    return {{"threshold", r.threshold},
            {"eq_tol", r.eq_tol},
            {"lengths", std::move(lengths)},
            {"all_pass", r.all_pass}};
}

nlohmann::json rank_report_json(const RankReport& r) {
    return {{"name", r.name},
            {"singular_values", r.singular_values},
            {"rank", r.rank},
            {"tau", r.tau}};
}

void write_manifest(const std::filesystem::path& path, const nlohmann::json& body) {
    nlohmann::json manifest = body;
    manifest["artifact_version"] = kArtifactVersion;
    io::save_json(path, manifest);
}
}  // namespace

int verify_theory(const VerifyTheoryArgs& args, nlohmann::json* report_out) {
    if (args.v < 2) {
        std::cerr << "verify-theory: v must be at least 2\n";
        return kExitUsage;
    }
    if (args.v > args.exhaustive_cap_v) {
        std::cerr << "verify-theory: v=" << args.v << " exceeds the exhaustive cap of "
                  << args.exhaustive_cap_v
                  << " (v!/(v-s)! sequences per length); raise --cap deliberately or use "
                     "the library's sampled mode\n";
        return kExitUsage;
    }

    const ModelParams model = build_hardcoded(args.v, args.C, args.norm);
    const DerivedMatrices derived = derived_matrices(model);

    std::vector<int> lengths;
    for (int s = 1; s < args.v; ++s) lengths.push_back(s);
    const PrecisionReport precision =
        check_precision(derived.B, derived.D, lengths, args.C, args.eq_tol);

    const RankBoundsVerdict bounds =
        verify_rank_bounds(derived.B, derived.D, args.C, args.eq_tol, args.tau);

    // Balance is evaluated at the measured length-1 precision; decay at the
    // measured length-2 precision.
    const double c1 = precision.lengths[0].min_displacement;
    const BalanceReport balance = check_balance_condition(derived.B, derived.D, c1);

    nlohmann::json decay_json;
    bool decay_ok = true;
    if (args.v >= 3) {
        const double c2 = precision.lengths[1].min_displacement;
        const DecayReport decay =
            check_length_decay(derived.B, derived.D, c2, args.v, args.eq_tol);
        decay_ok = decay.conclusion_holds;
        nlohmann::json rows = nlohmann::json::array();
        for (const auto& row : decay.rows)
            rows.push_back({{"s", row.s},
                            {"bound", row.bound},
                            {"measured", row.measured},
                            {"holds", row.holds}});
        decay_json = {{"C", decay.C},
                      {"hyp_precision", decay.hyp_precision},
                      {"hyp_balance", decay.hyp_balance},
                      {"applicable", decay.applicable},
                      {"rows", std::move(rows)},
                      {"conclusion_holds", decay.conclusion_holds}};
    }

    const bool rank_ok = bounds.rank_b_plus_d_ok && bounds.rank_d_ok;
    const bool pass = precision.all_pass && rank_ok && balance.holds && decay_ok;

    nlohmann::json report = {
        {"artifact_version", kArtifactVersion},
        {"v", args.v},
        {"C", args.C},
        {"norm", norm_mode_name(args.norm)},
        {"eq_tol", args.eq_tol},
        {"tau", args.tau},
        {"precision", precision_report_json(precision)},
        {"rank_bounds",
         {{"precision_len1_holds", bounds.precision_len1_holds},
          {"rank_b_plus_d_ok", bounds.rank_b_plus_d_ok},
          {"precision_len12_holds", bounds.precision_len12_holds},
          {"rank_d_ok", bounds.rank_d_ok},
          {"rank_b_plus_d", rank_report_json(bounds.rank_b_plus_d)},
          {"rank_d", rank_report_json(bounds.rank_d)}}},
        {"balance",
         {{"threshold", balance.threshold}, {"max_lhs", balance.max_lhs}, {"holds", balance.holds}}},
        {"decay", decay_json},
        {"overall_pass", pass},
    };
    if (report_out) *report_out = report;
    if (!args.out.empty()) io::save_json(args.out, report);

    for (const auto& l : precision.lengths)
        std::cout << "precision s=" << l.s << ": min_displacement=" << l.min_displacement
                  << " eq_dev=" << l.max_equality_deviation << " sequences="
                  << l.sequences_checked << (l.passes ? " PASS" : " FAIL") << '\n';
    std::cout << "rank(B+D)=" << bounds.rank_b_plus_d.rank << " rank(D)=" << bounds.rank_d.rank
              << " (need >= " << args.v - 1 << ")\n";
    std::cout << (pass ? "verify-theory: PASS\n" : "verify-theory: FAIL\n");
    return pass ? kExitOk : kExitVerificationFailed;
}

int train(const TrainArgs& args) {
    nlohmann::json config_json;
    try {
        config_json = io::load_json(args.config);
    } catch (const std::exception& e) {
        std::cerr << "train: " << e.what() << '\n';
        return kExitIo;
    }
    const TrainRunConfig cfg = train_config_from_json(config_json);

    std::filesystem::create_directories(args.out_dir);
    write_manifest(args.out_dir / "manifest.json",
                   {{"command", "train"}, {"config", train_config_to_json(cfg)}});

    std::ofstream metrics(args.out_dir / "metrics.jsonl", std::ios::binary);
    if (!metrics) {
        std::cerr << "train: cannot write metrics.jsonl\n";
        return kExitIo;
    }

    SingleRun run(cfg);
    drive_run(run, [&](const ValidationEvent& ev) {
        metrics << validation_event_to_json(ev).dump() << '\n';
        metrics.flush();
    });

    io::save_json(args.out_dir / "record.json", run_record_to_json(run.record()));
    save_checkpoint(run.params(), cfg.seed, args.out_dir / "checkpoint_train.bin");
    const auto entries = run.grid().entries();
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const ModelParams bm = run.bema_model_at(i);
        const std::string name =
            entries.size() == 1 ? "checkpoint_bema.bin"
                                : "checkpoint_bema_" + std::to_string(i) + ".bin";
        save_checkpoint(bm, cfg.seed, args.out_dir / name);
    }

    if (run.record().diverged) {
        std::cout << "train: diverged at step " << run.record().diverged_step << '\n';
        return args.strict ? kExitVerificationFailed : kExitOk;
    }
    std::cout << "train: " << run.record().stop_reason << " at step "
              << run.record().final_step << '\n';
    return kExitOk;
}

int search(const SearchArgs& args) {
    nlohmann::json config_json;
    try {
        config_json = io::load_json(args.config);
    } catch (const std::exception& e) {
        std::cerr << "search: " << e.what() << '\n';
        return kExitIo;
    }
    SweepConfig cfg = sweep_config_from_json(config_json);
    if (args.jobs > 0) cfg.jobs = args.jobs;

    std::filesystem::create_directories(args.out_dir);
    write_manifest(args.out_dir / "manifest.json",
                   {{"command", "search"},
                    {"config", sweep_config_to_json(cfg)},
                    {"sampler", sampler_constants_json()}});

    const auto records_path = args.out_dir / "records.jsonl";
    std::vector<SearchRecord> completed;
    if (args.resume && std::filesystem::exists(records_path)) {
        std::ifstream in(records_path, std::ios::binary);
        std::string line;
        while (std::getline(in, line))
            if (!line.empty()) completed.push_back(search_record_from_json(
                nlohmann::json::parse(line)));
    }

    std::ofstream records(records_path,
                          args.resume ? std::ios::binary | std::ios::app : std::ios::binary);
    if (!records) {
        std::cerr << "search: cannot write records.jsonl\n";
        return kExitIo;
    }

    std::vector<SearchRecord> all = completed;
    run_ensembles(cfg,
                  [&](const SearchRecord& rec) {
                      records << search_record_to_json(rec).dump() << '\n';
                      records.flush();
                      all.push_back(rec);
                  },
                  completed);

    const auto groups = scl::summarize(all);
    io::write_file(args.out_dir / "summary.csv", summary_to_csv(groups));
    std::cout << "search: " << all.size() << " records across " << cfg.arch_count
              << " ensembles\n";
    return kExitOk;
}

int summarize_cmd(const SummarizeArgs& args) {
    if (args.group != "gap" && args.group != "gap-dims") {
        std::cerr << "summarize: unknown group key '" << args.group
                  << "' (expected gap or gap-dims)\n";
        return kExitUsage;
    }
    const auto records_path = args.in_dir / "records.jsonl";
    std::vector<SearchRecord> records;
    try {
        std::ifstream in(records_path, std::ios::binary);
        if (!in) throw std::runtime_error("cannot open " + records_path.string());
        std::string line;
        while (std::getline(in, line))
            if (!line.empty())
                records.push_back(search_record_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
        std::cerr << "summarize: " << e.what() << '\n';
        return kExitIo;
    }
    if (records.empty()) {
        std::cerr << "summarize: no records in " << records_path << '\n';
        return kExitVerificationFailed;
    }
    const bool dims = args.group == "gap-dims";
    const auto groups = scl::summarize(records, dims);
    const auto out = args.out_csv.empty() ? args.in_dir / "summary.csv" : args.out_csv;
    io::write_file(out, summary_to_csv(groups, dims));
    write_manifest(std::filesystem::path(out.string() + ".manifest.json"),
                   {{"command", "summarize"},
                    {"in", args.in_dir.string()},
                    {"group", args.group},
                    {"records", records.size()}});
    std::cout << "summarize: " << groups.size() << " groups -> " << out << '\n';
    return kExitOk;
}

int summarize(const SummarizeArgs& args) { return summarize_cmd(args); }

int othello_gen(const OthelloGenArgs& args) {
    if (args.out.empty()) {
        std::cerr << "othello-gen: --out is required\n";
        return kExitUsage;
    }
    std::filesystem::path masks_path;
    if (args.masks) masks_path = args.out.string() + ".masks";
    othello::CorpusStats stats;
    try {
        stats = othello::generate_corpus(args.count, args.min_len, args.max_len, args.seed,
                                         args.out, masks_path, args.no_pass_games);
    } catch (const std::invalid_argument& e) {
        std::cerr << "othello-gen: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "othello-gen: " << e.what() << '\n';
        return kExitIo;
    }
    write_manifest(std::filesystem::path(args.out.string() + ".manifest.json"),
                   {{"command", "othello-gen"},
                    {"count", args.count},
                    {"seed", args.seed},
                    {"min_len", args.min_len},
                    {"max_len", args.max_len},
                    {"masks", args.masks},
                    {"no_pass_games", args.no_pass_games},
                    {"token_map_hash", othello::token_map_hash()}});
    std::cout << "othello-gen: " << stats.games << " games, " << stats.tokens << " tokens";
    if (args.no_pass_games) std::cout << ", " << stats.pass_games_skipped << " pass-games skipped";
    std::cout << '\n';
    return kExitOk;
}

int othello_eval(const OthelloEvalArgs& args, nlohmann::json* report_out) {
    std::ifstream in(args.logits, std::ios::binary);
    if (!in) {
        std::cerr << "othello-eval: cannot open " << args.logits << '\n';
        return kExitIo;
    }
    std::vector<std::vector<std::uint64_t>> sidecar;
    const bool with_sidecar = !args.masks.empty();
    if (with_sidecar) {
        try {
            // Sidecar-only read: games come from the logit lines themselves.
            sidecar = othello::read_mask_sidecar(args.masks);
        } catch (const std::exception& e) {
            std::cerr << "othello-eval: " << e.what() << '\n';
            return kExitIo;
        }
    }

    MetricValues acc;
    std::size_t count = 0;
    std::string line;
    Eigen::VectorXd logits(othello::kNumTokens), p(othello::kNumTokens);
    try {
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto j = nlohmann::json::parse(line);
            const auto tokens = j.at("tokens").get<std::vector<int>>();
            const auto raw = j.at("logits").get<std::vector<double>>();
            if (raw.size() != othello::kNumTokens)
                throw std::invalid_argument("logit line must have 60 entries");
            if (tokens.empty()) throw std::invalid_argument("logit line with no tokens");
            for (int i = 0; i < othello::kNumTokens; ++i)
                logits[i] = raw[static_cast<std::size_t>(i)];

            othello::Board b = othello::initial_board();
            for (int tok : tokens) b = othello::apply_move(b, othello::token_to_square(tok));
            const std::uint64_t mask_bits = othello::legal_token_mask(b);

            if (with_sidecar && j.contains("game")) {
                const auto game = j.at("game").get<std::size_t>();
                if (game >= sidecar.size() || tokens.size() > sidecar[game].size())
                    throw std::invalid_argument("game/prefix outside the mask sidecar");
                if (sidecar[game][tokens.size() - 1] != mask_bits)
                    throw std::invalid_argument(
                        "replayed legal mask disagrees with the sidecar");
            }

            std::vector<std::uint8_t> mask(othello::kNumTokens);
            for (int i = 0; i < othello::kNumTokens; ++i)
                mask[static_cast<std::size_t>(i)] = (mask_bits >> i) & 1 ? 1 : 0;

            const double m = logits.maxCoeff();
            p = (logits.array() - m).exp();
            p /= p.sum();
            acc.tvd += tvd_mask(p, mask);
            acc.itp += itp_mask(p, mask);
            acc.itr += itr_mask(logits, mask);
            ++count;
        }
    } catch (const std::exception& e) {
        std::cerr << "othello-eval: " << e.what() << '\n';
        return kExitVerificationFailed;
    }
    if (count == 0) {
        std::cerr << "othello-eval: no logit lines\n";
        return kExitVerificationFailed;
    }
    acc.tvd /= static_cast<double>(count);
    acc.itp /= static_cast<double>(count);
    acc.itr /= static_cast<double>(count);

    const nlohmann::json report = {{"artifact_version", kArtifactVersion},
                                   {"count", count},
                                   {"tvd", acc.tvd},
                                   {"itp", acc.itp},
                                   {"itr", acc.itr}};
    if (report_out) *report_out = report;
    std::cout << report.dump() << '\n';
    return kExitOk;
}

}  // namespace scl::commands
