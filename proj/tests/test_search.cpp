#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "support/stats.hpp"
#include "scl/search.hpp"

using namespace scl;

TEST_CASE("sampled hyperparameters stay inside the table ranges") {
    Rng rng(211);
    int zero_embed = 0, zero_resid = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const HyperSample h = sample_hypers(rng);
        CHECK(h.s >= 2);
        CHECK(h.s <= 17);
        CHECK(h.v >= 3);
        CHECK(h.v <= 33);
        CHECK(h.s < h.v);
        CHECK(h.d >= h.v - 1);
        CHECK(h.d <= 128);
        CHECK(h.d_k >= 1);
        CHECK(h.d_k <= h.d);
        CHECK(h.d_v >= h.v - 1);
        CHECK(h.d_v <= h.d);
        CHECK(h.norm_eps >= 1e-10);
        CHECK(h.norm_eps <= 1e-4);
        CHECK(h.beta1 >= 0.0);
        CHECK(h.beta1 <= 1.0 - 1e-2);
        CHECK(h.beta2 >= 1.0 - 1e-1);
        CHECK(h.beta2 <= 1.0 - 1e-8);
        CHECK(h.weight_decay >= 1e-6);
        CHECK(h.weight_decay <= 1.0);
        CHECK(h.adam_eps >= 1e-12);
        CHECK(h.adam_eps <= 1e-8);
        CHECK(h.max_grad_norm >= 1e-2);
        CHECK(h.max_grad_norm <= 1e2);
        CHECK(h.peak_lr >= 1e-5);
        CHECK(h.peak_lr <= 1e-1);
        CHECK(h.warmup_steps >= 0);
        CHECK(h.warmup_steps <= 1000000);
        CHECK(h.end_multiplier >= 1e-4);
        CHECK(h.end_multiplier <= 1.0);
        CHECK(h.p_embed >= 0.0);
        CHECK(h.p_embed <= 0.5);
        CHECK(h.p_resid >= 0.0);
        CHECK(h.p_resid <= 0.5);
        CHECK(h.bema_power >= 0.0);
        CHECK(h.bema_power <= 1.0);
        CHECK(h.ema_lag >= 1.0);
        CHECK(h.ema_lag <= 1e10);
        CHECK(h.ema_power >= 0.0);
        CHECK(h.ema_power <= 1.0);
        zero_embed += h.p_embed == 0.0 ? 1 : 0;
        zero_resid += h.p_resid == 0.0 ? 1 : 0;
    }
    // relu of a symmetric uniform is exactly zero half the time
    const double sigma = std::sqrt(n * 0.25);
    CHECK(std::abs(zero_embed - n / 2.0) <= 3.0 * sigma);
    CHECK(std::abs(zero_resid - n / 2.0) <= 3.0 * sigma);
}

TEST_CASE("raw draws are uniform in the transformed spaces (KS)") {
    Rng rng(223);
    const int n = 20000;
    std::vector<double> lr_log, s_exp, bema_u, warmup_log;
    lr_log.reserve(n);
    for (int i = 0; i < n; ++i) {
        HyperRaws raws{};
        (void)sample_hypers(rng, &raws);
        lr_log.push_back(raws.peak_lr_log);
        s_exp.push_back(raws.s_exp);
        bema_u.push_back(raws.bema_power_u);
        warmup_log.push_back(raws.warmup_log);
    }
    CHECK(teststats::ks_uniform_pvalue(lr_log, -5.0, -1.0) > 0.001);
    CHECK(teststats::ks_uniform_pvalue(s_exp, 0.0, 4.0) > 0.001);
    CHECK(teststats::ks_uniform_pvalue(bema_u, 0.0, 1.0) > 0.001);
    CHECK(teststats::ks_uniform_pvalue(warmup_log, -2.0, 6.0) > 0.001);
}

TEST_CASE("derived axes") {
    HyperSample h;
    h.s = 3;
    h.v = 8;
    h.d = 14;
    h.d_v = 10;
    const DerivedAxes a = derived_axes(h);
    CHECK(a.gap == 4);  // v-1-s
    CHECK(a.embed_dim_multiplier == doctest::Approx(2.0));
    CHECK(a.value_dim_coefficient == doctest::Approx(3.0 / 7.0));

    h.d = 7;
    h.d_v = 7;
    CHECK(derived_axes(h).value_dim_coefficient == 0.0);
}

TEST_CASE("hyper samples round-trip through json") {
    Rng rng(227);
    for (int i = 0; i < 50; ++i) {
        const HyperSample h = sample_hypers(rng);
        const HyperSample back = hyper_sample_from_json(hyper_sample_to_json(h));
        CHECK(hyper_sample_to_json(back).dump() == hyper_sample_to_json(h).dump());
    }
}

namespace {
SweepConfig tiny_sweep(std::uint64_t seed) {
    SweepConfig cfg;
    cfg.global_seed = seed;
    cfg.arch_count = 2;
    cfg.members_per_arch = 3;
    cfg.max_steps = 40;
    cfg.validation_interval = 20;
    cfg.patience = 1000;
    cfg.batch_size = 4;
    cfg.valid_size = 16;
    cfg.jobs = 2;
    return cfg;
}

std::string records_string(const SweepConfig& cfg,
                           const std::vector<SearchRecord>& completed = {}) {
    std::ostringstream os;
    run_ensembles(cfg, [&](const SearchRecord& r) {
        os << search_record_to_json(r).dump() << '\n';
    }, completed);
    return os.str();
}
}  // namespace

TEST_CASE("tiny sweep produces one record per member, deterministically") {
    const SweepConfig cfg = tiny_sweep(1234);
    const std::string a = records_string(cfg);
    const std::string b = records_string(cfg);

    // identical apart from wall-clock fields
    const auto strip = [](const std::string& text) {
        std::istringstream in(text);
        std::string line, out;
        while (std::getline(in, line)) {
            auto j = nlohmann::json::parse(line);
            for (auto& ev : j["run"]["history"]) ev.erase("wall_ms");
            out += j.dump() + "\n";
        }
        return out;
    };
    CHECK(strip(a) == strip(b));

    std::istringstream in(a);
    std::string line;
    std::set<std::pair<int, int>> seen;
    int count = 0;
    while (std::getline(in, line)) {
        const SearchRecord rec = search_record_from_json(nlohmann::json::parse(line));
        seen.insert({rec.arch_index, rec.member_index});
        CHECK(rec.run.final_step <= cfg.max_steps);
        CHECK(rec.derived.gap == rec.hypers.v - 1 - rec.hypers.s);
        ++count;
    }
    CHECK(count == 6);
    CHECK(seen.size() == 6);
}

TEST_CASE("resume skips completed members and fills in the rest") {
    const SweepConfig cfg = tiny_sweep(555);
    std::vector<SearchRecord> all;
    run_ensembles(cfg, [&](const SearchRecord& r) { all.push_back(r); });
    REQUIRE(all.size() == 6);

    // pretend the first three finished before an interrupt
    std::vector<SearchRecord> done(all.begin(), all.begin() + 3);
    std::vector<SearchRecord> fresh;
    run_ensembles(cfg, [&](const SearchRecord& r) { fresh.push_back(r); }, done);
    CHECK(fresh.size() == 3);
    std::set<std::pair<int, int>> fresh_keys;
    for (const auto& r : fresh) fresh_keys.insert({r.arch_index, r.member_index});
    for (const auto& r : done) CHECK_FALSE(fresh_keys.count({r.arch_index, r.member_index}));

    // recomputed members match the uninterrupted sweep byte for byte
    // (wall-clock stripped)
    const auto key_of = [](const SearchRecord& r) {
        return std::make_pair(r.arch_index, r.member_index);
    };
    for (const auto& r : fresh) {
        const auto it = std::find_if(all.begin(), all.end(), [&](const SearchRecord& x) {
            return key_of(x) == key_of(r);
        });
        REQUIRE(it != all.end());
        auto ja = search_record_to_json(r);
        auto jb = search_record_to_json(*it);
        for (auto& ev : ja["run"]["history"]) ev.erase("wall_ms");
        for (auto& ev : jb["run"]["history"]) ev.erase("wall_ms");
        CHECK(ja.dump() == jb.dump());
    }
}

namespace {
SearchRecord fake_record(int arch, int member, int gap, double train_tvd, double bema_tvd,
                         double p_embed) {
    SearchRecord r;
    r.arch_index = arch;
    r.member_index = member;
    r.hypers.s = 2;
    r.hypers.v = gap + 3;
    r.hypers.d = r.hypers.v - 1;
    r.hypers.d_v = r.hypers.v - 1;
    r.hypers.d_k = 1;
    r.hypers.p_embed = p_embed;
    r.derived = derived_axes(r.hypers);
    ValidationEvent ev;
    ev.step = 10;
    ev.valid = MetricValues{train_tvd, train_tvd / 2, 0.0};
    BemaMetricRecord b;
    b.valid = MetricValues{bema_tvd, bema_tvd / 2, 0.0};
    ev.bema.push_back(b);
    r.run.history.push_back(ev);
    return r;
}
}  // namespace

TEST_CASE("summaries compute order statistics per gap") {
    std::vector<SearchRecord> records;
    for (int i = 0; i < 10; ++i)
        records.push_back(fake_record(0, i, 4, 0.1 * (i + 1), 0.05 * (i + 1), 0.01 * i));

    const auto groups = summarize(records);
    REQUIRE(groups.size() == 1);
    const GroupSummary& g = groups[0];
    CHECK(g.gap == 4);
    CHECK(g.count == 10);
    CHECK(g.train_tvd.best == doctest::Approx(0.1));
    CHECK(g.train_tvd.top1_mean == doctest::Approx(0.1));   // ceil(10/100) = 1 record
    CHECK(g.train_tvd.top10_mean == doctest::Approx(0.1));  // ceil(10/10) = 1 record
    CHECK(g.bema_tvd.best == doctest::Approx(0.05));

    // single record: best = top1 = top10
    const auto solo = summarize({records[3]});
    REQUIRE(solo.size() == 1);
    CHECK(solo[0].train_tvd.best == solo[0].train_tvd.top1_mean);
    CHECK(solo[0].train_tvd.best == solo[0].train_tvd.top10_mean);
}

TEST_CASE("summaries are permutation invariant and split by gap") {
    std::vector<SearchRecord> records;
    for (int i = 0; i < 6; ++i) records.push_back(fake_record(0, i, 2, 0.3 + 0.01 * i, 0.2, 0.0));
    for (int i = 0; i < 4; ++i) records.push_back(fake_record(1, i, 7, 0.5 + 0.01 * i, 0.4, 0.1));

    const std::string csv_a = summary_to_csv(summarize(records));
    std::reverse(records.begin(), records.end());
    const std::string csv_b = summary_to_csv(summarize(records));
    CHECK(csv_a == csv_b);
    CHECK(summarize(records).size() == 2);

    // header + 2 group rows
    CHECK(std::count(csv_a.begin(), csv_a.end(), '\n') == 3);
}

TEST_CASE("dimension-multiplier grouping splits a gap into buckets") {
    std::vector<SearchRecord> records;
    for (int i = 0; i < 4; ++i) {
        SearchRecord r = fake_record(0, i, 4, 0.2 + 0.01 * i, 0.1, 0.0);
        r.hypers.d = (i < 2) ? r.hypers.v - 1 : 3 * (r.hypers.v - 1);
        r.hypers.d_v = r.hypers.v - 1;
        r.derived = derived_axes(r.hypers);
        records.push_back(r);
    }
    const auto flat = summarize(records, false);
    CHECK(flat.size() == 1);
    const auto split = summarize(records, true);
    CHECK(split.size() == 2);
    const std::string csv = summary_to_csv(split, true);
    CHECK(csv.find("embed_mult_floor") != std::string::npos);
}

TEST_CASE("diverged records are counted but not ranked") {
    std::vector<SearchRecord> records;
    records.push_back(fake_record(0, 0, 3, 0.2, 0.1, 0.0));
    SearchRecord dead = fake_record(0, 1, 3, 0.9, 0.9, 0.0);
    dead.run.history.clear();
    dead.run.diverged = true;
    records.push_back(dead);

    const auto groups = summarize(records);
    REQUIRE(groups.size() == 1);
    CHECK(groups[0].count == 1);
    CHECK(groups[0].diverged == 1);
    CHECK(groups[0].train_tvd.best == doctest::Approx(0.2));
}

TEST_CASE("member train config wiring") {
    Rng rng(229);
    const HyperSample h = sample_hypers(rng);
    SweepConfig sweep;
    sweep.max_steps = 777;
    const TrainRunConfig cfg = member_train_config(h, sweep);
    CHECK(cfg.dims.v == h.v);
    CHECK(cfg.dims.d == h.d);
    CHECK(cfg.train_len == h.s);
    CHECK(cfg.opt.beta1 == h.beta1);
    CHECK(cfg.sched.peak_lr == h.peak_lr);
    CHECK(cfg.sched.max_steps == 777);
    CHECK(cfg.dropout.enabled);
    REQUIRE(cfg.ema_grid.size() == 1);
    CHECK(cfg.ema_grid[0].first == h.ema_lag);
    CHECK(cfg.ema_grid[0].second == h.ema_power);
    REQUIRE(cfg.bema_powers.size() == 1);
    CHECK(cfg.bema_powers[0] == h.bema_power);
    CHECK(cfg.seed == h.seed);
}
