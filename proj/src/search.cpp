#include "scl/search.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <tuple>

#include "scl/io.hpp"

namespace scl {

ArchSample sample_arch(Rng& rng, HyperRaws* raws) {
    ArchSample a;
    const double s_exp = rng.uniform(0.0, 4.0);
    a.s = 1 + static_cast<int>(std::floor(std::exp2(s_exp)));
    const double v_exp = rng.uniform(0.0, 4.0);
    a.v = a.s + static_cast<int>(std::floor(std::exp2(v_exp)));
    const double d_mult = rng.uniform(1.0, 4.0);
    a.d = static_cast<int>(std::floor((a.v - 1) * d_mult));
    // Floor samplers are half-open at the top; clamping realizes the table's
    // inclusive ranges.
    a.d = std::clamp(a.d, a.v - 1, 4 * (a.v - 1));
    const double d_k_u = rng.uniform(1.0, static_cast<double>(a.d));
    a.d_k = std::clamp(static_cast<int>(std::floor(d_k_u)), 1, a.d);
    const double d_v_u = rng.uniform(static_cast<double>(a.v - 1), static_cast<double>(a.d));
    a.d_v = std::clamp(static_cast<int>(std::floor(d_v_u)), a.v - 1, a.d);
    if (raws) {
        raws->s_exp = s_exp;
        raws->v_exp = v_exp;
        raws->d_mult = d_mult;
        raws->d_k_u = d_k_u;
        raws->d_v_u = d_v_u;
    }
    return a;
}

HyperSample sample_member(const ArchSample& arch, Rng& rng, HyperRaws* raws) {
    HyperSample h;
    h.s = arch.s;
    h.v = arch.v;
    h.d = arch.d;
    h.d_k = arch.d_k;
    h.d_v = arch.d_v;

    const double norm_eps_log = rng.uniform(-10.0, -4.0);
    h.norm_eps = std::pow(10.0, norm_eps_log);
    const double beta1_log = rng.uniform(-2.0, 0.0);
    h.beta1 = 1.0 - std::pow(10.0, beta1_log);
    const double beta2_log = rng.uniform(-8.0, -1.0);
    h.beta2 = 1.0 - std::pow(10.0, beta2_log);
    const double wd_log = rng.uniform(-6.0, 0.0);
    h.weight_decay = std::pow(10.0, wd_log);
    const double adam_eps_log = rng.uniform(-12.0, -8.0);
    h.adam_eps = std::pow(10.0, adam_eps_log);
    const double grad_norm_log = rng.uniform(-2.0, 2.0);
    h.max_grad_norm = std::pow(10.0, grad_norm_log);
    const double peak_lr_log = rng.uniform(-5.0, -1.0);
    h.peak_lr = std::pow(10.0, peak_lr_log);
    const double warmup_log = rng.uniform(-2.0, 6.0);
    h.warmup_steps = static_cast<long long>(std::floor(std::pow(10.0, warmup_log)));
    const double end_mult_log = rng.uniform(-4.0, 0.0);
    h.end_multiplier = std::pow(10.0, end_mult_log);
    const double p_embed_raw = rng.uniform(-0.5, 0.5);
    h.p_embed = std::max(0.0, p_embed_raw);
    const double p_resid_raw = rng.uniform(-0.5, 0.5);
    h.p_resid = std::max(0.0, p_resid_raw);
    const double bema_power_u = rng.uniform(0.0, 1.0);
    h.bema_power = bema_power_u;
    const double ema_lag_log = rng.uniform(0.0, 10.0);
    h.ema_lag = std::pow(10.0, ema_lag_log);
    const double ema_power_u = rng.uniform(0.0, 1.0);
    h.ema_power = ema_power_u;
    h.seed = rng.next_u64();

    if (raws) {
        raws->norm_eps_log = norm_eps_log;
        raws->beta1_log = beta1_log;
        raws->beta2_log = beta2_log;
        raws->wd_log = wd_log;
        raws->adam_eps_log = adam_eps_log;
        raws->grad_norm_log = grad_norm_log;
        raws->peak_lr_log = peak_lr_log;
        raws->warmup_log = warmup_log;
        raws->end_mult_log = end_mult_log;
        raws->p_embed_raw = p_embed_raw;
        raws->p_resid_raw = p_resid_raw;
        raws->bema_power_u = bema_power_u;
        raws->ema_lag_log = ema_lag_log;
        raws->ema_power_u = ema_power_u;
    }
    return h;
}

HyperSample sample_hypers(Rng& rng, HyperRaws* raws) {
    const ArchSample arch = sample_arch(rng, raws);
    return sample_member(arch, rng, raws);
}

nlohmann::json sampler_constants_json() {
    const auto row = [](const char* transform, double lo, double hi) {
        return nlohmann::json{{"transform", transform}, {"lo", lo}, {"hi", hi}};
    };
    return {
        {"s", row("1+floor(2^u)", 0, 4)},
        {"v", row("s+floor(2^u)", 0, 4)},
        {"d", row("floor((v-1)*u)", 1, 4)},
        {"d_k", row("floor(u)", 1, -1)},   // hi = d
        {"d_v", row("floor(u)", -1, -1)},  // lo = v-1, hi = d
        {"norm_eps", row("10^u", -10, -4)},
        {"beta1", row("1-10^u", -2, 0)},
        {"beta2", row("1-10^u", -8, -1)},
        {"weight_decay", row("10^u", -6, 0)},
        {"adam_eps", row("10^u", -12, -8)},
        {"max_grad_norm", row("10^u", -2, 2)},
        {"peak_lr", row("10^u", -5, -1)},
        {"warmup_steps", row("floor(10^u)", -2, 6)},
        {"end_multiplier", row("10^u", -4, 0)},
        {"p_embed", row("relu(u)", -0.5, 0.5)},
        {"p_resid", row("relu(u)", -0.5, 0.5)},
        {"bema_power", row("u", 0, 1)},
        {"ema_lag", row("10^u", 0, 10)},
        {"ema_power", row("u", 0, 1)},
    };
}

DerivedAxes derived_axes(const HyperSample& h) {
    DerivedAxes a;
    a.gap = h.v - 1 - h.s;
    a.embed_dim_multiplier = static_cast<double>(h.d) / (h.v - 1);
    a.value_dim_coefficient =
        h.d == h.v - 1 ? 0.0
                       : static_cast<double>(h.d_v - h.v + 1) / (h.d - h.v + 1);
    return a;
}

nlohmann::json hyper_sample_to_json(const HyperSample& h) {
    return {{"s", h.s},
            {"v", h.v},
            {"d", h.d},
            {"d_k", h.d_k},
            {"d_v", h.d_v},
            {"norm_eps", h.norm_eps},
            {"beta1", h.beta1},
            {"beta2", h.beta2},
            {"weight_decay", h.weight_decay},
            {"adam_eps", h.adam_eps},
            {"max_grad_norm", h.max_grad_norm},
            {"peak_lr", h.peak_lr},
            {"warmup_steps", h.warmup_steps},
            {"end_multiplier", h.end_multiplier},
            {"p_embed", h.p_embed},
            {"p_resid", h.p_resid},
            {"bema_power", h.bema_power},
            {"ema_lag", h.ema_lag},
            {"ema_power", h.ema_power},
            {"seed", h.seed}};
}

HyperSample hyper_sample_from_json(const nlohmann::json& j) {
    HyperSample h;
    h.s = j.at("s").get<int>();
    h.v = j.at("v").get<int>();
    h.d = j.at("d").get<int>();
    h.d_k = j.at("d_k").get<int>();
    h.d_v = j.at("d_v").get<int>();
    h.norm_eps = j.at("norm_eps").get<double>();
    h.beta1 = j.at("beta1").get<double>();
    h.beta2 = j.at("beta2").get<double>();
    h.weight_decay = j.at("weight_decay").get<double>();
    h.adam_eps = j.at("adam_eps").get<double>();
    h.max_grad_norm = j.at("max_grad_norm").get<double>();
    h.peak_lr = j.at("peak_lr").get<double>();
    h.warmup_steps = j.at("warmup_steps").get<long long>();
    h.end_multiplier = j.at("end_multiplier").get<double>();
    h.p_embed = j.at("p_embed").get<double>();
    h.p_resid = j.at("p_resid").get<double>();
    h.bema_power = j.at("bema_power").get<double>();
    h.ema_lag = j.at("ema_lag").get<double>();
    h.ema_power = j.at("ema_power").get<double>();
    h.seed = j.at("seed").get<std::uint64_t>();
    return h;
}

nlohmann::json search_record_to_json(const SearchRecord& r) {
    return {{"arch", r.arch_index},
            {"member", r.member_index},
            {"hypers", hyper_sample_to_json(r.hypers)},
            {"derived",
             {{"gap", r.derived.gap},
              {"embed_dim_multiplier", r.derived.embed_dim_multiplier},
              {"value_dim_coefficient", r.derived.value_dim_coefficient}}},
            {"run", run_record_to_json(r.run)}};
}

SearchRecord search_record_from_json(const nlohmann::json& j) {
    SearchRecord r;
    r.arch_index = j.at("arch").get<int>();
    r.member_index = j.at("member").get<int>();
    r.hypers = hyper_sample_from_json(j.at("hypers"));
    r.derived.gap = j.at("derived").at("gap").get<int>();
    r.derived.embed_dim_multiplier = j.at("derived").at("embed_dim_multiplier").get<double>();
    r.derived.value_dim_coefficient =
        j.at("derived").at("value_dim_coefficient").get<double>();
    r.run = run_record_from_json(j.at("run"));
    return r;
}

SweepConfig sweep_config_from_json(const nlohmann::json& j) {
    SweepConfig c;
    c.global_seed = j.value("global_seed", c.global_seed);
    c.arch_count = j.value("arch_count", c.arch_count);
    c.members_per_arch = j.value("members_per_arch", c.members_per_arch);
    c.max_steps = j.value("max_steps", c.max_steps);
    c.validation_interval = j.value("validation_interval", c.validation_interval);
    c.patience = j.value("patience", c.patience);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.valid_size = j.value("valid_size", c.valid_size);
    c.jobs = j.value("jobs", c.jobs);
    c.norm = norm_mode_from_name(j.value("norm", std::string("rmsnorm")));
    return c;
}

nlohmann::json sweep_config_to_json(const SweepConfig& c) {
    return {{"global_seed", c.global_seed},
            {"arch_count", c.arch_count},
            {"members_per_arch", c.members_per_arch},
            {"max_steps", c.max_steps},
            {"validation_interval", c.validation_interval},
            {"patience", c.patience},
            {"batch_size", c.batch_size},
            {"valid_size", c.valid_size},
            {"jobs", c.jobs},
            {"norm", norm_mode_name(c.norm)}};
}

TrainRunConfig member_train_config(const HyperSample& h, const SweepConfig& sweep) {
    TrainRunConfig cfg;
    cfg.seed = h.seed;
    cfg.dims = ModelDims{h.v, h.d, h.d_k, h.d_v};
    cfg.norm = sweep.norm;
    cfg.norm_eps = h.norm_eps;
    cfg.train_len = h.s;
    cfg.batch_size = sweep.batch_size;
    cfg.valid_size = sweep.valid_size;
    cfg.max_steps = sweep.max_steps;
    cfg.validation_interval = sweep.validation_interval;
    cfg.patience = sweep.patience;
    cfg.opt = OptimizerHypers{h.beta1, h.beta2, h.weight_decay, h.adam_eps, h.max_grad_norm};
    cfg.sched = ScheduleSpec{h.peak_lr, h.warmup_steps, h.end_multiplier, sweep.max_steps};
    cfg.dropout = DropoutSpec{h.p_embed, h.p_resid, true};
    cfg.ema_grid = {{h.ema_lag, h.ema_power}};
    cfg.bema_powers = {h.bema_power};
    return cfg;
}

namespace {
// Validation steps at which a record improved its tracked TVD (the minimum of
// the training-parameter TVD and the best BEMA TVD at that event).
std::vector<long long> improvement_steps(const RunRecord& run) {
    std::vector<long long> steps;
    double best = std::numeric_limits<double>::infinity();
    for (const auto& ev : run.history) {
        double tracked = ev.valid.tvd;
        for (const auto& b : ev.bema) tracked = std::min(tracked, b.valid.tvd);
        if (tracked < best) {
            best = tracked;
            steps.push_back(ev.step);
        }
    }
    return steps;
}
}  // namespace

void run_ensembles(const SweepConfig& config,
                   const std::function<void(const SearchRecord&)>& sink,
                   const std::vector<SearchRecord>& completed) {
    if (config.arch_count < 1 || config.members_per_arch < 1)
        throw std::invalid_argument("sweep needs positive arch and member counts");

    std::map<std::pair<int, int>, const SearchRecord*> done;
    for (const auto& r : completed) done[{r.arch_index, r.member_index}] = &r;

    for (int arch_idx = 0; arch_idx < config.arch_count; ++arch_idx) {
        Rng arch_rng = Rng::derive(config.global_seed, "arch",
                                   static_cast<std::uint64_t>(arch_idx));
        const ArchSample arch = sample_arch(arch_rng);

        struct Member {
            int index;
            HyperSample hypers;
            std::unique_ptr<SingleRun> run;
            double best_tracked = std::numeric_limits<double>::infinity();
            bool finished = false;
        };
        std::vector<Member> members;
        // Improvement steps contributed by already-completed members.
        std::vector<long long> replayed_improvements;

        for (int m = 0; m < config.members_per_arch; ++m) {
            Rng member_rng = Rng::derive(config.global_seed, "member",
                                         static_cast<std::uint64_t>(arch_idx),
                                         static_cast<std::uint64_t>(m));
            HyperSample h = sample_member(arch, member_rng);
            if (auto it = done.find({arch_idx, m}); it != done.end()) {
                const auto steps = improvement_steps(it->second->run);
                replayed_improvements.insert(replayed_improvements.end(), steps.begin(),
                                             steps.end());
                continue;
            }
            Member mem;
            mem.index = m;
            mem.hypers = h;
            mem.run = std::make_unique<SingleRun>(member_train_config(h, config));
            members.push_back(std::move(mem));
        }

        long long last_improvement = -1;
        const auto finish_member = [&](Member& mem, const std::string& reason) {
            mem.run->finalize(reason);
            mem.finished = true;
            SearchRecord rec;
            rec.arch_index = arch_idx;
            rec.member_index = mem.index;
            rec.hypers = mem.hypers;
            rec.derived = derived_axes(mem.hypers);
            rec.run = mem.run->record();
            sink(rec);
            mem.run.reset();
        };

        while (true) {
            std::vector<int> active;
            for (int i = 0; i < static_cast<int>(members.size()); ++i)
                if (!members[i].finished) active.push_back(i);
            if (active.empty()) break;

            io::parallel_for(static_cast<int>(active.size()), config.jobs, [&](int k) {
                Member& mem = members[static_cast<std::size_t>(active[static_cast<std::size_t>(k)])];
                mem.run->advance_segment();
                if (!mem.run->diverged()) mem.run->run_validation();
            });

            // Barrier: fold improvements into the shared clock, retire members.
            long long barrier_step = 0;
            for (int i : active) {
                Member& mem = members[static_cast<std::size_t>(i)];
                barrier_step = std::max(barrier_step, mem.run->step());
                if (mem.run->diverged()) continue;
                if (mem.run->latest_tracked_tvd() < mem.best_tracked) {
                    mem.best_tracked = mem.run->latest_tracked_tvd();
                    mem.run->record().best_step = mem.run->step();
                    last_improvement = std::max(last_improvement, mem.run->step());
                }
            }
            for (long long s : replayed_improvements)
                if (s <= barrier_step) last_improvement = std::max(last_improvement, s);

            for (int i : active) {
                Member& mem = members[static_cast<std::size_t>(i)];
                if (mem.run->diverged()) finish_member(mem, "diverged");
            }

            const bool out_of_patience =
                last_improvement >= 0 && barrier_step - last_improvement >= config.patience;
            const bool at_max = barrier_step >= config.max_steps;
            if (out_of_patience || at_max) {
                const std::string reason = out_of_patience && !at_max ? "early_stop"
                                                                      : "max_steps";
                for (auto& mem : members)
                    if (!mem.finished) finish_member(mem, reason);
                break;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Summaries

namespace {
struct RecordBests {
    const SearchRecord* rec;
    MetricValues train;  // per-metric best over history
    MetricValues bema;
};

QuantileStats quantiles(std::vector<double> values) {
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    const auto mean_of = [&](std::size_t k) {
        double acc = 0.0;
        for (std::size_t i = 0; i < k; ++i) acc += values[i];
        return acc / static_cast<double>(k);
    };
    QuantileStats q;
    q.best = values.front();
    q.top1_mean = mean_of(std::max<std::size_t>(1, (n + 99) / 100));
    q.top10_mean = mean_of(std::max<std::size_t>(1, (n + 9) / 10));
    return q;
}

// Mean dropout rates over the best ceil(n/denom) records by `key`.
std::pair<double, double> dropout_in_top(std::vector<RecordBests> bests,
                                         const std::function<double(const RecordBests&)>& key,
                                         std::size_t denom) {
    std::sort(bests.begin(), bests.end(), [&](const RecordBests& a, const RecordBests& b) {
        return key(a) < key(b);
    });
    const std::size_t k = std::max<std::size_t>(1, (bests.size() + denom - 1) / denom);
    double pe = 0.0, pr = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        pe += bests[i].rec->hypers.p_embed;
        pr += bests[i].rec->hypers.p_resid;
    }
    return {pe / static_cast<double>(k), pr / static_cast<double>(k)};
}
}  // namespace

namespace {
int value_coeff_bucket_of(double c) { return c == 0.0 ? 0 : (c <= 0.5 ? 1 : 2); }
}  // namespace

std::vector<GroupSummary> summarize(const std::vector<SearchRecord>& records,
                                    bool group_dims) {
    if (records.empty()) throw std::invalid_argument("summarize: no records");

    std::map<std::tuple<int, int, int>, std::vector<const SearchRecord*>> groups;
    for (const auto& r : records) {
        const int mult = group_dims
                             ? static_cast<int>(std::floor(r.derived.embed_dim_multiplier))
                             : -1;
        const int coeff =
            group_dims ? value_coeff_bucket_of(r.derived.value_dim_coefficient) : -1;
        groups[{r.derived.gap, mult, coeff}].push_back(&r);
    }

    std::vector<GroupSummary> out;
    for (const auto& [key, recs] : groups) {
        GroupSummary g;
        g.gap = std::get<0>(key);
        g.embed_mult_floor = std::get<1>(key);
        g.value_coeff_bucket = std::get<2>(key);
        std::vector<RecordBests> bests;
        for (const auto* r : recs) {
            if (r->run.history.empty()) {
                ++g.diverged;
                continue;
            }
            RecordBests rb;
            rb.rec = r;
            rb.train = MetricValues{1e300, 1e300, 1e300};
            rb.bema = MetricValues{1e300, 1e300, 1e300};
            for (const auto& ev : r->run.history) {
                rb.train.tvd = std::min(rb.train.tvd, ev.valid.tvd);
                rb.train.itp = std::min(rb.train.itp, ev.valid.itp);
                rb.train.itr = std::min(rb.train.itr, ev.valid.itr);
                for (const auto& b : ev.bema) {
                    rb.bema.tvd = std::min(rb.bema.tvd, b.valid.tvd);
                    rb.bema.itp = std::min(rb.bema.itp, b.valid.itp);
                    rb.bema.itr = std::min(rb.bema.itr, b.valid.itr);
                }
            }
            bests.push_back(rb);
        }
        g.count = static_cast<int>(bests.size());
        if (bests.empty()) continue;  // all-diverged group: omitted from stats

        const auto collect = [&](auto&& proj) {
            std::vector<double> vals;
            vals.reserve(bests.size());
            for (const auto& b : bests) vals.push_back(proj(b));
            return quantiles(std::move(vals));
        };
        g.train_tvd = collect([](const RecordBests& b) { return b.train.tvd; });
        g.train_itp = collect([](const RecordBests& b) { return b.train.itp; });
        g.train_itr = collect([](const RecordBests& b) { return b.train.itr; });
        g.bema_tvd = collect([](const RecordBests& b) { return b.bema.tvd; });
        g.bema_itp = collect([](const RecordBests& b) { return b.bema.itp; });
        g.bema_itr = collect([](const RecordBests& b) { return b.bema.itr; });

        const auto by_train = [](const RecordBests& b) { return b.train.tvd; };
        const auto by_bema = [](const RecordBests& b) { return b.bema.tvd; };
        std::tie(g.embed_dropout_top1_train, g.resid_dropout_top1_train) =
            dropout_in_top(bests, by_train, 100);
        std::tie(g.embed_dropout_top10_train, g.resid_dropout_top10_train) =
            dropout_in_top(bests, by_train, 10);
        std::tie(g.embed_dropout_top1_bema, g.resid_dropout_top1_bema) =
            dropout_in_top(bests, by_bema, 100);
        std::tie(g.embed_dropout_top10_bema, g.resid_dropout_top10_bema) =
            dropout_in_top(bests, by_bema, 10);
        out.push_back(g);
    }
    return out;
}

std::string summary_to_csv(const std::vector<GroupSummary>& groups, bool group_dims) {
    std::ostringstream os;
    os << "gap";
    if (group_dims) os << ",embed_mult_floor,value_coeff_bucket";
    os << ",count,diverged";
    for (const char* fam : {"train", "bema"})
        for (const char* metric : {"tvd", "itp", "itr"})
            for (const char* stat : {"best", "top1_mean", "top10_mean"})
                os << ',' << fam << '_' << metric << '_' << stat;
    os << ",embed_dropout_top1_train,resid_dropout_top1_train"
          ",embed_dropout_top10_train,resid_dropout_top10_train"
          ",embed_dropout_top1_bema,resid_dropout_top1_bema"
          ",embed_dropout_top10_bema,resid_dropout_top10_bema\n";

    char buf[64];
    const auto put = [&](double x) {
        std::snprintf(buf, sizeof(buf), "%.12g", x);
        os << ',' << buf;
    };
    for (const auto& g : groups) {
        os << g.gap;
        if (group_dims) os << ',' << g.embed_mult_floor << ',' << g.value_coeff_bucket;
        os << ',' << g.count << ',' << g.diverged;
        for (const QuantileStats* q :
             {&g.train_tvd, &g.train_itp, &g.train_itr, &g.bema_tvd, &g.bema_itp, &g.bema_itr}) {
            put(q->best);
            put(q->top1_mean);
            put(q->top10_mean);
        }
        put(g.embed_dropout_top1_train);
        put(g.resid_dropout_top1_train);
        put(g.embed_dropout_top10_train);
        put(g.resid_dropout_top10_train);
        put(g.embed_dropout_top1_bema);
        put(g.resid_dropout_top1_bema);
        put(g.embed_dropout_top10_bema);
        put(g.resid_dropout_top10_bema);
        os << '\n';
    }
    return os.str();
}

}  // namespace scl
