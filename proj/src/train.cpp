#include "scl/train.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>

namespace scl {

OptimizerState make_optimizer_state(const ModelDims& dims) {
    OptimizerState s;
    s.m = ParamSet::zeros(dims);
    s.v = ParamSet::zeros(dims);
    return s;
}

double lr_at(long long step, const ScheduleSpec& sched) {
    if (step < 0 || step > sched.max_steps)
        throw std::invalid_argument("lr_at: step outside [0, max_steps]");
    if (sched.warmup_steps > 0 && step < sched.warmup_steps)
        return sched.peak_lr * static_cast<double>(step + 1) /
               static_cast<double>(sched.warmup_steps);
    if (sched.max_steps <= sched.warmup_steps) return sched.peak_lr;
    const double frac = static_cast<double>(step - sched.warmup_steps) /
                        static_cast<double>(sched.max_steps - sched.warmup_steps);
    return sched.peak_lr * (1.0 - frac * (1.0 - sched.end_multiplier));
}

double nll_loss(const Eigen::VectorXd& logits, int target) {
    if (target < 0 || target >= logits.size())
        throw std::invalid_argument("nll_loss: target outside vocabulary");
    const double m = logits.maxCoeff();
    const double lse = m + std::log((logits.array() - m).exp().sum());
    return lse - logits[target];
}

void backward(const ModelParams& p, const ForwardTrace& trace,
              const Eigen::VectorXd& g_logits, ParamSet& grads, TrainWorkspace& ws) {
    const int s = static_cast<int>(trace.tokens.size());
    const int last = s - 1;
    const bool dropout = trace.masks.active;

    // logits = U^T (x_dropped[last] + displacement)
    grads.U.noalias() +=
        (trace.x_dropped.row(last).transpose() + trace.displacement) * g_logits.transpose();
    ws.gy.noalias() = p.U * g_logits;  // d; feeds both the bias and value paths

    // displacement = out_dropped^T attn_w
    ws.g_out.noalias() = trace.attn_w * ws.gy.transpose();  // s x d, grad of out_dropped
    ws.g_attn_w.noalias() = trace.out_dropped * ws.gy;      // s

    if (dropout) ws.g_out = ws.g_out.cwiseProduct(trace.masks.resid);

    // out_rows = values * W_O
    grads.W_O.noalias() += trace.values.transpose() * ws.g_out;
    ws.g_values.noalias() = ws.g_out * p.W_O.transpose();

    // values = normed * W_V
    grads.W_V.noalias() += trace.normed.transpose() * ws.g_values;
    ws.g_normed.noalias() = ws.g_values * p.W_V.transpose();

    // attn_w = softmax(attn_logit); attn_logit = keys * query / sqrt(d_k)
    const double dot = trace.attn_w.dot(ws.g_attn_w);
    ws.g_sigma = (trace.attn_w.array() * (ws.g_attn_w.array() - dot)).matrix() /
                 std::sqrt(static_cast<double>(p.dims.d_k));

    ws.g_query.noalias() = trace.keys.transpose() * ws.g_sigma;
    ws.g_keys.noalias() = ws.g_sigma * trace.query.transpose();

    // query = W_Q^T normed[last]; keys = normed * W_K
    grads.W_Q.noalias() += trace.normed.row(last).transpose() * ws.g_query.transpose();
    ws.g_normed.row(last).noalias() += (p.W_Q * ws.g_query).transpose();
    grads.W_K.noalias() += trace.normed.transpose() * ws.g_keys;
    ws.g_normed.noalias() += ws.g_keys * p.W_K.transpose();

    // Norm rows back to the dropped embeddings, then through embed dropout
    // into E. The bias path feeds x_dropped[last] directly.
    const int d = p.dims.d;
    for (int i = 0; i < s; ++i) {
        if (p.norm == NormMode::identity) {
            ws.g_row = ws.g_normed.row(i);
        } else {
            // n = gains .* x * inv_r with inv_r = 1/sqrt(mean(x^2)+eps):
            // g_x = (gains .* g_n) inv_r - x * (sum g_n.*gains.*x) inv_r^3 / d
            const double inv_r = trace.inv_rms[i];
            const double c = ws.g_normed.row(i)
                                 .cwiseProduct(p.gains.transpose())
                                 .cwiseProduct(trace.x_dropped.row(i))
                                 .sum();
            grads.gains.noalias() += (ws.g_normed.row(i).cwiseProduct(trace.x_dropped.row(i)) *
                                      inv_r).transpose();
            ws.g_row = ws.g_normed.row(i).cwiseProduct(p.gains.transpose()) * inv_r -
                       trace.x_dropped.row(i) * (c * inv_r * inv_r * inv_r / d);
        }
        if (i == last) ws.g_row += ws.gy.transpose();
        if (dropout) ws.g_row = ws.g_row.cwiseProduct(trace.masks.embed.row(i));
        grads.E.row(trace.tokens[static_cast<std::size_t>(i)]) += ws.g_row;
    }
}

namespace {
// Shared inner loop over rows and prefixes; grad toggles backward accumulation.
double prefix_loss_impl(const ModelParams& p, const SampleBatch& batch,
                        const DropoutSpec& dropout, Rng* rng, ParamSet* grads,
                        TrainWorkspace& ws) {
    if (batch.row_len < 2)
        throw std::invalid_argument("batch loss: carriers must have length >= 2");
    const int s = batch.row_len - 1;
    const double weight = 1.0 / (static_cast<double>(batch.n_rows) * s);
    double loss = 0.0;
    for (int i = 0; i < batch.n_rows; ++i) {
        const auto row = batch.row(i);
        for (int len = 1; len <= s; ++len) {
            forward(p, row.subspan(0, static_cast<std::size_t>(len)), dropout, rng, ws.trace);
            const int target = row[len];
            const double m = ws.trace.logits.maxCoeff();
            ws.probs = (ws.trace.logits.array() - m).exp();
            const double z = ws.probs.sum();
            loss += weight * (std::log(z) + m - ws.trace.logits[target]);
            if (grads != nullptr) {
                ws.g_logits = ws.probs * (weight / z);
                ws.g_logits[target] -= weight;
                backward(p, ws.trace, ws.g_logits, *grads, ws);
            }
        }
    }
    return loss;
}
}  // namespace

double batch_loss(const ModelParams& p, const SampleBatch& batch, const DropoutSpec& dropout,
                  Rng* rng, TrainWorkspace& ws) {
    return prefix_loss_impl(p, batch, dropout, rng, nullptr, ws);
}

double batch_loss_grad(const ModelParams& p, const SampleBatch& batch,
                       const DropoutSpec& dropout, Rng* rng, ParamSet& grads,
                       TrainWorkspace& ws) {
    grads.set_zero();
    return prefix_loss_impl(p, batch, dropout, rng, &grads, ws);
}

double clip_gradients(ParamSet& grads, double max_norm) {
    if (max_norm <= 0.0) throw std::invalid_argument("clip: max_norm must be positive");
    double sq = 0.0;
    for_each_tensor([&](bool, const auto& g) { sq += g.squaredNorm(); }, grads);
    const double norm = std::sqrt(sq);
    if (norm > max_norm) {
        const double scale = max_norm / norm;
        for_each_tensor([scale](bool, auto& g) { g *= scale; }, grads);
    }
    return norm;
}

void adamw_step(ModelParams& params, const ParamSet& grads, OptimizerState& state,
                const OptimizerHypers& h, double lr) {
    state.step += 1;
    const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
    for_each_tensor(
        [&](bool decay_allowed, auto& t, const auto& g, auto& m, auto& v) {
            m.array() = h.beta1 * m.array() + (1.0 - h.beta1) * g.array();
            v.array() = h.beta2 * v.array() + (1.0 - h.beta2) * g.array().square();
            if (decay_allowed && h.weight_decay > 0.0) t.array() *= 1.0 - lr * h.weight_decay;
            t.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + h.eps);
        },
        static_cast<ParamSet&>(params), grads, state.m, state.v);
}

// ---------------------------------------------------------------------------
// Run orchestration

SingleRun::SingleRun(TrainRunConfig cfg) : cfg_(std::move(cfg)) {
    Rng init_rng = Rng::derive(cfg_.seed, "init");
    params_ = init_params(cfg_.dims, cfg_.norm, cfg_.norm_eps, init_rng);
    opt_state_ = make_optimizer_state(cfg_.dims);
    bema_grid_ = make_bema_grid(params_, cfg_.ema_grid, cfg_.bema_powers);
    grads_ = ParamSet::zeros(cfg_.dims);
    record_.seed = cfg_.seed;
    record_.dims = cfg_.dims;
    record_.train_len = cfg_.train_len;
}

void SingleRun::advance_segment() {
    const long long boundary =
        std::min(cfg_.max_steps,
                 (step_ / cfg_.validation_interval + 1) * cfg_.validation_interval);
    while (step_ < boundary && !diverged_) {
        Rng batch_rng = Rng::derive(cfg_.seed, "batch", static_cast<std::uint64_t>(step_));
        const SampleBatch batch =
            make_training_batch(cfg_.dims.v, cfg_.train_len, cfg_.batch_size, batch_rng);
        Rng drop_rng = Rng::derive(cfg_.seed, "drop", static_cast<std::uint64_t>(step_));
        const double loss =
            batch_loss_grad(params_, batch, cfg_.dropout, &drop_rng, grads_, ws_);
        if (!std::isfinite(loss)) {
            diverged_ = true;
            break;
        }
        loss_accum_ += loss;
        ++loss_count_;
        clip_gradients(grads_, cfg_.opt.max_grad_norm);
        adamw_step(params_, grads_, opt_state_, cfg_.opt, lr_at(step_, cfg_.sched));
        if (!params_.all_finite()) {
            diverged_ = true;
            break;
        }
        bema_grid_.update(params_);
        ++step_;
    }
    if (diverged_) {
        record_.diverged = true;
        record_.diverged_step = step_;
    }
}

ModelParams SingleRun::bema_model_at(std::size_t entry_index) const {
    const auto entries = bema_grid_.entries();
    const auto& e = entries.at(entry_index);
    return bema_model(*e.state, params_, e.bema_power);
}

const ValidationEvent& SingleRun::run_validation() {
    const auto t0 = std::chrono::steady_clock::now();
    ValidationEvent ev;
    ev.step = step_;
    ev.mean_loss = loss_count_ > 0 ? loss_accum_ / static_cast<double>(loss_count_) : 0.0;
    loss_accum_ = 0.0;
    loss_count_ = 0;
    ev.lr = lr_at(std::min(step_, cfg_.sched.max_steps), cfg_.sched);

    // One fixed validation set per run: improvements in the tracked TVD then
    // reflect parameter movement, never sampling noise.
    if (valid_batch_.n_rows == 0) {
        Rng vrng = Rng::derive(cfg_.seed, "valid");
        valid_batch_ = make_validation_batch(cfg_.dims.v, cfg_.valid_size, vrng);
        Rng trng = Rng::derive(cfg_.seed, "valid_trainlen");
        trainlen_batch_ = make_batch(cfg_.dims.v, cfg_.train_len, cfg_.valid_size, trng);
    }
    const SampleBatch& vbatch = valid_batch_;
    const SampleBatch& tbatch = trainlen_batch_;

    ForwardTrace scratch;
    const auto predictor_for = [&scratch](const ModelParams& mp) {
        return [&scratch, &mp](std::span<const int> prefix, Eigen::VectorXd& out) {
            forward(mp, prefix, scratch);
            out = scratch.logits;
        };
    };

    ev.valid = evaluate(predictor_for(params_), vbatch);
    ev.trainlen = evaluate(predictor_for(params_), tbatch);

    double tracked = ev.valid.tvd;
    double best_bema = std::numeric_limits<double>::infinity();
    for (const auto& entry : bema_grid_.entries()) {
        const ModelParams bm = bema_model(*entry.state, params_, entry.bema_power);
        BemaMetricRecord rec;
        rec.ema_lag = entry.ema_lag;
        rec.ema_power = entry.ema_power;
        rec.bema_power = entry.bema_power;
        rec.valid = evaluate(predictor_for(bm), vbatch);
        rec.trainlen = evaluate(predictor_for(bm), tbatch);
        best_bema = std::min(best_bema, rec.valid.tvd);
        tracked = std::min(tracked, rec.valid.tvd);
        ev.bema.push_back(std::move(rec));
    }
    latest_tracked_tvd_ = tracked;

    record_.best_valid_tvd_train = std::min(record_.best_valid_tvd_train, ev.valid.tvd);
    record_.best_valid_tvd_bema = std::min(record_.best_valid_tvd_bema, best_bema);

    ev.wall_ms = std::chrono::duration<double, std::milli>(
                     std::chrono::steady_clock::now() - t0)
                     .count();
    ++event_index_;
    record_.history.push_back(ev);
    return record_.history.back();
}

void SingleRun::finalize(const std::string& stop_reason) {
    record_.stop_reason = stop_reason;
    record_.final_step = step_;
}

void drive_run(SingleRun& run, const std::function<void(const ValidationEvent&)>& on_event,
               const std::function<bool(const ValidationEvent&)>& stop_target) {
    const TrainRunConfig& cfg = run.config();
    double best_tvd = std::numeric_limits<double>::infinity();
    long long best_step = -1;
    std::string stop_reason = "max_steps";
    while (true) {
        run.advance_segment();
        if (run.diverged()) {
            stop_reason = "diverged";
            break;
        }
        const ValidationEvent& ev = run.run_validation();
        if (on_event) on_event(ev);
        if (run.latest_tracked_tvd() < best_tvd) {
            best_tvd = run.latest_tracked_tvd();
            best_step = ev.step;
            run.record().best_step = best_step;
        }
        if (stop_target && stop_target(ev)) {
            stop_reason = "target";
            break;
        }
        if (best_step >= 0 && ev.step - best_step >= cfg.patience) {
            stop_reason = "early_stop";
            break;
        }
        if (run.at_max_steps()) break;
    }
    run.finalize(stop_reason);
}

RunRecord train_run(const TrainRunConfig& cfg,
                    const std::function<void(const ValidationEvent&)>& on_event,
                    const std::function<bool(const ValidationEvent&)>& stop_target) {
    SingleRun run(cfg);
    drive_run(run, on_event, stop_target);
    return run.record();
}

nlohmann::json train_config_to_json(const TrainRunConfig& cfg) {
    nlohmann::json ema = nlohmann::json::array();
    for (const auto& [lag, power] : cfg.ema_grid)
        ema.push_back({{"ema_lag", lag}, {"ema_power", power}});
    return {{"seed", cfg.seed},
            {"dims",
             {{"v", cfg.dims.v}, {"d", cfg.dims.d}, {"d_k", cfg.dims.d_k}, {"d_v", cfg.dims.d_v}}},
            {"norm", norm_mode_name(cfg.norm)},
            {"norm_eps", cfg.norm_eps},
            {"train_len", cfg.train_len},
            {"batch_size", cfg.batch_size},
            {"valid_size", cfg.valid_size},
            {"max_steps", cfg.max_steps},
            {"validation_interval", cfg.validation_interval},
            {"patience", cfg.patience},
            {"optimizer",
             {{"beta1", cfg.opt.beta1},
              {"beta2", cfg.opt.beta2},
              {"weight_decay", cfg.opt.weight_decay},
              {"eps", cfg.opt.eps},
              {"max_grad_norm", cfg.opt.max_grad_norm}}},
            {"schedule",
             {{"peak_lr", cfg.sched.peak_lr},
              {"warmup_steps", cfg.sched.warmup_steps},
              {"end_multiplier", cfg.sched.end_multiplier}}},
            {"dropout",
             {{"p_embed", cfg.dropout.p_embed},
              {"p_resid", cfg.dropout.p_resid},
              {"enabled", cfg.dropout.enabled}}},
            {"ema_grid", std::move(ema)},
            {"bema_powers", cfg.bema_powers}};
}

TrainRunConfig train_config_from_json(const nlohmann::json& j) {
    TrainRunConfig cfg;
    cfg.seed = j.value("seed", cfg.seed);
    const auto& dims = j.at("dims");
    cfg.dims = ModelDims{dims.at("v").get<int>(), dims.at("d").get<int>(),
                         dims.at("d_k").get<int>(), dims.at("d_v").get<int>()};
    cfg.norm = norm_mode_from_name(j.value("norm", std::string("rmsnorm")));
    cfg.norm_eps = j.value("norm_eps", cfg.norm_eps);
    cfg.train_len = j.at("train_len").get<int>();
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.valid_size = j.value("valid_size", cfg.valid_size);
    cfg.max_steps = j.value("max_steps", cfg.max_steps);
    cfg.validation_interval = j.value("validation_interval", cfg.validation_interval);
    cfg.patience = j.value("patience", cfg.patience);
    if (j.contains("optimizer")) {
        const auto& o = j.at("optimizer");
        cfg.opt.beta1 = o.value("beta1", cfg.opt.beta1);
        cfg.opt.beta2 = o.value("beta2", cfg.opt.beta2);
        cfg.opt.weight_decay = o.value("weight_decay", cfg.opt.weight_decay);
        cfg.opt.eps = o.value("eps", cfg.opt.eps);
        cfg.opt.max_grad_norm = o.value("max_grad_norm", cfg.opt.max_grad_norm);
    }
    if (j.contains("schedule")) {
        const auto& s = j.at("schedule");
        cfg.sched.peak_lr = s.value("peak_lr", cfg.sched.peak_lr);
        cfg.sched.warmup_steps = s.value("warmup_steps", cfg.sched.warmup_steps);
        cfg.sched.end_multiplier = s.value("end_multiplier", cfg.sched.end_multiplier);
    }
    cfg.sched.max_steps = cfg.max_steps;  // the decay horizon ignores early stopping
    if (j.contains("dropout")) {
        const auto& d = j.at("dropout");
        cfg.dropout.p_embed = d.value("p_embed", cfg.dropout.p_embed);
        cfg.dropout.p_resid = d.value("p_resid", cfg.dropout.p_resid);
        cfg.dropout.enabled = d.value("enabled", cfg.dropout.p_embed > 0.0 ||
                                                     cfg.dropout.p_resid > 0.0);
    }
    if (j.contains("bema")) {
        const auto& b = j.at("bema");
        cfg.ema_grid = {{b.value("ema_lag", 10.0), b.value("ema_power", 0.5)}};
        cfg.bema_powers = {b.value("bema_power", 0.5)};
    }
    if (j.contains("ema_grid")) {
        cfg.ema_grid.clear();
        for (const auto& e : j.at("ema_grid"))
            cfg.ema_grid.emplace_back(e.at("ema_lag").get<double>(),
                                      e.at("ema_power").get<double>());
    }
    if (j.contains("bema_powers"))
        cfg.bema_powers = j.at("bema_powers").get<std::vector<double>>();
    return cfg;
}

// ---------------------------------------------------------------------------
// JSON round-trips for the metric stream

namespace {
nlohmann::json metrics_to_json(const MetricValues& m) {
    return {{"tvd", m.tvd}, {"itp", m.itp}, {"itr", m.itr}};
}

MetricValues metrics_from_json(const nlohmann::json& j) {
    MetricValues m;
    m.tvd = j.at("tvd").get<double>();
    m.itp = j.at("itp").get<double>();
    m.itr = j.at("itr").get<double>();
    return m;
}
}  // namespace

nlohmann::json validation_event_to_json(const ValidationEvent& ev) {
    nlohmann::json bema = nlohmann::json::array();
    for (const auto& b : ev.bema)
        bema.push_back({{"ema_lag", b.ema_lag},
                        {"ema_power", b.ema_power},
                        {"bema_power", b.bema_power},
                        {"valid", metrics_to_json(b.valid)},
                        {"trainlen", metrics_to_json(b.trainlen)}});
    return {{"step", ev.step},
            {"loss", ev.mean_loss},
            {"lr", ev.lr},
            {"valid", metrics_to_json(ev.valid)},
            {"trainlen", metrics_to_json(ev.trainlen)},
            {"bema", std::move(bema)},
            {"wall_ms", ev.wall_ms}};
}

ValidationEvent validation_event_from_json(const nlohmann::json& j) {
    ValidationEvent ev;
    ev.step = j.at("step").get<long long>();
    ev.mean_loss = j.at("loss").get<double>();
    ev.lr = j.at("lr").get<double>();
    ev.valid = metrics_from_json(j.at("valid"));
    ev.trainlen = metrics_from_json(j.at("trainlen"));
    for (const auto& b : j.at("bema")) {
        BemaMetricRecord rec;
        rec.ema_lag = b.at("ema_lag").get<double>();
        rec.ema_power = b.at("ema_power").get<double>();
        rec.bema_power = b.at("bema_power").get<double>();
        rec.valid = metrics_from_json(b.at("valid"));
        rec.trainlen = metrics_from_json(b.at("trainlen"));
        ev.bema.push_back(std::move(rec));
    }
    ev.wall_ms = j.at("wall_ms").get<double>();
    return ev;
}

nlohmann::json run_record_to_json(const RunRecord& r) {
    nlohmann::json history = nlohmann::json::array();
    for (const auto& ev : r.history) history.push_back(validation_event_to_json(ev));
    // Infinity (no validation event yet, e.g. an early divergence) is not
    // representable in JSON; use null.
    const auto finite_or_null = [](double x) {
        return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(nullptr);
    };
    return {{"seed", r.seed},
            {"dims", {{"v", r.dims.v}, {"d", r.dims.d}, {"d_k", r.dims.d_k}, {"d_v", r.dims.d_v}}},
            {"train_len", r.train_len},
            {"history", std::move(history)},
            {"diverged", r.diverged},
            {"diverged_step", r.diverged_step},
            {"final_step", r.final_step},
            {"stop_reason", r.stop_reason},
            {"best_valid_tvd_train", finite_or_null(r.best_valid_tvd_train)},
            {"best_valid_tvd_bema", finite_or_null(r.best_valid_tvd_bema)},
            {"best_step", r.best_step}};
}

RunRecord run_record_from_json(const nlohmann::json& j) {
    RunRecord r;
    r.seed = j.at("seed").get<std::uint64_t>();
    r.dims.v = j.at("dims").at("v").get<int>();
    r.dims.d = j.at("dims").at("d").get<int>();
    r.dims.d_k = j.at("dims").at("d_k").get<int>();
    r.dims.d_v = j.at("dims").at("d_v").get<int>();
    r.train_len = j.at("train_len").get<int>();
    for (const auto& ev : j.at("history")) r.history.push_back(validation_event_from_json(ev));
    r.diverged = j.at("diverged").get<bool>();
    r.diverged_step = j.at("diverged_step").get<long long>();
    r.final_step = j.at("final_step").get<long long>();
    r.stop_reason = j.at("stop_reason").get<std::string>();
    const auto double_or_inf = [](const nlohmann::json& x) {
        return x.is_null() ? std::numeric_limits<double>::infinity() : x.get<double>();
    };
    r.best_valid_tvd_train = double_or_inf(j.at("best_valid_tvd_train"));
    r.best_valid_tvd_bema = double_or_inf(j.at("best_valid_tvd_bema"));
    r.best_step = j.at("best_step").get<long long>();
    return r;
}

}  // namespace scl
