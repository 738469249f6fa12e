#include <doctest.h>

#include <cmath>
#include <vector>

#include "support/gradcheck.hpp"
#include "scl/theory.hpp"
#include "scl/train.hpp"

using namespace scl;

TEST_CASE("nll hand values") {
    Eigen::VectorXd uniform = Eigen::VectorXd::Zero(4);
    CHECK(nll_loss(uniform, 2) == doctest::Approx(std::log(4.0)).epsilon(1e-12));

    Eigen::VectorXd pair(2);
    pair << 10.0, 0.0;
    CHECK(nll_loss(pair, 0) == doctest::Approx(std::log(1.0 + std::exp(-10.0))).epsilon(1e-9));
    CHECK(nll_loss(pair, 0) == doctest::Approx(4.5398e-5).epsilon(1e-4));

    Rng rng(7);
    for (int trial = 0; trial < 100; ++trial) {
        Eigen::VectorXd logits(5);
        for (int i = 0; i < 5; ++i) logits[i] = rng.uniform(-8, 8);
        const int u = static_cast<int>(rng.below(5));
        const double base = nll_loss(logits, u);
        const double shifted =
            nll_loss(logits + Eigen::VectorXd::Constant(5, 77.7), u);
        CHECK(std::abs(base - shifted) < 1e-12);
        CHECK(base >= 0.0);
    }
}

TEST_CASE("learning-rate schedule hand values") {
    ScheduleSpec sched{1e-3, 100, 0.1, 10000};
    CHECK(lr_at(49, sched) == doctest::Approx(5e-4).epsilon(1e-12));
    CHECK(lr_at(100, sched) == doctest::Approx(1e-3).epsilon(1e-12));
    CHECK(lr_at(10000, sched) == doctest::Approx(1e-4).epsilon(1e-12));
    CHECK(lr_at(0, sched) == doctest::Approx(1e-5).epsilon(1e-12));

    ScheduleSpec no_warmup{2e-3, 0, 0.5, 1000};
    CHECK(lr_at(0, no_warmup) == doctest::Approx(2e-3).epsilon(1e-12));
    CHECK(lr_at(1000, no_warmup) == doctest::Approx(1e-3).epsilon(1e-12));

    // warmup longer than the run: stays in the warmup ramp
    ScheduleSpec long_warmup{1e-2, 1000, 0.1, 500};
    CHECK(lr_at(499, long_warmup) == doctest::Approx(1e-2 * 500.0 / 1000.0).epsilon(1e-12));

    CHECK_THROWS_AS(lr_at(-1, sched), std::invalid_argument);
    CHECK_THROWS_AS(lr_at(10001, sched), std::invalid_argument);
}

TEST_CASE("gradient clipping") {
    ParamSet g = ParamSet::zeros(ModelDims{2, 2, 1, 1});
    CHECK(clip_gradients(g, 1.0) == 0.0);  // zero gradient unchanged
    CHECK(g.all_finite());

    g.E(0, 0) = 3.0;
    g.E(0, 1) = 4.0;
    const double norm = clip_gradients(g, 1.0);
    CHECK(norm == doctest::Approx(5.0).epsilon(1e-14));
    CHECK(g.E(0, 0) == doctest::Approx(0.6).epsilon(1e-14));
    CHECK(g.E(0, 1) == doctest::Approx(0.8).epsilon(1e-14));

    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        ParamSet h = ParamSet::zeros(ModelDims{3, 4, 2, 3});
        for_each_tensor(
            [&](bool, auto& t) {
                for (Eigen::Index i = 0; i < t.rows(); ++i)
                    for (Eigen::Index j = 0; j < t.cols(); ++j) t(i, j) = rng.uniform(-4, 4);
            },
            h);
        clip_gradients(h, 0.7);
        double sq = 0.0;
        for_each_tensor([&](bool, const auto& t) { sq += t.squaredNorm(); }, h);
        CHECK(std::sqrt(sq) <= 0.7 + 1e-12);
    }
}

TEST_CASE("adamw single-step hand value and exclusions") {
    const ModelDims dims{2, 1, 1, 1};
    ModelParams p;
    p.dims = dims;
    static_cast<ParamSet&>(p) = ParamSet::zeros(dims);
    p.E(0, 0) = 1.0;
    ParamSet g = ParamSet::zeros(dims);
    g.E(0, 0) = 1.0;
    OptimizerState st = make_optimizer_state(dims);
    adamw_step(p, g, st, OptimizerHypers{0.9, 0.999, 0.0, 1e-8, 1e9}, 0.1);
    CHECK(p.E(0, 0) == doctest::Approx(0.9).epsilon(1e-6));

    // zero gradients with weight decay: E and gains stay, projections shrink
    ModelParams q;
    q.dims = dims;
    static_cast<ParamSet&>(q) = ParamSet::zeros(dims);
    q.E(0, 0) = 2.0;
    q.gains(0) = 1.0;
    q.W_Q(0, 0) = 2.0;
    q.U(0, 0) = -2.0;
    OptimizerState st2 = make_optimizer_state(dims);
    ParamSet zero_g = ParamSet::zeros(dims);
    adamw_step(q, zero_g, st2, OptimizerHypers{0.9, 0.999, 0.5, 1e-8, 1e9}, 0.1);
    CHECK(q.E(0, 0) == 2.0);
    CHECK(q.gains(0) == 1.0);
    CHECK(q.W_Q(0, 0) == doctest::Approx(2.0 * (1.0 - 0.1 * 0.5)).epsilon(1e-12));
    CHECK(q.U(0, 0) == doctest::Approx(-2.0 * (1.0 - 0.1 * 0.5)).epsilon(1e-12));

    // lambda = 0, zero gradient: everything static
    ModelParams r = q;
    OptimizerState st3 = make_optimizer_state(dims);
    adamw_step(r, zero_g, st3, OptimizerHypers{0.9, 0.999, 0.0, 1e-8, 1e9}, 0.1);
    CHECK(r.W_Q(0, 0) == q.W_Q(0, 0));
}

TEST_CASE("adamw with zero betas reduces to sign-normalized steps") {
    const ModelDims dims{2, 1, 1, 1};
    ModelParams p;
    p.dims = dims;
    static_cast<ParamSet&>(p) = ParamSet::zeros(dims);
    ParamSet g = ParamSet::zeros(dims);
    g.E(0, 0) = 0.37;
    g.W_Q(0, 0) = -5.1;
    OptimizerState st = make_optimizer_state(dims);
    adamw_step(p, g, st, OptimizerHypers{0.0, 0.0, 0.0, 1e-15, 1e9}, 0.01);
    CHECK(std::abs(p.E(0, 0) + 0.01) < 1e-10);    // -lr * sign(g)
    CHECK(std::abs(p.W_Q(0, 0) - 0.01) < 1e-10);
}

TEST_CASE("analytic gradients match central finite differences") {
    Rng rng(2029);
    for (int trial = 0; trial < 6; ++trial) {
        const int v = 3 + static_cast<int>(rng.below(4));               // <= 6
        const int d = 2 + static_cast<int>(rng.below(7));               // <= 8
        const int d_k = 1 + static_cast<int>(rng.below(8));             // <= 8
        const int d_v = 1 + static_cast<int>(rng.below(8));             // <= 8
        const NormMode norm = trial % 2 == 0 ? NormMode::rmsnorm : NormMode::identity;
        const ModelParams p = gradcheck::random_model(ModelDims{v, d, d_k, d_v}, norm, rng);
        const auto [t, target] = gradcheck::random_case(v, rng);
        const double err = gradcheck::max_rel_error(p, t, target, DropoutMasks{}, 1e-6);
        CAPTURE(trial);
        CHECK(err < 1e-5);
    }
}

TEST_CASE("gradients with frozen dropout masks match finite differences") {
    Rng rng(2039);
    for (int trial = 0; trial < 4; ++trial) {
        const int v = 4 + static_cast<int>(rng.below(3));
        const int d = 3 + static_cast<int>(rng.below(5));
        const ModelParams p =
            gradcheck::random_model(ModelDims{v, d, 3, 4}, NormMode::rmsnorm, rng);
        const auto [t, target] = gradcheck::random_case(v, rng);
        DropoutMasks masks;
        sample_masks(DropoutSpec{0.3, 0.25, true}, static_cast<int>(t.size()), d, rng, masks);
        const double err = gradcheck::max_rel_error(p, t, target, masks, 1e-6);
        CAPTURE(trial);
        CHECK(err < 1e-5);
    }
}

TEST_CASE("batch loss near ln(v) at init and near the legal entropy for the certificate") {
    Rng rng(2053);
    const int v = 5;
    TrainWorkspace ws;

    const ModelParams tiny = init_params(ModelDims{v, 4, 2, 4}, NormMode::rmsnorm, 1e-6, rng);
    Rng brng(3);
    const SampleBatch batch = make_training_batch(v, 3, 64, brng);
    const double init_loss = batch_loss(tiny, batch, DropoutSpec{}, nullptr, ws);
    CHECK(init_loss == doctest::Approx(std::log(v)).epsilon(0.02));

    const ModelParams cert = build_hardcoded(v, 50.0, NormMode::identity);
    const double cert_loss = batch_loss(cert, batch, DropoutSpec{}, nullptr, ws);
    const double expected = (std::log(v - 1.0) + std::log(v - 2.0) + std::log(v - 3.0)) / 3.0;
    CHECK(cert_loss == doctest::Approx(expected).epsilon(1e-6));
}

TEST_CASE("single-prefix batch reduces to one nll term") {
    Rng rng(2063);
    const ModelParams p = init_params(ModelDims{4, 3, 2, 3}, NormMode::rmsnorm, 1e-6, rng);
    SampleBatch b;
    b.v = 4;
    b.row_len = 2;
    b.n_rows = 1;
    b.tokens = {2, 0};
    TrainWorkspace ws;
    const double loss = batch_loss(p, b, DropoutSpec{}, nullptr, ws);
    const Eigen::VectorXd logits = forward_logits(p, std::vector<int>{2});
    CHECK(loss == doctest::Approx(nll_loss(logits, 0)).epsilon(1e-14));
}

TEST_CASE("loss is invariant under consistent token relabeling") {
    Rng rng(2069);
    const int v = 6;
    const ModelParams p = init_params(ModelDims{v, 5, 3, 4}, NormMode::rmsnorm, 1e-6, rng);
    const TokenSeq perm = sample_sequence(v, v, rng);

    ModelParams q = p;
    for (int u = 0; u < v; ++u) {
        q.E.row(perm[static_cast<std::size_t>(u)]) = p.E.row(u);
        q.U.col(perm[static_cast<std::size_t>(u)]) = p.U.col(u);
    }

    TrainWorkspace ws;
    Rng brng(5);
    const SampleBatch batch = make_training_batch(v, 3, 32, brng);
    SampleBatch relabeled = batch;
    for (auto& tok : relabeled.tokens) tok = perm[static_cast<std::size_t>(tok)];

    const double a = batch_loss(p, batch, DropoutSpec{}, nullptr, ws);
    const double b = batch_loss(q, relabeled, DropoutSpec{}, nullptr, ws);
    CHECK(std::abs(a - b) < 1e-10);
}

namespace {
TrainRunConfig tiny_config(std::uint64_t seed) {
    TrainRunConfig cfg;
    cfg.seed = seed;
    cfg.dims = ModelDims{5, 4, 2, 4};
    cfg.norm = NormMode::rmsnorm;
    cfg.train_len = 2;
    cfg.batch_size = 16;
    cfg.valid_size = 64;
    cfg.max_steps = 60;
    cfg.validation_interval = 20;
    cfg.patience = 1000;
    cfg.sched = ScheduleSpec{1e-2, 10, 0.1, 60};
    return cfg;
}
}  // namespace

TEST_CASE("zero learning rate freezes the metric history") {
    TrainRunConfig cfg = tiny_config(31);
    cfg.sched.peak_lr = 0.0;
    const RunRecord rec = train_run(cfg);
    REQUIRE(rec.history.size() == 3);
    for (const auto& ev : rec.history) {
        // parameters never move, the validation set is fixed: flat history,
        // and BEMA coincides with the constant trajectory
        CHECK(ev.valid.tvd == rec.history[0].valid.tvd);
        CHECK(ev.trainlen.itp == rec.history[0].trainlen.itp);
        REQUIRE(ev.bema.size() == 1);
        CHECK(ev.bema[0].valid.tvd == doctest::Approx(ev.valid.tvd).epsilon(1e-12));
    }
}

TEST_CASE("identical seeds reproduce identical histories") {
    const RunRecord a = train_run(tiny_config(77));
    const RunRecord b = train_run(tiny_config(77));
    CHECK(run_record_to_json(a).dump() != "");
    // compare everything except wall-clock
    auto ja = run_record_to_json(a);
    auto jb = run_record_to_json(b);
    for (auto& ev : ja["history"]) ev.erase("wall_ms");
    for (auto& ev : jb["history"]) ev.erase("wall_ms");
    CHECK(ja.dump() == jb.dump());

    const RunRecord c = train_run(tiny_config(78));
    auto jc = run_record_to_json(c);
    for (auto& ev : jc["history"]) ev.erase("wall_ms");
    CHECK(ja.dump() != jc.dump());
}

TEST_CASE("early stopping fires after the patience window") {
    TrainRunConfig cfg = tiny_config(41);
    cfg.sched.peak_lr = 0.0;  // nothing improves after the first event
    cfg.max_steps = 1000;
    cfg.patience = 40;  // two validation intervals
    const RunRecord rec = train_run(cfg);
    CHECK(rec.stop_reason == "early_stop");
    CHECK(rec.final_step < 1000);
}

TEST_CASE("divergence is recorded, not thrown") {
    TrainRunConfig cfg = tiny_config(43);
    cfg.norm = NormMode::identity;
    cfg.sched = ScheduleSpec{1e120, 0, 1.0, 60};
    cfg.opt.max_grad_norm = 1e9;
    const RunRecord rec = train_run(cfg);
    CHECK(rec.diverged);
    CHECK(rec.stop_reason == "diverged");
    CHECK(rec.diverged_step >= 0);
}

TEST_CASE("run records round-trip through json") {
    const RunRecord rec = train_run(tiny_config(51));
    const RunRecord back = run_record_from_json(run_record_to_json(rec));
    CHECK(run_record_to_json(back).dump() == run_record_to_json(rec).dump());
}

TEST_CASE("target stop hook ends the run with reason target") {
    TrainRunConfig cfg = tiny_config(53);
    cfg.max_steps = 1000;
    const RunRecord rec = train_run(cfg, {}, [](const ValidationEvent& ev) {
        return ev.step >= 40;
    });
    CHECK(rec.stop_reason == "target");
    CHECK(rec.final_step == 40);
}
