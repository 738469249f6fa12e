#include <doctest.h>

#include <cmath>

#include "scl/bema.hpp"

using namespace scl;

namespace {
// A one-scalar parameter set: every tensor zero except E(0,0).
ParamSet scalar_params(double x) {
    ParamSet p = ParamSet::zeros(ModelDims{2, 1, 1, 1});
    p.E(0, 0) = x;
    return p;
}

double scalar_of(const ParamSet& p) { return p.E(0, 0); }
}  // namespace

TEST_CASE("ema weight beta_0 = 1 when rho = kappa = 1") {
    BemaState st = make_bema_state(scalar_params(5.0), 1.0, 1.0);
    ema_update(st, scalar_params(-3.0));
    CHECK(scalar_of(st.ema) == -3.0);  // beta_0 = (1+0)^-1 = 1
    CHECK(st.n == 1);
}

TEST_CASE("kappa = 0 tracks the trajectory exactly") {
    BemaState st = make_bema_state(scalar_params(0.0), 7.0, 0.0);
    for (double x : {1.0, -2.0, 0.25}) {
        ema_update(st, scalar_params(x));
        CHECK(scalar_of(st.ema) == x);
    }
}

TEST_CASE("ema hand value at rho = 100, kappa = 0.5") {
    BemaState st = make_bema_state(scalar_params(0.0), 100.0, 0.5);
    ema_update(st, scalar_params(1.0));
    CHECK(scalar_of(st.ema) == doctest::Approx(0.1).epsilon(1e-14));  // 100^-0.5
}

TEST_CASE("bema hand value and limits") {
    BemaState st = make_bema_state(scalar_params(0.0), 1.0, 0.5);
    ema_update(st, scalar_params(1.0));  // beta_0 = 1 -> ema = 1
    ParamSet out = scalar_params(0.0);
    bema_params(st, scalar_params(1.0), 0.5, out);
    // alpha_1 = 2^-0.5; bema = alpha (1 - 0) + 1
    CHECK(scalar_of(out) == doctest::Approx(1.0 + std::pow(2.0, -0.5)).epsilon(1e-14));

    // alpha_n -> 0: at n = 10^6, rho = 1, eta = 1, |alpha| ~ 1e-6
    BemaState far = make_bema_state(scalar_params(0.0), 1.0, 0.5);
    far.n = 1000000;
    far.ema = scalar_params(0.25);
    bema_params(far, scalar_params(9.0), 1.0, out);
    CHECK(std::abs(scalar_of(out) - 0.25) == doctest::Approx(9.0 / 1000001.0).epsilon(1e-9));
}

TEST_CASE("constant trajectory is a fixed point") {
    BemaState st = make_bema_state(scalar_params(4.0), 10.0, 0.7);
    for (int i = 0; i < 20; ++i) ema_update(st, scalar_params(4.0));
    CHECK(scalar_of(st.ema) == doctest::Approx(4.0).epsilon(1e-15));
    ParamSet out = scalar_params(0.0);
    bema_params(st, scalar_params(4.0), 0.3, out);
    CHECK(scalar_of(out) == doctest::Approx(4.0).epsilon(1e-14));
}

TEST_CASE("ema stays inside the trajectory envelope (convex combination)") {
    Rng rng(191);
    for (int trial = 0; trial < 50; ++trial) {
        const double rho = 1.0 + rng.uniform(0.0, 20.0);
        const double kappa = rng.uniform(0.0, 1.0);
        BemaState st = make_bema_state(scalar_params(0.0), rho, kappa);
        double lo = 0.0, hi = 0.0;
        for (int n = 0; n < 100; ++n) {
            const double x = rng.uniform(-5.0, 5.0);
            lo = std::min(lo, x);
            hi = std::max(hi, x);
            ema_update(st, scalar_params(x));
            CHECK(scalar_of(st.ema) >= lo - 1e-12);
            CHECK(scalar_of(st.ema) <= hi + 1e-12);
        }
    }
}

TEST_CASE("bema is linear in (theta, theta0, ema)") {
    BemaState st = make_bema_state(scalar_params(2.0), 5.0, 0.4);
    for (double x : {3.0, 1.0, 4.0}) ema_update(st, scalar_params(x));
    ParamSet out1 = scalar_params(0.0), out2 = scalar_params(0.0);
    bema_params(st, scalar_params(7.0), 0.6, out1);

    BemaState scaled = st;
    const double c = -2.5;
    scaled.theta0 = scalar_params(c * scalar_of(st.theta0));
    scaled.ema = scalar_params(c * scalar_of(st.ema));
    bema_params(scaled, scalar_params(c * 7.0), 0.6, out2);
    CHECK(scalar_of(out2) == doctest::Approx(c * scalar_of(out1)).epsilon(1e-13));
}

TEST_CASE("grid fans out EMA states times BEMA powers") {
    std::vector<std::pair<double, double>> lag_power;
    std::vector<double> powers;
    for (int i = 1; i <= 10; ++i) {
        lag_power.emplace_back(10.0, i / 10.0);
        powers.push_back(i / 10.0);
    }
    BemaGrid grid = make_bema_grid(scalar_params(0.0), lag_power, powers);
    CHECK(grid.states.size() == 10);
    CHECK(grid.entries().size() == 100);

    grid.update(scalar_params(1.0));
    grid.update(scalar_params(2.0));
    // states share the trajectory and differ only through kappa
    for (std::size_t i = 0; i + 1 < grid.states.size(); ++i) {
        CHECK(grid.states[i].ema_power < grid.states[i + 1].ema_power);
        CHECK(grid.states[i].n == 2);
    }
    // kappa = 1 gives the running-mean-like weight beta_n = 1/(rho+n)
    const BemaState& kappa1 = grid.states.back();
    // after two updates: ema = (1-1/10)* (1/10 pattern) ... just check value
    // beta_0 = 1/10, beta_1 = 1/11
    const double e1 = 0.1 * 1.0;
    const double e2 = (1.0 - 1.0 / 11.0) * e1 + (1.0 / 11.0) * 2.0;
    CHECK(scalar_of(kappa1.ema) == doctest::Approx(e2).epsilon(1e-14));
}

TEST_CASE("state stores exactly the snapshot and the running average") {
    const BemaState st = make_bema_state(scalar_params(1.5), 3.0, 0.5);
    CHECK(scalar_of(st.theta0) == 1.5);
    CHECK(scalar_of(st.ema) == 1.5);  // theta_ema at n=0 equals theta_0
}
