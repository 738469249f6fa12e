#include "scl/bema.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace scl {

BemaState make_bema_state(const ParamSet& initial, double ema_lag, double ema_power) {
    if (ema_lag < 1.0) throw std::invalid_argument("bema: ema_lag must be >= 1");
    BemaState s;
    s.ema_lag = ema_lag;
    s.ema_power = ema_power;
    s.n = 0;
    s.theta0 = initial;
    s.ema = initial;
    return s;
}

void ema_update(BemaState& state, const ParamSet& theta_next) {
    // rho >= 1 already keeps beta in [0,1]; the clamp documents the
    // convex-combination contract.
    const double beta = std::clamp(
        std::pow(state.ema_lag + static_cast<double>(state.n), -state.ema_power), 0.0, 1.0);
    for_each_tensor(
        [beta](bool, auto& ema, const auto& next) {
            ema = (1.0 - beta) * ema + beta * next;
        },
        state.ema, theta_next);
    ++state.n;
}

void bema_params(const BemaState& state, const ParamSet& theta_n, double bema_power,
                 ParamSet& out) {
    const double alpha =
        std::pow(state.ema_lag + static_cast<double>(state.n), -bema_power);
    for_each_tensor(
        [alpha](bool, auto& o, const auto& theta, const auto& theta0, const auto& ema) {
            o = alpha * (theta - theta0) + ema;
        },
        out, theta_n, state.theta0, state.ema);
}

ModelParams bema_model(const BemaState& state, const ModelParams& live, double bema_power) {
    ModelParams out;
    out.dims = live.dims;
    out.norm = live.norm;
    out.norm_eps = live.norm_eps;
    static_cast<ParamSet&>(out) = ParamSet::zeros(live.dims);
    bema_params(state, live, bema_power, out);
    return out;
}

void BemaGrid::update(const ParamSet& theta_next) {
    for (auto& s : states) ema_update(s, theta_next);
}

std::vector<BemaGrid::Entry> BemaGrid::entries() const {
    std::vector<Entry> out;
    out.reserve(states.size() * bema_powers.size());
    for (const auto& s : states)
        for (double bp : bema_powers)
            out.push_back(Entry{s.ema_lag, s.ema_power, bp, &s});
    return out;
}

BemaGrid make_bema_grid(const ParamSet& initial,
                        const std::vector<std::pair<double, double>>& lag_power_pairs,
                        const std::vector<double>& bema_powers) {
    BemaGrid grid;
    grid.bema_powers = bema_powers;
    grid.states.reserve(lag_power_pairs.size());
    for (const auto& [lag, power] : lag_power_pairs)
        grid.states.push_back(make_bema_state(initial, lag, power));
    return grid;
}

}  // namespace scl
