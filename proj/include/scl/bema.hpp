#pragma once

#include <vector>

#include "scl/model.hpp"

namespace scl {

/// Bias-corrected exponential moving average of parameters. Stores exactly
/// two parameter-sized buffers (the step-0 snapshot and the running EMA);
/// the live parameters stay with the training loop.
struct BemaState {
    double ema_lag = 10.0;   // rho >= 1
    double ema_power = 0.5;  // kappa in [0, 1]
    long long n = 0;         // optimizer steps folded in
    ParamSet theta0;
    ParamSet ema;
};

BemaState make_bema_state(const ParamSet& initial, double ema_lag, double ema_power);

/// theta_ema <- (1 - beta_n) theta_ema + beta_n theta_{n+1},
/// beta_n = (rho + n)^{-kappa}, clamped to [0, 1]; then n <- n+1.
void ema_update(BemaState& state, const ParamSet& theta_next);

/// theta_bema = alpha_n (theta_n - theta0) + theta_ema,
/// alpha_n = (rho + n)^{-bema_power}, written into out.
void bema_params(const BemaState& state, const ParamSet& theta_n, double bema_power,
                 ParamSet& out);

/// Convenience: materialize as a ready-to-evaluate model (metadata copied
/// from the live parameters).
ModelParams bema_model(const BemaState& state, const ModelParams& live, double bema_power);

/// Several EMA states tracking one parameter trajectory, fanned out over a
/// list of BEMA powers at evaluation (e.g. the 10 x 10 grid of kappa = 0.1..1
/// against bema_power = 0.1..1).
struct BemaGrid {
    std::vector<BemaState> states;
    std::vector<double> bema_powers;

    void update(const ParamSet& theta_next);

    struct Entry {
        double ema_lag = 0.0;
        double ema_power = 0.0;
        double bema_power = 0.0;
        const BemaState* state = nullptr;
    };
    std::vector<Entry> entries() const;
};

BemaGrid make_bema_grid(const ParamSet& initial,
                        const std::vector<std::pair<double, double>>& lag_power_pairs,
                        const std::vector<double>& bema_powers);

}  // namespace scl
