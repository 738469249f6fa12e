#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "scl/rng.hpp"
#include "scl/train.hpp"

namespace scl {

/// One draw from the hyperparameter distributions. Tokens: s and v come from
/// the dataloader block, the dims from the model block, the rest per member.
struct HyperSample {
    // dataloader + architecture (shared across an ensemble)
    int s = 0;
    int v = 0;
    int d = 0;
    int d_k = 0;
    int d_v = 0;
    // model
    double norm_eps = 1e-6;
    // optimizer
    double beta1 = 0.9;
    double beta2 = 0.999;
    double weight_decay = 0.0;
    double adam_eps = 1e-8;
    double max_grad_norm = 1.0;
    // schedule
    double peak_lr = 1e-3;
    long long warmup_steps = 0;
    double end_multiplier = 1.0;
    // dropout
    double p_embed = 0.0;
    double p_resid = 0.0;
    // BEMA
    double bema_power = 0.5;
    double ema_lag = 10.0;
    double ema_power = 0.5;

    std::uint64_t seed = 0;
};

/// Raw uniform draws behind each sampled field, in the distribution's
/// transformed (log/linear) space; exposed so fidelity tests can check
/// uniformity directly.
struct HyperRaws {
    double s_exp;           // U[0,4]
    double v_exp;           // U[0,4]
    double d_mult;          // U[1,4]
    double d_k_u;           // U[1,d]
    double d_v_u;           // U[v-1,d]
    double norm_eps_log;    // U[-10,-4]
    double beta1_log;       // U[-2,0]
    double beta2_log;       // U[-8,-1]
    double wd_log;          // U[-6,0]
    double adam_eps_log;    // U[-12,-8]
    double grad_norm_log;   // U[-2,2]
    double peak_lr_log;     // U[-5,-1]
    double warmup_log;      // U[-2,6]
    double end_mult_log;    // U[-4,0]
    double p_embed_raw;     // U[-1/2,1/2]
    double p_resid_raw;     // U[-1/2,1/2]
    double bema_power_u;    // U[0,1]
    double ema_lag_log;     // U[0,10]
    double ema_power_u;     // U[0,1]
};

struct ArchSample {
    int s = 0, v = 0, d = 0, d_k = 0, d_v = 0;
};

ArchSample sample_arch(Rng& rng, HyperRaws* raws = nullptr);
HyperSample sample_member(const ArchSample& arch, Rng& rng, HyperRaws* raws = nullptr);
HyperSample sample_hypers(Rng& rng, HyperRaws* raws = nullptr);

/// The fixed per-field sampling distributions (name, transform, bounds),
/// embedded in sweep manifests so records stay interpretable if the sampler
/// ever changes.
nlohmann::json sampler_constants_json();

nlohmann::json hyper_sample_to_json(const HyperSample& h);
HyperSample hyper_sample_from_json(const nlohmann::json& j);

/// Derived reporting axes: the generalization gap v-1-s, the embedding
/// dimension multiplier d/(v-1), and the value dimension coefficient
/// (0 when d = v-1, else (d_v-v+1)/(d-v+1)).
struct DerivedAxes {
    int gap = 0;
    double embed_dim_multiplier = 1.0;
    double value_dim_coefficient = 0.0;
};

DerivedAxes derived_axes(const HyperSample& h);

struct SearchRecord {
    int arch_index = 0;
    int member_index = 0;
    HyperSample hypers;
    DerivedAxes derived;
    RunRecord run;
};

nlohmann::json search_record_to_json(const SearchRecord& r);
SearchRecord search_record_from_json(const nlohmann::json& j);

struct SweepConfig {
    std::uint64_t global_seed = 0;
    int arch_count = 8;
    int members_per_arch = 32;
    long long max_steps = 200'000;
    long long validation_interval = 10'000;
    long long patience = 1'000'000;
    int batch_size = 128;
    int valid_size = 1024;
    int jobs = 1;
    NormMode norm = NormMode::rmsnorm;
};

SweepConfig sweep_config_from_json(const nlohmann::json& j);
nlohmann::json sweep_config_to_json(const SweepConfig& c);

TrainRunConfig member_train_config(const HyperSample& h, const SweepConfig& sweep);

/// Runs the sweep. Members of one ensemble advance in lockstep
/// validation-interval segments on a worker pool; the ensemble stops when no
/// member has improved its tracked validation TVD within the patience window.
/// Completed records stream to `sink` in (arch, member) order. `completed`
/// lists records already on disk (resume): they are skipped, and their
/// improvement history still feeds the ensemble's early-stop clock.
void run_ensembles(const SweepConfig& config,
                   const std::function<void(const SearchRecord&)>& sink,
                   const std::vector<SearchRecord>& completed = {});

// -----------------------------------------------------------------------
// Quantile summaries

struct QuantileStats {
    double best = 0.0;
    double top1_mean = 0.0;   // mean of the best 1% (at least one record)
    double top10_mean = 0.0;  // mean of the best 10%
};

struct GroupSummary {
    int gap = 0;
    // Set when grouping by dimension multipliers: floor(d/(v-1)) and the
    // value-dimension coefficient bucketed as 0 (=0), 1 ((0,1/2]), 2 ((1/2,1]).
    int embed_mult_floor = -1;
    int value_coeff_bucket = -1;
    int count = 0;  // non-diverged records
    int diverged = 0;
    // Per metric, for the training parameters and the best BEMA entry.
    QuantileStats train_tvd, train_itp, train_itr;
    QuantileStats bema_tvd, bema_itp, bema_itr;
    // Mean dropout rates among the records in the top TVD quantiles.
    double embed_dropout_top1_train = 0.0, resid_dropout_top1_train = 0.0;
    double embed_dropout_top10_train = 0.0, resid_dropout_top10_train = 0.0;
    double embed_dropout_top1_bema = 0.0, resid_dropout_top1_bema = 0.0;
    double embed_dropout_top10_bema = 0.0, resid_dropout_top10_bema = 0.0;
};

/// Groups records by generalization gap (optionally also by the dimension
/// multiplier buckets); metric values are each record's best over its
/// history. Empty groups are omitted.
std::vector<GroupSummary> summarize(const std::vector<SearchRecord>& records,
                                    bool group_dims = false);

std::string summary_to_csv(const std::vector<GroupSummary>& groups, bool group_dims = false);

}  // namespace scl
