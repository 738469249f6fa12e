#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "scl/bema.hpp"
#include "scl/metrics.hpp"
#include "scl/model.hpp"
#include "scl/task.hpp"

namespace scl {

struct OptimizerHypers {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double weight_decay = 0.0;
    double eps = 1e-8;
    double max_grad_norm = 1.0;
};

struct OptimizerState {
    ParamSet m;  // first moments
    ParamSet v;  // second moments
    long long step = 0;
};

OptimizerState make_optimizer_state(const ModelDims& dims);

struct ScheduleSpec {
    double peak_lr = 1e-3;
    long long warmup_steps = 0;
    double end_multiplier = 1.0;
    long long max_steps = 1;
};

/// Linear warmup to the peak, then linear decay to peak*end_multiplier at
/// max_steps. Warmup starts at peak/warmup_steps rather than 0.
double lr_at(long long step, const ScheduleSpec& sched);

/// -log softmax(logits)[target], via the log-sum-exp form.
double nll_loss(const Eigen::VectorXd& logits, int target);

/// Reusable buffers for the forward/backward pair.
struct TrainWorkspace {
    ForwardTrace trace;
    Eigen::VectorXd probs, g_logits;
    Eigen::VectorXd gy, g_disp, g_attn_w, g_sigma, g_query;
    Eigen::MatrixXd g_out, g_values, g_keys, g_normed;
    Eigen::RowVectorXd g_row;
};

/// Accumulates exact gradients of <g_logits, logits> into grads, treating the
/// recorded dropout masks as constants. Scale g_logits by the loss weight
/// before calling.
void backward(const ModelParams& p, const ForwardTrace& trace,
              const Eigen::VectorXd& g_logits, ParamSet& grads, TrainWorkspace& ws);

/// Mean NLL over all rows and prefix lengths 1..s of a batch of length-(s+1)
/// carriers, target = the token following each prefix.
double batch_loss(const ModelParams& p, const SampleBatch& batch, const DropoutSpec& dropout,
                  Rng* rng, TrainWorkspace& ws);

/// Same loss, also accumulating its gradient (grads is zeroed first).
double batch_loss_grad(const ModelParams& p, const SampleBatch& batch,
                       const DropoutSpec& dropout, Rng* rng, ParamSet& grads,
                       TrainWorkspace& ws);

/// Scales all gradients by max_norm/g when the global L2 norm g exceeds
/// max_norm. Returns the pre-clip norm.
double clip_gradients(ParamSet& grads, double max_norm);

/// Decoupled-weight-decay Adam with bias-corrected moments. The decay term
/// touches the projection matrices only, never E or the norm gains.
void adamw_step(ModelParams& params, const ParamSet& grads, OptimizerState& state,
                const OptimizerHypers& hypers, double lr);

struct TrainRunConfig {
    std::uint64_t seed = 0;
    ModelDims dims{};
    NormMode norm = NormMode::rmsnorm;
    double norm_eps = 1e-6;
    int train_len = 2;  // s; training carriers have length s+1
    int batch_size = 128;
    int valid_size = 1024;
    long long max_steps = 10'000'000;
    long long validation_interval = 10'000;
    long long patience = 1'000'000;
    OptimizerHypers opt{};
    ScheduleSpec sched{};
    DropoutSpec dropout{};
    // EMA states as (lag, power) pairs; BEMA powers fan out at evaluation.
    std::vector<std::pair<double, double>> ema_grid{{10.0, 0.5}};
    std::vector<double> bema_powers{0.5};
};

struct BemaMetricRecord {
    double ema_lag = 0.0;
    double ema_power = 0.0;
    double bema_power = 0.0;
    MetricValues valid;     // batch of length v-1
    MetricValues trainlen;  // batch of the training length
};

struct ValidationEvent {
    long long step = 0;
    double mean_loss = 0.0;  // training loss averaged over the last interval
    double lr = 0.0;
    MetricValues valid;
    MetricValues trainlen;
    std::vector<BemaMetricRecord> bema;
    double wall_ms = 0.0;
};

struct RunRecord {
    std::uint64_t seed = 0;
    ModelDims dims{};
    int train_len = 0;
    std::vector<ValidationEvent> history;
    bool diverged = false;
    long long diverged_step = -1;
    long long final_step = 0;
    std::string stop_reason;  // max_steps | early_stop | diverged | target
    double best_valid_tvd_train = std::numeric_limits<double>::infinity();
    double best_valid_tvd_bema = std::numeric_limits<double>::infinity();
    long long best_step = -1;
};

nlohmann::json validation_event_to_json(const ValidationEvent& ev);
ValidationEvent validation_event_from_json(const nlohmann::json& j);
nlohmann::json run_record_to_json(const RunRecord& r);
RunRecord run_record_from_json(const nlohmann::json& j);

/// One training run, advanced in validation-interval segments so callers can
/// interleave ensemble-level decisions between segments.
class SingleRun {
public:
    explicit SingleRun(TrainRunConfig cfg);

    /// Steps up to the next validation boundary (or max_steps/divergence).
    void advance_segment();

    /// Evaluates metrics at the current step for the training parameters and
    /// every BEMA grid entry, appends the event to the record.
    const ValidationEvent& run_validation();

    bool diverged() const { return diverged_; }
    bool at_max_steps() const { return step_ >= cfg_.max_steps; }
    long long step() const { return step_; }
    const TrainRunConfig& config() const { return cfg_; }
    const ModelParams& params() const { return params_; }
    const BemaGrid& grid() const { return bema_grid_; }
    RunRecord& record() { return record_; }
    const RunRecord& record() const { return record_; }

    /// Materialized BEMA parameters for grid entry i (entries() order).
    ModelParams bema_model_at(std::size_t entry_index) const;

    /// Lowest validation TVD seen at the latest event (training parameters
    /// and BEMA parameters both count).
    double latest_tracked_tvd() const { return latest_tracked_tvd_; }

    void finalize(const std::string& stop_reason);

private:
    TrainRunConfig cfg_;
    ModelParams params_;
    OptimizerState opt_state_;
    BemaGrid bema_grid_;
    ParamSet grads_;
    TrainWorkspace ws_;
    SampleBatch valid_batch_;     // fixed per run, built at the first event
    SampleBatch trainlen_batch_;
    long long step_ = 0;
    long long event_index_ = 0;
    bool diverged_ = false;
    double loss_accum_ = 0.0;
    long long loss_count_ = 0;
    double latest_tracked_tvd_ = std::numeric_limits<double>::infinity();
    RunRecord record_;
};

/// Drives a run to completion: segments + validation + early stopping on the
/// best tracked validation TVD. on_event streams each validation event;
/// stop_target (optional) ends the run early with stop_reason "target".
/// Finalizes the run's record.
void drive_run(SingleRun& run, const std::function<void(const ValidationEvent&)>& on_event = {},
               const std::function<bool(const ValidationEvent&)>& stop_target = {});

/// Convenience: construct, drive, and return the record.
RunRecord train_run(const TrainRunConfig& cfg,
                    const std::function<void(const ValidationEvent&)>& on_event = {},
                    const std::function<bool(const ValidationEvent&)>& stop_target = {});

nlohmann::json train_config_to_json(const TrainRunConfig& cfg);
TrainRunConfig train_config_from_json(const nlohmann::json& j);

}  // namespace scl
