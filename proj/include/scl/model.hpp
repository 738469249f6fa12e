#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "scl/rng.hpp"

namespace scl {

struct ModelDims {
    int v = 0;    // vocabulary size
    int d = 0;    // embedding dimension
    int d_k = 0;  // key dimension
    int d_v = 0;  // value dimension
};

enum class NormMode { rmsnorm, identity };

std::string norm_mode_name(NormMode m);
NormMode norm_mode_from_name(const std::string& name);

/// The trainable tensors, shared layout between live parameters, gradients,
/// optimizer moments, and averaged copies.
struct ParamSet {
    Eigen::MatrixXd E;      // v x d
    Eigen::VectorXd gains;  // d (norm scaling)
    Eigen::MatrixXd W_Q;    // d x d_k
    Eigen::MatrixXd W_K;    // d x d_k
    Eigen::MatrixXd W_V;    // d x d_v
    Eigen::MatrixXd W_O;    // d_v x d
    Eigen::MatrixXd U;      // d x v

    static ParamSet zeros(const ModelDims& dims);
    void set_zero();
    bool all_finite() const;
};

/// Applies f(decay_allowed, tensor...) to each tensor position across one or
/// more ParamSet-shaped structs. Weight decay is allowed on the projection
/// matrices only, never on the embedding or norm gains.
template <class F, class... P>
void for_each_tensor(F&& f, P&&... p) {
    f(false, p.E...);
    f(false, p.gains...);
    f(true, p.W_Q...);
    f(true, p.W_K...);
    f(true, p.W_V...);
    f(true, p.W_O...);
    f(true, p.U...);
}

struct ModelParams : ParamSet {
    ModelDims dims;
    NormMode norm = NormMode::rmsnorm;
    double norm_eps = 1e-6;
};

struct DropoutSpec {
    double p_embed = 0.0;  // rate in [0, 1)
    double p_resid = 0.0;  // rate in [0, 1)
    bool enabled = false;

    bool active() const { return enabled && (p_embed > 0.0 || p_resid > 0.0); }
};

/// Inverted-scaling dropout multipliers, one row per token occurrence.
/// Entries are 0 (dropped) or 1/(1-p) (kept); all-ones when inactive.
struct DropoutMasks {
    Eigen::MatrixXd embed;  // s x d
    Eigen::MatrixXd resid;  // s x d
    bool active = false;
};

void sample_masks(const DropoutSpec& spec, int s, int d, Rng& rng, DropoutMasks& masks);

/// Intermediates cached by forward() for manual backpropagation. Buffers are
/// reused across calls; resize is a no-op when shapes repeat.
struct ForwardTrace {
    std::vector<int> tokens;
    Eigen::MatrixXd x_dropped;   // s x d, embedding rows after embed dropout
    Eigen::MatrixXd normed;      // s x d, rows after norm
    Eigen::VectorXd inv_rms;     // s, 1/sqrt(mean(x^2)+eps) per row (rmsnorm only)
    Eigen::VectorXd query;       // d_k, for the final token
    Eigen::MatrixXd keys;        // s x d_k
    Eigen::VectorXd attn_logit;  // s, q.k_i/sqrt(d_k)
    Eigen::VectorXd attn_w;      // s, normalized attention weights
    Eigen::MatrixXd values;      // s x d_v
    Eigen::MatrixXd out_rows;    // s x d, value rows through W_O, before resid dropout
    Eigen::MatrixXd out_dropped; // s x d
    Eigen::VectorXd displacement;// d, attention-weighted sum of out_dropped rows
    Eigen::VectorXd logits;      // v
    DropoutMasks masks;
    int exp_saturations = 0;
};

/// y = gains .* x / sqrt(mean(x^2) + eps)
void rmsnorm(const Eigen::VectorXd& x, const Eigen::VectorXd& gains, double eps,
             Eigen::VectorXd& out);

struct DerivedMatrices {
    Eigen::MatrixXd B;  // v x v bias, E U
    Eigen::MatrixXd A;  // v x v unnormalized attention weights, strictly positive
    Eigen::MatrixXd D;  // v x v displacement, E' W_V W_O U
    bool exp_saturated = false;
};

DerivedMatrices derived_matrices(const ModelParams& p);

/// Full forward pass. Dropout multipliers are taken from trace.masks as-is
/// (set masks.active=false for the clean path). Requires 1 <= |t| <= v-1.
/// Logits land in trace.logits.
void forward(const ModelParams& p, std::span<const int> t, ForwardTrace& trace);

/// Forward pass sampling fresh masks into trace.masks from spec/rng (rng may
/// be null when dropout is inactive).
void forward(const ModelParams& p, std::span<const int> t, const DropoutSpec& spec,
             Rng* rng, ForwardTrace& trace);

/// Forward pass re-injecting previously recorded masks (finite-difference
/// checks with frozen dropout).
void forward_with_masks(const ModelParams& p, std::span<const int> t,
                        const DropoutMasks& masks, ForwardTrace& trace);

/// Dropout-free convenience wrapper.
Eigen::VectorXd forward_logits(const ModelParams& p, std::span<const int> t);

/// Constant-attention fast path: B[t_s] + (1/s) sum_i D[t_i].
Eigen::VectorXd forward_constant_attention(const Eigen::MatrixXd& B,
                                           const Eigen::MatrixXd& D,
                                           std::span<const int> t);

/// Numerically stable softmax.
Eigen::VectorXd next_token_distribution(const Eigen::VectorXd& logits);
void softmax_into(const Eigen::VectorXd& logits, Eigen::VectorXd& out);

/// All weight matrices i.i.d. truncated normal(0, 0.02^2) cut at 2 sigma;
/// gains start at 1.
ModelParams init_params(const ModelDims& dims, NormMode norm, double norm_eps, Rng& rng);

// Checkpoint container: magic, u32 header length, JSON header (dims, norm
// mode, seed), then row-major f64 LE tensors in fixed order
// E, gains, W_Q, W_K, W_V, W_O, U.
void save_checkpoint(const ModelParams& p, std::uint64_t seed,
                     const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path, std::uint64_t* seed_out = nullptr);

}  // namespace scl
