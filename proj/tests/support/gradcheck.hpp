#pragma once

// Central finite-difference oracle for the manual backward pass. Kept
// independent of the gradient code: it only calls the forward pass.

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "scl/model.hpp"
#include "scl/train.hpp"

namespace gradcheck {

/// O(1)-scale random parameters so gradients are healthy-sized and relative
/// errors are meaningful (init-scale 0.02 parameters push many gradients
/// below the finite-difference noise floor).
inline scl::ModelParams random_model(const scl::ModelDims& dims, scl::NormMode norm,
                                     scl::Rng& rng) {
    scl::ModelParams p;
    p.dims = dims;
    p.norm = norm;
    p.norm_eps = 1e-6;
    static_cast<scl::ParamSet&>(p) = scl::ParamSet::zeros(dims);
    scl::for_each_tensor(
        [&](bool, auto& t) {
            for (Eigen::Index i = 0; i < t.rows(); ++i)
                for (Eigen::Index j = 0; j < t.cols(); ++j) t(i, j) = rng.uniform(-0.5, 0.5);
        },
        static_cast<scl::ParamSet&>(p));
    for (Eigen::Index i = 0; i < p.gains.size(); ++i) p.gains[i] = rng.uniform(0.5, 1.5);
    return p;
}

inline double loss_of(const scl::ModelParams& p, std::span<const int> t, int target,
                      const scl::DropoutMasks& masks) {
    scl::ForwardTrace trace;
    scl::forward_with_masks(p, t, masks, trace);
    return scl::nll_loss(trace.logits, target);
}

/// Max over all parameter entries of |analytic - fd| / max(|analytic|, |fd|, 1e-3),
/// with fd the central difference at step h. The masks (possibly inactive)
/// are re-injected into every finite-difference evaluation.
inline double max_rel_error(const scl::ModelParams& p, const std::vector<int>& t, int target,
                            const scl::DropoutMasks& masks, double h) {
    scl::TrainWorkspace ws;
    scl::forward_with_masks(p, t, masks, ws.trace);
    Eigen::VectorXd g_logits = scl::next_token_distribution(ws.trace.logits);
    g_logits[target] -= 1.0;
    scl::ParamSet grads = scl::ParamSet::zeros(p.dims);
    scl::backward(p, ws.trace, g_logits, grads, ws);

    scl::ModelParams work = p;
    double max_err = 0.0;
    scl::for_each_tensor(
        [&](bool, auto& tensor, const auto& grad) {
            for (Eigen::Index i = 0; i < tensor.rows(); ++i) {
                for (Eigen::Index j = 0; j < tensor.cols(); ++j) {
                    const double saved = tensor(i, j);
                    tensor(i, j) = saved + h;
                    const double lp = loss_of(work, t, target, masks);
                    tensor(i, j) = saved - h;
                    const double lm = loss_of(work, t, target, masks);
                    tensor(i, j) = saved;
                    const double fd = (lp - lm) / (2.0 * h);
                    const double a = grad(i, j);
                    const double err =
                        std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-3});
                    max_err = std::max(max_err, err);
                }
            }
        },
        static_cast<scl::ParamSet&>(work), grads);
    return max_err;
}

/// Random repetition-free sequence plus a target absent from it.
inline std::pair<std::vector<int>, int> random_case(int v, scl::Rng& rng) {
    const int s = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(v - 1)));
    std::vector<int> seq = scl::sample_sequence(v, s + 1, rng);
    const int target = seq.back();
    seq.pop_back();
    return {seq, target};
}

}  // namespace gradcheck
