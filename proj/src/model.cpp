#include "scl/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

#include <json.hpp>

#include "scl/io.hpp"

namespace scl {

namespace {
constexpr char kCheckpointMagic[8] = {'S', 'C', 'L', 'C', 'K', 'P', 'T', '1'};
// exp(709.78) is the last finite double; anything above saturates.
constexpr double kExpArgLimit = 709.0;

double saturating_exp(double x, int& saturations) {
    if (x > kExpArgLimit) {
        ++saturations;
        return std::numeric_limits<double>::max();
    }
    return std::exp(x);
}
}  // namespace

std::string norm_mode_name(NormMode m) {
    return m == NormMode::rmsnorm ? "rmsnorm" : "identity";
}

NormMode norm_mode_from_name(const std::string& name) {
    if (name == "rmsnorm") return NormMode::rmsnorm;
    if (name == "identity") return NormMode::identity;
    throw std::invalid_argument("unknown norm mode: " + name);
}

ParamSet ParamSet::zeros(const ModelDims& dims) {
    ParamSet p;
    p.E = Eigen::MatrixXd::Zero(dims.v, dims.d);
    p.gains = Eigen::VectorXd::Zero(dims.d);
    p.W_Q = Eigen::MatrixXd::Zero(dims.d, dims.d_k);
    p.W_K = Eigen::MatrixXd::Zero(dims.d, dims.d_k);
    p.W_V = Eigen::MatrixXd::Zero(dims.d, dims.d_v);
    p.W_O = Eigen::MatrixXd::Zero(dims.d_v, dims.d);
    p.U = Eigen::MatrixXd::Zero(dims.d, dims.v);
    return p;
}

void ParamSet::set_zero() {
    for_each_tensor([](bool, auto& t) { t.setZero(); }, *this);
}

bool ParamSet::all_finite() const {
    bool ok = true;
    for_each_tensor([&](bool, const auto& t) { ok = ok && t.allFinite(); }, *this);
    return ok;
}

void rmsnorm(const Eigen::VectorXd& x, const Eigen::VectorXd& gains, double eps,
             Eigen::VectorXd& out) {
    const double ms = x.squaredNorm() / static_cast<double>(x.size());
    const double inv = 1.0 / std::sqrt(ms + eps);
    out = gains.cwiseProduct(x) * inv;
}

void sample_masks(const DropoutSpec& spec, int s, int d, Rng& rng, DropoutMasks& masks) {
    masks.active = spec.active();
    if (!masks.active) return;
    masks.embed.resize(s, d);
    masks.resid.resize(s, d);
    const double keep_e = 1.0 - spec.p_embed;
    const double keep_r = 1.0 - spec.p_resid;
    for (int i = 0; i < s; ++i) {
        for (int j = 0; j < d; ++j) {
            masks.embed(i, j) =
                (spec.p_embed > 0.0 && rng.uniform() < spec.p_embed) ? 0.0 : 1.0 / keep_e;
            masks.resid(i, j) =
                (spec.p_resid > 0.0 && rng.uniform() < spec.p_resid) ? 0.0 : 1.0 / keep_r;
        }
    }
}

DerivedMatrices derived_matrices(const ModelParams& p) {
    const int v = p.dims.v;
    DerivedMatrices m;
    m.B.noalias() = p.E * p.U;

    Eigen::MatrixXd e_normed(v, p.dims.d);
    if (p.norm == NormMode::identity) {
        e_normed = p.E;
    } else {
        Eigen::VectorXd row(p.dims.d), normed(p.dims.d);
        for (int t = 0; t < v; ++t) {
            row = p.E.row(t);
            rmsnorm(row, p.gains, p.norm_eps, normed);
            e_normed.row(t) = normed;
        }
    }

    const Eigen::MatrixXd q = e_normed * p.W_Q;
    const Eigen::MatrixXd k = e_normed * p.W_K;
    const double scale = 1.0 / std::sqrt(static_cast<double>(p.dims.d_k));
    Eigen::MatrixXd attn_logits = q * k.transpose() * scale;
    m.A.resize(v, v);
    int saturations = 0;
    for (int i = 0; i < v; ++i)
        for (int j = 0; j < v; ++j) m.A(i, j) = saturating_exp(attn_logits(i, j), saturations);
    m.exp_saturated = saturations > 0;

    m.D.noalias() = e_normed * p.W_V * p.W_O * p.U;
    return m;
}

void forward(const ModelParams& p, std::span<const int> t, ForwardTrace& trace) {
    const int s = static_cast<int>(t.size());
    const int d = p.dims.d;
    if (s < 1) throw std::invalid_argument("forward: empty sequence");
    if (s > p.dims.v - 1) throw std::invalid_argument("forward: sequence length must be < v");

    const DropoutMasks& masks = trace.masks;
    trace.tokens.assign(t.begin(), t.end());
    trace.x_dropped.resize(s, d);
    trace.normed.resize(s, d);
    trace.inv_rms.resize(s);
    trace.keys.resize(s, p.dims.d_k);
    trace.attn_logit.resize(s);
    trace.attn_w.resize(s);
    trace.values.resize(s, p.dims.d_v);
    trace.out_rows.resize(s, d);
    trace.out_dropped.resize(s, d);
    trace.exp_saturations = 0;

    for (int i = 0; i < s; ++i) {
        trace.x_dropped.row(i) = p.E.row(t[i]);
        if (masks.active) trace.x_dropped.row(i).array() *= masks.embed.row(i).array();
        if (p.norm == NormMode::identity) {
            trace.inv_rms[i] = 1.0;
            trace.normed.row(i) = trace.x_dropped.row(i);
        } else {
            const double ms = trace.x_dropped.row(i).squaredNorm() / d;
            trace.inv_rms[i] = 1.0 / std::sqrt(ms + p.norm_eps);
            trace.normed.row(i) =
                trace.x_dropped.row(i).cwiseProduct(p.gains.transpose()) * trace.inv_rms[i];
        }
    }

    trace.query.noalias() = p.W_Q.transpose() * trace.normed.row(s - 1).transpose();
    trace.keys.noalias() = trace.normed * p.W_K;
    const double scale = 1.0 / std::sqrt(static_cast<double>(p.dims.d_k));
    trace.attn_logit.noalias() = trace.keys * trace.query;
    trace.attn_logit *= scale;

    // Softmax over keys (shift by the max; equivalent to normalizing the raw
    // exp weights and immune to overflow).
    const double m = trace.attn_logit.maxCoeff();
    double denom = 0.0;
    for (int i = 0; i < s; ++i) {
        trace.attn_w[i] = saturating_exp(trace.attn_logit[i] - m, trace.exp_saturations);
        denom += trace.attn_w[i];
    }
    trace.attn_w /= denom;

    trace.values.noalias() = trace.normed * p.W_V;
    trace.out_rows.noalias() = trace.values * p.W_O;
    if (masks.active)
        trace.out_dropped = trace.out_rows.cwiseProduct(masks.resid);
    else
        trace.out_dropped = trace.out_rows;

    trace.displacement.noalias() = trace.out_dropped.transpose() * trace.attn_w;
    trace.logits.noalias() =
        p.U.transpose() * (trace.x_dropped.row(s - 1).transpose() + trace.displacement);
}

void forward(const ModelParams& p, std::span<const int> t, const DropoutSpec& spec,
             Rng* rng, ForwardTrace& trace) {
    if (spec.active()) {
        if (rng == nullptr) throw std::invalid_argument("forward: dropout needs an rng");
        sample_masks(spec, static_cast<int>(t.size()), p.dims.d, *rng, trace.masks);
    } else {
        trace.masks.active = false;
    }
    forward(p, t, trace);
}

void forward_with_masks(const ModelParams& p, std::span<const int> t,
                        const DropoutMasks& masks, ForwardTrace& trace) {
    trace.masks = masks;
    forward(p, t, trace);
}

Eigen::VectorXd forward_logits(const ModelParams& p, std::span<const int> t) {
    ForwardTrace trace;
    forward(p, t, trace);
    return trace.logits;
}

Eigen::VectorXd forward_constant_attention(const Eigen::MatrixXd& B,
                                           const Eigen::MatrixXd& D,
                                           std::span<const int> t) {
    const int s = static_cast<int>(t.size());
    if (s < 1) throw std::invalid_argument("constant attention: empty sequence");
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(D.cols());
    for (int u : t) sum += D.row(u).transpose();
    return B.row(t.back()).transpose() + sum / static_cast<double>(s);
}

void softmax_into(const Eigen::VectorXd& logits, Eigen::VectorXd& out) {
    const double m = logits.maxCoeff();
    out = (logits.array() - m).exp();
    out /= out.sum();
}

Eigen::VectorXd next_token_distribution(const Eigen::VectorXd& logits) {
    Eigen::VectorXd p;
    softmax_into(logits, p);
    return p;
}

ModelParams init_params(const ModelDims& dims, NormMode norm, double norm_eps, Rng& rng) {
    ModelParams p;
    static_cast<ParamSet&>(p) = ParamSet::zeros(dims);
    p.dims = dims;
    p.norm = norm;
    p.norm_eps = norm_eps;
    for_each_tensor(
        [&](bool, auto& t) {
            for (Eigen::Index i = 0; i < t.rows(); ++i)
                for (Eigen::Index j = 0; j < t.cols(); ++j)
                    t(i, j) = rng.truncated_gaussian(0.02, 2.0);
        },
        static_cast<ParamSet&>(p));
    p.gains.setOnes();
    return p;
}

void save_checkpoint(const ModelParams& p, std::uint64_t seed,
                     const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());

    nlohmann::json header = {
        {"version", 1},
        {"dims", {{"v", p.dims.v}, {"d", p.dims.d}, {"d_k", p.dims.d_k}, {"d_v", p.dims.d_v}}},
        {"norm", norm_mode_name(p.norm)},
        {"norm_eps", p.norm_eps},
        {"seed", seed},
    };
    const std::string hs = header.dump();
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    io::write_u32(out, static_cast<std::uint32_t>(hs.size()));
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));

    for_each_tensor(
        [&](bool, const auto& t) {
            for (Eigen::Index i = 0; i < t.rows(); ++i)
                for (Eigen::Index j = 0; j < t.cols(); ++j) io::write_f64(out, t(i, j));
        },
        static_cast<const ParamSet&>(p));
    if (!out) throw std::runtime_error("short write to " + path.string());
}

ModelParams load_checkpoint(const std::filesystem::path& path, std::uint64_t* seed_out) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());

    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
        throw std::runtime_error("not a checkpoint file: " + path.string());

    const std::uint32_t hlen = io::read_u32(in);
    std::string hs(hlen, '\0');
    in.read(hs.data(), hlen);
    const nlohmann::json header = nlohmann::json::parse(hs);

    ModelParams p;
    p.dims.v = header["dims"]["v"].get<int>();
    p.dims.d = header["dims"]["d"].get<int>();
    p.dims.d_k = header["dims"]["d_k"].get<int>();
    p.dims.d_v = header["dims"]["d_v"].get<int>();
    p.norm = norm_mode_from_name(header["norm"].get<std::string>());
    p.norm_eps = header["norm_eps"].get<double>();
    if (seed_out) *seed_out = header["seed"].get<std::uint64_t>();

    static_cast<ParamSet&>(p) = ParamSet::zeros(p.dims);
    for_each_tensor(
        [&](bool, auto& t) {
            for (Eigen::Index i = 0; i < t.rows(); ++i)
                for (Eigen::Index j = 0; j < t.cols(); ++j) t(i, j) = io::read_f64(in);
        },
        static_cast<ParamSet&>(p));
    if (!in) throw std::runtime_error("truncated checkpoint: " + path.string());
    return p;
}

}  // namespace scl
