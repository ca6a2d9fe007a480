#pragma once
#include <hdmix/likelihood.hpp>
#include <cmath>
#include <cstdint>
#include <vector>

namespace hdmix {

enum class SamplerKind { automatic, metropolis, direct };

struct SamplerConfig
{
    // Initial random-walk sd per latent component; empty means sqrt(gamma_sq) at theta0.
    Vec proposal_sd;
    bool adapt = true;
    double adapt_target = 0.4;
    Index adapt_window = 50;
    double adapt_gain = 0.5;
    SamplerKind kind = SamplerKind::automatic;
    std::uint64_t seed = 1;

    void validate() const
    {
        if (proposal_sd.size() > 0 && (proposal_sd.array() <= 0).any())
            throw InputError("proposal_sd must be positive");
        if (!(adapt_target > 0 && adapt_target < 1)) throw InputError("adapt_target must lie in (0,1)");
        if (adapt_window < 1) throw InputError("adapt_window must be >= 1");
    }
};

struct LatentState
{
    LatentMatrix phi;
    LatentMatrix scale;          // per-individual proposal sd
    std::vector<Index> accepted; // since the last adaptation
    std::vector<Index> proposed;
    std::vector<Index> total_accepted;
    std::vector<Index> total_proposed;

    Index n() const { return phi.rows(); }

    double acceptance_rate() const
    {
        Index a = 0, p = 0;
        for (std::size_t i = 0; i < total_accepted.size(); ++i) {
            a += total_accepted[i];
            p += total_proposed[i];
        }
        return p > 0 ? double(a) / double(p) : 0.0;
    }
};

// phi_i = prior mean at theta; proposal sd from the config or sqrt(gamma_sq).
inline LatentState initial_latent(const Evaluator& ev, const SamplerConfig& cfg)
{
    const Index n = ev.data().n_individuals(), q = ev.definition().q();
    LatentState s;
    s.phi.resize(n, q);
    s.scale.resize(n, q);
    for (Index i = 0; i < n; ++i)
        for (Index k = 0; k < q; ++k) {
            s.phi(i, k) = ev.prior_mean(i, k);
            s.scale(i, k) = cfg.proposal_sd.size() == q ? cfg.proposal_sd[k] : std::sqrt(ev.theta().gamma_sq[k]);
        }
    s.accepted.assign(static_cast<std::size_t>(n), 0);
    s.proposed.assign(static_cast<std::size_t>(n), 0);
    s.total_accepted.assign(static_cast<std::size_t>(n), 0);
    s.total_proposed.assign(static_cast<std::size_t>(n), 0);
    return s;
}

/**
 * One random-walk Metropolis-Hastings transition per individual, in place.
 * Individual i only consumes streams[i].
 */
inline void mh_update(const Evaluator& ev, LatentState& s, Streams& streams)
{
    const Index n = s.n(), q = s.phi.cols();
    std::vector<double> prop(static_cast<std::size_t>(q));
    for (Index i = 0; i < n; ++i) {
        Engine& rng = streams[i];
        auto cur = row_span(s.phi, i);
        for (Index k = 0; k < q; ++k) prop[k] = cur[k] + s.scale(i, k) * std_normal(rng);
        const double u = uniform01(rng);
        const double lp_cur = ev.log_posterior_unnorm(i, cur);
        const double lp_new = ev.log_posterior_unnorm(i, prop);
        ++s.proposed[i];
        ++s.total_proposed[i];
        if (std::log(u) < lp_new - lp_cur) {
            for (Index k = 0; k < q; ++k) s.phi(i, k) = prop[k];
            ++s.accepted[i];
            ++s.total_accepted[i];
        }
    }
}

inline LatentState mh_step(const ModelDefinition& def, const ParameterVector& theta, const Dataset& data,
                           const LatentState& latent, Streams& streams)
{
    Evaluator ev(def, data);
    ev.bind(theta);
    LatentState next = latent;
    mh_update(ev, next, streams);
    return next;
}

struct GaussianMoments
{
    Vec mean;
    Mat cov;
};

/**
 * Exact Gaussian posterior of phi_i for models affine in phi:
 *   precision = Gamma^-1 + sum_j w_j w_j^T / sigma^2,
 *   mean      = cov (Gamma^-1 m0 + sum_j w_j (y_j - offset_j - w_j . shift_j) / sigma^2).
 */
inline GaussianMoments gaussian_posterior(const Evaluator& ev, Index i)
{
    const auto& def = ev.definition();
    const auto& d = ev.data();
    const auto& t = ev.theta();
    const Index q = def.q();
    Mat prec = Mat::Zero(q, q);
    Vec rhs = Vec::Zero(q);
    for (Index k = 0; k < q; ++k) {
        prec(k, k) = 1.0 / t.gamma_sq[k];
        rhs[k] = ev.prior_mean(i, k) / t.gamma_sq[k];
    }
    const std::span<const double> alpha{t.alpha.data(), static_cast<std::size_t>(t.alpha.size())};
    for (Index r = d.start[i]; r < d.start[i + 1]; ++r) {
        if (!d.observed[r]) continue;
        auto l = def.mean->loading(alpha, d.v[r], ev.constants(i));
        if (!l) throw InputError("model '" + def.mean->name() + "' is not linear in the latent variables");
        double target = d.y[r] - l->offset;
        for (Index k = 0; k < q; ++k) target -= l->w[k] * ev.shift(r, k);
        prec.noalias() += l->w * l->w.transpose() / t.sigma_sq;
        rhs.noalias() += l->w * (target / t.sigma_sq);
    }
    Eigen::LLT<Mat> llt(prec);
    if (llt.info() != Eigen::Success) throw NumericalError("posterior precision is not positive definite");
    GaussianMoments g;
    g.mean = llt.solve(rhs);
    g.cov = llt.solve(Mat::Identity(q, q));
    return g;
}

inline Vec direct_gaussian_sample(const Evaluator& ev, Index i, Engine& rng)
{
    const GaussianMoments g = gaussian_posterior(ev, i);
    Eigen::LLT<Mat> llt(g.cov);
    Vec z(g.mean.size());
    for (Index k = 0; k < z.size(); ++k) z[k] = std_normal(rng);
    return g.mean + llt.matrixL() * z;
}

inline void direct_update(const Evaluator& ev, LatentState& s, Streams& streams)
{
    for (Index i = 0; i < s.n(); ++i) s.phi.row(i) = direct_gaussian_sample(ev, i, streams[i]).transpose();
}

inline bool uses_direct_sampling(const ModelDefinition& def, const SamplerConfig& cfg)
{
    if (cfg.kind == SamplerKind::metropolis) return false;
    const bool linear = def.mean->loading({}, 0.0, {}).has_value();
    if (cfg.kind == SamplerKind::direct && !linear)
        throw InputError("direct sampling requested for a model that is not linear in the latent variables");
    return linear;
}

// Multiplicative scale update toward the target acceptance rate.
inline double adapt_scale(double sd, double rate, double target, double gain = 0.5)
{
    return sd * std::exp(gain * (rate - target));
}

// Applies adapt_scale per individual from the window counters, then resets them.
inline void adapt(LatentState& s, const SamplerConfig& cfg)
{
    for (Index i = 0; i < s.n(); ++i) {
        if (s.proposed[i] == 0) continue;
        const double rate = double(s.accepted[i]) / double(s.proposed[i]);
        for (Index k = 0; k < s.scale.cols(); ++k)
            s.scale(i, k) = adapt_scale(s.scale(i, k), rate, cfg.adapt_target, cfg.adapt_gain);
        s.accepted[i] = 0;
        s.proposed[i] = 0;
    }
}

} // namespace hdmix
