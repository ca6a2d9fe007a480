#pragma once
#include <hdmix/sampler.hpp>
#include <cmath>
#include <deque>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace hdmix {

/// Proximal operator of lambda |.| in the metric s (.)^2 / 2: soft threshold at lambda / s.
inline double prox_weighted_l1(double x, double s, double lambda)
{
    const double t = lambda / s;
    if (x >= t) return x - t;
    if (x <= -t) return x + t;
    return 0.0;
}

// Multipliers on gamma0 per parameter group; all 1 reproduces the plain algorithm.
struct StepScale
{
    double alpha = 1.0;
    double mu = 1.0;
    double beta = 1.0;
    double log_var = 1.0;

    double of(CoordGroup g) const
    {
        switch (g) {
        case CoordGroup::alpha: return alpha;
        case CoordGroup::mu: return mu;
        case CoordGroup::beta: return beta;
        default: return log_var;
        }
    }
};

struct AwpsgConfig
{
    double gamma0 = 0.5;
    double adagrad_eps = 1e-8;
    Index k_max = 5000;
    double lambda = 0.0;
    double convergence_tol = 1e-4;
    Index convergence_window = 100;
    double averaging_fraction = 0.25;
    StepScale step_scale;
    // Sampler adaptation stops for the last `freeze_fraction` of k_max.
    double freeze_fraction = 0.25;
    // Keep every n-th iterate in the trajectory (0: none).
    Index trajectory_every = 0;
    double divergence_bound = 1e8;
    // Log-variance coordinates are held for the first `variance_warmup` iterations.
    Index variance_warmup = 0;
    // Flat coordinates held at their initial value (empty: all free).
    std::vector<unsigned char> fixed;

    void validate() const
    {
        if (!(gamma0 > 0)) throw InputError("gamma0 must be > 0");
        if (!(adagrad_eps > 0)) throw InputError("adagrad_eps must be > 0");
        if (k_max < 1) throw InputError("k_max must be >= 1");
        if (!(lambda >= 0)) throw InputError("lambda must be >= 0");
        if (!(averaging_fraction >= 0 && averaging_fraction <= 1))
            throw InputError("averaging_fraction must lie in [0,1]");
        if (convergence_window < 1) throw InputError("convergence_window must be >= 1");
        if (variance_warmup < 0) throw InputError("variance_warmup must be >= 0");
    }
};

/// Running sums of squared gradients, one per flat coordinate.
struct PreconditionerState
{
    Vec accum;

    explicit PreconditionerState(Index d = 0) : accum(Vec::Zero(d)) {}

    void accumulate(const Vec& v) { accum.array() += v.array().square(); }

    double step(Index l, double gamma0, double eps) const { return gamma0 / (std::sqrt(accum[l]) + eps); }
};

/**
 * One Forward-Backward update of the flat iterate, in place:
 *   omega_l = theta_l + g_l v_l / (P_l + eps),  g_l = gamma0 * scale_l
 *   theta_l = prox(omega_l, (P_l + eps) / g_l, lambda)  on penalized coordinates,
 *   theta_l = omega_l                                  elsewhere.
 * The preconditioner must already include v.
 */
inline void forward_backward(Vec& z, const Vec& v, const PreconditionerState& pre, const Layout& lay,
                             const AwpsgConfig& cfg, bool penalize)
{
    for (Index l = 0; l < z.size(); ++l) {
        if (!cfg.fixed.empty() && cfg.fixed[static_cast<std::size_t>(l)]) continue;
        const double g = cfg.gamma0 * cfg.step_scale.of(lay.group(l));
        const double denom = std::sqrt(pre.accum[l]) + cfg.adagrad_eps;
        const double omega = z[l] + g * v[l] / denom;
        z[l] = (penalize && lay.is_penalized(l)) ? prox_weighted_l1(omega, denom / g, cfg.lambda) : omega;
    }
}

struct TrajectoryPoint
{
    Index iter;
    Vec z; // flat coordinates
};

struct FitResult
{
    ParameterVector theta_hat;
    Vec z_hat;     // flat form of theta_hat
    Vec z_last;    // last iterate
    std::vector<TrajectoryPoint> trajectory;
    Index iterations_run = 0;
    double acceptance_rate = 0.0;
    bool converged = false;
    LatentState latent; // final sampler state (warm starts)
};

namespace detail {

// Block sums of iterates, enough to average any trailing fraction at block resolution.
class TailAverager
{
public:
    TailAverager(Index d, Index k_max, const Layout& lay) : d_(d), lay_(lay)
    {
        block_ = std::max<Index>(1, k_max / 100);
    }

    void add(Index k, const Vec& z)
    {
        const Index b = (k - 1) / block_;
        while (static_cast<Index>(blocks_.size()) <= b) blocks_.push_back({Vec::Zero(d_), Vec::Zero(d_), 0});
        Block& blk = blocks_.back();
        blk.sum += z;
        for (Index l = lay_.beta_offset(); l < lay_.gamma_offset(); ++l)
            if (z[l] != 0.0) blk.nonzero[l] += 1.0;
        ++blk.count;
    }

    // Mean of the blocks starting at or after iteration (1 - fraction) * k, at least one block.
    Vec average(Index k, double fraction) const
    {
        const Index first_iter = k - static_cast<Index>(std::ceil(fraction * double(k)));
        Index first_block = (first_iter + block_ - 1) / block_;
        first_block = std::min<Index>(first_block, static_cast<Index>(blocks_.size()) - 1);
        Vec sum = Vec::Zero(d_), nz = Vec::Zero(d_);
        Index count = 0;
        for (std::size_t b = static_cast<std::size_t>(first_block); b < blocks_.size(); ++b) {
            sum += blocks_[b].sum;
            nz += blocks_[b].nonzero;
            count += blocks_[b].count;
        }
        Vec out = sum / double(count);
        // beta: zero when zero in at least half the averaged iterates, else the mean of the nonzero values
        for (Index l = lay_.beta_offset(); l < lay_.gamma_offset(); ++l) {
            if (2.0 * nz[l] <= double(count)) out[l] = 0.0;
            else out[l] = sum[l] / nz[l];
        }
        return out;
    }

private:
    struct Block
    {
        Vec sum;
        Vec nonzero;
        Index count;
    };
    Index d_;
    Layout lay_;
    Index block_;
    std::vector<Block> blocks_;
};

inline FitResult run_stochastic_fit(const ModelDefinition& def, const Dataset& data, const AwpsgConfig& cfg,
                                    const SamplerConfig& scfg, const ParameterVector& theta0, bool penalize,
                                    const LatentState* warm_latent)
{
    cfg.validate();
    scfg.validate();
    const Layout lay(def, data.p());
    if (!cfg.fixed.empty() && static_cast<Index>(cfg.fixed.size()) != lay.size())
        throw InputError("fixed-coordinate mask has the wrong length");
    if (!theta0.valid()) throw InputError("initial parameter vector is not valid");

    Evaluator ev(def, data);
    ParameterVector theta = theta0;
    ev.bind(theta);

    const bool direct = uses_direct_sampling(def, scfg);
    LatentState latent = (warm_latent && warm_latent->n() == data.n_individuals()) ? *warm_latent
                                                                                   : initial_latent(ev, scfg);
    Streams streams(scfg.seed, stream_tag::sampler, data.n_individuals());

    Vec z = lay.flatten(theta);
    PreconditionerState pre(lay.size());
    TailAverager tail(lay.size(), cfg.k_max, lay);
    std::deque<double> window;
    double window_sum = 0.0;
    const Index freeze_at = cfg.k_max - static_cast<Index>(std::floor(cfg.freeze_fraction * double(cfg.k_max)));

    FitResult res;
    Index k = 0;
    while (k < cfg.k_max) {
        ++k;
        // Simulation
        if (direct) {
            direct_update(ev, latent, streams);
        } else {
            mh_update(ev, latent, streams);
            if (scfg.adapt && k < freeze_at && k % scfg.adapt_window == 0) adapt(latent, scfg);
        }
        // Gradient, preconditioner, Forward / Backward
        Vec v = ev.gradient(latent.phi);
        if (!cfg.fixed.empty())
            for (Index l = 0; l < v.size(); ++l)
                if (cfg.fixed[static_cast<std::size_t>(l)]) v[l] = 0.0;
        if (k <= cfg.variance_warmup) v.segment(lay.gamma_offset(), lay.q() + 1).setZero();
        pre.accumulate(v);
        const Vec z_prev = z;
        forward_backward(z, v, pre, lay, cfg, penalize && cfg.lambda > 0);

        for (Index l = 0; l < z.size(); ++l)
            if (!(std::abs(z[l]) <= cfg.divergence_bound))
                throw NumericalError("iterate diverged at iteration " + std::to_string(k) + ": coordinate " +
                                     lay.name(l, &def) + " = " + std::to_string(z[l]));

        theta = lay.unflatten(z);
        ev.bind(theta);
        tail.add(k, z);
        if (cfg.trajectory_every > 0 && (k % cfg.trajectory_every == 0 || k == 1))
            res.trajectory.push_back({k, z});

        const double rel = (z - z_prev).norm() / std::max(1.0, z_prev.norm());
        window.push_back(rel);
        window_sum += rel;
        if (static_cast<Index>(window.size()) > cfg.convergence_window) {
            window_sum -= window.front();
            window.pop_front();
        }
        if (static_cast<Index>(window.size()) == cfg.convergence_window &&
            window_sum / double(cfg.convergence_window) < cfg.convergence_tol) {
            res.converged = true;
            break;
        }
    }

    res.iterations_run = k;
    res.z_last = z;
    res.z_hat = tail.average(k, cfg.averaging_fraction);
    if (!cfg.fixed.empty())
        for (Index l = 0; l < z.size(); ++l)
            if (cfg.fixed[static_cast<std::size_t>(l)]) res.z_hat[l] = z[l];
    res.theta_hat = lay.unflatten(res.z_hat);
    res.acceptance_rate = direct ? 1.0 : latent.acceptance_rate();
    res.latent = std::move(latent);
    return res;
}

} // namespace detail

/**
 * Penalized fit: simulation step, AdaGrad-preconditioned ascent on the complete
 * log-likelihood, weighted l1 prox on the beta coordinates.
 */
inline FitResult awpsg_fit(const ModelDefinition& def, const Dataset& data, const AwpsgConfig& cfg,
                           const SamplerConfig& scfg, const ParameterVector& theta0,
                           const LatentState* warm_latent = nullptr)
{
    return detail::run_stochastic_fit(def, data, cfg, scfg, theta0, true, warm_latent);
}

// Same recursion with the Backward step skipped (maximum likelihood).
inline FitResult asgd_fit(const ModelDefinition& def, const Dataset& data, const AwpsgConfig& cfg,
                          const SamplerConfig& scfg, const ParameterVector& theta0,
                          const LatentState* warm_latent = nullptr)
{
    return detail::run_stochastic_fit(def, data, cfg, scfg, theta0, false, warm_latent);
}

/**
 * Default starting point: model moment method for alpha, mu and variances when
 * available, overridden by `hint` entries; beta = 0.
 */
inline ParameterVector initial_theta(const ModelDefinition& def, const Dataset& data,
                                     const std::optional<ParameterVector>& hint = std::nullopt)
{
    ParameterVector t = zero_parameters(def, data.p());
    bool have = false;
    if (auto g = def.mean->moment_guess(data)) {
        if (g->alpha.size() == def.a()) t.alpha = g->alpha;
        t.mu = g->mu;
        t.gamma_sq = g->gamma_sq;
        t.sigma_sq = g->sigma_sq;
        have = true;
    }
    if (hint) {
        if (hint->alpha.size() == def.a()) t.alpha = hint->alpha;
        if (hint->mu.size() == def.q()) t.mu = hint->mu;
        if (hint->gamma_sq.size() == def.q()) t.gamma_sq = hint->gamma_sq;
        if (hint->sigma_sq > 0) t.sigma_sq = hint->sigma_sq;
        if (hint->beta.rows() == def.r() && hint->beta.cols() == data.p()) t.beta = hint->beta;
        have = true;
    }
    if (!have)
        throw InputError("model '" + def.mean->name() + "' has no moment initializer; supply theta0");
    return t;
}

// CSV `iter,coord,value` on the natural parameter scale.
inline void write_trajectory_csv(const FitResult& fit, const ModelDefinition& def, Index p, const std::string& path)
{
    std::ofstream os(path);
    if (!os) throw InputError("cannot write " + path);
    const Layout lay(def, p);
    os << "iter,coord,value\n";
    for (const auto& pt : fit.trajectory) {
        const ParameterVector t = lay.unflatten(pt.z);
        for (Index l = 0; l < lay.size(); ++l)
            os << pt.iter << ',' << lay.name(l, &def) << ',' << csv::fmt(lay.natural_value(t, l)) << '\n';
    }
}

} // namespace hdmix
