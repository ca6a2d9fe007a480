#pragma once
#include <hdmix/sampler.hpp>
#include <cmath>
#include <vector>

namespace hdmix {

struct NlsResult
{
    Vec phi;
    double cost = 0.0; // half the residual sum of squares
    Mat jtj;           // Gauss-Newton curvature at phi
    Index iterations = 0;
    bool ok = false;
};

namespace detail {

// Residuals (y - m)/sigma over observed rows, then (phi - m0)/gamma when `with_prior`.
inline bool individual_residuals(const Evaluator& ev, Index i, const Vec& phi, bool with_prior, Vec& res, Mat& jac)
{
    const auto& d = ev.data();
    const auto& t = ev.theta();
    const Index q = phi.size();
    const Index n_obs = d.n_observed(i);
    const Index rows = n_obs + (with_prior ? q : 0);
    res.resize(rows);
    jac.setZero(rows, q);
    std::vector<double> g(static_cast<std::size_t>(q));
    const std::span<const double> ph{phi.data(), static_cast<std::size_t>(q)};
    const double s = std::sqrt(t.sigma_sq);
    Index row = 0;
    try {
        for (Index r = d.start[i]; r < d.start[i + 1]; ++r) {
            if (!d.observed[r]) continue;
            const double m = ev.mean_grad_at(i, r, ph, g);
            res[row] = (d.y[r] - m) / s;
            for (Index k = 0; k < q; ++k) jac(row, k) = -g[k] / s;
            ++row;
        }
    } catch (const DomainError&) {
        return false;
    }
    if (with_prior)
        for (Index k = 0; k < q; ++k, ++row) {
            const double sd = std::sqrt(t.gamma_sq[k]);
            res[row] = (phi[k] - ev.prior_mean(i, k)) / sd;
            jac(row, k) = 1.0 / sd;
        }
    return res.allFinite() && jac.allFinite();
}

} // namespace detail

/**
 * Levenberg-Marquardt on one individual's residuals. Without the prior this is
 * plain nonlinear least squares; with it, the posterior mode of phi_i at the bound theta.
 */
inline NlsResult fit_individual(const Evaluator& ev, Index i, const Vec& phi0, bool with_prior, Index max_iter = 200)
{
    NlsResult out;
    Vec phi = phi0, res, res_try;
    Mat jac, jac_try;
    if (!detail::individual_residuals(ev, i, phi, with_prior, res, jac)) return out;
    double cost = 0.5 * res.squaredNorm();
    double damping = 1e-3;
    const Index q = phi.size();
    Index it = 0;
    for (; it < max_iter; ++it) {
        const Mat jtj = jac.transpose() * jac;
        const Vec grad = jac.transpose() * res;
        bool improved = false;
        for (int attempt = 0; attempt < 30 && !improved; ++attempt) {
            Mat a = jtj;
            for (Index k = 0; k < q; ++k) a(k, k) += damping * std::max(jtj(k, k), 1e-12);
            const Vec step = a.ldlt().solve(-grad);
            if (!step.allFinite()) {
                damping *= 10;
                continue;
            }
            const Vec cand = phi + step;
            if (detail::individual_residuals(ev, i, cand, with_prior, res_try, jac_try)) {
                const double c = 0.5 * res_try.squaredNorm();
                if (c <= cost) {
                    const double rel = (cost - c) / std::max(cost, 1e-300);
                    const double step_rel = step.norm() / std::max(1.0, phi.norm());
                    phi = cand;
                    res.swap(res_try);
                    jac.swap(jac_try);
                    cost = c;
                    damping = std::max(damping / 3.0, 1e-12);
                    improved = true;
                    if (rel < 1e-14 || step_rel < 1e-12) it = max_iter; // converged
                    break;
                }
            }
            damping *= 4.0;
        }
        if (!improved) break; // no descent direction left: local minimum at machine precision
    }
    out.phi = phi;
    out.cost = cost;
    out.jtj = jac.transpose() * jac;
    out.iterations = std::min(it, max_iter);
    out.ok = phi.allFinite() && std::isfinite(cost);
    return out;
}

/**
 * Latent state started at each individual's posterior mode, with proposal
 * sds from the Laplace approximation. Useful when the posterior is much
 * narrower than the prior (small residual variance).
 */
inline LatentState mode_latent(const Evaluator& ev, const SamplerConfig& cfg)
{
    LatentState s = initial_latent(ev, cfg);
    const Index q = ev.definition().q();
    for (Index i = 0; i < s.n(); ++i) {
        Vec start(q);
        for (Index k = 0; k < q; ++k) start[k] = s.phi(i, k);
        const NlsResult r = fit_individual(ev, i, start, true);
        if (!r.ok) continue;
        s.phi.row(i) = r.phi.transpose();
        Eigen::LDLT<Mat> ldlt(r.jtj);
        if (ldlt.info() != Eigen::Success) continue;
        const Mat cov = ldlt.solve(Mat::Identity(q, q));
        for (Index k = 0; k < q; ++k)
            if (cov(k, k) > 0 && std::isfinite(cov(k, k))) s.scale(i, k) = 2.4 / std::sqrt(double(q)) * std::sqrt(cov(k, k));
    }
    return s;
}

} // namespace hdmix
