#pragma once
#include <hdmix/nls.hpp>
#include <hdmix/optimizer.hpp>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <numbers>
#include <string>
#include <vector>

namespace hdmix {

/// n_points values from lambda_max down to lambda_max * ratio, equally spaced in log scale.
inline std::vector<double> lambda_grid(double lambda_max, double ratio, Index n_points)
{
    if (!(lambda_max > 0)) throw InputError("lambda_max must be > 0");
    if (!(ratio > 0 && ratio < 1)) throw InputError("grid ratio must lie in (0,1)");
    if (n_points < 2) throw InputError("grid needs at least two points");
    std::vector<double> g(static_cast<std::size_t>(n_points));
    const double step = std::log(ratio) / double(n_points - 1);
    for (Index k = 0; k < n_points; ++k) g[k] = lambda_max * std::exp(step * double(k));
    g.front() = lambda_max;
    g.back() = lambda_max * ratio;
    return g;
}

/// Indices (row-major over the regressed rows) of entries with |beta| > zero_tol.
inline std::vector<Index> extract_support(const Mat& beta, double zero_tol = 0.0)
{
    if (zero_tol < 0) throw InputError("zero_tol must be >= 0");
    std::vector<Index> s;
    for (Index row = 0; row < beta.rows(); ++row)
        for (Index c = 0; c < beta.cols(); ++c)
            if (std::abs(beta(row, c)) > zero_tol) s.push_back(row * beta.cols() + c);
    return s;
}

/// Columns (covariates) used by at least one regressed row.
inline std::vector<Index> support_columns(const std::vector<Index>& support, Index p)
{
    std::vector<Index> cols;
    for (Index s : support) cols.push_back(s % p);
    std::sort(cols.begin(), cols.end());
    cols.erase(std::unique(cols.begin(), cols.end()), cols.end());
    return cols;
}

inline double log_binomial(Index n, Index k)
{
    return std::lgamma(double(n) + 1) - std::lgamma(double(k) + 1) - std::lgamma(double(n - k) + 1);
}

/// -2 loglik + |S| log(n_obs) + 2 log C(p, |S|).
inline double ebic(double loglik, Index support_size, Index n_obs, Index p)
{
    if (support_size < 0 || support_size > p) throw InputError("support size must lie in [0, p]");
    return -2.0 * loglik + double(support_size) * std::log(double(n_obs)) + 2.0 * log_binomial(p, support_size);
}

/**
 * The model restricted to a support: covariates reduced to the support columns;
 * entries (row, column) outside the support stay fixed at zero.
 */
struct ReducedProblem
{
    Dataset data;
    std::vector<Index> columns;
    Mat beta_mask; // r x columns, 1 = free

    Mat restrict_beta(const Mat& beta_full) const
    {
        Mat b(beta_full.rows(), static_cast<Index>(columns.size()));
        for (std::size_t c = 0; c < columns.size(); ++c) b.col(static_cast<Index>(c)) = beta_full.col(columns[c]);
        return b.cwiseProduct(beta_mask);
    }

    Mat expand_beta(const Mat& beta_reduced, Index p) const
    {
        Mat b = Mat::Zero(beta_reduced.rows(), p);
        for (std::size_t c = 0; c < columns.size(); ++c) b.col(columns[c]) = beta_reduced.col(static_cast<Index>(c));
        return b;
    }

    // Optimizer mask: everything free except beta entries outside the support.
    std::vector<unsigned char> fixed_mask(const ModelDefinition& def) const
    {
        const Layout lay(def, static_cast<Index>(columns.size()));
        std::vector<unsigned char> m(static_cast<std::size_t>(lay.size()), 0);
        for (Index row = 0; row < beta_mask.rows(); ++row)
            for (Index c = 0; c < beta_mask.cols(); ++c)
                if (beta_mask(row, c) == 0.0) m[static_cast<std::size_t>(lay.beta_index(row, c))] = 1;
        return m;
    }
};

inline ReducedProblem restrict_model(const ModelDefinition& def, const Dataset& data,
                                     const std::vector<Index>& support)
{
    const Index p = data.p();
    for (Index s : support)
        if (s < 0 || s >= def.r() * p) throw InputError("support index out of range");
    ReducedProblem rp;
    rp.columns = support_columns(support, p);
    rp.data = data.with_columns(rp.columns);
    rp.beta_mask = Mat::Zero(def.r(), static_cast<Index>(rp.columns.size()));
    for (Index s : support) {
        const Index row = s / p;
        const auto it = std::lower_bound(rp.columns.begin(), rp.columns.end(), s % p);
        rp.beta_mask(row, static_cast<Index>(it - rp.columns.begin())) = 1.0;
    }
    return rp;
}

enum class McMethod { prior, importance };

struct MonteCarloLoglik
{
    double value = 0.0;
    double std_error = 0.0;
};

namespace detail {

// log mean exp of the log-weights plus the delta-method sd of that log mean.
inline void accumulate_log_mean(const Vec& lw, Index i, MonteCarloLoglik& out)
{
    const double mx = lw.maxCoeff();
    if (!std::isfinite(mx))
        throw NumericalError("Monte Carlo likelihood: all weights vanish for individual " + std::to_string(i + 1) +
                             "; increase M or use importance sampling");
    const Vec w = (lw.array() - mx).exp().matrix();
    const double m = w.mean();
    const double var = (w.array() - m).square().sum() / double(std::max<Index>(lw.size() - 1, 1));
    out.value += mx + std::log(m);
    out.std_error += var / (double(lw.size()) * m * m);
}

struct IndividualProposal
{
    Vec mean;
    Mat chol; // lower factor of the proposal covariance
};

// Posterior location/scale per individual: exact for affine models, else an adaptive MH run.
inline std::vector<IndividualProposal> posterior_proposals(const Evaluator& ev, std::uint64_t seed, Index mh_steps)
{
    const auto& def = ev.definition();
    const Index n = ev.data().n_individuals(), q = def.q();
    std::vector<IndividualProposal> out(static_cast<std::size_t>(n));
    if (def.mean->loading({}, 0.0, {}).has_value()) {
        for (Index i = 0; i < n; ++i) {
            auto g = gaussian_posterior(ev, i);
            out[i].mean = g.mean;
            out[i].chol = Eigen::LLT<Mat>(g.cov).matrixL();
        }
        return out;
    }
    SamplerConfig scfg;
    scfg.adapt_window = 25;
    LatentState st = initial_latent(ev, scfg);
    Streams streams(seed, stream_tag::mc_loglik + 100, n);
    const Index burn = mh_steps / 2;
    Mat sum = Mat::Zero(n, q);
    std::vector<Mat> sq(static_cast<std::size_t>(n), Mat::Zero(q, q));
    for (Index k = 0; k < mh_steps; ++k) {
        mh_update(ev, st, streams);
        if (k < burn) {
            if ((k + 1) % scfg.adapt_window == 0) adapt(st, scfg);
            continue;
        }
        for (Index i = 0; i < n; ++i) {
            const Vec ph = st.phi.row(i).transpose();
            sum.row(i) += ph.transpose();
            sq[i] += ph * ph.transpose();
        }
    }
    const double cnt = double(mh_steps - burn);
    for (Index i = 0; i < n; ++i) {
        Vec m = sum.row(i).transpose() / cnt;
        Mat c = sq[i] / cnt - m * m.transpose();
        for (Index k = 0; k < q; ++k) c(k, k) = std::max(c(k, k), 1e-12 * (1.0 + m[k] * m[k]));
        Eigen::LLT<Mat> llt(c);
        out[i].mean = m;
        out[i].chol = llt.info() == Eigen::Success ? Mat(llt.matrixL()) : Mat(c.diagonal().cwiseSqrt().asDiagonal());
    }
    return out;
}

} // namespace detail

/**
 * log g(theta; Y) ~= sum_i log( (1/M) sum_m prod_j p(Y_ij | phi_i^(m)) ), phi_i^(m) drawn from
 * the latent prior (default) or, for `importance`, from a defensive mixture of a widened
 * posterior approximation and the prior.
 */
inline MonteCarloLoglik mc_marginal_loglik(const ModelDefinition& def, const Dataset& data,
                                           const ParameterVector& theta, Index m_samples, std::uint64_t seed,
                                           McMethod method = McMethod::prior, Index is_pilot_steps = 1000)
{
    if (m_samples < 1) throw InputError("Monte Carlo sample size must be >= 1");
    Evaluator ev(def, data);
    ev.bind(theta);
    const Index n = data.n_individuals(), q = def.q();
    Streams streams(seed, stream_tag::mc_loglik, n);
    MonteCarloLoglik out;
    std::vector<double> phi(static_cast<std::size_t>(q));
    Vec lw(m_samples);

    if (method == McMethod::prior) {
        for (Index i = 0; i < n; ++i) {
            for (Index m = 0; m < m_samples; ++m) {
                for (Index k = 0; k < q; ++k)
                    phi[k] = ev.prior_mean(i, k) + std::sqrt(theta.gamma_sq[k]) * std_normal(streams[i]);
                lw[m] = ev.obs_term(i, phi);
            }
            detail::accumulate_log_mean(lw, i, out);
        }
    } else {
        const auto props = detail::posterior_proposals(ev, seed, is_pilot_steps);
        // mixture weights: widened posterior (x2 sd), wide posterior (x4 sd), prior
        const double wts[3] = {0.6, 0.3, 0.1};
        const double inflate[2] = {2.0, 4.0};
        for (Index i = 0; i < n; ++i) {
            const auto& pr = props[static_cast<std::size_t>(i)];
            const Mat& l = pr.chol;
            const double logdet_l = l.diagonal().array().abs().log().sum();
            for (Index m = 0; m < m_samples; ++m) {
                const double u = uniform01(streams[i]);
                Vec z(q);
                for (Index k = 0; k < q; ++k) z[k] = std_normal(streams[i]);
                Vec ph(q);
                if (u < wts[0] + wts[1]) {
                    const double f = u < wts[0] ? inflate[0] : inflate[1];
                    ph = pr.mean + f * (l * z);
                } else {
                    for (Index k = 0; k < q; ++k) ph[k] = ev.prior_mean(i, k) + std::sqrt(theta.gamma_sq[k]) * z[k];
                }
                for (Index k = 0; k < q; ++k) phi[k] = ph[k];
                // proposal log-density
                double comps[3];
                for (int c = 0; c < 2; ++c) {
                    const Vec e = l.triangularView<Eigen::Lower>().solve(ph - pr.mean) / inflate[c];
                    comps[c] = std::log(wts[c]) - 0.5 * e.squaredNorm() - double(q) * std::log(inflate[c]) - logdet_l -
                               0.5 * double(q) * std::log(2.0 * std::numbers::pi);
                }
                const double lprior = ev.latent_term(i, phi);
                comps[2] = std::log(wts[2]) + lprior;
                const double mx = std::max({comps[0], comps[1], comps[2]});
                const double lq = mx + std::log(std::exp(comps[0] - mx) + std::exp(comps[1] - mx) + std::exp(comps[2] - mx));
                lw[m] = ev.obs_term(i, phi) + lprior - lq;
            }
            detail::accumulate_log_mean(lw, i, out);
        }
    }
    out.std_error = std::sqrt(out.std_error);
    return out;
}

struct PathConfig
{
    AwpsgConfig penalized;
    AwpsgConfig refit;
    SamplerConfig sampler;
    Index mc_samples = 5000;
    McMethod mc_method = McMethod::prior;
    Index is_pilot_steps = 1000;
    bool warm_start = true;
    // Start the sampler at per-individual posterior modes instead of the prior means.
    bool mode_start = false;
    // After a fit with empty support, start the next lambda from theta0 again:
    // an all-zero fit carries no information on beta and its variance
    // estimates absorb the covariate effects. When only some beta rows are
    // zero, the warm start keeps everything except the gamma_sq of those
    // components, which go back to theta0.
    bool restart_after_empty = true;
    double zero_tol = 0.0;
    Index max_support = 50; // sweep stops once |S| exceeds this
    std::uint64_t seed = 1;
    // lambda_max search
    Index pilot_fits = 5;
    Index pilot_k_max = 1000;
    Index pilot_gradient_draws = 50;
};

struct PathRecord
{
    double lambda = 0.0;
    ParameterVector theta_pen;
    std::vector<Index> support;
    ParameterVector theta_mle; // expanded back to all p covariates
    double mc_loglik = 0.0;
    double mc_std_error = 0.0;
    double ebic = 0.0;
    bool failed = false;
    bool cached = false;
    std::string error;
};

struct PathResult
{
    std::vector<PathRecord> records; // lambda descending
    double lambda_hat = 0.0;
    Index selected = -1;
    ParameterVector theta_final;
    std::vector<Index> support_final;

    const PathRecord& selected_record() const { return records[static_cast<std::size_t>(selected)]; }
};

// Posterior-mode latent state at theta.
inline LatentState start_latent_at(const ModelDefinition& def, const Dataset& data, const ParameterVector& theta,
                                   const SamplerConfig& scfg)
{
    Evaluator ev(def, data);
    ev.bind(theta);
    return mode_latent(ev, scfg);
}

/**
 * Smallest lambda that keeps every beta at zero when fitting from theta0:
 * bracket from the largest |gradient| on beta over sampler draws at theta0
 * (expanded until a pilot fit is empty), then bisect in log scale with
 * short penalized pilot fits.
 */
inline double estimate_lambda_max(const ModelDefinition& def, const Dataset& data, const PathConfig& cfg,
                                  const ParameterVector& theta0)
{
    const Layout lay(def, data.p());
    Evaluator ev(def, data);
    ev.bind(theta0);
    LatentState st = cfg.mode_start ? mode_latent(ev, cfg.sampler) : initial_latent(ev, cfg.sampler);
    const LatentState start_latent = st;
    Streams streams(derive_seed(cfg.seed, {stream_tag::init}), stream_tag::sampler, data.n_individuals());
    const bool direct = uses_direct_sampling(def, cfg.sampler);
    double sup = 0.0;
    for (Index k = 0; k < cfg.pilot_gradient_draws; ++k) {
        if (direct) direct_update(ev, st, streams);
        else mh_update(ev, st, streams);
        const Vec v = ev.gradient(st.phi);
        for (Index l : lay.penalized_indices()) sup = std::max(sup, std::abs(v[l]));
    }
    if (!(sup > 0)) throw NumericalError("gradient on beta vanishes at the starting point; cannot bracket lambda_max");

    AwpsgConfig pilot = cfg.penalized;
    pilot.k_max = cfg.pilot_k_max;
    SamplerConfig scfg = cfg.sampler;
    Index n_fit = 0;
    auto empty_at = [&](double lam) {
        pilot.lambda = lam;
        scfg.seed = derive_seed(cfg.seed, {stream_tag::init, static_cast<std::uint64_t>(++n_fit)});
        const FitResult fit = awpsg_fit(def, data, pilot, scfg, theta0, &start_latent);
        return extract_support(fit.theta_hat.beta, cfg.zero_tol).empty();
    };
    double hi = sup;
    for (int expand = 0; expand < 10 && !empty_at(hi); ++expand) hi *= 4.0;
    double lo = 0.05 * hi;
    for (Index f = 0; f < cfg.pilot_fits; ++f) {
        const double mid = std::sqrt(lo * hi);
        if (empty_at(mid)) hi = mid;
        else lo = mid;
    }
    return hi;
}

namespace detail {

struct RefitOutcome
{
    ParameterVector theta_mle;
    MonteCarloLoglik loglik;
};

inline RefitOutcome refit_support(const ModelDefinition& def, const Dataset& data, const PathConfig& cfg,
                                  const ParameterVector& start, const std::vector<Index>& support,
                                  const LatentState* latent, std::uint64_t seed)
{
    const ReducedProblem rp = restrict_model(def, data, support);
    ParameterVector t0 = start;
    t0.beta = rp.restrict_beta(start.beta);
    AwpsgConfig rc = cfg.refit;
    rc.lambda = 0.0;
    rc.fixed = rp.fixed_mask(def);
    SamplerConfig scfg = cfg.sampler;
    scfg.seed = seed;
    const FitResult mle = asgd_fit(def, rp.data, rc, scfg, t0, latent);
    RefitOutcome out;
    out.loglik = mc_marginal_loglik(def, rp.data, mle.theta_hat, cfg.mc_samples, cfg.seed, cfg.mc_method,
                                    cfg.is_pilot_steps);
    out.theta_mle = mle.theta_hat;
    out.theta_mle.beta = rp.expand_beta(mle.theta_hat.beta, data.p());
    return out;
}

} // namespace detail

/**
 * For each lambda (descending, warm-started): penalized fit, support, reduced-model
 * refit, Monte Carlo log-likelihood, eBIC. Selects the eBIC minimizer (ties: larger lambda).
 */
inline PathResult run_path(const ModelDefinition& def, const Dataset& data, std::vector<double> grid,
                           const PathConfig& cfg, const ParameterVector& theta0)
{
    if (grid.empty()) throw InputError("lambda grid is empty");
    std::sort(grid.begin(), grid.end(), std::greater<>());
    const Index n_obs = data.n_observed();
    const Index p_total = def.r() * data.p();

    PathResult res;
    std::map<std::vector<Index>, detail::RefitOutcome> cache;
    ParameterVector warm = theta0;
    LatentState warm_latent;
    bool have_latent = false;
    if (cfg.mode_start) {
        warm_latent = start_latent_at(def, data, theta0, cfg.sampler);
        have_latent = true;
    }

    for (std::size_t li = 0; li < grid.size(); ++li) {
        PathRecord rec;
        rec.lambda = grid[li];
        try {
            AwpsgConfig pc = cfg.penalized;
            pc.lambda = grid[li];
            SamplerConfig scfg = cfg.sampler;
            scfg.seed = cfg.seed + 104729ULL * (li + 1);
            const ParameterVector& start = cfg.warm_start ? warm : theta0;
            const FitResult pen = awpsg_fit(def, data, pc, scfg, start, have_latent ? &warm_latent : nullptr);
            rec.theta_pen = pen.theta_hat;
            rec.support = extract_support(pen.theta_hat.beta, cfg.zero_tol);
            if (cfg.warm_start && !(cfg.restart_after_empty && rec.support.empty())) {
                warm = pen.theta_hat;
                warm_latent = pen.latent;
                have_latent = true;
                if (cfg.restart_after_empty) {
                    for (Index row = 0; row < def.r(); ++row) {
                        if ((warm.beta.row(row).array().abs() <= cfg.zero_tol).all()) {
                            const Index k = def.regressed[static_cast<std::size_t>(row)];
                            warm.gamma_sq[k] = theta0.gamma_sq[k];
                        }
                    }
                }
            }
            if (static_cast<Index>(rec.support.size()) > cfg.max_support) break;

            auto it = cache.find(rec.support);
            if (it == cache.end()) {
                auto out = detail::refit_support(def, data, cfg, pen.theta_hat, rec.support, &pen.latent,
                                                 scfg.seed + 1);
                it = cache.emplace(rec.support, std::move(out)).first;
            } else {
                rec.cached = true;
            }
            rec.theta_mle = it->second.theta_mle;
            rec.mc_loglik = it->second.loglik.value;
            rec.mc_std_error = it->second.loglik.std_error;
            rec.ebic = ebic(rec.mc_loglik, static_cast<Index>(rec.support.size()), n_obs, p_total);
        } catch (const NumericalError& e) {
            rec.failed = true;
            rec.error = e.what();
        } catch (const DomainError& e) {
            rec.failed = true;
            rec.error = e.what();
        }
        res.records.push_back(std::move(rec));
    }

    for (std::size_t k = 0; k < res.records.size(); ++k) {
        const auto& r = res.records[k];
        if (r.failed) continue;
        if (res.selected < 0 || r.ebic < res.records[static_cast<std::size_t>(res.selected)].ebic)
            res.selected = static_cast<Index>(k);
    }
    if (res.selected < 0) {
        std::string why = res.records.empty() ? "no lambda evaluated" : res.records.front().error;
        throw NumericalError("every lambda on the path failed: " + why);
    }
    const auto& sel = res.selected_record();
    res.lambda_hat = sel.lambda;
    res.theta_final = sel.theta_mle;
    res.support_final = sel.support;
    return res;
}

// `lambda,coord,value` for every beta coordinate of every penalized fit.
inline void write_path_beta_csv(const PathResult& pr, const ModelDefinition& def, Index p, const std::string& path)
{
    std::ofstream os(path);
    if (!os) throw InputError("cannot write " + path);
    const Layout lay(def, p);
    os << "lambda,coord,value\n";
    for (const auto& r : pr.records) {
        if (r.failed) continue;
        for (Index l : lay.penalized_indices())
            os << csv::fmt(r.lambda) << ',' << lay.name(l, &def) << ',' << csv::fmt(lay.natural_value(r.theta_pen, l))
               << '\n';
    }
}

inline void write_path_ebic_csv(const PathResult& pr, const std::string& path)
{
    std::ofstream os(path);
    if (!os) throw InputError("cannot write " + path);
    os << "lambda,ebic,support_size,loglik,loglik_se,cached,failed\n";
    for (const auto& r : pr.records)
        os << csv::fmt(r.lambda) << ',' << (r.failed ? "NA" : csv::fmt(r.ebic)) << ',' << r.support.size() << ','
           << (r.failed ? "NA" : csv::fmt(r.mc_loglik)) << ',' << (r.failed ? "NA" : csv::fmt(r.mc_std_error)) << ','
           << int(r.cached) << ',' << int(r.failed) << '\n';
}

// `key,value` rows: lambda_hat, support, then every coordinate of the refit estimate.
inline void write_selected_csv(const PathResult& pr, const ModelDefinition& def, Index p, const std::string& path)
{
    std::ofstream os(path);
    if (!os) throw InputError("cannot write " + path);
    const Layout lay(def, p);
    os << "key,value\n";
    os << "lambda_hat," << csv::fmt(pr.lambda_hat) << '\n';
    std::string sup;
    for (std::size_t k = 0; k < pr.support_final.size(); ++k)
        sup += (k ? " " : "") + lay.name(lay.beta_offset() + pr.support_final[k], &def);
    os << "support," << sup << '\n';
    for (Index l = 0; l < lay.size(); ++l) {
        if (lay.is_penalized(l) && lay.natural_value(pr.theta_final, l) == 0.0) continue;
        os << lay.name(l, &def) << ',' << csv::fmt(lay.natural_value(pr.theta_final, l)) << '\n';
    }
}

} // namespace hdmix
