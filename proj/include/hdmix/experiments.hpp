#pragma once
#include <hdmix/nls.hpp>
#include <hdmix/scenario.hpp>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <mutex>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

namespace hdmix {

// ---------------------------------------------------------------------------
// Simulation

struct SimulatedData
{
    Dataset data;
    LatentMatrix phi; // latent draws per individual
    ParameterVector truth;
    std::vector<Index> true_support;
    std::vector<Index> censored; // individuals kept only at their first rows
};

namespace detail {

inline std::vector<double> draw_times(const Scenario& sc, Engine& rng)
{
    std::vector<double> t(static_cast<std::size_t>(sc.j));
    switch (sc.time_design) {
    case TimeDesign::uniform:
        for (auto& v : t) v = sc.time_low + (sc.time_high - sc.time_low) * uniform01(rng);
        std::sort(t.begin(), t.end());
        break;
    case TimeDesign::grid:
        for (Index k = 0; k < sc.j; ++k)
            t[k] = sc.j == 1 ? sc.time_low : sc.time_low + (sc.time_high - sc.time_low) * double(k) / double(sc.j - 1);
        break;
    case TimeDesign::list: t = sc.times; break;
    }
    return t;
}

inline void draw_covariates(const Scenario& sc, Engine& rng, Eigen::Ref<Mat> rows)
{
    for (Index a = 0; a < rows.rows(); ++a)
        for (Index c = 0; c < rows.cols(); ++c) {
            const double u = uniform01(rng);
            rows(a, c) = sc.covariate_design == CovariateDesign::uniform
                             ? sc.covariate_low + (sc.covariate_high - sc.covariate_low) * u
                             : (u < sc.covariate_prob ? 1.0 : 0.0);
        }
}

} // namespace detail

/**
 * Draws one dataset. Individual i uses its own stream for times, covariates,
 * latent variables and noise, in that order; the censored set comes from a
 * separate stream, and censoring only flags rows as unobserved.
 */
inline SimulatedData simulate_scenario(const Scenario& sc, std::uint64_t seed)
{
    sc.validate();
    const ModelDefinition def = sc.definition();
    const Index n = sc.n, p = sc.p, j = sc.j, q = def.q();
    Streams streams(seed, stream_tag::simulate, n);

    SimulatedData out;
    Dataset& d = out.data;
    d.level = sc.level;
    d.start.assign(1, 0);
    d.y.resize(n * j);
    d.v.resize(n * j);
    d.observed.assign(static_cast<std::size_t>(n * j), 1);
    d.x.resize(sc.level == CovariateLevel::individual ? n : n * j, p);
    d.constant_names = sc.constant_names;
    d.constants.resize(n, static_cast<Index>(sc.constant_values.size()));
    for (Index i = 0; i < n; ++i) {
        const auto t = detail::draw_times(sc, streams[i]);
        for (Index k = 0; k < j; ++k) d.v[i * j + k] = t[k];
        d.start.push_back((i + 1) * j);
        if (sc.level == CovariateLevel::individual) detail::draw_covariates(sc, streams[i], d.x.middleRows(i, 1));
        else detail::draw_covariates(sc, streams[i], d.x.middleRows(i * j, j));
        for (std::size_t c = 0; c < sc.constant_values.size(); ++c)
            d.constants(i, static_cast<Index>(c)) = sc.constant_values[c];
    }
    if (sc.standardize) standardize_columns(d.x);

    out.truth = sc.truth;
    out.true_support = sc.true_support();
    Evaluator ev(def, d);
    ev.bind(out.truth);
    out.phi.resize(n, q);
    const double sigma = std::sqrt(out.truth.sigma_sq);
    for (Index i = 0; i < n; ++i) {
        for (Index k = 0; k < q; ++k)
            out.phi(i, k) = ev.prior_mean(i, k) + std::sqrt(out.truth.gamma_sq[k]) * std_normal(streams[i]);
        for (Index r = d.start[i]; r < d.start[i + 1]; ++r)
            d.y[r] = ev.mean_at(i, r, row_span(out.phi, i)) + sigma * std_normal(streams[i]);
    }

    const Index n_cens = static_cast<Index>(std::floor(sc.censor_fraction * double(n) + 1e-9));
    if (n_cens > 0) {
        std::vector<Index> order(static_cast<std::size_t>(n));
        std::iota(order.begin(), order.end(), Index{0});
        Engine rng = make_engine(seed, {stream_tag::design});
        std::shuffle(order.begin(), order.end(), rng);
        out.censored.assign(order.begin(), order.begin() + n_cens);
        std::sort(out.censored.begin(), out.censored.end());
        for (Index i : out.censored)
            for (Index r = d.start[i] + sc.censor_keep; r < d.start[i + 1]; ++r) d.observed[r] = 0;
    }
    d.validate();
    return out;
}

namespace detail {

inline SimulatedData simulate_checked(const Scenario& sc, std::uint64_t seed, const char* model)
{
    if (sc.model != model && !(std::string(model) == "linear" && sc.model == "lmem"))
        throw InputError(std::string("scenario is not a ") + model + " scenario");
    return simulate_scenario(sc, seed);
}

} // namespace detail

inline SimulatedData simulate_lmem(const Scenario& sc, std::uint64_t seed)
{
    return detail::simulate_checked(sc, seed, "linear");
}

inline SimulatedData simulate_logistic(const Scenario& sc, std::uint64_t seed)
{
    return detail::simulate_checked(sc, seed, "logistic");
}

inline SimulatedData simulate_pharma(const Scenario& sc, std::uint64_t seed)
{
    return detail::simulate_checked(sc, seed, "pharma");
}

// `key,value` rows with every parameter coordinate on its natural scale.
inline void write_parameters_csv(const ParameterVector& t, const ModelDefinition& def, Index p,
                                 const std::string& path)
{
    std::ofstream os(path);
    if (!os) throw InputError("cannot write " + path);
    const Layout lay(def, p);
    os << "key,value\n";
    for (Index l = 0; l < lay.size(); ++l) os << lay.name(l, &def) << ',' << csv::fmt(lay.natural_value(t, l)) << '\n';
}

// `id,phi1,...,phiq` (1-based ids).
inline void write_latent_csv(const LatentMatrix& phi, const ModelDefinition& def, const std::string& path)
{
    std::ofstream os(path);
    if (!os) throw InputError("cannot write " + path);
    os << "id";
    for (const auto& nm : def.mean->latent_names()) os << ',' << nm;
    os << '\n';
    for (Index i = 0; i < phi.rows(); ++i) {
        os << i + 1;
        for (Index k = 0; k < phi.cols(); ++k) os << ',' << csv::fmt(phi(i, k));
        os << '\n';
    }
}

/**
 * Reads `data.csv` / `covariates.csv` and attaches what the files do not carry
 * (covariate level, per-individual constants) from the scenario.
 */
inline Dataset load_dataset(const std::string& data_path, const std::string& covariates_path, const Scenario& sc)
{
    Dataset d = read_data_csv(data_path);
    d.x = read_covariates_csv(covariates_path);
    d.level = sc.level;
    d.constant_names = sc.constant_names;
    d.constants.resize(d.n_individuals(), static_cast<Index>(sc.constant_values.size()));
    for (Index i = 0; i < d.n_individuals(); ++i)
        for (std::size_t c = 0; c < sc.constant_values.size(); ++c)
            d.constants(i, static_cast<Index>(c)) = sc.constant_values[c];
    d.validate();
    return d;
}

// ---------------------------------------------------------------------------
// Metrics

struct SelectionScores
{
    Index tp = 0, tn = 0, fp = 0, fn = 0;
    double se = 0.0, sp = 0.0, ac = 0.0;
};

/// Sensitivity, specificity and accuracy of an estimated support among p candidates.
inline SelectionScores selection_scores(std::vector<Index> est, std::vector<Index> truth, Index p)
{
    std::sort(est.begin(), est.end());
    est.erase(std::unique(est.begin(), est.end()), est.end());
    std::sort(truth.begin(), truth.end());
    truth.erase(std::unique(truth.begin(), truth.end()), truth.end());
    for (Index s : est)
        if (s < 0 || s >= p) throw InputError("estimated support index out of range");
    for (Index s : truth)
        if (s < 0 || s >= p) throw InputError("true support index out of range");
    SelectionScores sc;
    std::vector<Index> both;
    std::set_intersection(est.begin(), est.end(), truth.begin(), truth.end(), std::back_inserter(both));
    sc.tp = static_cast<Index>(both.size());
    sc.fp = static_cast<Index>(est.size()) - sc.tp;
    sc.fn = static_cast<Index>(truth.size()) - sc.tp;
    sc.tn = p - sc.tp - sc.fp - sc.fn;
    // empty classes count as perfectly handled
    sc.se = (sc.tp + sc.fn) > 0 ? double(sc.tp) / double(sc.tp + sc.fn) : 1.0;
    sc.sp = (sc.tn + sc.fp) > 0 ? double(sc.tn) / double(sc.tn + sc.fp) : 1.0;
    sc.ac = double(sc.tp + sc.tn) / double(p);
    return sc;
}

/// sqrt(mean_i (est_i - truth)^2 / truth^2); truth must be nonzero.
inline double rrmse(const std::vector<double>& estimates, double truth)
{
    if (truth == 0.0) throw DomainError("rrmse is undefined for a zero true value");
    if (estimates.empty()) throw InputError("rrmse needs at least one estimate");
    double acc = 0.0;
    for (double e : estimates) acc += (e - truth) * (e - truth);
    return std::sqrt(acc / double(estimates.size())) / std::abs(truth);
}

inline double mse(const Vec& estimate, const Vec& truth)
{
    if (estimate.size() != truth.size() || truth.size() == 0) throw InputError("mse needs equal, nonempty sizes");
    return (estimate - truth).squaredNorm() / double(truth.size());
}

/// Mean absolute error of latent estimates.
inline double mee(const Vec& estimate, const Vec& truth)
{
    if (estimate.size() != truth.size() || truth.size() == 0) throw InputError("mee needs equal, nonempty sizes");
    return (estimate - truth).cwiseAbs().mean();
}

// ---------------------------------------------------------------------------
// Two-step baseline: per-individual least squares, then LASSO of the estimates on X

/**
 * Cyclic coordinate descent for (1/(2n)) ||y - X b||^2 + lambda ||b||_1 (no intercept).
 */
inline Vec lasso_cd(const Mat& x, const Vec& y, double lambda, Vec beta, Index max_sweeps = 1000,
                    double tol = 1e-9)
{
    const Index n = x.rows(), p = x.cols();
    if (y.size() != n) throw InputError("lasso: x and y row counts differ");
    if (beta.size() != p) beta = Vec::Zero(p);
    const Vec norm2 = x.colwise().squaredNorm().transpose() / double(n);
    Vec res = y - x * beta;
    for (Index sweep = 0; sweep < max_sweeps; ++sweep) {
        double max_change = 0.0;
        for (Index c = 0; c < p; ++c) {
            if (norm2[c] == 0.0) {
                beta[c] = 0.0;
                continue;
            }
            const double old = beta[c];
            const double z = x.col(c).dot(res) / double(n) + norm2[c] * old;
            const double nb = prox_weighted_l1(z, 1.0, lambda) / norm2[c];
            if (nb != old) {
                res.noalias() -= x.col(c) * (nb - old);
                beta[c] = nb;
                max_change = std::max(max_change, norm2[c] * (nb - old) * (nb - old));
            }
        }
        if (max_change < tol) break;
    }
    return beta;
}

struct LassoCvResult
{
    Vec beta;
    double intercept = 0.0;
    double lambda = 0.0;
    std::vector<double> lambdas;
    std::vector<double> cv_mean, cv_se;
};

/**
 * LASSO with intercept over a log grid; lambda chosen by K-fold cross-validation with
 * the one-standard-error rule (largest lambda whose CV error is within one SE of the minimum).
 */
inline LassoCvResult lasso_cv(const Mat& x, const Vec& y, const BaselineConfig& cfg, Engine& rng)
{
    const Index n = x.rows(), p = x.cols();
    if (n < cfg.folds || cfg.folds < 2) throw InputError("cross-validation needs at least 2 folds and n >= folds");
    auto center = [](const Mat& a, const Vec& b, Vec& xm, double& ym, Mat& ac, Vec& bc) {
        xm = a.colwise().mean().transpose();
        ym = b.mean();
        ac = a.rowwise() - xm.transpose();
        bc = b.array() - ym;
    };
    Vec xm;
    double ym;
    Mat xc;
    Vec yc;
    center(x, y, xm, ym, xc, yc);
    const double lmax = (xc.transpose() * yc).cwiseAbs().maxCoeff() / double(n);
    LassoCvResult out;
    if (!(lmax > 0)) {
        out.beta = Vec::Zero(p);
        out.intercept = ym;
        return out;
    }
    out.lambdas = lambda_grid(lmax, cfg.grid_ratio, cfg.grid_n);
    const Index nl = static_cast<Index>(out.lambdas.size());

    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<Index> fold(static_cast<std::size_t>(n));
    for (Index k = 0; k < n; ++k) fold[order[k]] = k % cfg.folds;

    Mat err(cfg.folds, nl);
    for (Index f = 0; f < cfg.folds; ++f) {
        std::vector<Index> tr, te;
        for (Index k = 0; k < n; ++k) (fold[k] == f ? te : tr).push_back(k);
        Mat xtr(tr.size(), p), xte(te.size(), p);
        Vec ytr(tr.size()), yte(te.size());
        for (std::size_t a = 0; a < tr.size(); ++a) {
            xtr.row(a) = x.row(tr[a]);
            ytr[a] = y[tr[a]];
        }
        for (std::size_t a = 0; a < te.size(); ++a) {
            xte.row(a) = x.row(te[a]);
            yte[a] = y[te[a]];
        }
        Vec fxm, fyc;
        double fym;
        Mat fxc;
        center(xtr, ytr, fxm, fym, fxc, fyc);
        Vec b = Vec::Zero(p);
        for (Index l = 0; l < nl; ++l) {
            b = lasso_cd(fxc, fyc, out.lambdas[l], b, cfg.cd_max_sweeps, cfg.cd_tol);
            const Vec pred = ((xte.rowwise() - fxm.transpose()) * b).array() + fym;
            err(f, l) = (yte - pred).squaredNorm() / double(te.size());
        }
    }
    out.cv_mean.resize(nl);
    out.cv_se.resize(nl);
    Index best = 0;
    for (Index l = 0; l < nl; ++l) {
        const double m = err.col(l).mean();
        const double var = (err.col(l).array() - m).square().sum() / double(cfg.folds - 1);
        out.cv_mean[l] = m;
        out.cv_se[l] = std::sqrt(var / double(cfg.folds));
        if (m < out.cv_mean[best]) best = l;
    }
    const double bound = out.cv_mean[best] + out.cv_se[best];
    Index chosen = best;
    for (Index l = 0; l <= best; ++l)
        if (out.cv_mean[l] <= bound) {
            chosen = l;
            break;
        }
    out.lambda = out.lambdas[chosen];
    Vec b = Vec::Zero(p);
    for (Index l = 0; l <= chosen; ++l) b = lasso_cd(xc, yc, out.lambdas[l], b, cfg.cd_max_sweeps, cfg.cd_tol);
    out.beta = b;
    out.intercept = ym - xm.dot(b);
    return out;
}

struct BaselineResult
{
    std::vector<Index> support; // row-major over regressed rows, as extract_support
    Mat beta;                   // r x p
    LatentMatrix phi;           // per-individual least-squares estimates
    std::vector<unsigned char> ok;
    Index n_dropped = 0;
};

/**
 * Step 1: each individual's phi by Levenberg-Marquardt least squares from `multistarts`
 * perturbations of phi_start (best cost kept). Step 2: for each regressed component,
 * LASSO of the estimates on the individual covariates with CV / 1-SE lambda.
 */
inline BaselineResult two_step_baseline(const ModelDefinition& def, const Dataset& data, const ParameterVector& start,
                                        const BaselineConfig& cfg, std::uint64_t seed,
                                        const std::function<void(const std::string&)>& warn = {})
{
    if (data.level != CovariateLevel::individual)
        throw InputError("the two-step baseline needs individual-level covariates");
    const Index n = data.n_individuals(), q = def.q(), p = data.p();
    ParameterVector t = start;
    t.beta = Mat::Zero(def.r(), p);
    Evaluator ev(def, data);
    ev.bind(t);
    Streams streams(seed, stream_tag::multistart, n);

    BaselineResult out;
    out.phi.resize(n, q);
    out.ok.assign(static_cast<std::size_t>(n), 0);
    for (Index i = 0; i < n; ++i) {
        if (data.n_observed(i) < q) {
            ++out.n_dropped;
            if (warn) warn("individual " + std::to_string(i + 1) + " has fewer observations than latent components");
            continue;
        }
        NlsResult best;
        for (Index s = 0; s < cfg.multistarts; ++s) {
            Vec x0(q);
            for (Index k = 0; k < q; ++k)
                x0[k] = t.mu[k] + (s == 0 ? 0.0 : cfg.start_spread * std::sqrt(t.gamma_sq[k]) * std_normal(streams[i]));
            const NlsResult r = fit_individual(ev, i, x0, false, cfg.nls_max_iter);
            if (r.ok && (!best.ok || r.cost < best.cost)) best = r;
        }
        if (!best.ok) {
            ++out.n_dropped;
            if (warn) warn("least squares failed for individual " + std::to_string(i + 1));
            continue;
        }
        out.phi.row(i) = best.phi.transpose();
        out.ok[static_cast<std::size_t>(i)] = 1;
    }

    std::vector<Index> kept;
    for (Index i = 0; i < n; ++i)
        if (out.ok[static_cast<std::size_t>(i)]) kept.push_back(i);
    if (static_cast<Index>(kept.size()) < cfg.folds)
        throw NumericalError("too few individuals left after the least-squares step");
    Mat xk(kept.size(), p);
    for (std::size_t a = 0; a < kept.size(); ++a) xk.row(a) = data.x.row(kept[a]);

    out.beta = Mat::Zero(def.r(), p);
    Engine rng = make_engine(seed, {stream_tag::cv_folds});
    for (Index row = 0; row < def.r(); ++row) {
        Vec yk(kept.size());
        for (std::size_t a = 0; a < kept.size(); ++a) yk[a] = out.phi(kept[a], def.regressed[row]);
        out.beta.row(row) = lasso_cv(xk, yk, cfg, rng).beta.transpose();
    }
    out.support = extract_support(out.beta);
    return out;
}

// ---------------------------------------------------------------------------
// Replicate studies

struct MethodOutcome
{
    bool ran = false;
    bool ok = false;
    std::string message;
    std::vector<Index> support;
    SelectionScores scores;
    double beta_mse = 0.0;
    double lambda_hat = 0.0;
    ParameterVector theta; // awpsg: reduced-model refit
    Vec mee;               // baseline: per latent component
    Index n_dropped = 0;
};

struct ReplicateResult
{
    Index replicate = 0;
    Index n_censored = 0;
    MethodOutcome awpsg, baseline;
};

struct StudyOptions
{
    Index workers = 1;
    std::optional<Index> replicates;
    std::function<void(const std::string&)> log; // progress and warnings (thread-safe caller)
};

struct StudyReport
{
    Scenario scenario;
    std::vector<ReplicateResult> replicates;
};

namespace detail {

inline bool is_correct(const std::vector<Index>& est, const std::vector<Index>& truth) { return est == truth; }

inline bool is_over(const std::vector<Index>& est, const std::vector<Index>& truth)
{
    return est.size() > truth.size() && std::includes(est.begin(), est.end(), truth.begin(), truth.end());
}

inline std::vector<double> path_grid(const Scenario& sc, const ModelDefinition& def, const Dataset& data,
                                     const PathConfig& pc, const ParameterVector& theta0)
{
    const double lmax = sc.grid_max > 0 ? sc.grid_max : estimate_lambda_max(def, data, pc, theta0);
    if (sc.grid_n == 1) return {lmax};
    return lambda_grid(lmax, sc.grid_ratio, sc.grid_n);
}

} // namespace detail

/// Fits one simulated replicate with the AWPSG path and/or the two-step baseline.
inline ReplicateResult run_replicate(const Scenario& sc, Index r,
                                     const std::function<void(const std::string&)>& log = {})
{
    const std::uint64_t rs = derive_seed(sc.seed, {stream_tag::replicate, static_cast<std::uint64_t>(r)});
    ReplicateResult out;
    out.replicate = r;
    const ModelDefinition def = sc.definition();
    const SimulatedData sim = simulate_scenario(sc, rs);
    out.n_censored = static_cast<Index>(sim.censored.size());
    const Index p_total = def.r() * sc.p;
    auto flat_beta = [&](const Mat& b) {
        Vec f(p_total);
        for (Index row = 0; row < b.rows(); ++row) f.segment(row * sc.p, sc.p) = b.row(row).transpose();
        return f;
    };
    const Vec truth_flat = flat_beta(sim.truth.beta);

    if (sc.method == "awpsg" || sc.method == "both") {
        auto& m = out.awpsg;
        m.ran = true;
        try {
            PathConfig pc = sc.path;
            pc.seed = derive_seed(rs, {stream_tag::fit});
            const ParameterVector theta0 = scenario_start(sc, def, sim.data);
            const auto grid = detail::path_grid(sc, def, sim.data, pc, theta0);
            const PathResult pr = run_path(def, sim.data, grid, pc, theta0);
            m.support = pr.support_final;
            m.theta = pr.theta_final;
            m.lambda_hat = pr.lambda_hat;
            m.scores = selection_scores(m.support, sim.true_support, p_total);
            m.beta_mse = mse(flat_beta(pr.theta_final.beta), truth_flat);
            m.ok = true;
        } catch (const std::exception& e) {
            m.message = e.what();
            if (log) log("replicate " + std::to_string(r + 1) + " awpsg failed: " + m.message);
        }
    }
    if (sc.method == "baseline" || sc.method == "both") {
        auto& m = out.baseline;
        m.ran = true;
        try {
            const ParameterVector start = initial_theta(def, sim.data, sc.init);
            const BaselineResult br =
                two_step_baseline(def, sim.data, start, sc.baseline, derive_seed(rs, {stream_tag::baseline}),
                                  [&](const std::string& w) {
                                      if (log) log("replicate " + std::to_string(r + 1) + " baseline: " + w);
                                  });
            m.support = br.support;
            m.scores = selection_scores(m.support, sim.true_support, p_total);
            m.beta_mse = mse(flat_beta(br.beta), truth_flat);
            m.n_dropped = br.n_dropped;
            m.mee.resize(def.q());
            std::vector<Index> kept;
            for (Index i = 0; i < sc.n; ++i)
                if (br.ok[static_cast<std::size_t>(i)]) kept.push_back(i);
            for (Index k = 0; k < def.q(); ++k) {
                Vec e(kept.size()), t(kept.size());
                for (std::size_t a = 0; a < kept.size(); ++a) {
                    e[a] = br.phi(kept[a], k);
                    t[a] = sim.phi(kept[a], k);
                }
                m.mee[k] = mee(e, t);
            }
            m.ok = true;
        } catch (const std::exception& e) {
            m.message = e.what();
            if (log) log("replicate " + std::to_string(r + 1) + " baseline failed: " + m.message);
        }
    }
    return out;
}

/**
 * Runs all replicates on `workers` threads. Replicate r depends only on
 * (scenario seed, r), so the report does not depend on the worker count.
 */
inline StudyReport run_study(const Scenario& sc_in, const StudyOptions& opt = {})
{
    Scenario sc = sc_in;
    if (opt.replicates) sc.replicates = *opt.replicates;
    sc.validate();
    if (opt.workers < 1) throw InputError("workers must be >= 1");
    StudyReport rep;
    rep.scenario = sc;
    rep.replicates.resize(static_cast<std::size_t>(sc.replicates));
    std::mutex log_mutex;
    auto log = [&](const std::string& s) {
        if (!opt.log) return;
        std::lock_guard<std::mutex> lock(log_mutex);
        opt.log(s);
    };
    std::atomic<Index> next{0};
    auto work = [&]() {
        for (Index r = next++; r < sc.replicates; r = next++) {
            rep.replicates[static_cast<std::size_t>(r)] = run_replicate(sc, r, log);
            log("replicate " + std::to_string(r + 1) + "/" + std::to_string(sc.replicates) + " done");
        }
    };
    const Index nw = std::min(opt.workers, sc.replicates);
    std::vector<std::thread> pool;
    for (Index w = 1; w < nw; ++w) pool.emplace_back(work);
    work();
    for (auto& t : pool) t.join();
    return rep;
}

struct MethodSummary
{
    std::string method;
    Index n_ok = 0, n_failed = 0;
    double se = 0, sp = 0, ac = 0, mse = 0;
    double correct = 0, over = 0;
    Vec mee; // baseline only
};

inline std::vector<MethodSummary> summarize(const StudyReport& rep)
{
    std::vector<MethodSummary> out;
    const auto truth = rep.scenario.true_support();
    for (const char* name : {"awpsg", "baseline"}) {
        MethodSummary s;
        s.method = name;
        bool any = false;
        for (const auto& r : rep.replicates) {
            const MethodOutcome& m = s.method == "awpsg" ? r.awpsg : r.baseline;
            if (!m.ran) continue;
            any = true;
            if (!m.ok) {
                ++s.n_failed;
                continue;
            }
            ++s.n_ok;
            s.se += m.scores.se;
            s.sp += m.scores.sp;
            s.ac += m.scores.ac;
            s.mse += m.beta_mse;
            s.correct += detail::is_correct(m.support, truth) ? 1.0 : 0.0;
            s.over += detail::is_over(m.support, truth) ? 1.0 : 0.0;
            if (m.mee.size() > 0) s.mee = s.mee.size() == 0 ? m.mee : Vec(s.mee + m.mee);
        }
        if (!any) continue;
        if (s.n_ok > 0) {
            const double k = double(s.n_ok);
            s.se /= k, s.sp /= k, s.ac /= k, s.mse /= k, s.correct /= k, s.over /= k;
            if (s.mee.size() > 0) s.mee /= k;
        }
        out.push_back(s);
    }
    return out;
}

struct RrmseRow
{
    std::string coord;
    double truth = 0.0, mean_estimate = 0.0, rrmse = 0.0;
    Index n = 0;
};

/// RRMSE of the AWPSG refit over successful replicates, for every coordinate with a nonzero truth.
inline std::vector<RrmseRow> rrmse_table(const StudyReport& rep)
{
    const auto& sc = rep.scenario;
    const ModelDefinition def = sc.definition();
    const Layout lay(def, sc.p);
    std::vector<RrmseRow> rows;
    for (Index l = 0; l < lay.size(); ++l) {
        const double tv = lay.natural_value(sc.truth, l);
        if (tv == 0.0) continue;
        std::vector<double> est;
        for (const auto& r : rep.replicates)
            if (r.awpsg.ok) est.push_back(lay.natural_value(r.awpsg.theta, l));
        if (est.empty()) continue;
        RrmseRow row;
        row.coord = lay.name(l, &def);
        row.truth = tv;
        row.n = static_cast<Index>(est.size());
        row.mean_estimate = std::accumulate(est.begin(), est.end(), 0.0) / double(est.size());
        row.rrmse = rrmse(est, tv);
        rows.push_back(row);
    }
    return rows;
}

namespace detail {

inline std::string support_names(const std::vector<Index>& s, const ModelDefinition& def, Index p)
{
    const Layout lay(def, p);
    std::string out;
    for (std::size_t k = 0; k < s.size(); ++k) out += (k ? " " : "") + lay.name(lay.beta_offset() + s[k], &def);
    return out;
}

inline std::string clean_message(std::string m)
{
    for (char& c : m)
        if (c == ',' || c == '\n' || c == '\r' || c == '"') c = ';';
    return m;
}

} // namespace detail

/**
 * Writes replicates.csv, summary.csv, rrmse.csv and estimates.csv into `dir`
 * (schemas in the README). Output is a pure function of the report.
 */
inline void write_study_csvs(const StudyReport& rep, const std::string& dir)
{
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const auto& sc = rep.scenario;
    const ModelDefinition def = sc.definition();
    const Layout lay(def, sc.p);
    const auto truth = sc.true_support();
    const auto latent_names = def.mean->latent_names();
    auto open = [&](const char* name) {
        std::ofstream os(fs::path(dir) / name);
        if (!os) throw InputError("cannot write " + (fs::path(dir) / name).string());
        return os;
    };
    {
        auto os = open("replicates.csv");
        os << "replicate,method,status,n_censored,lambda_hat,support_size,support,tp,fp,fn,tn,se,sp,ac,mse,correct,"
              "over";
        for (const auto& nm : latent_names) os << ",mee_" << nm;
        os << ",message\n";
        for (const auto& r : rep.replicates)
            for (const char* name : {"awpsg", "baseline"}) {
                const MethodOutcome& m = std::string(name) == "awpsg" ? r.awpsg : r.baseline;
                if (!m.ran) continue;
                os << r.replicate + 1 << ',' << name << ',' << (m.ok ? "ok" : "failed") << ',' << r.n_censored << ',';
                if (m.ok) {
                    os << (std::string(name) == "awpsg" ? csv::fmt(m.lambda_hat) : "NA") << ',' << m.support.size()
                       << ',' << detail::support_names(m.support, def, sc.p) << ',' << m.scores.tp << ','
                       << m.scores.fp << ',' << m.scores.fn << ',' << m.scores.tn << ',' << csv::fmt(m.scores.se)
                       << ',' << csv::fmt(m.scores.sp) << ',' << csv::fmt(m.scores.ac) << ',' << csv::fmt(m.beta_mse)
                       << ',' << int(detail::is_correct(m.support, truth)) << ','
                       << int(detail::is_over(m.support, truth));
                } else {
                    os << "NA,NA,,NA,NA,NA,NA,NA,NA,NA,NA,NA,NA";
                }
                for (Index k = 0; k < def.q(); ++k) os << ',' << (m.ok && m.mee.size() > k ? csv::fmt(m.mee[k]) : "NA");
                os << ',' << detail::clean_message(m.message) << '\n';
            }
    }
    {
        auto os = open("summary.csv");
        os << "method,n_ok,n_failed,se,sp,ac,mse,correct_support,over_selection";
        for (const auto& nm : latent_names) os << ",mee_" << nm;
        os << '\n';
        for (const auto& s : summarize(rep)) {
            os << s.method << ',' << s.n_ok << ',' << s.n_failed << ',' << csv::fmt(s.se) << ',' << csv::fmt(s.sp)
               << ',' << csv::fmt(s.ac) << ',' << csv::fmt(s.mse) << ',' << csv::fmt(s.correct) << ','
               << csv::fmt(s.over);
            for (Index k = 0; k < def.q(); ++k) os << ',' << (s.mee.size() > k ? csv::fmt(s.mee[k]) : "NA");
            os << '\n';
        }
    }
    {
        auto os = open("rrmse.csv");
        os << "coord,truth,mean_estimate,rrmse,n\n";
        for (const auto& row : rrmse_table(rep))
            os << row.coord << ',' << csv::fmt(row.truth) << ',' << csv::fmt(row.mean_estimate) << ','
               << csv::fmt(row.rrmse) << ',' << row.n << '\n';
    }
    {
        auto os = open("estimates.csv");
        os << "replicate,coord,estimate,truth\n";
        for (const auto& r : rep.replicates) {
            if (!r.awpsg.ok) continue;
            for (Index l = 0; l < lay.size(); ++l) {
                const double e = lay.natural_value(r.awpsg.theta, l), t = lay.natural_value(sc.truth, l);
                if (lay.is_penalized(l) && e == 0.0 && t == 0.0) continue;
                os << r.replicate + 1 << ',' << lay.name(l, &def) << ',' << csv::fmt(e) << ',' << csv::fmt(t) << '\n';
            }
        }
    }
}

} // namespace hdmix
