#pragma once
#include <hdmix/optimizer.hpp>
#include <cmath>
#include <string>
#include <vector>

namespace hdmix::oracle {

/**
 * Linear model with a random intercept and observation-level covariates:
 *   Y_i = X_i beta + 1_J phi_i + eps_i,  phi_i ~ N(0, gamma^2),  eps_i ~ N(0, sigma^2 I_J).
 * Variances are known; only beta is estimated.
 */
struct ToyModelSpec
{
    Index n = 100;
    Index j = 5;
    Index p = 200;
    double gamma_sq = 16.0;
    double sigma_sq = 4.0;
    Vec beta_true;

    void validate() const
    {
        if (j < 2) throw InputError("toy model needs J >= 2");
        if (!(gamma_sq > 0 && sigma_sq > 0)) throw InputError("toy variances must be positive");
        if (beta_true.size() != p) throw InputError("beta_true must have p entries");
    }

    static ToyModelSpec defaults()
    {
        ToyModelSpec s;
        s.beta_true = Vec::Zero(s.p);
        s.beta_true[0] = 4.0;
        s.beta_true[1] = -3.0;
        return s;
    }
};

/**
 * Stacked (N*J) x p design with X^T X = I_p and zero column sums within every
 * individual: centre Gaussian blocks per individual, then whiten by the Cholesky
 * factor of V^T V.
 */
inline Mat build_orthogonal_centered_design(Index n, Index j, Index p, Engine& rng)
{
    if (n * j <= p) throw InputError("orthogonal design needs N*J > p; increase N or J");
    Mat v(n * j, p);
    for (Index c = 0; c < p; ++c)
        for (Index r = 0; r < n * j; ++r) v(r, c) = std_normal(rng);
    for (Index i = 0; i < n; ++i) {
        auto block = v.middleRows(i * j, j);
        const Eigen::RowVectorXd m = block.colwise().mean();
        block.rowwise() -= m;
    }
    const Mat t = v.transpose() * v;
    Eigen::LLT<Mat> llt(t);
    if (llt.info() != Eigen::Success) throw NumericalError("V^T V is rank deficient; increase N*J");
    // X = V L^{-T}  <=>  X^T = L^{-1} V^T
    const Mat xt = llt.matrixL().solve(v.transpose());
    return xt.transpose();
}

/// (sigma^2 I_J + gamma^2 W W^T)^{-1} with W the all-ones vector.
inline Mat woodbury_inverse(double sigma_sq, double gamma_sq, Index j)
{
    const double c = gamma_sq / (sigma_sq * (double(j) * gamma_sq + sigma_sq));
    return Mat::Identity(j, j) / sigma_sq - c * Mat::Ones(j, j);
}

/// Least squares for an orthogonal design: X^T Y.
inline Vec ols(const Mat& x, const Vec& y) { return x.transpose() * y; }

/// Componentwise soft threshold sgn(b) (|b| - lambda)_+.
inline Vec exact_lasso(const Vec& beta_ols, double lambda)
{
    Vec out(beta_ols.size());
    for (Index k = 0; k < out.size(); ++k) {
        const double a = std::abs(beta_ols[k]) - lambda;
        out[k] = a > 0 ? std::copysign(a, beta_ols[k]) : 0.0;
    }
    return out;
}

/**
 * -(1/2 sigma^2) sum_i ||Y_i - X_i beta||^2 + correction - lambda ||beta||_1, where the
 * correction gamma^2/(2 sigma^2 (J gamma^2 + sigma^2)) sum_i (sum_j (Y_ij - X_ij beta))^2
 * vanishes for designs with zero within-individual column sums.
 */
inline double toy_penalized_criterion(const Vec& beta, const Mat& x, const Vec& y, Index j, double sigma_sq,
                                      double gamma_sq, double lambda, bool assume_centered = false)
{
    const Vec res = y - x * beta;
    double crit = -res.squaredNorm() / (2.0 * sigma_sq);
    if (!assume_centered) {
        const double c = gamma_sq / (2.0 * sigma_sq * (double(j) * gamma_sq + sigma_sq));
        for (Index i = 0; i < res.size() / j; ++i) {
            const double s = res.segment(i * j, j).sum();
            crit += c * s * s;
        }
    }
    return crit - lambda * beta.lpNorm<1>();
}

inline ModelDefinition toy_model() { return make_model("toy", {0}); }

/// Draws one toy dataset on a given design (observation-level covariates).
inline Dataset simulate_toy(const ToyModelSpec& spec, const Mat& x, Engine& rng)
{
    spec.validate();
    Dataset d;
    d.level = CovariateLevel::observation;
    d.x = x;
    d.y.resize(spec.n * spec.j);
    d.v.resize(spec.n * spec.j);
    d.observed.assign(static_cast<std::size_t>(spec.n * spec.j), 1);
    d.start.clear();
    const Vec xb = x * spec.beta_true;
    const double gs = std::sqrt(spec.gamma_sq), ss = std::sqrt(spec.sigma_sq);
    for (Index i = 0; i < spec.n; ++i) {
        d.start.push_back(i * spec.j);
        const double phi = gs * std_normal(rng);
        for (Index jj = 0; jj < spec.j; ++jj) {
            const Index r = i * spec.j + jj;
            d.v[r] = double(jj + 1);
            d.y[r] = xb[r] + phi + ss * std_normal(rng);
        }
    }
    d.start.push_back(spec.n * spec.j);
    return d;
}

/**
 * The stochastic algorithm averages the gradient over N individuals, so its fixed point
 * maximizes (1/N) log g - lambda' ||beta||_1, whose toy solution is soft(b, N sigma^2 lambda').
 * This maps a threshold on the closed-form scale to the algorithm's lambda.
 */
inline double algorithm_lambda(double closed_form_lambda, const ToyModelSpec& spec)
{
    return closed_form_lambda / (double(spec.n) * spec.sigma_sq);
}

// Known mu = 0 and variances: only beta coordinates are free.
inline std::vector<unsigned char> toy_fixed_mask(const ToyModelSpec& spec)
{
    const Layout lay(toy_model(), spec.p);
    std::vector<unsigned char> mask(static_cast<std::size_t>(lay.size()), 1);
    for (Index l : lay.penalized_indices()) mask[static_cast<std::size_t>(l)] = 0;
    return mask;
}

inline ParameterVector toy_theta(const ToyModelSpec& spec, const Vec& beta)
{
    ParameterVector t = zero_parameters(toy_model(), spec.p);
    t.beta.row(0) = beta.transpose();
    t.gamma_sq[0] = spec.gamma_sq;
    t.sigma_sq = spec.sigma_sq;
    return t;
}

enum class Regime { over, exact, under, mixed };

inline std::string to_string(Regime r)
{
    switch (r) {
    case Regime::over: return "over";
    case Regime::exact: return "exact";
    case Regime::under: return "under";
    default: return "mixed";
    }
}

// Compares the oracle support with the true support.
inline Regime classify_regime(const Vec& oracle_beta, const Vec& beta_true)
{
    bool missing = false, extra = false;
    for (Index k = 0; k < beta_true.size(); ++k) {
        const bool t = beta_true[k] != 0, o = oracle_beta[k] != 0;
        missing |= t && !o;
        extra |= o && !t;
    }
    if (!missing && !extra) return Regime::exact;
    if (extra && !missing) return Regime::over;
    if (missing && !extra) return Regime::under;
    return Regime::mixed;
}

struct CheckRow
{
    double lambda;
    Index init;
    Index coord;
    double oracle;
    double estimate;
    double rel_error; // |est - oracle| / |oracle|; 0/inf when the oracle is 0
    bool ok;
};

struct CheckReport
{
    std::vector<CheckRow> rows; // first `report_coords` coordinates of each run
    std::vector<std::pair<double, Regime>> regimes;
    double max_rel_error = 0.0;
    Index zero_mismatches = 0;
    bool passed = true;
};

struct CheckSettings
{
    std::vector<double> lambdas{0.6, 1.0, 2.0};
    Index n_inits = 5;
    double rel_tol = 0.02;
    double init_sd = 2.0;
    Index report_coords = 4;
    AwpsgConfig awpsg = default_awpsg();
    std::uint64_t seed = 20240501;

    static AwpsgConfig default_awpsg()
    {
        AwpsgConfig c;
        c.k_max = 5000;
        c.convergence_tol = 1e-12;
        return c;
    }
};

/**
 * Runs the stochastic fit from random starts for each lambda on one simulated toy dataset
 * and compares every beta coordinate with the closed-form solution.
 */
inline CheckReport oracle_check(const ToyModelSpec& spec, const CheckSettings& set)
{
    spec.validate();
    Engine design_rng = make_engine(set.seed, {stream_tag::design});
    const Mat x = build_orthogonal_centered_design(spec.n, spec.j, spec.p, design_rng);
    Engine sim_rng = make_engine(set.seed, {stream_tag::simulate});
    const Dataset data = simulate_toy(spec, x, sim_rng);
    const Vec b = ols(x, data.y);
    const ModelDefinition def = toy_model();

    CheckReport rep;
    for (std::size_t li = 0; li < set.lambdas.size(); ++li) {
        const double lam = set.lambdas[li];
        const Vec target = exact_lasso(b, lam);
        rep.regimes.emplace_back(lam, classify_regime(target, spec.beta_true));
        for (Index run = 0; run < set.n_inits; ++run) {
            Engine init_rng = make_engine(set.seed, {stream_tag::init, li, static_cast<std::uint64_t>(run)});
            Vec beta0(spec.p);
            for (Index k = 0; k < spec.p; ++k) beta0[k] = set.init_sd * std_normal(init_rng);
            AwpsgConfig cfg = set.awpsg;
            cfg.lambda = algorithm_lambda(lam, spec);
            cfg.fixed = toy_fixed_mask(spec);
            SamplerConfig scfg;
            scfg.seed = set.seed + 1000 * li + static_cast<std::uint64_t>(run);
            const FitResult fit = awpsg_fit(def, data, cfg, scfg, toy_theta(spec, beta0));
            const Vec est = fit.theta_hat.beta.row(0).transpose();
            for (Index k = 0; k < spec.p; ++k) {
                CheckRow row{lam, run, k, target[k], est[k], 0.0, true};
                if (target[k] == 0.0) {
                    row.ok = est[k] == 0.0;
                    row.rel_error = row.ok ? 0.0 : INFINITY;
                    if (!row.ok) ++rep.zero_mismatches;
                } else {
                    row.rel_error = std::abs(est[k] - target[k]) / std::abs(target[k]);
                    row.ok = row.rel_error <= set.rel_tol;
                    rep.max_rel_error = std::max(rep.max_rel_error, row.rel_error);
                }
                rep.passed = rep.passed && row.ok;
                if (k < set.report_coords || !row.ok) rep.rows.push_back(row);
            }
        }
    }
    return rep;
}

} // namespace hdmix::oracle
