#pragma once
#include <hdmix/dataset.hpp>
#include <cmath>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace hdmix {

// m(v) = offset + loading . phi for models linear in the latent variables.
struct LinearLoading
{
    double offset = 0.0;
    Vec w;
};

// Population-level starting values produced by a model-specific moment method.
struct MomentGuess
{
    Vec alpha;
    Vec mu;
    Vec gamma_sq;
    double sigma_sq = 1.0;
};

/**
 * Structural mean function m(alpha, v, phi; constants) of a mixed-effects model.
 * Implementations are stateless and safe to share between threads.
 */
class MeanModel
{
public:
    virtual ~MeanModel() = default;

    virtual std::string name() const = 0;
    virtual Index latent_dim() const = 0;
    virtual Index fixed_dim() const { return 0; }
    virtual std::vector<std::string> latent_names() const = 0;
    virtual std::vector<std::string> fixed_names() const { return {}; }
    // Per-individual constants the model reads, in the order passed to eval().
    virtual std::vector<std::string> constant_names() const { return {}; }

    // Value of m. Throws DomainError outside the admissible domain.
    virtual double eval(std::span<const double> alpha, double v, std::span<const double> phi,
                        std::span<const double> constants) const = 0;

    // Value of m plus partial derivatives with respect to alpha and phi.
    virtual double eval_grad(std::span<const double> alpha, double v, std::span<const double> phi,
                             std::span<const double> constants, std::span<double> d_alpha,
                             std::span<double> d_phi) const = 0;

    // Present only when m is affine in phi (enables exact posterior draws).
    virtual std::optional<LinearLoading> loading(std::span<const double> /*alpha*/, double /*v*/,
                                                 std::span<const double> /*constants*/) const
    {
        return std::nullopt;
    }

    virtual std::optional<MomentGuess> moment_guess(const Dataset&) const { return std::nullopt; }
};

/// Polynomial in v with random coefficients: m = sum_k phi_k v^k (q = 1: random intercept only).
class LinearModel final : public MeanModel
{
public:
    explicit LinearModel(Index q = 2) : q_(q)
    {
        if (q < 1) throw InputError("linear model needs at least one latent component");
    }

    std::string name() const override { return "linear"; }
    Index latent_dim() const override { return q_; }
    std::vector<std::string> latent_names() const override
    {
        std::vector<std::string> out;
        for (Index k = 0; k < q_; ++k) out.push_back("phi" + std::to_string(k + 1));
        return out;
    }

    double eval(std::span<const double>, double v, std::span<const double> phi,
                std::span<const double>) const override
    {
        double m = 0.0, pw = 1.0;
        for (Index k = 0; k < q_; ++k, pw *= v) m += phi[k] * pw;
        return m;
    }

    double eval_grad(std::span<const double>, double v, std::span<const double> phi, std::span<const double>,
                     std::span<double>, std::span<double> d_phi) const override
    {
        double m = 0.0, pw = 1.0;
        for (Index k = 0; k < q_; ++k, pw *= v) {
            m += phi[k] * pw;
            d_phi[k] = pw;
        }
        return m;
    }

    std::optional<LinearLoading> loading(std::span<const double>, double v, std::span<const double>) const override
    {
        LinearLoading l;
        l.w.resize(q_);
        double pw = 1.0;
        for (Index k = 0; k < q_; ++k, pw *= v) l.w[k] = pw;
        return l;
    }

    // Per-individual least squares on the loadings, then moments of the fitted coefficients.
    std::optional<MomentGuess> moment_guess(const Dataset& d) const override
    {
        const Index n = d.n_individuals();
        Mat coef(n, q_);
        double rss = 0.0;
        Index dof = 0, used = 0;
        for (Index i = 0; i < n; ++i) {
            const Index ni = d.n_observed(i);
            if (ni < q_) continue;
            Mat a(ni, q_);
            Vec b(ni);
            Index row = 0;
            for (Index r = d.start[i]; r < d.start[i + 1]; ++r) {
                if (!d.observed[r]) continue;
                double pw = 1.0;
                for (Index k = 0; k < q_; ++k, pw *= d.v[r]) a(row, k) = pw;
                b[row++] = d.y[r];
            }
            Vec c = a.colPivHouseholderQr().solve(b);
            coef.row(used++) = c.transpose();
            rss += (a * c - b).squaredNorm();
            dof += ni - q_;
        }
        if (used < 2) return std::nullopt;
        Mat cf = coef.topRows(used);
        MomentGuess g;
        g.mu = cf.colwise().mean().transpose();
        g.gamma_sq = ((cf.rowwise() - g.mu.transpose()).array().square().colwise().sum() / double(used - 1))
                         .transpose()
                         .cwiseMax(1e-6);
        g.sigma_sq = dof > 0 ? std::max(rss / double(dof), 1e-8) : 1.0;
        return g;
    }

private:
    Index q_;
};

/// Logistic growth: m = phi1 / (1 + exp(-(v - phi2) / alpha)).
class LogisticModel final : public MeanModel
{
public:
    std::string name() const override { return "logistic"; }
    Index latent_dim() const override { return 2; }
    Index fixed_dim() const override { return 1; }
    std::vector<std::string> latent_names() const override { return {"phi1", "phi2"}; }
    std::vector<std::string> fixed_names() const override { return {"alpha"}; }

    static double sigmoid(double z)
    {
        if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
        const double e = std::exp(z);
        return e / (1.0 + e);
    }

    double eval(std::span<const double> alpha, double v, std::span<const double> phi,
                std::span<const double>) const override
    {
        if (alpha[0] == 0.0) throw DomainError("logistic model: growth scale alpha must be nonzero");
        return phi[0] * sigmoid((v - phi[1]) / alpha[0]);
    }

    double eval_grad(std::span<const double> alpha, double v, std::span<const double> phi, std::span<const double>,
                     std::span<double> d_alpha, std::span<double> d_phi) const override
    {
        const double a = alpha[0];
        if (a == 0.0) throw DomainError("logistic model: growth scale alpha must be nonzero");
        const double z = (v - phi[1]) / a;
        const double s = sigmoid(z);
        const double ds = s * (1.0 - s);
        d_phi[0] = s;
        d_phi[1] = -phi[0] * ds / a;
        d_alpha[0] = -phi[0] * ds * z / a;
        return phi[0] * s;
    }

    // Asymptote from per-individual maxima, midpoint and scale from the
    // crossing times of 27% / 50% / 73% of the asymptote (logit = -1, 0, 1).
    std::optional<MomentGuess> moment_guess(const Dataset& d) const override
    {
        const Index n = d.n_individuals();
        std::vector<double> tops, mids, scales;
        double resid = 0.0;
        Index nres = 0;
        auto crossing = [&](Index i, double level) -> std::optional<double> {
            Index prev = -1;
            for (Index r = d.start[i]; r < d.start[i + 1]; ++r) {
                if (!d.observed[r]) continue;
                if (prev >= 0 && d.y[prev] < level && d.y[r] >= level) {
                    const double f = (level - d.y[prev]) / (d.y[r] - d.y[prev]);
                    return d.v[prev] + f * (d.v[r] - d.v[prev]);
                }
                prev = r;
            }
            return std::nullopt;
        };
        for (Index i = 0; i < n; ++i) {
            double top = -INFINITY;
            for (Index r = d.start[i]; r < d.start[i + 1]; ++r)
                if (d.observed[r]) top = std::max(top, d.y[r]);
            if (!std::isfinite(top) || top <= 0) continue;
            tops.push_back(top);
            auto mid = crossing(i, 0.5 * top);
            if (mid) mids.push_back(*mid);
            auto lo = crossing(i, LogisticModel::sigmoid(-1.0) * top);
            auto hi = crossing(i, LogisticModel::sigmoid(1.0) * top);
            if (lo && hi && *hi > *lo) scales.push_back(0.5 * (*hi - *lo));
        }
        if (tops.size() < 2 || mids.size() < 2 || scales.empty()) return std::nullopt;
        auto mean = [](const std::vector<double>& xs) {
            double s = 0;
            for (double x : xs) s += x;
            return s / double(xs.size());
        };
        auto var = [&](const std::vector<double>& xs) {
            const double m = mean(xs);
            double s = 0;
            for (double x : xs) s += (x - m) * (x - m);
            return std::max(s / double(xs.size() - 1), 1e-6);
        };
        MomentGuess g;
        g.alpha = Vec::Constant(1, mean(scales));
        g.mu = Vec(2);
        g.mu << mean(tops), mean(mids);
        g.gamma_sq = Vec(2);
        g.gamma_sq << var(tops), var(mids);
        // residual spread around the pooled curve
        for (Index i = 0; i < n; ++i)
            for (Index r = d.start[i]; r < d.start[i + 1]; ++r) {
                if (!d.observed[r]) continue;
                const double m = g.mu[0] * sigmoid((d.v[r] - g.mu[1]) / g.alpha[0]);
                resid += (d.y[r] - m) * (d.y[r] - m);
                ++nres;
            }
        g.sigma_sq = nres > 0 ? std::max(resid / double(nres), 1e-8) : 1.0;
        return g;
    }
};

/**
 * One-compartment model with first-order absorption:
 *   m = D phi1 / (V (phi1 - phi2/V)) * (exp(-(phi2/V) v) - exp(-phi1 v)),
 * phi1 the absorption rate, phi2/V the elimination rate, D and V known per individual.
 */
class PharmaModel final : public MeanModel
{
public:
    static constexpr double degeneracy_tol = 1e-10;

    std::string name() const override { return "pharma"; }
    Index latent_dim() const override { return 2; }
    std::vector<std::string> latent_names() const override { return {"phi1", "phi2"}; }
    std::vector<std::string> constant_names() const override { return {"dose", "volume"}; }

    static double mean(double v, double ka, double phi2, double dose, double volume)
    {
        const double ke = phi2 / volume;
        const double delta = ka - ke;
        if (std::abs(delta) < degeneracy_tol)
            throw DomainError("pharma model: absorption and elimination rates coincide");
        return dose * ka / (volume * delta) * (std::exp(-ke * v) - std::exp(-ka * v));
    }

    double eval(std::span<const double>, double v, std::span<const double> phi,
                std::span<const double> c) const override
    {
        return mean(v, phi[0], phi[1], c[0], c[1]);
    }

    double eval_grad(std::span<const double>, double v, std::span<const double> phi, std::span<const double> c,
                     std::span<double>, std::span<double> d_phi) const override
    {
        const double dose = c[0], vol = c[1];
        const double ka = phi[0];
        const double ke = phi[1] / vol;
        const double delta = ka - ke;
        if (std::abs(delta) < degeneracy_tol)
            throw DomainError("pharma model: absorption and elimination rates coincide");
        const double scale = dose / vol;
        const double ea = std::exp(-ke * v);
        const double eb = std::exp(-ka * v);
        const double diff = ea - eb;
        d_phi[0] = scale * (diff / delta + ka * v * eb / delta - ka * diff / (delta * delta));
        const double dke = scale * ka * (-v * ea / delta + diff / (delta * delta));
        d_phi[1] = dke / vol;
        return scale * ka * diff / delta;
    }
};

inline double mean_linear(double v, std::span<const double> phi)
{
    return LinearModel(static_cast<Index>(phi.size())).eval({}, v, phi, {});
}

inline double mean_logistic(double alpha, double v, std::span<const double> phi)
{
    return LogisticModel().eval({&alpha, 1}, v, phi, {});
}

inline double mean_pharma(double v, std::span<const double> phi, double dose, double volume)
{
    return PharmaModel::mean(v, phi[0], phi[1], dose, volume);
}

/**
 * A mean function plus the list of latent components that carry the X beta term.
 * beta has one row per regressed component; every beta entry is penalized.
 */
struct ModelDefinition
{
    std::shared_ptr<const MeanModel> mean;
    std::vector<Index> regressed;

    Index q() const { return mean->latent_dim(); }
    Index a() const { return mean->fixed_dim(); }
    Index r() const { return static_cast<Index>(regressed.size()); }

    // -1 when component k is not regressed.
    Index regressed_row(Index k) const
    {
        for (std::size_t j = 0; j < regressed.size(); ++j)
            if (regressed[j] == k) return static_cast<Index>(j);
        return -1;
    }
};

inline ModelDefinition make_model(const std::string& name, std::vector<Index> regressed = {})
{
    ModelDefinition def;
    if (name == "linear" || name == "lmem") {
        def.mean = std::make_shared<LinearModel>(2);
        if (regressed.empty()) regressed = {0};
    } else if (name == "toy" || name == "intercept") {
        def.mean = std::make_shared<LinearModel>(1);
        if (regressed.empty()) regressed = {0};
    } else if (name == "logistic") {
        def.mean = std::make_shared<LogisticModel>();
        if (regressed.empty()) regressed = {1};
    } else if (name == "pharma") {
        def.mean = std::make_shared<PharmaModel>();
        if (regressed.empty()) regressed = {0, 1};
    } else {
        throw InputError("unknown model '" + name + "'");
    }
    for (Index k : regressed)
        if (k < 0 || k >= def.mean->latent_dim()) throw InputError("regressed component out of range");
    def.regressed = std::move(regressed);
    return def;
}

} // namespace hdmix
