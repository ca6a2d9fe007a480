#pragma once
#include <hdmix/model.hpp>
#include <string>
#include <vector>

namespace hdmix {

// theta = (alpha, mu, beta, Gamma = diag(gamma_sq), sigma_sq).
struct ParameterVector
{
    Vec alpha;
    Vec mu;
    Mat beta; // regressed components x p
    Vec gamma_sq;
    double sigma_sq = 1.0;

    bool valid() const
    {
        return sigma_sq > 0 && std::isfinite(sigma_sq) && (gamma_sq.array() > 0).all() &&
               gamma_sq.allFinite() && alpha.allFinite() && mu.allFinite() && beta.allFinite();
    }

    friend bool operator==(const ParameterVector& a, const ParameterVector& b)
    {
        return a.alpha == b.alpha && a.mu == b.mu && a.beta == b.beta && a.gamma_sq == b.gamma_sq &&
               a.sigma_sq == b.sigma_sq;
    }
};

enum class CoordGroup { alpha, mu, beta, log_gamma_sq, log_sigma_sq };

/**
 * Flat coordinate layout used by the optimizer:
 *   [alpha (a) | mu (q) | beta row-major (r x p) | log gamma_sq (q) | log sigma_sq].
 * Variances are stored on the log scale so every flat vector maps to a valid theta.
 */
class Layout
{
public:
    Layout() = default;
    Layout(Index a, Index q, Index r, Index p) : a_(a), q_(q), r_(r), p_(p) {}
    Layout(const ModelDefinition& def, Index p) : Layout(def.a(), def.q(), def.r(), p) {}

    Index a() const { return a_; }
    Index q() const { return q_; }
    Index r() const { return r_; }
    Index p() const { return p_; }

    Index alpha_offset() const { return 0; }
    Index mu_offset() const { return a_; }
    Index beta_offset() const { return a_ + q_; }
    Index gamma_offset() const { return a_ + q_ + r_ * p_; }
    Index sigma_offset() const { return gamma_offset() + q_; }
    Index size() const { return sigma_offset() + 1; }

    Index beta_index(Index row, Index col) const { return beta_offset() + row * p_ + col; }

    bool is_penalized(Index l) const { return l >= beta_offset() && l < gamma_offset(); }

    CoordGroup group(Index l) const
    {
        if (l < mu_offset()) return CoordGroup::alpha;
        if (l < beta_offset()) return CoordGroup::mu;
        if (l < gamma_offset()) return CoordGroup::beta;
        if (l < sigma_offset()) return CoordGroup::log_gamma_sq;
        return CoordGroup::log_sigma_sq;
    }

    std::vector<Index> penalized_indices() const
    {
        std::vector<Index> out;
        for (Index l = beta_offset(); l < gamma_offset(); ++l) out.push_back(l);
        return out;
    }

    // Human-readable coordinate names (1-based), stable across runs.
    std::string name(Index l, const ModelDefinition* def = nullptr) const
    {
        switch (group(l)) {
        case CoordGroup::alpha:
            if (def) return def->mean->fixed_names()[static_cast<std::size_t>(l)];
            return "alpha" + std::to_string(l + 1);
        case CoordGroup::mu: return "mu" + std::to_string(l - mu_offset() + 1);
        case CoordGroup::beta: {
            const Index b = l - beta_offset();
            if (r_ == 1) return "beta" + std::to_string(b + 1);
            return "beta" + std::to_string(b / p_ + 1) + "_" + std::to_string(b % p_ + 1);
        }
        case CoordGroup::log_gamma_sq: return "gamma_sq" + std::to_string(l - gamma_offset() + 1);
        case CoordGroup::log_sigma_sq: return "sigma_sq";
        }
        return {};
    }

    Vec flatten(const ParameterVector& t) const
    {
        Vec z(size());
        z.segment(alpha_offset(), a_) = t.alpha;
        z.segment(mu_offset(), q_) = t.mu;
        for (Index row = 0; row < r_; ++row) z.segment(beta_index(row, 0), p_) = t.beta.row(row).transpose();
        z.segment(gamma_offset(), q_) = t.gamma_sq.array().log().matrix();
        z[sigma_offset()] = std::log(t.sigma_sq);
        return z;
    }

    ParameterVector unflatten(const Vec& z) const
    {
        ParameterVector t;
        t.alpha = z.segment(alpha_offset(), a_);
        t.mu = z.segment(mu_offset(), q_);
        t.beta.resize(r_, p_);
        for (Index row = 0; row < r_; ++row) t.beta.row(row) = z.segment(beta_index(row, 0), p_).transpose();
        t.gamma_sq = z.segment(gamma_offset(), q_).array().exp().matrix();
        t.sigma_sq = std::exp(z[sigma_offset()]);
        return t;
    }

    // Value of a coordinate on the natural (not log) scale.
    double natural_value(const ParameterVector& t, Index l) const
    {
        switch (group(l)) {
        case CoordGroup::alpha: return t.alpha[l];
        case CoordGroup::mu: return t.mu[l - mu_offset()];
        case CoordGroup::beta: {
            const Index b = l - beta_offset();
            return t.beta(b / p_, b % p_);
        }
        case CoordGroup::log_gamma_sq: return t.gamma_sq[l - gamma_offset()];
        case CoordGroup::log_sigma_sq: return t.sigma_sq;
        }
        return 0.0;
    }

private:
    Index a_ = 0, q_ = 0, r_ = 0, p_ = 0;
};

inline ParameterVector zero_parameters(const ModelDefinition& def, Index p)
{
    ParameterVector t;
    t.alpha = Vec::Zero(def.a());
    t.mu = Vec::Zero(def.q());
    t.beta = Mat::Zero(def.r(), p);
    t.gamma_sq = Vec::Ones(def.q());
    t.sigma_sq = 1.0;
    return t;
}

} // namespace hdmix
