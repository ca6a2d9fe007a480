#pragma once
#include <hdmix/parameters.hpp>
#include <cmath>
#include <numbers>
#include <string>

namespace hdmix {

// Latent draws, one row per individual; row-major so each phi_i is contiguous.
using LatentMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline std::span<const double> row_span(const LatentMatrix& phi, Index i)
{
    return {phi.data() + i * phi.cols(), static_cast<std::size_t>(phi.cols())};
}

// X beta^T restricted to the nonzero entries of beta: one column per regressed component.
inline Mat covariate_effects(const Mat& x, const Mat& beta)
{
    const Index nnz = (beta.array() != 0.0).count();
    if (nnz * 4 > beta.size()) return x * beta.transpose();
    Mat eff = Mat::Zero(x.rows(), beta.rows());
    for (Index k = 0; k < beta.rows(); ++k)
        for (Index j = 0; j < beta.cols(); ++j)
            if (beta(k, j) != 0.0) eff.col(k).noalias() += beta(k, j) * x.col(j);
    return eff;
}

/**
 * Binds a model definition and a dataset, caches the covariate effects of one theta,
 * and evaluates per-individual log-density terms.
 */
class Evaluator
{
public:
    Evaluator(const ModelDefinition& def, const Dataset& data) : def_(&def), data_(&data)
    {
        const auto names = def.mean->constant_names();
        consts_.resize(data.n_individuals(), static_cast<Index>(names.size()));
        for (std::size_t c = 0; c < names.size(); ++c) {
            const Index src = data.constant_index(names[c]);
            consts_.col(static_cast<Index>(c)) = data.constants.col(src);
        }
        phi_eff_.resize(def.q());
        d_phi_.resize(def.q());
        d_alpha_.resize(std::max<Index>(def.a(), 1));
        if (def.r() > 0 && data.p() > 0 && data.x.rows() == 0)
            throw InputError("dataset has no covariate matrix");
    }

    const ModelDefinition& definition() const { return *def_; }
    const Dataset& data() const { return *data_; }
    const ParameterVector& theta() const { return *theta_; }

    void bind(const ParameterVector& theta)
    {
        if (theta.mu.size() != def_->q() || theta.gamma_sq.size() != def_->q() || theta.alpha.size() != def_->a())
            throw InputError("parameter vector does not match the model");
        if (theta.beta.rows() != def_->r() || theta.beta.cols() != data_->p())
            throw InputError("beta has shape " + std::to_string(theta.beta.rows()) + "x" +
                             std::to_string(theta.beta.cols()) + ", expected " + std::to_string(def_->r()) + "x" +
                             std::to_string(data_->p()));
        theta_ = &theta;
        eff_ = def_->r() > 0 ? covariate_effects(data_->x, theta.beta) : Mat::Zero(data_->x.rows(), 0);
    }

    std::span<const double> constants(Index i) const
    {
        return {consts_.data() + i * consts_.cols(), static_cast<std::size_t>(consts_.cols())};
    }

    // Mean of phi_i under the latent Gaussian law.
    double prior_mean(Index i, Index k) const
    {
        double m = theta_->mu[k];
        if (data_->level == CovariateLevel::individual) {
            const Index row = def_->regressed_row(k);
            if (row >= 0) m += eff_(i, row);
        }
        return m;
    }

    // Observation-level shift of component k at data row r (0 for individual-level covariates).
    double shift(Index r, Index k) const
    {
        if (data_->level != CovariateLevel::observation) return 0.0;
        const Index row = def_->regressed_row(k);
        return row >= 0 ? eff_(r, row) : 0.0;
    }

    double mean_at(Index i, Index r, std::span<const double> phi) const
    {
        for (Index k = 0; k < def_->q(); ++k) phi_eff_[k] = phi[k] + shift(r, k);
        double m;
        try {
            m = def_->mean->eval(alpha_span(), data_->v[r], phi_eff_span(), constants(i));
        } catch (const DomainError& e) {
            throw DomainError(std::string(e.what()) + " at individual " + std::to_string(i + 1) + ", row " +
                              std::to_string(r - data_->start[i] + 1));
        }
        if (!std::isfinite(m))
            throw DomainError("non-finite mean at individual " + std::to_string(i + 1) + ", row " +
                              std::to_string(r - data_->start[i] + 1));
        return m;
    }

    // Mean at data row r and its derivative with respect to phi_i.
    double mean_grad_at(Index i, Index r, std::span<const double> phi, std::span<double> d_phi) const
    {
        const Index a = def_->a(), q = def_->q();
        for (Index k = 0; k < q; ++k) phi_eff_[k] = phi[k] + shift(r, k);
        const double m = def_->mean->eval_grad(alpha_span(), data_->v[r], phi_eff_span(), constants(i),
                                               {d_alpha_.data(), static_cast<std::size_t>(a)}, d_phi);
        if (!std::isfinite(m)) throw DomainError("non-finite mean at individual " + std::to_string(i + 1));
        return m;
    }

    // sum_j log p(Y_ij | phi_i) over observed rows.
    double obs_term(Index i, std::span<const double> phi) const
    {
        const double s2 = theta_->sigma_sq;
        const double c = -0.5 * std::log(2.0 * std::numbers::pi * s2);
        double acc = 0.0;
        for (Index r = data_->start[i]; r < data_->start[i + 1]; ++r) {
            if (!data_->observed[r]) continue;
            const double res = data_->y[r] - mean_at(i, r, phi);
            acc += c - res * res / (2.0 * s2);
        }
        return acc;
    }

    // log p(phi_i).
    double latent_term(Index i, std::span<const double> phi) const
    {
        double acc = 0.0;
        for (Index k = 0; k < def_->q(); ++k) {
            const double g2 = theta_->gamma_sq[k];
            const double d = phi[k] - prior_mean(i, k);
            acc += -0.5 * std::log(2.0 * std::numbers::pi * g2) - d * d / (2.0 * g2);
        }
        return acc;
    }

    double log_posterior_unnorm(Index i, std::span<const double> phi) const
    {
        return obs_term(i, phi) + latent_term(i, phi);
    }

    double complete(const LatentMatrix& phi) const
    {
        double acc = 0.0;
        for (Index i = 0; i < data_->n_individuals(); ++i) acc += log_posterior_unnorm(i, row_span(phi, i));
        return acc;
    }

    /**
     * Gradient of the complete log-density in the flat layout, divided by N.
     * Log-variance coordinates are chain-ruled: d/d log s2 = s2 * d/d s2.
     */
    Vec gradient(const LatentMatrix& phi) const
    {
        const Dataset& d = *data_;
        const Index n = d.n_individuals(), q = def_->q(), a = def_->a(), nr = def_->r();
        const Layout lay(*def_, d.p());
        Vec g = Vec::Zero(lay.size());
        const double s2 = theta_->sigma_sq;
        Mat coef = Mat::Zero(d.x.rows(), nr); // d loglik / d (X beta) per covariate row
        double sum_res2 = 0.0;
        Index n_obs = 0;

        for (Index i = 0; i < n; ++i) {
            auto ph = row_span(phi, i);
            for (Index r = d.start[i]; r < d.start[i + 1]; ++r) {
                if (!d.observed[r]) continue;
                for (Index k = 0; k < q; ++k) phi_eff_[k] = ph[k] + shift(r, k);
                double m;
                try {
                    m = def_->mean->eval_grad(alpha_span(), d.v[r], phi_eff_span(), constants(i),
                                              {d_alpha_.data(), static_cast<std::size_t>(a)},
                                              {d_phi_.data(), static_cast<std::size_t>(q)});
                } catch (const DomainError& e) {
                    throw DomainError(std::string(e.what()) + " at individual " + std::to_string(i + 1) +
                                      ", row " + std::to_string(r - d.start[i] + 1));
                }
                if (!std::isfinite(m))
                    throw DomainError("non-finite mean at individual " + std::to_string(i + 1) + ", row " +
                                      std::to_string(r - d.start[i] + 1));
                const double res = d.y[r] - m;
                const double w = res / s2;
                for (Index k = 0; k < a; ++k) g[lay.alpha_offset() + k] += w * d_alpha_[k];
                if (d.level == CovariateLevel::observation)
                    for (Index row = 0; row < nr; ++row) coef(r, row) += w * d_phi_[def_->regressed[row]];
                sum_res2 += res * res;
                ++n_obs;
            }
            for (Index k = 0; k < q; ++k) {
                const double g2 = theta_->gamma_sq[k];
                const double dev = ph[k] - prior_mean(i, k);
                g[lay.mu_offset() + k] += dev / g2;
                g[lay.gamma_offset() + k] += -0.5 + dev * dev / (2.0 * g2);
                if (d.level == CovariateLevel::individual) {
                    const Index row = def_->regressed_row(k);
                    if (row >= 0) coef(i, row) += dev / g2;
                }
            }
        }
        g[lay.sigma_offset()] = -0.5 * double(n_obs) + sum_res2 / (2.0 * s2);
        for (Index row = 0; row < nr; ++row)
            g.segment(lay.beta_index(row, 0), d.p()).noalias() = d.x.transpose() * coef.col(row);
        return g / double(n);
    }

private:
    std::span<const double> alpha_span() const
    {
        return {theta_->alpha.data(), static_cast<std::size_t>(theta_->alpha.size())};
    }
    std::span<const double> phi_eff_span() const
    {
        return {phi_eff_.data(), static_cast<std::size_t>(phi_eff_.size())};
    }

    const ModelDefinition* def_;
    const Dataset* data_;
    const ParameterVector* theta_ = nullptr;
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> consts_;
    Mat eff_;
    mutable std::vector<double> phi_eff_, d_phi_, d_alpha_;
};

} // namespace hdmix

namespace hdmix {

// log f(theta; Y, phi) = sum_i [ sum_j log p(Y_ij | phi_i) + log p(phi_i) ] over observed rows.
inline double complete_log_density(const ModelDefinition& def, const ParameterVector& theta, const Dataset& data,
                                   const LatentMatrix& phi)
{
    Evaluator ev(def, data);
    ev.bind(theta);
    return ev.complete(phi);
}

// (1/N) * gradient of complete_log_density in the flat layout.
inline Vec complete_log_density_grad(const ModelDefinition& def, const ParameterVector& theta, const Dataset& data,
                                     const LatentMatrix& phi)
{
    Evaluator ev(def, data);
    ev.bind(theta);
    return ev.gradient(phi);
}

inline double latent_log_posterior_unnorm(const ModelDefinition& def, const ParameterVector& theta,
                                          const Dataset& data, Index i, std::span<const double> phi_i)
{
    Evaluator ev(def, data);
    ev.bind(theta);
    return ev.log_posterior_unnorm(i, phi_i);
}

} // namespace hdmix
