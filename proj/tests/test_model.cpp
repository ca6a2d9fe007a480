#include "oracles.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <numbers>

using namespace hdmix;
using namespace hdmix::testing;

TEST(Models, LogisticAtMidpointHandValue)
{
    const double phi[2] = {200.0, 1200.0};
    EXPECT_DOUBLE_EQ(mean_logistic(300.0, 1200.0, phi), 100.0);
}

TEST(Models, LogisticObservationTermHandValue)
{
    const ModelDefinition def = make_model("logistic");
    Dataset d;
    d.start = {0, 1};
    d.y = Vec::Constant(1, 100.0);
    d.v = Vec::Constant(1, 1200.0);
    d.observed = {1};
    d.x = Mat::Zero(1, 1);
    ParameterVector t = zero_parameters(def, 1);
    t.alpha << 300.0;
    t.mu << 200.0, 1200.0;
    t.gamma_sq << 1.0, 1.0;
    t.sigma_sq = 30.0;
    Evaluator ev(def, d);
    ev.bind(t);
    const double phi[2] = {200.0, 1200.0};
    EXPECT_NEAR(ev.obs_term(0, phi), -0.5 * std::log(2.0 * std::numbers::pi * 30.0), 1e-12);
}

TEST(Models, LinearIsPolynomialInTime)
{
    const double phi[2] = {2.0, 5.0};
    EXPECT_DOUBLE_EQ(mean_linear(0.5, phi), 4.5);
}

TEST(Models, PharmaMatchesOneCompartmentFormula)
{
    const double ka = 1.5, cl = 2.0, dose = 10.0, vol = 4.0, t = 3.0;
    const double ke = cl / vol;
    const double expect = dose * ka / (vol * (ka - ke)) * (std::exp(-ke * t) - std::exp(-ka * t));
    const double phi[2] = {ka, cl};
    EXPECT_NEAR(mean_pharma(t, phi, dose, vol), expect, 1e-14);
    EXPECT_DOUBLE_EQ(mean_pharma(0.0, phi, dose, vol), 0.0);
}

TEST(Models, PharmaDegenerateRatesRaiseDomainError)
{
    const double phi[2] = {0.5, 2.0};
    EXPECT_THROW(mean_pharma(1.0, phi, 10.0, 4.0), DomainError);
}

TEST(Models, LogisticZeroScaleRaisesDomainError)
{
    const double phi[2] = {200.0, 1200.0};
    EXPECT_THROW(mean_logistic(0.0, 1.0, phi), DomainError);
}

TEST(Models, UnknownModelIsAnInputError) { EXPECT_THROW(make_model("quadratic"), InputError); }

TEST(Models, MeanDerivativesMatchFiniteDifferences)
{
    Engine rng = make_engine(11, {0});
    for (const std::string name : {"linear", "logistic", "pharma"}) {
        const ModelDefinition def = make_model(name);
        const auto& m = *def.mean;
        for (int rep = 0; rep < 20; ++rep) {
            const ParameterVector t = random_theta(def, 1, name, rng);
            std::vector<double> alpha(t.alpha.data(), t.alpha.data() + t.alpha.size());
            std::vector<double> phi(t.mu.data(), t.mu.data() + t.mu.size());
            const double c[2] = {10.0, 10.0};
            const double v = name == "logistic" ? 1000.0 * uniform01(rng) + 500.0 : 5.0 * uniform01(rng) + 0.1;
            std::vector<double> da(alpha.size() + 1), dp(phi.size());
            m.eval_grad(alpha, v, phi, c, da, dp);
            for (std::size_t k = 0; k < phi.size(); ++k) {
                const double h = 1e-6 * std::max(1.0, std::abs(phi[k]));
                auto pp = phi, pm = phi;
                pp[k] += h;
                pm[k] -= h;
                const double fd = (m.eval(alpha, v, pp, c) - m.eval(alpha, v, pm, c)) / (2 * h);
                EXPECT_NEAR(dp[k], fd, 1e-5 * (1 + std::abs(fd))) << name << " phi" << k;
            }
            for (std::size_t k = 0; k < alpha.size(); ++k) {
                const double h = 1e-6 * std::max(1.0, std::abs(alpha[k]));
                auto ap = alpha, am = alpha;
                ap[k] += h;
                am[k] -= h;
                const double fd = (m.eval(ap, v, phi, c) - m.eval(am, v, phi, c)) / (2 * h);
                EXPECT_NEAR(da[k], fd, 1e-5 * (1 + std::abs(fd))) << name << " alpha";
            }
        }
    }
}

TEST(Likelihood, CompleteGradientMatchesFiniteDifferences)
{
    Engine rng = make_engine(12, {0});
    for (const std::string name : {"linear", "logistic", "pharma"}) {
        for (auto level : {CovariateLevel::individual, CovariateLevel::observation}) {
            const ModelDefinition def = make_model(name);
            const Dataset d = random_dataset(name, 4, 3, 3, level, rng);
            const ParameterVector t = random_theta(def, 3, name, rng);
            const LatentMatrix phi = random_latent(def, d, t, rng);
            EXPECT_LT(gradient_fd_error(def, d, t, phi), 1e-5) << name;
        }
    }
}

TEST(Likelihood, UnobservedRowsDoNotContribute)
{
    Engine rng = make_engine(13, {0});
    const ModelDefinition def = make_model("linear");
    Dataset d = random_dataset("linear", 3, 4, 2, CovariateLevel::individual, rng);
    const ParameterVector t = random_theta(def, 2, "linear", rng);
    const LatentMatrix phi = random_latent(def, d, t, rng);
    d.observed[5] = 0;
    const double before = complete_log_density(def, t, d, phi);
    d.y[5] = 1e6;
    EXPECT_EQ(complete_log_density(def, t, d, phi), before);
}

TEST(Likelihood, LinearPosteriorIsTheConjugateGaussianUpToAConstant)
{
    Engine rng = make_engine(14, {0});
    const ModelDefinition def = make_model("linear");
    const Dataset d = random_dataset("linear", 2, 5, 2, CovariateLevel::individual, rng);
    const ParameterVector t = random_theta(def, 2, "linear", rng);
    const Moments post = conjugate_posterior(def, d, t, 0);
    const Mat prec = post.cov.inverse();
    auto gauss = [&](const Vec& p) { return -0.5 * (p - post.mean).dot(prec * (p - post.mean)); };
    Vec a(2), b(2);
    a << 0.3, -1.0;
    b << 2.0, 0.5;
    const double da = latent_log_posterior_unnorm(def, t, d, 0, {a.data(), 2}) -
                      latent_log_posterior_unnorm(def, t, d, 0, {b.data(), 2});
    EXPECT_NEAR(da, gauss(a) - gauss(b), 1e-9);
}

TEST(Likelihood, WrongBetaShapeIsAnInputError)
{
    Engine rng = make_engine(15, {0});
    const ModelDefinition def = make_model("linear");
    const Dataset d = random_dataset("linear", 2, 3, 2, CovariateLevel::individual, rng);
    const ParameterVector t = random_theta(def, 3, "linear", rng);
    Evaluator ev(def, d);
    EXPECT_THROW(ev.bind(t), InputError);
}
