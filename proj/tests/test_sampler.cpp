#include "oracles.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace hdmix;
using namespace hdmix::testing;

namespace {

struct LinearCase
{
    ModelDefinition def = make_model("linear");
    Dataset data;
    ParameterVector theta;
};

// One-to-three individuals with J = 10 uniform times, the LMEM parameter values.
LinearCase linear_case(Index n, std::uint64_t seed)
{
    LinearCase c;
    Engine rng = make_engine(seed, {0});
    c.data = random_dataset("linear", n, 10, 2, CovariateLevel::individual, rng);
    c.theta = zero_parameters(c.def, 2);
    c.theta.mu << 2.0, 5.0;
    c.theta.gamma_sq << 1.0, 4.0;
    c.theta.sigma_sq = 1.0;
    c.theta.beta(0, 0) = 0.8;
    for (Index i = 0; i < n; ++i)
        for (Index r = c.data.start[i]; r < c.data.start[i + 1]; ++r)
            c.data.y[r] = 2.0 + 0.8 * c.data.x(i, 0) + 5.0 * c.data.v[r] + std_normal(rng);
    return c;
}

} // namespace

TEST(Sampler, GaussianPosteriorMatchesQuadrature)
{
    const LinearCase c = linear_case(1, 21);
    Evaluator ev(c.def, c.data);
    ev.bind(c.theta);
    const GaussianMoments g = gaussian_posterior(ev, 0);
    Vec center = c.theta.mu, half(2);
    half << 8.0, 16.0;
    const Moments q = quadrature_moments_2d(
        [&](const double* phi) { return ev.log_posterior_unnorm(0, {phi, 2}); }, center, half);
    for (Index k = 0; k < 2; ++k) {
        EXPECT_NEAR(g.mean[k], q.mean[k], 1e-6 * (1 + std::abs(q.mean[k])));
        EXPECT_NEAR(g.cov(k, k), q.cov(k, k), 1e-4 * q.cov(k, k));
    }
    EXPECT_NEAR(g.cov(0, 1), q.cov(0, 1), 1e-4 * std::sqrt(q.cov(0, 0) * q.cov(1, 1)));
}

TEST(Sampler, DirectDrawsHaveTheConjugateMoments)
{
    const LinearCase c = linear_case(1, 22);
    Evaluator ev(c.def, c.data);
    ev.bind(c.theta);
    const Moments post = conjugate_posterior(c.def, c.data, c.theta, 0);
    Streams streams(3, stream_tag::sampler, 1);
    const Index m = 20000;
    Vec s1 = Vec::Zero(2);
    Mat s2 = Mat::Zero(2, 2);
    for (Index k = 0; k < m; ++k) {
        const Vec x = direct_gaussian_sample(ev, 0, streams[0]);
        s1 += x;
        s2 += x * x.transpose();
    }
    const Vec mean = s1 / double(m);
    const Mat cov = s2 / double(m) - mean * mean.transpose();
    for (Index k = 0; k < 2; ++k) {
        const double se = std::sqrt(post.cov(k, k) / double(m));
        EXPECT_NEAR(mean[k], post.mean[k], 4.0 * se);
        EXPECT_NEAR(cov(k, k), post.cov(k, k), 4.0 * post.cov(k, k) * std::sqrt(2.0 / double(m)));
    }
}

TEST(Sampler, MetropolisChainMatchesConjugatePosterior)
{
    const LinearCase c = linear_case(3, 23);
    Evaluator ev(c.def, c.data);
    ev.bind(c.theta);
    SamplerConfig cfg;
    LatentState st = initial_latent(ev, cfg);
    Streams streams(4, stream_tag::sampler, 3);
    for (Index k = 1; k <= 2000; ++k) {
        mh_update(ev, st, streams);
        if (k % cfg.adapt_window == 0) adapt(st, cfg);
    }
    const Index steps = 10000, n_batches = 50, bsize = steps / n_batches;
    std::vector<Mat> batch(3, Mat::Zero(n_batches, 2));
    std::vector<Vec> total(3, Vec::Zero(2));
    for (Index k = 0; k < steps; ++k) {
        mh_update(ev, st, streams);
        for (Index i = 0; i < 3; ++i) {
            batch[i].row(k / bsize) += st.phi.row(i) / double(bsize);
            total[i] += st.phi.row(i).transpose() / double(steps);
        }
    }
    for (Index i = 0; i < 3; ++i) {
        const Moments post = conjugate_posterior(c.def, c.data, c.theta, i);
        for (Index k = 0; k < 2; ++k) {
            const Vec b = batch[i].col(k);
            const double var_b = (b.array() - b.mean()).square().sum() / double(n_batches - 1);
            const double se = std::sqrt(var_b / double(n_batches));
            EXPECT_NEAR(total[i][k], post.mean[k], 3.0 * se + 1e-12) << "individual " << i << " component " << k;
        }
    }
    EXPECT_GT(st.acceptance_rate(), 0.1);
    EXPECT_LT(st.acceptance_rate(), 0.9);
}

TEST(Sampler, AdaptationMovesTowardTarget)
{
    EXPECT_GT(adapt_scale(1.0, 0.9, 0.4), 1.0);
    EXPECT_LT(adapt_scale(1.0, 0.1, 0.4), 1.0);
    EXPECT_DOUBLE_EQ(adapt_scale(1.0, 0.4, 0.4), 1.0);
}

TEST(Sampler, DirectSamplingOnlyForLinearModels)
{
    SamplerConfig cfg;
    EXPECT_TRUE(uses_direct_sampling(make_model("linear"), cfg));
    EXPECT_FALSE(uses_direct_sampling(make_model("logistic"), cfg));
    cfg.kind = SamplerKind::direct;
    EXPECT_THROW(uses_direct_sampling(make_model("pharma"), cfg), InputError);
    cfg.kind = SamplerKind::metropolis;
    EXPECT_FALSE(uses_direct_sampling(make_model("linear"), cfg));
}

TEST(Sampler, IndividualChainsDoNotInteract)
{
    const LinearCase c = linear_case(3, 24);
    LinearCase other = c;
    for (Index r = other.data.start[0]; r < other.data.start[1]; ++r) other.data.y[r] += 3.0;
    Evaluator ea(c.def, c.data), eb(other.def, other.data);
    ea.bind(c.theta);
    eb.bind(other.theta);
    SamplerConfig cfg;
    LatentState a = initial_latent(ea, cfg), b = initial_latent(eb, cfg);
    Streams sa(5, stream_tag::sampler, 3), sb(5, stream_tag::sampler, 3);
    for (int k = 0; k < 50; ++k) {
        mh_update(ea, a, sa);
        mh_update(eb, b, sb);
    }
    EXPECT_NE(a.phi.row(0), b.phi.row(0));
    EXPECT_EQ(a.phi.row(2), b.phi.row(2));
}
