#include "oracles.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace hdmix;
using namespace hdmix::testing;

TEST(Ebic, WorkedExample)
{
    EXPECT_NEAR(std::exp(log_binomial(200, 3)), 1313400.0, 1e-3);
    EXPECT_NEAR(ebic(-1000.0, 3, 1000, 200), 2000.0 + 3.0 * std::log(1000.0) + 2.0 * std::log(1313400.0), 1e-9);
    // Direct arithmetic gives 2048.8995 (2000 + 20.7233 + 28.1762).
    EXPECT_NEAR(ebic(-1000.0, 3, 1000, 200), 2048.8995, 1e-4);
    EXPECT_DOUBLE_EQ(ebic(-10.0, 0, 50, 20), 20.0);
    EXPECT_THROW(ebic(0.0, 21, 50, 20), InputError);
}

TEST(LambdaGrid, LogSpacedEndpointsExact)
{
    const auto g = lambda_grid(1.0, 0.01, 3);
    ASSERT_EQ(g.size(), 3u);
    EXPECT_EQ(g[0], 1.0);
    EXPECT_NEAR(g[1], 0.1, 1e-15);
    EXPECT_EQ(g[2], 0.01);
    EXPECT_THROW(lambda_grid(0.0, 0.1, 3), InputError);
    EXPECT_THROW(lambda_grid(1.0, 1.0, 3), InputError);
    EXPECT_THROW(lambda_grid(1.0, 0.1, 1), InputError);
}

TEST(Support, ExtractionIsRowMajorOverRegressedRows)
{
    Mat b(1, 3);
    b << 0, 0, 3;
    EXPECT_EQ(extract_support(b), (std::vector<Index>{2}));
    EXPECT_TRUE(extract_support(Mat::Zero(2, 4)).empty());
    Mat b2 = Mat::Zero(2, 4);
    b2(0, 1) = 1;
    b2(1, 1) = -2;
    b2(1, 3) = 1e-9;
    EXPECT_EQ(extract_support(b2), (std::vector<Index>{1, 5, 7}));
    EXPECT_EQ(extract_support(b2, 1e-6), (std::vector<Index>{1, 5}));
    EXPECT_EQ(support_columns({1, 5, 7}, 4), (std::vector<Index>{1, 3}));
}

TEST(ReducedModel, FullSupportIsIdentityAndEmptySupportDropsCovariates)
{
    Engine rng = make_engine(41, {0});
    const ModelDefinition def = make_model("pharma");
    const Dataset d = random_dataset("pharma", 3, 2, 4, CovariateLevel::individual, rng);
    std::vector<Index> all(8);
    std::iota(all.begin(), all.end(), Index{0});
    const ReducedProblem full = restrict_model(def, d, all);
    EXPECT_EQ(full.data.x, d.x);
    EXPECT_EQ(full.beta_mask, Mat::Ones(2, 4));
    const ReducedProblem none = restrict_model(def, d, {});
    EXPECT_EQ(none.data.p(), 0);
    EXPECT_THROW(restrict_model(def, d, {8}), InputError);
}

TEST(ReducedModel, MaskFixesEntriesOutsideTheSupport)
{
    Engine rng = make_engine(42, {0});
    const ModelDefinition def = make_model("pharma");
    const Dataset d = random_dataset("pharma", 3, 2, 5, CovariateLevel::individual, rng);
    const ReducedProblem rp = restrict_model(def, d, {1, 8}); // row 0 col 1, row 1 col 3
    EXPECT_EQ(rp.columns, (std::vector<Index>{1, 3}));
    Mat full = Mat::Constant(2, 5, 7.0);
    const Mat red = rp.restrict_beta(full);
    Mat want(2, 2);
    want << 7, 0, 0, 7;
    EXPECT_EQ(red, want);
    const Mat back = rp.expand_beta(red, 5);
    EXPECT_EQ(extract_support(back), (std::vector<Index>{1, 8}));
    const auto mask = rp.fixed_mask(def);
    const Layout lay(def, 2);
    EXPECT_EQ(mask[static_cast<std::size_t>(lay.beta_index(0, 0))], 0);
    EXPECT_EQ(mask[static_cast<std::size_t>(lay.beta_index(0, 1))], 1);
    EXPECT_EQ(mask[static_cast<std::size_t>(lay.beta_index(1, 0))], 1);
    EXPECT_EQ(mask[static_cast<std::size_t>(lay.beta_index(1, 1))], 0);
}

namespace {

Dataset mc_dataset(Engine& rng)
{
    Scenario sc = small_linear_scenario(20, 2, 5);
    return simulate_scenario(sc, rng()).data;
}

} // namespace

TEST(MonteCarloLoglik, PriorSamplingMatchesClosedFormMarginal)
{
    Engine rng = make_engine(43, {0});
    const Dataset d = mc_dataset(rng);
    const ModelDefinition def = make_model("linear");
    const Scenario sc = small_linear_scenario(20, 2, 5);
    const double exact = gaussian_marginal_loglik(def, d, sc.truth);
    const auto mc = mc_marginal_loglik(def, d, sc.truth, 10000, 44, McMethod::prior);
    EXPECT_GT(mc.std_error, 0.0);
    EXPECT_NEAR(mc.value, exact, 3.0 * mc.std_error);
}

TEST(MonteCarloLoglik, ImportanceSamplingMatchesClosedFormMarginal)
{
    Engine rng = make_engine(45, {0});
    const Dataset d = mc_dataset(rng);
    const ModelDefinition def = make_model("linear");
    const Scenario sc = small_linear_scenario(20, 2, 5);
    const double exact = gaussian_marginal_loglik(def, d, sc.truth);
    const auto mc = mc_marginal_loglik(def, d, sc.truth, 2000, 46, McMethod::importance);
    const auto prior = mc_marginal_loglik(def, d, sc.truth, 2000, 46, McMethod::prior);
    EXPECT_NEAR(mc.value, exact, std::max(3.0 * mc.std_error, 1e-6));
    EXPECT_LT(mc.std_error, prior.std_error);
}

TEST(MonteCarloLoglik, SameSeedIsReproducible)
{
    Engine rng = make_engine(47, {0});
    const Dataset d = mc_dataset(rng);
    const ModelDefinition def = make_model("linear");
    const Scenario sc = small_linear_scenario(20, 2, 5);
    const auto a = mc_marginal_loglik(def, d, sc.truth, 500, 48);
    const auto b = mc_marginal_loglik(def, d, sc.truth, 500, 48);
    EXPECT_EQ(a.value, b.value);
    EXPECT_THROW(mc_marginal_loglik(def, d, sc.truth, 0, 48), InputError);
}

namespace {

Scenario path_scenario()
{
    Scenario sc = small_linear_scenario(60, 8, 6);
    sc.truth.beta(0, 0) = 3.0;
    sc.truth.beta(0, 3) = -2.0;
    sc.path.penalized.k_max = 300;
    sc.path.refit.k_max = 300;
    sc.path.penalized.step_scale.beta = 10.0;
    sc.path.mc_samples = 500;
    sc.path.pilot_k_max = 200;
    sc.path.seed = 5;
    return sc;
}

} // namespace

TEST(Path, RecordsAreDescendingAndSelectionMinimizesEbic)
{
    const Scenario sc = path_scenario();
    const ModelDefinition def = sc.definition();
    const Dataset d = simulate_scenario(sc, 49).data;
    const ParameterVector theta0 = scenario_start(sc, def, d);
    std::vector<double> grid = lambda_grid(0.3, 0.05, 12);
    std::swap(grid[0], grid[5]); // run_path sorts the grid itself
    const PathResult pr = run_path(def, d, grid, sc.path, theta0);
    ASSERT_FALSE(pr.records.empty());
    for (std::size_t k = 1; k < pr.records.size(); ++k) EXPECT_GT(pr.records[k - 1].lambda, pr.records[k].lambda);
    const Index n_obs = d.n_observed();
    for (const auto& r : pr.records) {
        ASSERT_FALSE(r.failed) << r.error;
        EXPECT_NEAR(r.ebic, ebic(r.mc_loglik, static_cast<Index>(r.support.size()), n_obs, 8), 1e-9);
        EXPECT_GE(r.ebic, pr.selected_record().ebic);
        EXPECT_EQ(extract_support(r.theta_mle.beta).size() <= r.support.size(), true);
    }
    EXPECT_EQ(pr.support_final, (std::vector<Index>{0, 3}));
    EXPECT_EQ(pr.lambda_hat, pr.selected_record().lambda);
}

TEST(Path, RepeatedSupportReusesTheCachedRefit)
{
    const Scenario sc = path_scenario();
    const ModelDefinition def = sc.definition();
    const Dataset d = simulate_scenario(sc, 50).data;
    const ParameterVector theta0 = scenario_start(sc, def, d);
    const PathResult pr = run_path(def, d, {0.3, 0.29, 0.28}, sc.path, theta0);
    Index n_cached = 0;
    for (std::size_t k = 0; k < pr.records.size(); ++k) {
        const auto& r = pr.records[k];
        if (!r.cached) continue;
        ++n_cached;
        bool found = false;
        for (std::size_t e = 0; e < k; ++e)
            if (!pr.records[e].cached && pr.records[e].support == r.support) {
                EXPECT_EQ(pr.records[e].theta_mle, r.theta_mle);
                EXPECT_EQ(pr.records[e].mc_loglik, r.mc_loglik);
                found = true;
            }
        EXPECT_TRUE(found);
    }
    EXPECT_GT(n_cached, 0);
}

TEST(Path, EmptyGridIsAnInputError)
{
    const Scenario sc = path_scenario();
    const ModelDefinition def = sc.definition();
    const Dataset d = simulate_scenario(sc, 51).data;
    EXPECT_THROW(run_path(def, d, {}, sc.path, scenario_start(sc, def, d)), InputError);
}

TEST(Path, LambdaMaxZeroesTheFit)
{
    const Scenario sc = path_scenario();
    const ModelDefinition def = sc.definition();
    const Dataset d = simulate_scenario(sc, 52).data;
    const ParameterVector theta0 = scenario_start(sc, def, d);
    const double lmax = estimate_lambda_max(def, d, sc.path, theta0);
    EXPECT_GT(lmax, 0.0);
    AwpsgConfig cfg = sc.path.penalized;
    cfg.lambda = 1.5 * lmax;
    SamplerConfig scfg = sc.path.sampler;
    scfg.seed = 53;
    EXPECT_TRUE(extract_support(awpsg_fit(def, d, cfg, scfg, theta0).theta_hat.beta).empty());
}
