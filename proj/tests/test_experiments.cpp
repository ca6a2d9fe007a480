#include "oracles.hpp"
#include "test_util.hpp"

#include <hdmix/oracle.hpp>

#include <gtest/gtest.h>

using namespace hdmix;
using namespace hdmix::testing;

TEST(Simulate, ShapesAndDeterminism)
{
    const Scenario sc = small_linear_scenario(12, 4, 5);
    const SimulatedData a = simulate_lmem(sc, 71);
    const SimulatedData b = simulate_lmem(sc, 71);
    EXPECT_EQ(a.data.n_rows(), 60);
    EXPECT_EQ(a.data.n_individuals(), 12);
    EXPECT_EQ(a.data.x.rows(), 12);
    EXPECT_EQ(a.data.y, b.data.y);
    EXPECT_EQ(a.phi, b.phi);
    EXPECT_NE(simulate_lmem(sc, 72).data.y, a.data.y);
    EXPECT_EQ(a.true_support, (std::vector<Index>{0}));
    EXPECT_THROW(simulate_logistic(sc, 1), InputError);
}

TEST(Simulate, IndividualDataDoesNotDependOnPopulationSize)
{
    const Scenario small = small_linear_scenario(10, 3, 4);
    const Scenario large = small_linear_scenario(25, 3, 4);
    const SimulatedData a = simulate_scenario(small, 73), b = simulate_scenario(large, 73);
    EXPECT_EQ(a.data.y, b.data.y.head(40));
    EXPECT_EQ(a.data.x, b.data.x.topRows(10));
}

TEST(Simulate, CensoringFlagsFloorFractionIndividualsKeepingTheFirstRows)
{
    Scenario sc = small_linear_scenario(20, 3, 6);
    sc.censor_fraction = 0.4;
    sc.censor_keep = 2;
    const SimulatedData cens = simulate_scenario(sc, 74);
    sc.censor_fraction = 0.0;
    const SimulatedData full = simulate_scenario(sc, 74);
    ASSERT_EQ(cens.censored.size(), 8u);
    EXPECT_EQ(cens.data.n_observed(), 120 - 8 * 4);
    for (Index i : cens.censored) EXPECT_EQ(cens.data.n_observed(i), 2);
    EXPECT_EQ(cens.data.y, full.data.y);
}

TEST(Simulate, LinearVarianceAtFixedTimeMatchesTheModel)
{
    Scenario sc = small_linear_scenario(2000, 2, 3);
    sc.truth.beta.setZero();
    sc.truth.gamma_sq << 1.0, 4.0;
    sc.truth.sigma_sq = 1.0;
    const SimulatedData sim = simulate_scenario(sc, 75);
    for (Index k = 0; k < 3; ++k) {
        const double t = 0.5 * double(k);
        Vec y(2000);
        for (Index i = 0; i < 2000; ++i) y[i] = sim.data.y[i * 3 + k];
        const double var = (y.array() - y.mean()).square().sum() / 1999.0;
        const double want = 1.0 + t * t * 4.0 + 1.0;
        EXPECT_NEAR(var, want, 0.1 * want) << "t = " << t;
    }
    EXPECT_NEAR(sim.phi.col(1).mean(), 5.0, 4.0 * std::sqrt(4.0 / 2000.0));
}

TEST(Simulate, BundledScenariosLoadAndSimulate)
{
    for (const char* name : {"lmem", "logistic", "pharma"}) {
        const Scenario sc = load_scenario(std::string(HDMIX_SCENARIO_DIR) + "/" + name + ".json");
        Scenario small = sc;
        small.n = 5;
        const SimulatedData sim = simulate_scenario(small, 76);
        EXPECT_EQ(sim.data.n_rows(), 5 * sc.j) << name;
        EXPECT_TRUE(sim.data.y.allFinite()) << name;
    }
}

TEST(Simulate, LogisticSaturatesAtTheAsymptote)
{
    Scenario sc = load_scenario(std::string(HDMIX_SCENARIO_DIR) + "/logistic.json");
    sc.n = 50;
    const SimulatedData sim = simulate_logistic(sc, 77);
    for (Index i = 0; i < 50; ++i) {
        const Index last = sim.data.start[i + 1] - 1;
        EXPECT_NEAR(sim.data.v[last], 3000.0, 1e-9);
        EXPECT_NEAR(sim.data.y[last], sim.phi(i, 0), 6.0 * std::sqrt(sc.truth.sigma_sq) + 0.02 * sim.phi(i, 0));
    }
}

TEST(Simulate, PharmaCovariatesAreStandardizedBernoulli)
{
    Scenario sc = load_scenario(std::string(HDMIX_SCENARIO_DIR) + "/pharma.json");
    sc.n = 200;
    const SimulatedData sim = simulate_pharma(sc, 78);
    for (Index c = 0; c < 5; ++c) {
        EXPECT_NEAR(sim.data.x.col(c).mean(), 0.0, 1e-12);
        const double lo = sim.data.x.col(c).minCoeff(), hi = sim.data.x.col(c).maxCoeff();
        for (Index i = 0; i < 200; ++i) {
            const double v = sim.data.x(i, c);
            EXPECT_TRUE(v == lo || v == hi);
        }
    }
    EXPECT_EQ(sim.true_support, (std::vector<Index>{0, 1, 2, 502, 503, 504}));
}

TEST(Scenario, MalformedInputsAreInputErrors)
{
    const auto good = nlohmann::json::parse(R"({"model":"linear","n":5,"p":3,"j":4,
        "times":{"kind":"grid","low":0,"high":1},"covariates":{"kind":"uniform"},
        "truth":{"mu":[1,2],"gamma_sq":[1,1],"sigma_sq":1,"beta":[{"row":1,"col":2,"value":3}]}})");
    const Scenario sc = scenario_from_json(good);
    EXPECT_EQ(sc.true_support(), (std::vector<Index>{1}));
    auto bad = good;
    bad["method"] = "lars";
    EXPECT_THROW(scenario_from_json(bad), InputError);
    bad = good;
    bad["truth"]["beta"][0]["col"] = 4;
    EXPECT_THROW(scenario_from_json(bad), InputError);
    bad = good;
    bad.erase("n");
    EXPECT_THROW(scenario_from_json(bad), InputError);
    bad = good;
    bad["model"] = "pharma";
    EXPECT_THROW(scenario_from_json(bad), InputError);
    EXPECT_THROW(load_scenario("/nonexistent.json"), InputError);
}

TEST(Metrics, SelectionScoresWorkedExample)
{
    const SelectionScores s = selection_scores({0, 1, 5}, {0, 1, 2}, 10);
    EXPECT_EQ(s.tp, 2);
    EXPECT_EQ(s.fp, 1);
    EXPECT_EQ(s.fn, 1);
    EXPECT_EQ(s.tn, 6);
    EXPECT_DOUBLE_EQ(s.se, 2.0 / 3.0);
    EXPECT_DOUBLE_EQ(s.sp, 6.0 / 7.0);
    EXPECT_DOUBLE_EQ(s.ac, 0.8);
    const SelectionScores perfect = selection_scores({}, {}, 4);
    EXPECT_EQ(perfect.se, 1.0);
    EXPECT_EQ(perfect.ac, 1.0);
    EXPECT_THROW(selection_scores({4}, {}, 4), InputError);
}

TEST(Metrics, RrmseMseMee)
{
    EXPECT_EQ(rrmse({3.0, 3.0}, 3.0), 0.0);
    EXPECT_DOUBLE_EQ(rrmse({4.0}, 2.0), 1.0);
    EXPECT_NEAR(rrmse({1.1, 0.9}, 1.0), 0.1, 1e-12);
    EXPECT_THROW(rrmse({1.0}, 0.0), DomainError);
    Vec a(2), b(2);
    a << 1, 3;
    b << 2, 1;
    EXPECT_DOUBLE_EQ(mse(a, b), 2.5);
    EXPECT_DOUBLE_EQ(mee(a, b), 1.5);
}

TEST(Baseline, CoordinateDescentMatchesTheOrthogonalClosedForm)
{
    Engine rng = make_engine(79, {0});
    const Mat x = oracle::build_orthogonal_centered_design(30, 4, 12, rng);
    Vec y(120);
    for (Index k = 0; k < 120; ++k) y[k] = std_normal(rng);
    y += 2.0 * x.col(0) - 1.0 * x.col(3);
    for (double lam : {0.0, 0.002, 0.01, 0.05}) {
        const Vec cd = lasso_cd(x, y, lam, Vec::Zero(12), 1000, 1e-16);
        const Vec exact = oracle::exact_lasso(oracle::ols(x, y), 120.0 * lam);
        EXPECT_LT((cd - exact).cwiseAbs().maxCoeff(), 1e-10) << "lambda " << lam;
    }
}

TEST(Baseline, NoiselessLinearDataGivesExactFirstStep)
{
    Scenario sc = small_linear_scenario(20, 4, 5);
    sc.truth.sigma_sq = 1e-12;
    const SimulatedData sim = simulate_scenario(sc, 80);
    const ModelDefinition def = sc.definition();
    const BaselineResult br = two_step_baseline(def, sim.data, initial_theta(def, sim.data), sc.baseline, 81);
    EXPECT_EQ(br.n_dropped, 0);
    EXPECT_LT((Mat(br.phi) - Mat(sim.phi)).cwiseAbs().maxCoeff(), 1e-4);
}

TEST(Baseline, RecoversAStrongEffect)
{
    Scenario sc = small_linear_scenario(150, 20, 5);
    sc.truth.beta(0, 0) = 3.0;
    sc.truth.sigma_sq = 0.05;
    sc.truth.gamma_sq << 0.1, 0.1;
    const SimulatedData sim = simulate_scenario(sc, 82);
    const ModelDefinition def = sc.definition();
    const BaselineResult br = two_step_baseline(def, sim.data, initial_theta(def, sim.data), sc.baseline, 83);
    ASSERT_FALSE(br.support.empty());
    EXPECT_EQ(br.support.front(), 0);
    EXPECT_NEAR(br.beta(0, 0), 3.0, 0.5);
}

TEST(Study, ReportDoesNotDependOnWorkerCount)
{
    Scenario sc = small_linear_scenario(40, 6, 5);
    sc.truth.beta(0, 0) = 3.0;
    sc.path.penalized.k_max = 150;
    sc.path.refit.k_max = 150;
    sc.path.mc_samples = 200;
    sc.path.pilot_k_max = 100;
    sc.grid_n = 4;
    sc.grid_ratio = 0.05;
    sc.replicates = 3;
    sc.method = "both";
    StudyOptions one, three;
    three.workers = 3;
    const StudyReport a = run_study(sc, one), b = run_study(sc, three);
    const auto da = temp_dir("study_w1"), db = temp_dir("study_w3");
    write_study_csvs(a, da.string());
    write_study_csvs(b, db.string());
    for (const char* f : {"replicates.csv", "summary.csv", "rrmse.csv", "estimates.csv"})
        EXPECT_EQ(read_file(da / f), read_file(db / f)) << f;
    EXPECT_EQ(summarize(a).size(), 2u);
}

TEST(Study, WorkersMustBePositive)
{
    StudyOptions opt;
    opt.workers = 0;
    EXPECT_THROW(run_study(small_linear_scenario(), opt), InputError);
}
