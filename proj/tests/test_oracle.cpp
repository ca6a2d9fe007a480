#include "oracles.hpp"

#include <hdmix/oracle.hpp>

#include <gtest/gtest.h>

using namespace hdmix;
using namespace hdmix::oracle;
using namespace hdmix::testing;

TEST(Design, OrthonormalAndCenteredWithinIndividuals)
{
    Engine rng = make_engine(61, {0});
    const Index n = 100, j = 5, p = 200;
    const Mat x = build_orthogonal_centered_design(n, j, p, rng);
    EXPECT_LT((x.transpose() * x - Mat::Identity(p, p)).cwiseAbs().maxCoeff(), 1e-10);
    double worst = 0.0;
    for (Index i = 0; i < n; ++i) worst = std::max(worst, x.middleRows(i * j, j).colwise().sum().cwiseAbs().maxCoeff());
    EXPECT_LT(worst, 1e-10);
    EXPECT_THROW(build_orthogonal_centered_design(10, 5, 60, rng), InputError);
}

TEST(Woodbury, MatchesDenseInverse)
{
    for (Index j : {1, 5, 12}) {
        const double s2 = 4.0, g2 = 16.0;
        const Mat gam = s2 * Mat::Identity(j, j) + g2 * Mat::Ones(j, j);
        EXPECT_LT((woodbury_inverse(s2, g2, j) - gam.inverse()).cwiseAbs().maxCoeff(), 1e-10);
        EXPECT_LT((gam * woodbury_inverse(s2, g2, j) - Mat::Identity(j, j)).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(Ols, ExactOnNoiselessDataAndMatchesNormalEquations)
{
    Engine rng = make_engine(62, {0});
    const Mat x = build_orthogonal_centered_design(20, 4, 10, rng);
    Vec beta(10);
    for (Index k = 0; k < 10; ++k) beta[k] = std_normal(rng);
    EXPECT_LT((ols(x, x * beta) - beta).cwiseAbs().maxCoeff(), 1e-10);
    Vec y(80);
    for (Index k = 0; k < 80; ++k) y[k] = std_normal(rng);
    const Vec ne = (x.transpose() * x).ldlt().solve(x.transpose() * y);
    EXPECT_LT((ols(x, y) - ne).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(ExactLasso, SoftThresholdLimits)
{
    Vec b(3);
    b << 2.0, -0.5, 1.0;
    EXPECT_EQ(exact_lasso(b, 0.0), b);
    EXPECT_EQ(exact_lasso(b, 2.0), Vec::Zero(3));
    Vec want(3);
    want << 1.0, 0.0, 0.0;
    EXPECT_EQ(exact_lasso(b, 1.0), want);
}

TEST(ExactLasso, MaximizesTheToyCriterionOnAGrid)
{
    // p = 3 instance: the closed form at lambda maximizes log g - (lambda / sigma^2) ||beta||_1.
    Engine rng = make_engine(63, {0});
    const Index n = 10, j = 4, p = 3;
    const double s2 = 4.0, g2 = 16.0, lam = 1.2;
    const Mat x = build_orthogonal_centered_design(n, j, p, rng);
    Vec y(n * j);
    for (Index k = 0; k < y.size(); ++k) y[k] = 2.0 * std_normal(rng);
    y += x * Vec::LinSpaced(p, 2.0, -2.0);
    const Vec target = exact_lasso(ols(x, y), lam);
    // Coordinate-wise grid search, repeated until no coordinate moves.
    const double step = 1e-3;
    Vec best = Vec::Zero(p);
    for (int sweep = 0; sweep < 20; ++sweep) {
        const Vec before = best;
        for (Index k = 0; k < p; ++k) {
            double arg = best[k], val = -INFINITY;
            for (Index g = -4000; g <= 4000; ++g) {
                Vec bt = best;
                bt[k] = double(g) * step;
                const double v = toy_penalized_criterion(bt, x, y, j, s2, g2, lam / s2, true);
                if (v > val) val = v, arg = bt[k];
            }
            best[k] = arg;
        }
        if (best == before) break;
    }
    EXPECT_LT((best - target).cwiseAbs().maxCoeff(), step);
}

TEST(ToyCriterion, DiffersFromTheDenseMarginalByABetaFreeConstant)
{
    Engine rng = make_engine(64, {0});
    const Index n = 8, j = 4, p = 3;
    const double s2 = 4.0, g2 = 16.0;
    Mat x(n * j, p);
    for (Index r = 0; r < x.rows(); ++r)
        for (Index c = 0; c < p; ++c) x(r, c) = std_normal(rng);
    Vec y(n * j);
    for (Index k = 0; k < y.size(); ++k) y[k] = 3.0 * std_normal(rng);
    const Mat ginv = (s2 * Mat::Identity(j, j) + g2 * Mat::Ones(j, j)).inverse();
    auto dense = [&](const Vec& b) {
        const Vec res = y - x * b;
        double ll = 0.0;
        for (Index i = 0; i < n; ++i) ll -= 0.5 * res.segment(i * j, j).dot(ginv * res.segment(i * j, j));
        return ll;
    };
    for (int rep = 0; rep < 5; ++rep) {
        Vec a(p), b(p);
        for (Index k = 0; k < p; ++k) a[k] = std_normal(rng), b[k] = std_normal(rng);
        const double lam = 0.3;
        const double lhs = toy_penalized_criterion(a, x, y, j, s2, g2, lam) - toy_penalized_criterion(b, x, y, j, s2, g2, lam);
        const double rhs = (dense(a) - lam * a.lpNorm<1>()) - (dense(b) - lam * b.lpNorm<1>());
        EXPECT_NEAR(lhs, rhs, 1e-8);
    }
}

TEST(Regimes, ClassificationAgainstTheTrueSupport)
{
    Vec truth(4), est(4);
    truth << 1, 1, 0, 0;
    est << 1, 1, 0, 0;
    EXPECT_EQ(classify_regime(est, truth), Regime::exact);
    est << 1, 1, 1, 0;
    EXPECT_EQ(classify_regime(est, truth), Regime::over);
    est << 1, 0, 0, 0;
    EXPECT_EQ(classify_regime(est, truth), Regime::under);
    est << 1, 0, 1, 0;
    EXPECT_EQ(classify_regime(est, truth), Regime::mixed);
}

TEST(OracleCheck, SmallToyProblemPasses)
{
    ToyModelSpec spec;
    spec.n = 60;
    spec.j = 5;
    spec.p = 40;
    spec.beta_true = Vec::Zero(40);
    spec.beta_true[0] = 4.0;
    spec.beta_true[1] = -3.0;
    CheckSettings set;
    set.lambdas = {1.0};
    set.n_inits = 2;
    const CheckReport rep = oracle_check(spec, set);
    EXPECT_TRUE(rep.passed) << "max relative error " << rep.max_rel_error;
    EXPECT_EQ(rep.zero_mismatches, 0);
    EXPECT_EQ(rep.regimes.size(), 1u);
}
