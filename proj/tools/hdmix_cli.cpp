#include <hdmix/experiments.hpp>
#include <hdmix/oracle.hpp>

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

namespace fs = std::filesystem;
using namespace hdmix;

namespace {

struct Options
{
    std::string scenario;
    std::string data;
    std::string covariates;
    std::string out = ".";
    std::optional<std::uint64_t> seed;
    double lambda = 0.0;
    std::optional<double> grid_max;
    std::optional<double> grid_ratio;
    std::optional<Index> grid_n;
    Index workers = 1;
    std::optional<Index> replicates;
    std::optional<double> censor_fraction;
    Index trajectory_every = 0;
    bool verbose = false;
};

fs::path prepare_out(const std::string& dir)
{
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw InputError("cannot create output directory " + dir);
    return fs::path(dir);
}

Scenario scenario_with_overrides(const Options& o)
{
    Scenario sc = load_scenario(o.scenario);
    if (o.grid_max) sc.grid_max = *o.grid_max;
    if (o.grid_ratio) sc.grid_ratio = *o.grid_ratio;
    if (o.grid_n) sc.grid_n = *o.grid_n;
    if (o.censor_fraction) sc.censor_fraction = *o.censor_fraction;
    if (sc.grid_max < 0) throw InputError("--grid-max must be >= 0");
    if (!(sc.grid_ratio > 0 && sc.grid_ratio < 1)) throw InputError("--grid-ratio must lie in (0,1)");
    if (sc.grid_n < 1) throw InputError("--grid-n must be >= 1");
    sc.validate();
    return sc;
}

Dataset dataset_for(const Options& o, const Scenario& sc)
{
    if (o.data.empty() || o.covariates.empty()) throw InputError("--data and --covariates are required");
    Dataset d = load_dataset(o.data, o.covariates, sc);
    if (d.p() != sc.p)
        throw InputError("covariate file has " + std::to_string(d.p()) + " columns, scenario expects " +
                         std::to_string(sc.p));
    return d;
}

int cmd_simulate(const Options& o)
{
    if (!o.seed) throw InputError("--seed is required for simulate");
    const Scenario sc = scenario_with_overrides(o);
    const ModelDefinition def = sc.definition();
    const SimulatedData sim = simulate_scenario(sc, *o.seed);
    const fs::path out = prepare_out(o.out);
    write_data_csv(sim.data, (out / "data.csv").string());
    write_covariates_csv(sim.data.x, (out / "covariates.csv").string());
    write_parameters_csv(sim.truth, def, sc.p, (out / "truth.csv").string());
    write_latent_csv(sim.phi, def, (out / "latent.csv").string());
    std::cout << "simulated " << sc.n << " individuals, " << sim.data.y.size() << " rows, " << sim.censored.size()
              << " censored, p = " << sc.p << " -> " << out.string() << '\n';
    return 0;
}

int cmd_fit(const Options& o)
{
    const Scenario sc = scenario_with_overrides(o);
    const ModelDefinition def = sc.definition();
    const Dataset data = dataset_for(o, sc);
    if (o.lambda < 0) throw InputError("--lambda must be >= 0");
    const std::uint64_t seed = derive_seed(o.seed.value_or(sc.seed), {stream_tag::fit});
    const ParameterVector theta0 = scenario_start(sc, def, data);

    AwpsgConfig cfg = sc.path.penalized;
    cfg.lambda = o.lambda;
    cfg.trajectory_every = o.trajectory_every;
    SamplerConfig scfg = sc.path.sampler;
    scfg.seed = seed;
    std::optional<LatentState> start;
    if (sc.path.mode_start) start = start_latent_at(def, data, theta0, scfg);
    const LatentState* warm = start ? &*start : nullptr;
    const FitResult fit =
        o.lambda > 0 ? awpsg_fit(def, data, cfg, scfg, theta0, warm) : asgd_fit(def, data, cfg, scfg, theta0, warm);

    const fs::path out = prepare_out(o.out);
    write_parameters_csv(fit.theta_hat, def, data.p(), (out / "estimate.csv").string());
    if (o.trajectory_every > 0) write_trajectory_csv(fit, def, data.p(), (out / "trajectory.csv").string());
    const auto support = extract_support(fit.theta_hat.beta);
    std::cout << "lambda = " << o.lambda << ", iterations = " << fit.iterations_run
              << ", converged = " << (fit.converged ? "yes" : "no") << ", acceptance = " << fit.acceptance_rate
              << ", support size = " << support.size() << '\n';
    if (!fit.theta_hat.valid()) throw NumericalError("fit ended with invalid parameters");
    return 0;
}

int cmd_path(const Options& o)
{
    const Scenario sc = scenario_with_overrides(o);
    const ModelDefinition def = sc.definition();
    const Dataset data = dataset_for(o, sc);
    PathConfig pc = sc.path;
    pc.seed = derive_seed(o.seed.value_or(sc.seed), {stream_tag::fit});
    const ParameterVector theta0 = scenario_start(sc, def, data);
    const auto grid = detail::path_grid(sc, def, data, pc, theta0);
    const PathResult pr = run_path(def, data, grid, pc, theta0);

    const fs::path out = prepare_out(o.out);
    write_path_beta_csv(pr, def, data.p(), (out / "path_beta.csv").string());
    write_path_ebic_csv(pr, (out / "path_ebic.csv").string());
    write_selected_csv(pr, def, data.p(), (out / "selected.csv").string());
    std::cout << "lambda grid: " << grid.size() << " points from " << grid.front() << " to " << grid.back() << '\n';
    for (const auto& r : pr.records) {
        std::printf("  lambda %-12.6g |S| %-4zu", r.lambda, r.support.size());
        if (r.failed) std::printf(" failed: %s\n", r.error.c_str());
        else std::printf(" loglik %-14.6g eBIC %.6g%s\n", r.mc_loglik, r.ebic, r.cached ? " (cached)" : "");
    }
    std::cout << "selected lambda = " << pr.lambda_hat
              << ", support = {" << detail::support_names(pr.support_final, def, data.p()) << "}\n";
    return 0;
}

int cmd_oracle_check(const Options& o)
{
    oracle::CheckSettings set;
    if (o.seed) set.seed = *o.seed;
    const auto spec = oracle::ToyModelSpec::defaults();
    const auto rep = oracle::oracle_check(spec, set);
    std::printf("%-8s %-5s %-6s %-14s %-14s %s\n", "lambda", "init", "coord", "oracle", "estimate", "rel_error");
    for (const auto& r : rep.rows)
        std::printf("%-8g %-5lld %-6lld %-14.8g %-14.8g %.3g%s\n", r.lambda, static_cast<long long>(r.init + 1),
                    static_cast<long long>(r.coord + 1), r.oracle, r.estimate, r.rel_error, r.ok ? "" : "  FAIL");
    for (const auto& [lam, regime] : rep.regimes)
        std::printf("lambda %g: %s-selection regime\n", lam, oracle::to_string(regime).c_str());
    std::printf("max relative error %.3g (tolerance %g), zero mismatches %lld: %s\n", rep.max_rel_error, set.rel_tol,
                static_cast<long long>(rep.zero_mismatches), rep.passed ? "PASS" : "FAIL");
    return rep.passed ? 0 : 1;
}

int cmd_study(const Options& o)
{
    if (!o.seed) throw InputError("--seed is required for study");
    Scenario sc = scenario_with_overrides(o);
    sc.seed = *o.seed;
    StudyOptions opt;
    opt.workers = o.workers;
    opt.replicates = o.replicates;
    if (o.verbose) opt.log = [](const std::string& s) { std::cerr << s << '\n'; };
    const fs::path out = prepare_out(o.out);
    const StudyReport rep = run_study(sc, opt);
    write_study_csvs(rep, out.string());

    const ModelDefinition def = sc.definition();
    std::cout << "scenario " << rep.scenario.name << ": " << rep.replicates.size() << " replicates\n";
    for (const auto& s : summarize(rep)) {
        std::printf("  %-9s ok %lld failed %lld  Se %.3f Sp %.4f Ac %.4f  correct %.2f over %.2f  mse %.4g",
                    s.method.c_str(), static_cast<long long>(s.n_ok), static_cast<long long>(s.n_failed), s.se, s.sp,
                    s.ac, s.correct, s.over, s.mse);
        for (Index k = 0; k < s.mee.size(); ++k) std::printf("  mee%lld %.4g", static_cast<long long>(k + 1), s.mee[k]);
        std::printf("\n");
    }
    for (const auto& r : rrmse_table(rep))
        std::printf("  %-10s truth %-10.4g mean %-10.4g RRMSE %.2f%%\n", r.coord.c_str(), r.truth, r.mean_estimate,
                    100.0 * r.rrmse);
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"hdmix: variable selection in high-dimensional mixed-effects models"};
    app.require_subcommand(1);
    Options o;

    auto add_scenario = [&](CLI::App* c, bool required) {
        auto* opt = c->add_option("--scenario", o.scenario, "scenario JSON file")->check(CLI::ExistingFile);
        if (required) opt->required();
    };
    auto add_seed = [&](CLI::App* c) { c->add_option("--seed", o.seed, "random seed"); };
    auto add_grid = [&](CLI::App* c) {
        c->add_option("--grid-max", o.grid_max, "largest lambda (0: estimated by pilot fits)");
        c->add_option("--grid-ratio", o.grid_ratio, "lambda_min / lambda_max");
        c->add_option("--grid-n", o.grid_n, "number of grid points");
    };
    auto add_data = [&](CLI::App* c) {
        c->add_option("--data", o.data, "long-format data CSV (id,time,y,observed)")->required();
        c->add_option("--covariates", o.covariates, "covariate matrix CSV")->required();
    };
    auto add_out = [&](CLI::App* c) { c->add_option("--out", o.out, "output directory"); };

    auto* sim = app.add_subcommand("simulate", "simulate one dataset from a scenario");
    add_scenario(sim, true);
    add_seed(sim);
    add_out(sim);
    sim->add_option("--censor-fraction", o.censor_fraction, "fraction of individuals with truncated follow-up");

    auto* fit = app.add_subcommand("fit", "single penalized (or, with lambda 0, unpenalized) fit");
    add_scenario(fit, true);
    add_data(fit);
    add_seed(fit);
    add_out(fit);
    fit->add_option("--lambda", o.lambda, "penalty level (0: maximum likelihood)");
    fit->add_option("--trajectory-every", o.trajectory_every, "record iterates every k steps (0: off)");

    auto* path = app.add_subcommand("path", "regularization path with eBIC selection");
    add_scenario(path, true);
    add_data(path);
    add_seed(path);
    add_out(path);
    add_grid(path);

    auto* orc = app.add_subcommand("oracle-check", "compare AWPSG with the exact toy-model solution");
    add_seed(orc);

    auto* study = app.add_subcommand("study", "replicate simulation study");
    add_scenario(study, true);
    add_seed(study);
    add_out(study);
    add_grid(study);
    study->add_option("--workers", o.workers, "worker threads");
    study->add_option("--replicates", o.replicates, "number of replicates (default: scenario)");
    study->add_option("--censor-fraction", o.censor_fraction, "fraction of individuals with truncated follow-up");
    study->add_flag("--verbose,-v", o.verbose, "progress on stderr");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (*sim) return cmd_simulate(o);
        if (*fit) return cmd_fit(o);
        if (*path) return cmd_path(o);
        if (*orc) return cmd_oracle_check(o);
        if (*study) return cmd_study(o);
    } catch (const InputError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return 1;
    } catch (const DomainError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}
