#pragma once
#include <hdmix/regpath.hpp>
#include <json.hpp>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace hdmix {

enum class TimeDesign { uniform, grid, list };
enum class CovariateDesign { uniform, bernoulli };

struct BaselineConfig
{
    Index multistarts = 5;
    double start_spread = 0.5; // perturbation sd as a fraction of sqrt(gamma_sq)
    Index nls_max_iter = 200;
    Index folds = 5;
    Index grid_n = 50;
    double grid_ratio = 1e-2;
    Index cd_max_sweeps = 1000;
    double cd_tol = 1e-9;
};

/**
 * Everything needed to simulate and analyse one study design: model, dimensions,
 * true parameters, design of times and covariates, censoring, fitting settings.
 */
struct Scenario
{
    std::string name = "scenario";
    std::string model = "linear";
    std::vector<Index> regressed; // empty: model default
    CovariateLevel level = CovariateLevel::individual;
    Index n = 100;
    Index p = 200;
    Index j = 10;

    TimeDesign time_design = TimeDesign::uniform;
    double time_low = 0.0, time_high = 1.0;
    std::vector<double> times;

    CovariateDesign covariate_design = CovariateDesign::uniform;
    double covariate_low = -1.0, covariate_high = 1.0;
    double covariate_prob = 0.2;
    bool standardize = false;

    std::vector<std::string> constant_names;
    std::vector<double> constant_values;

    double censor_fraction = 0.0;
    Index censor_keep = 3;

    ParameterVector truth;
    std::optional<ParameterVector> init; // starting values (beta ignored)
    // Multiplies the starting variances; values < 1 start from a model whose
    // variances do not already absorb the covariate effects.
    double init_variance_scale = 1.0;

    Index replicates = 20;
    std::uint64_t seed = 1;
    std::string method = "awpsg"; // awpsg | baseline | both

    // fitting
    PathConfig path;
    double grid_max = 0.0; // 0: estimated
    double grid_ratio = 1e-3;
    Index grid_n = 50;
    BaselineConfig baseline;

    ModelDefinition definition() const { return make_model(model, regressed); }

    std::vector<Index> true_support() const { return extract_support(truth.beta); }

    void validate() const
    {
        const auto def = definition();
        if (n < 1 || p < 1 || j < 1) throw InputError("scenario dimensions must be positive");
        if (truth.mu.size() != def.q() || truth.gamma_sq.size() != def.q() || truth.alpha.size() != def.a())
            throw InputError("scenario truth does not match model '" + model + "'");
        if (truth.beta.rows() != def.r() || truth.beta.cols() != p)
            throw InputError("scenario beta has the wrong shape");
        if (!truth.valid()) throw InputError("scenario truth has non-positive variances");
        if (time_design == TimeDesign::list && static_cast<Index>(times.size()) != j)
            throw InputError("time list must have j entries");
        if (!(censor_fraction >= 0 && censor_fraction <= 1)) throw InputError("censor fraction must lie in [0,1]");
        if (censor_keep < 1 || censor_keep > j) throw InputError("censor_keep must lie in [1, j]");
        if (def.mean->constant_names().size() != constant_values.size())
            throw InputError("model '" + model + "' needs " + std::to_string(def.mean->constant_names().size()) +
                             " constants");
        if (!(init_variance_scale > 0)) throw InputError("init variance_scale must be > 0");
        if (replicates < 1) throw InputError("replicates must be >= 1");
        if (method != "awpsg" && method != "baseline" && method != "both")
            throw InputError("method must be awpsg, baseline or both");
    }
};

namespace detail {

template <class T>
T json_get(const nlohmann::json& j, const char* key, T fallback)
{
    return j.contains(key) ? j.at(key).get<T>() : fallback;
}

inline Vec json_vec(const nlohmann::json& j)
{
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const Vec>(v.data(), static_cast<Index>(v.size()));
}

inline StepScale parse_step_scale(const nlohmann::json& j, StepScale s)
{
    s.alpha = json_get(j, "alpha", s.alpha);
    s.mu = json_get(j, "mu", s.mu);
    s.beta = json_get(j, "beta", s.beta);
    s.log_var = json_get(j, "log_var", s.log_var);
    return s;
}

inline void parse_awpsg(const nlohmann::json& j, AwpsgConfig& c)
{
    c.gamma0 = json_get(j, "gamma0", c.gamma0);
    c.adagrad_eps = json_get(j, "adagrad_eps", c.adagrad_eps);
    c.k_max = json_get<Index>(j, "k_max", c.k_max);
    c.convergence_tol = json_get(j, "convergence_tol", c.convergence_tol);
    c.convergence_window = json_get<Index>(j, "convergence_window", c.convergence_window);
    c.averaging_fraction = json_get(j, "averaging_fraction", c.averaging_fraction);
    c.freeze_fraction = json_get(j, "freeze_fraction", c.freeze_fraction);
    c.variance_warmup = json_get<Index>(j, "variance_warmup", c.variance_warmup);
    if (j.contains("step_scale")) c.step_scale = parse_step_scale(j.at("step_scale"), c.step_scale);
}

// Partial parameter vector: missing entries stay empty / zero.
inline ParameterVector parse_parameters(const nlohmann::json& j, const ModelDefinition& def, Index p)
{
    ParameterVector t = zero_parameters(def, p);
    t.alpha.resize(0);
    t.gamma_sq.resize(0);
    t.mu.resize(0);
    t.sigma_sq = 0.0;
    if (j.contains("alpha")) t.alpha = json_vec(j.at("alpha"));
    if (j.contains("mu")) t.mu = json_vec(j.at("mu"));
    if (j.contains("gamma_sq")) t.gamma_sq = json_vec(j.at("gamma_sq"));
    if (j.contains("sigma_sq")) t.sigma_sq = j.at("sigma_sq").get<double>();
    if (j.contains("beta")) {
        for (const auto& e : j.at("beta")) {
            const Index row = e.at("row").get<Index>() - 1, col = e.at("col").get<Index>() - 1;
            if (row < 0 || row >= def.r() || col < 0 || col >= p)
                throw InputError("beta entry (" + std::to_string(row + 1) + "," + std::to_string(col + 1) +
                                 ") out of range");
            t.beta(row, col) = e.at("value").get<double>();
        }
    }
    return t;
}

} // namespace detail

/// Builds a scenario from its JSON description (schema in the README).
inline Scenario scenario_from_json(const nlohmann::json& j)
{
    using detail::json_get;
    try {
        Scenario s;
        s.name = json_get<std::string>(j, "name", s.name);
        s.model = j.at("model").get<std::string>();
        if (j.contains("regressed"))
            for (Index k : j.at("regressed").get<std::vector<Index>>()) s.regressed.push_back(k - 1);
        s.level = covariate_level_from_string(json_get<std::string>(j, "covariate_level", "individual"));
        s.n = j.at("n").get<Index>();
        s.p = j.at("p").get<Index>();
        s.j = j.at("j").get<Index>();

        const auto& tj = j.at("times");
        const auto tk = tj.at("kind").get<std::string>();
        if (tk == "uniform") s.time_design = TimeDesign::uniform;
        else if (tk == "grid") s.time_design = TimeDesign::grid;
        else if (tk == "list") s.time_design = TimeDesign::list;
        else throw InputError("unknown time design '" + tk + "'");
        s.time_low = json_get(tj, "low", s.time_low);
        s.time_high = json_get(tj, "high", s.time_high);
        if (tj.contains("values")) s.times = tj.at("values").get<std::vector<double>>();

        const auto& cj = j.at("covariates");
        const auto ck = cj.at("kind").get<std::string>();
        if (ck == "uniform") s.covariate_design = CovariateDesign::uniform;
        else if (ck == "bernoulli") s.covariate_design = CovariateDesign::bernoulli;
        else throw InputError("unknown covariate design '" + ck + "'");
        s.covariate_low = json_get(cj, "low", s.covariate_low);
        s.covariate_high = json_get(cj, "high", s.covariate_high);
        s.covariate_prob = json_get(cj, "prob", s.covariate_prob);
        s.standardize = json_get(cj, "standardize", s.standardize);

        const auto def = s.definition();
        for (const auto& name : def.mean->constant_names()) {
            if (!j.contains("constants") || !j.at("constants").contains(name))
                throw InputError("scenario is missing constant '" + name + "'");
            s.constant_names.push_back(name);
            s.constant_values.push_back(j.at("constants").at(name).get<double>());
        }
        if (j.contains("censoring")) {
            s.censor_fraction = json_get(j.at("censoring"), "fraction", s.censor_fraction);
            s.censor_keep = json_get<Index>(j.at("censoring"), "keep", s.censor_keep);
        }
        s.truth = detail::parse_parameters(j.at("truth"), def, s.p);
        if (j.contains("init")) {
            s.init = detail::parse_parameters(j.at("init"), def, s.p);
            s.init_variance_scale = json_get(j.at("init"), "variance_scale", s.init_variance_scale);
        }
        s.replicates = json_get<Index>(j, "replicates", s.replicates);
        s.seed = json_get<std::uint64_t>(j, "seed", s.seed);
        s.method = json_get<std::string>(j, "method", s.method);

        if (j.contains("fit")) {
            const auto& f = j.at("fit");
            if (f.contains("penalized")) detail::parse_awpsg(f.at("penalized"), s.path.penalized);
            if (f.contains("refit")) detail::parse_awpsg(f.at("refit"), s.path.refit);
            s.path.mc_samples = json_get<Index>(f, "mc_samples", s.path.mc_samples);
            const auto mcm = json_get<std::string>(f, "mc_method", "prior");
            if (mcm == "prior") s.path.mc_method = McMethod::prior;
            else if (mcm == "importance") s.path.mc_method = McMethod::importance;
            else throw InputError("unknown mc_method '" + mcm + "'");
            s.path.is_pilot_steps = json_get<Index>(f, "is_pilot_steps", s.path.is_pilot_steps);
            s.path.mode_start = json_get(f, "mode_start", s.path.mode_start);
            s.path.max_support = json_get<Index>(f, "max_support", std::min<Index>(s.p, 50));
            s.path.pilot_fits = json_get<Index>(f, "pilot_fits", s.path.pilot_fits);
            s.path.pilot_k_max = json_get<Index>(f, "pilot_k_max", s.path.pilot_k_max);
            s.path.zero_tol = json_get(f, "zero_tol", s.path.zero_tol);
            s.grid_max = json_get(f, "grid_max", s.grid_max);
            s.grid_ratio = json_get(f, "grid_ratio", s.grid_ratio);
            s.grid_n = json_get<Index>(f, "grid_n", s.grid_n);
            s.path.restart_after_empty = json_get(f, "restart_after_empty", s.path.restart_after_empty);
            s.path.warm_start = json_get(f, "warm_start", s.path.warm_start);
            if (f.contains("sampler")) {
                const auto& sj = f.at("sampler");
                const auto kind = json_get<std::string>(sj, "kind", "automatic");
                if (kind == "automatic") s.path.sampler.kind = SamplerKind::automatic;
                else if (kind == "metropolis") s.path.sampler.kind = SamplerKind::metropolis;
                else if (kind == "direct") s.path.sampler.kind = SamplerKind::direct;
                else throw InputError("unknown sampler kind '" + kind + "'");
                s.path.sampler.adapt_target = json_get(sj, "adapt_target", s.path.sampler.adapt_target);
                s.path.sampler.adapt_window = json_get<Index>(sj, "adapt_window", s.path.sampler.adapt_window);
            }
        } else {
            s.path.max_support = std::min<Index>(s.p, 50);
        }
        if (j.contains("baseline")) {
            const auto& b = j.at("baseline");
            s.baseline.multistarts = json_get<Index>(b, "multistarts", s.baseline.multistarts);
            s.baseline.start_spread = json_get(b, "start_spread", s.baseline.start_spread);
            s.baseline.folds = json_get<Index>(b, "folds", s.baseline.folds);
            s.baseline.grid_n = json_get<Index>(b, "grid_n", s.baseline.grid_n);
            s.baseline.grid_ratio = json_get(b, "grid_ratio", s.baseline.grid_ratio);
        }
        s.validate();
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("malformed scenario: ") + e.what());
    }
}

inline Scenario load_scenario(const std::string& path)
{
    std::ifstream is(path);
    if (!is) throw InputError("cannot open scenario file " + path);
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw InputError("scenario " + path + " is not valid JSON: " + e.what());
    }
    return scenario_from_json(j);
}

/// Starting point for fits on data drawn from this scenario.
inline ParameterVector scenario_start(const Scenario& sc, const ModelDefinition& def, const Dataset& data)
{
    ParameterVector t = initial_theta(def, data, sc.init);
    t.gamma_sq *= sc.init_variance_scale;
    t.sigma_sq *= sc.init_variance_scale;
    return t;
}

} // namespace hdmix
