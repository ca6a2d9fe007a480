#pragma once
#include <Eigen/Dense>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace hdmix {

using Index = Eigen::Index;
using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Raised when the model cannot be evaluated at the requested point.
struct DomainError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Raised when an iterative procedure fails (divergence, underflow, singular system).
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Raised on malformed user input (files, configs, dimensions).
struct InputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using Engine = std::mt19937_64;

/**
 * Builds an engine from a root seed and a path of stream keys.
 * Distinct paths give statistically independent streams; the mapping is fixed,
 * so results never depend on how work is scheduled.
 */
inline Engine make_engine(std::uint64_t seed, std::initializer_list<std::uint64_t> path)
{
    std::vector<std::uint32_t> words;
    words.reserve(2 * (path.size() + 1));
    auto push = [&](std::uint64_t w) {
        words.push_back(static_cast<std::uint32_t>(w & 0xffffffffu));
        words.push_back(static_cast<std::uint32_t>(w >> 32));
    };
    push(seed);
    for (auto w : path) push(w);
    std::seed_seq seq(words.begin(), words.end());
    return Engine(seq);
}

inline double std_normal(Engine& rng)
{
    std::normal_distribution<double> nd(0.0, 1.0);
    return nd(rng);
}

inline double uniform01(Engine& rng)
{
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    return ud(rng);
}

// One engine per individual, so per-individual work is order independent.
class Streams
{
public:
    Streams() = default;
    Streams(std::uint64_t seed, std::uint64_t tag, Index n)
    {
        engines_.reserve(static_cast<std::size_t>(n));
        for (Index i = 0; i < n; ++i)
            engines_.push_back(make_engine(seed, {tag, static_cast<std::uint64_t>(i)}));
    }

    Engine& operator[](Index i) { return engines_[static_cast<std::size_t>(i)]; }
    Index size() const { return static_cast<Index>(engines_.size()); }

private:
    std::vector<Engine> engines_;
};

// Stream tags, kept in one place so no two purposes collide.
namespace stream_tag {
inline constexpr std::uint64_t sampler = 1;
inline constexpr std::uint64_t mc_loglik = 2;
inline constexpr std::uint64_t simulate = 3;
inline constexpr std::uint64_t init = 4;
inline constexpr std::uint64_t cv_folds = 5;
inline constexpr std::uint64_t multistart = 6;
inline constexpr std::uint64_t design = 7;
inline constexpr std::uint64_t replicate = 8;
inline constexpr std::uint64_t fit = 9;
inline constexpr std::uint64_t baseline = 10;
} // namespace stream_tag

inline double log_sum_exp(const Vec& x)
{
    const double mx = x.maxCoeff();
    if (!std::isfinite(mx)) return mx;
    return mx + std::log((x.array() - mx).exp().sum());
}

} // namespace hdmix

namespace hdmix {

// A 64-bit seed derived from a root seed and a key path (same mixing as make_engine).
inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> path)
{
    Engine e = make_engine(seed, path);
    return e();
}

} // namespace hdmix
