#include "tkfa/random.hpp"

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>
#include <boost/random/normal_distribution.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace tkfa {
namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    std::uint64_t s = a ^ (b * 0xd1342543de82ef95ULL + 0x632be59bd9b4e019ULL);
    return splitmix64(s);
}

constexpr std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
}

}  // namespace

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream_id)
    : seed_(seed), stream_id_(stream_id) {
    std::uint64_t state = mix(seed, stream_id);
    for (auto& w : s_) w = splitmix64(state);
}

RngStream::result_type RngStream::operator()() {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
}

double RngStream::uniform() {
    // 53 random mantissa bits, shifted by half an ulp so 0 is excluded.
    return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53;
}

RngStream RngStream::split(std::uint64_t child) const {
    return RngStream(seed_, mix(stream_id_ + 0x2545f4914f6cdd1dULL, child));
}

double draw_standard_normal(RngStream& rng) {
    boost::random::normal_distribution<double> n01;
    return n01(rng);
}

double draw_gaussian(double mean, double precision, RngStream& rng) {
    if (!(precision > 0.0))
        throw std::invalid_argument("draw_gaussian: precision must be positive, got " +
                                    std::to_string(precision));
    return mean + draw_standard_normal(rng) / std::sqrt(precision);
}

namespace {

// Marsaglia-Tsang for shape >= 1, unit rate.
double gamma_shape_ge_one(double shape, RngStream& rng) {
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x, v;
        do {
            x = draw_standard_normal(rng);
            v = 1.0 + c * x;
        } while (v <= 0.0);
        v = v * v * v;
        const double u = rng.uniform();
        if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
        if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
}

void check_gamma_args(double shape, double rate) {
    if (!(shape > 0.0) || !(rate > 0.0) || !std::isfinite(shape) || !std::isfinite(rate))
        throw std::invalid_argument("draw_gamma: shape and rate must be positive, got " +
                                    std::to_string(shape) + ", " + std::to_string(rate));
}

}  // namespace

double draw_gamma(double shape, double rate, RngStream& rng) {
    check_gamma_args(shape, rate);
    if (shape >= 1.0) return gamma_shape_ge_one(shape, rng) / rate;
    const double g = gamma_shape_ge_one(shape + 1.0, rng);
    return g * std::pow(rng.uniform(), 1.0 / shape) / rate;
}

double draw_log_gamma(double shape, RngStream& rng) {
    check_gamma_args(shape, 1.0);
    if (shape >= 1.0) return std::log(gamma_shape_ge_one(shape, rng));
    const double g = gamma_shape_ge_one(shape + 1.0, rng);
    return std::log(g) + std::log(rng.uniform()) / shape;
}

double draw_beta(double a, double b, RngStream& rng) {
    if (!(a > 0.0) || !(b > 0.0))
        throw std::invalid_argument("draw_beta: parameters must be positive");
    const double lx = draw_log_gamma(a, rng);
    const double ly = draw_log_gamma(b, rng);
    // x / (x + y) evaluated in log space.
    const double diff = ly - lx;
    if (diff > 0.0) {
        const double e = std::exp(-diff);
        return e / (1.0 + e);
    }
    return 1.0 / (1.0 + std::exp(diff));
}

int draw_bernoulli(double p, RngStream& rng) {
    if (!(p >= 0.0 && p <= 1.0))
        throw std::invalid_argument("draw_bernoulli: p outside [0,1]: " + std::to_string(p));
    if (p == 0.0) return 0;
    if (p == 1.0) return 1;
    return rng.uniform() < p ? 1 : 0;
}

double digamma(double x) { return boost::math::digamma(x); }
double trigamma(double x) { return boost::math::trigamma(x); }

double inverse_digamma(double y) {
    if (!std::isfinite(y))
        throw std::invalid_argument("inverse_digamma: non-finite argument");
    constexpr double euler = std::numbers::egamma;
    double x = y >= -2.22 ? std::exp(y) + 0.5 : -1.0 / (y + euler);
    for (int it = 0; it < 100; ++it) {
        const double f = digamma(x) - y;
        if (std::abs(f) < 1e-10) return x;
        double next = x - f / trigamma(x);
        // digamma is concave, so Newton can overshoot past zero from the right.
        x = next > 0.0 ? next : 0.5 * x;
    }
    if (std::abs(digamma(x) - y) < 1e-10) return x;
    throw std::runtime_error("inverse_digamma: no convergence for y = " + std::to_string(y));
}

void AlphaPosterior::validate() const {
    if (!(a > 0.0))
        throw std::invalid_argument("AlphaPosterior: a must be positive");
    if (!(b > -count))
        throw std::invalid_argument("AlphaPosterior: b must exceed -count");
    if (!std::isfinite(sum_log_delta))
        throw std::invalid_argument("AlphaPosterior: non-finite sum of log deltas");
}

double AlphaPosterior::log_density(double alpha) const {
    return (alpha - 1.0) * (std::log(a) + sum_log_delta) - (b + count) * std::lgamma(alpha);
}

double alpha_map(const AlphaPosterior& post) {
    post.validate();
    return inverse_digamma((std::log(post.a) + post.sum_log_delta) / (post.b + post.count));
}

namespace {

struct GridCdf {
    std::vector<double> nodes;
    std::vector<double> cdf;  // unnormalized, cdf.front() == 0
};

GridCdf tabulate(const AlphaPosterior& post, double lo, double hi, std::size_t n,
                 double log_ref) {
    GridCdf g;
    g.nodes.resize(n);
    g.cdf.assign(n, 0.0);
    const double step = std::log(hi / lo) / static_cast<double>(n - 1);
    std::vector<double> dens(n);
    for (std::size_t j = 0; j < n; ++j) {
        g.nodes[j] = lo * std::exp(step * static_cast<double>(j));
        dens[j] = std::exp(post.log_density(g.nodes[j]) - log_ref);
    }
    for (std::size_t j = 1; j < n; ++j)
        g.cdf[j] = g.cdf[j - 1] +
                   0.5 * (dens[j] + dens[j - 1]) * (g.nodes[j] - g.nodes[j - 1]);
    return g;
}

}  // namespace

double alpha_sample(const AlphaPosterior& post, RngStream& rng) {
    const double mode = alpha_map(post);
    const double log_ref = post.log_density(mode);
    const double sd = 1.0 / std::sqrt((post.b + post.count) * trigamma(mode));

    double lo = mode / 100.0;
    double hi = mode * 100.0;
    for (int attempt = 0; attempt < 2; ++attempt) {
        // Enough log-spaced nodes that the spacing near the mode resolves
        // the posterior width.
        const double ratio = std::log(hi / lo);
        const double per_node = std::log1p(sd / (4.0 * mode));
        std::size_t n = 4096;
        if (per_node > 0.0)
            n = std::clamp<std::size_t>(static_cast<std::size_t>(std::ceil(ratio / per_node)),
                                        4096, std::size_t{1} << 21);
        GridCdf core = tabulate(post, lo, hi, n, log_ref);
        const double left = tabulate(post, lo / 100.0, lo, 4096, log_ref).cdf.back();
        const double right = tabulate(post, hi, hi * 100.0, 4096, log_ref).cdf.back();
        const double total = core.cdf.back();
        if (!(total > 0.0) || !std::isfinite(total))
            throw std::runtime_error("alpha_sample: degenerate posterior tabulation");
        if (total / (total + left + right) >= 1.0 - 1e-6) {
            const double target = rng.uniform() * total;
            auto it = std::upper_bound(core.cdf.begin(), core.cdf.end(), target);
            std::size_t j = static_cast<std::size_t>(it - core.cdf.begin());
            j = std::clamp<std::size_t>(j, 1, n - 1);
            const double c0 = core.cdf[j - 1];
            const double c1 = core.cdf[j];
            const double frac = c1 > c0 ? (target - c0) / (c1 - c0) : 0.5;
            return core.nodes[j - 1] + frac * (core.nodes[j] - core.nodes[j - 1]);
        }
        lo /= 100.0;
        hi *= 100.0;
    }
    throw std::runtime_error("alpha_sample: grid does not capture posterior mass");
}

}  // namespace tkfa
