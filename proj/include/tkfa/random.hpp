#pragma once

#include <cstdint>
#include <limits>

namespace tkfa {

/// Seeded, splittable random stream (xoshiro256** core, SplitMix64 seeding).
/// Identical (seed, stream_id) pairs replay identical sequences; children
/// created with split() are independent of the parent and of each other.
class RngStream {
public:
    using result_type = std::uint64_t;

    explicit RngStream(std::uint64_t seed = 0, std::uint64_t stream_id = 0);

    result_type operator()();
    static constexpr result_type min() { return 0; }
    static constexpr result_type max() {
        return std::numeric_limits<result_type>::max();
    }

    /// Uniform on the open interval (0, 1).
    double uniform();

    /// Child stream keyed by (seed, stream_id, child). Does not advance *this.
    RngStream split(std::uint64_t child) const;

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream_id() const { return stream_id_; }

    bool operator==(const RngStream&) const = default;

private:
    std::uint64_t seed_;
    std::uint64_t stream_id_;
    std::uint64_t s_[4];
};

/// N(mean, 1/precision).
double draw_gaussian(double mean, double precision, RngStream& rng);
double draw_standard_normal(RngStream& rng);

/// Gamma with shape/rate parameterization. Valid for any shape > 0; shapes
/// below one use the shape+1 draw scaled by U^{1/shape}.
double draw_gamma(double shape, double rate, RngStream& rng);

/// log of a Gamma(shape, 1) draw; stays finite where the draw underflows.
double draw_log_gamma(double shape, RngStream& rng);

double draw_beta(double a, double b, RngStream& rng);

int draw_bernoulli(double p, RngStream& rng);

double digamma(double x);
double trigamma(double x);

/// x with |digamma(x) - y| < 1e-10, by Newton iteration.
double inverse_digamma(double y);

/// Conjugate-form posterior of the MGP shape parameter given the deltas:
/// p(alpha | delta) ~ (a prod delta)^(alpha-1) Gamma(alpha)^(-b-count).
struct AlphaPosterior {
    double a = 1e6;
    double b = 1e-6;
    double sum_log_delta = 0.0;
    double count = 0.0;

    void validate() const;
    double log_density(double alpha) const;
};

enum class AlphaMode { Map, Sample, Fixed };

double alpha_map(const AlphaPosterior& post);

/// Inverse-CDF draw from the alpha posterior using a trapezoid-rule CDF on a
/// log-spaced grid around the MAP.
double alpha_sample(const AlphaPosterior& post, RngStream& rng);

}  // namespace tkfa
