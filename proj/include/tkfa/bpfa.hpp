#pragma once

#include "tkfa/random.hpp"
#include "tkfa/tensor.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace tkfa {

using ByteMatrix = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

/// Per-entry observation indicator for a tensor (1 = observed).
struct ObservationMask {
    Dims dims;
    std::vector<std::uint8_t> observed;

    static ObservationMask all_observed(Dims dims);
    std::size_t observed_count() const;
};

/// A stack of N data items of P entries each, vectorized column-wise.
/// Unobserved entries are stored as zero and are never read from the source.
struct FactorData {
    Dims item_dims;
    Eigen::MatrixXd x;     // P x N
    Eigen::MatrixXd mask;  // P x N, entries in {0, 1}
    std::size_t observed = 0;
    bool fully_observed = true;

    /// stack has dims (m_1..m_T, N); mask, when given, has the same dims.
    static FactorData from_stack(const DenseTensor& stack,
                                 const ObservationMask* mask = nullptr);
    /// The listed columns of another data set, in order.
    static FactorData columns(const FactorData& src, std::span<const std::size_t> items);

    std::size_t item_size() const { return static_cast<std::size_t>(x.rows()); }
    std::size_t item_count() const { return static_cast<std::size_t>(x.cols()); }
};

/// Effective weights are s o z.
struct SparseWeights {
    Eigen::MatrixXd s;  // K x N
    ByteMatrix z;       // K x N
    Eigen::VectorXd pi; // K

    Eigen::MatrixXd effective() const { return s.cwiseProduct(z.cast<double>()); }
};

struct NoisePrecisions {
    double gamma_eps = 1.0;
    double gamma_s = 1.0;
};

/// Beta prior for pi_k is Beta(a_pi/K, b_pi (K-1)/K); gamma_eps ~ Gam(c, d),
/// gamma_s ~ Gam(e, f) in shape/rate form.
struct Hyperparameters {
    double a_pi = 1.0;
    double b_pi = 1.0;
    double c = 1e-6;
    double d = 1e-6;
    double e = 1e-6;
    double f = 1e-6;

    static Hyperparameters defaults(std::size_t atoms);
};

/// Statistics carried between minibatches and used as additional prior
/// parameters (all zero means "plain prior").
struct CarriedStats {
    Eigen::MatrixXd atom_precision;  // P x K
    Eigen::MatrixXd atom_mean;       // P x K
    Eigen::VectorXd pi_a;            // K
    Eigen::VectorXd pi_b;            // K
    double gamma_s_shape = 0.0;
    double gamma_s_rate = 0.0;
    double gamma_eps_shape = 0.0;
    double gamma_eps_rate = 0.0;
    std::size_t items = 0;

    static CarriedStats zeros(std::size_t p, std::size_t k);
    CarriedStats& operator+=(const CarriedStats& other);
    bool operator==(const CarriedStats&) const = default;
};

/// Conjugate statistics for atom k: likelihood precision gamma^{D_k} and
/// unscaled mean mu^{D_k}, plus the isotropic prior precision.
struct AtomStats {
    Eigen::VectorXd data_precision;
    Eigen::VectorXd mean;
    double prior_precision = 0.0;

    Eigen::VectorXd precision() const {
        return data_precision.array() + prior_precision;
    }
};

struct BpfaState {
    Dims atom_dims;
    Eigen::MatrixXd dict;      // P x K, vectorized atoms
    SparseWeights weights;
    NoisePrecisions noise;
    Hyperparameters hyper;
    Eigen::MatrixXd residual;  // P x N, X - D (S o Z) on observed entries, 0 elsewhere
    RngStream rng;
    std::uint64_t sweeps = 0;

    std::size_t item_size() const { return static_cast<std::size_t>(dict.rows()); }
    std::size_t atom_count() const { return static_cast<std::size_t>(dict.cols()); }
    std::size_t item_count() const { return static_cast<std::size_t>(residual.cols()); }
};

struct SweepOptions {
    bool update_dictionary = true;
    bool update_weights = true;
    bool update_hyperparameters = true;
    const CarriedStats* carried = nullptr;
    unsigned threads = 1;
};

/// Random initialization: atoms N(0, P^-1 I), s ~ N(0,1), z ~ Bern(1/2),
/// pi = 1/2, then the precisions from their conditionals given that draw.
BpfaState bpfa_init(const FactorData& data, std::size_t atoms, RngStream rng,
                    const Hyperparameters* hyper = nullptr);

/// X - D (S o Z) recomputed from scratch on observed entries.
Eigen::MatrixXd recompute_residual(const BpfaState& state, const FactorData& data);

AtomStats update_atom_stats(const BpfaState& state, const FactorData& data,
                            std::size_t k, const CarriedStats* carried = nullptr);

/// Replaces atom k with a draw from its conjugate posterior and updates the
/// residual cache.
void sample_atom(BpfaState& state, const FactorData& data, std::size_t k,
                 const AtomStats& stats, RngStream& rng);

/// Writes atom k and keeps the residual cache consistent.
void set_atom(BpfaState& state, const FactorData& data, std::size_t k,
              const Eigen::VectorXd& atom);

/// Conditional quantities for weight (k, n): masked d'd and d' x~^{\k}.
struct WeightContext {
    double dd = 0.0;
    double dx = 0.0;
};

WeightContext weight_context(const BpfaState& state, const FactorData& data,
                             std::size_t k, std::size_t n);

/// Posterior moments of s_kn: precision gamma_s + gamma_eps z d'd and mean
/// gamma_eps z d'x~ / precision.
struct GaussianMoments {
    double mean = 0.0;
    double precision = 1.0;
};
GaussianMoments s_conditional(int z, const WeightContext& ctx, const NoisePrecisions& noise);

/// P(z_kn = 1 | rest) = p1 / (p0 + p1),
/// p1 = pi exp(-gamma_eps/2 (s^2 d'd - 2 s d'x~)), p0 = 1 - pi.
double z_conditional(double pi, double s, const WeightContext& ctx, double gamma_eps);

double sample_s(BpfaState& state, const FactorData& data, std::size_t k,
                std::size_t n, RngStream& rng);
int sample_z(BpfaState& state, const FactorData& data, std::size_t k,
             std::size_t n, RngStream& rng);

/// Shape parameters of the pi_k conditional.
std::pair<double, double> pi_conditional(const BpfaState& state, std::size_t k,
                                         const CarriedStats* carried = nullptr);
double sample_pi(BpfaState& state, std::size_t k, RngStream& rng,
                 const CarriedStats* carried = nullptr);

/// (shape, rate) of the precision conditionals.
std::pair<double, double> gamma_eps_conditional(const BpfaState& state, const FactorData& data,
                                                const CarriedStats* carried = nullptr);
std::pair<double, double> gamma_s_conditional(const BpfaState& state,
                                              const CarriedStats* carried = nullptr);
double sample_gamma_eps(BpfaState& state, const FactorData& data, RngStream& rng,
                        const CarriedStats* carried = nullptr);
double sample_gamma_s(BpfaState& state, RngStream& rng,
                      const CarriedStats* carried = nullptr);

/// Redraws (z_kn, s_kn) for every item, in parallel over fixed item blocks
/// so the result does not depend on the thread count.
void update_weights_for_atom(BpfaState& state, const FactorData& data, std::size_t k,
                             const RngStream& atom_stream, unsigned threads);

/// pi, gamma_eps, gamma_s.
void update_global_weights_params(BpfaState& state, const FactorData& data,
                                  RngStream& rng, const CarriedStats* carried);

/// Statistics of the current state that a minibatch contributes to the
/// carried prior: per-atom stats, usage counts, weight and residual energy.
CarriedStats batch_statistics(const BpfaState& state, const FactorData& data);

/// One Gibbs sweep: per atom, the atom then its weights; then pi and the
/// precisions.
void bpfa_sweep(BpfaState& state, const FactorData& data, const SweepOptions& opts = {});

/// D (S o Z) for the current sample, one column per item.
Eigen::MatrixXd reconstruct_items(const BpfaState& state);

inline constexpr double kPrecisionFloor = 1e-12;

}  // namespace tkfa
