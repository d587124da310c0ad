#pragma once

#include "tkfa/bpfa.hpp"
#include "tkfa/kfa.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <span>
#include <utility>

namespace tkfa {

struct MgpcpOptions {
    std::size_t sweeps = 3000;
    std::size_t burnin = 0;  // 0 selects sweeps / 2
    double alpha0 = 1e6;
    double first_shape = 1.0;
    AlphaMode alpha_mode = AlphaMode::Map;
    double alpha_a = 1e6;
    double alpha_b = 1.0;  // prior mode near alpha_a with unit weight
    bool learn_omega = true;
    double omega_shape = 1e-6;
    double omega_rate = 1e-6;
    double noise_shape = 1e-6;
    double noise_rate = 1e-6;
    double threshold = 1e-6;
};

/// Single-tensor CP model with per-column factor precisions omega (R x T).
struct MgpcpState {
    KruskalDictionary kd;  // one atom
    Eigen::MatrixXd omega;
    double tau_eps = 1.0;
    Eigen::VectorXd x;     // unobserved entries hold 0
    Eigen::VectorXd mask;
    std::size_t observed = 0;
    RngStream rng;
    std::uint64_t sweeps = 0;
};

struct MgpcpResult {
    MgpcpState state;
    Eigen::VectorXd mean_singular_value;  // posterior mean of |lambda_r| prod_t ||u_r^(t)||
    double noise_floor = 0.0;             // posterior mean of tau_eps^{-1/2} sum_t sqrt(m_t)
    DenseTensor reconstruction;           // posterior mean
    std::size_t rank_estimate = 0;
    std::size_t kept_samples = 0;
};

MgpcpState mgpcp_init(const DenseTensor& x, std::size_t rank, const ObservationMask* mask,
                      RngStream rng, const MgpcpOptions& opts = {});

/// (shape, rate) and draw of the column precision omega_rt.
std::pair<double, double> omega_conditional(const MgpcpState& s, std::size_t r, std::size_t t,
                                            const MgpcpOptions& opts);
void sample_omega(MgpcpState& s, std::size_t r, std::size_t t, const MgpcpOptions& opts,
                  RngStream& rng);

/// (shape, rate) and draw of the noise precision given the composed tensor.
std::pair<double, double> tau_eps_conditional(const MgpcpState& s, const Eigen::VectorXd& atom,
                                              const MgpcpOptions& opts);
void sample_tau_eps(MgpcpState& s, const Eigen::VectorXd& atom, const MgpcpOptions& opts,
                    RngStream& rng);

/// Factors, singular values, factor precisions, noise precision, deltas, alpha.
void mgpcp_sweep(MgpcpState& state, const MgpcpOptions& opts = {});

/// |lambda_r| times the factor column norms: the scale-free size of each component.
Eigen::VectorXd singular_values(const KruskalDictionary& kd);

/// Rank estimate counts posterior-mean singular values above both the
/// threshold and the noise floor.
MgpcpResult mgpcp_fit(const DenseTensor& x, std::size_t rank, const ObservationMask* mask,
                      RngStream rng, const MgpcpOptions& opts = {});

/// Posterior-mean reconstruction at one entry.
double mgpcp_predict(const MgpcpResult& result, std::span<const std::size_t> index);

}  // namespace tkfa
