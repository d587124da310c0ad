#pragma once

#include "tkfa/bpfa.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <vector>

namespace tkfa {

/// K atoms in Kruskal form with multiplicative-gamma shrinkage on the
/// singular values.
struct KruskalDictionary {
    Dims dims;
    std::size_t rank = 1;
    std::vector<std::vector<Eigen::MatrixXd>> factors;  // [k][t], m_t x R
    Eigen::MatrixXd lambdas;                             // K x R
    Eigen::MatrixXd deltas;                              // K x R
    double alpha = 1e6;
    /// Shape of delta_k1; 0 means delta_k1 shares alpha with the others.
    double first_shape = 0.0;
    std::vector<std::vector<std::uint32_t>> coords;      // mode_coordinates(dims)

    std::size_t atom_count() const { return factors.size(); }
    std::size_t order() const { return dims.size(); }
    std::size_t atom_size() const { return element_count(dims); }

    /// tau_kr = prod_{i <= r} delta_ki, clamped to a finite ceiling.
    Eigen::MatrixXd taus() const;
    double tau(std::size_t k, std::size_t r) const;

    /// Component r of atom k: lambda_kr prod_t u^(kt)_{i_t r}, vectorized.
    Eigen::VectorXd component(std::size_t k, std::size_t r) const;
    Eigen::VectorXd compose(std::size_t k) const;
    Eigen::MatrixXd compose_all() const;

    /// K R (1 + sum_t m_t).
    std::size_t parameter_count() const;
};

inline constexpr double kTauCeiling = 1e300;

struct KfaOptions {
    std::size_t rank = 0;  // 0 selects rank_report(dims).default_model_rank
    double alpha0 = 1e6;
    double first_shape = 1.0;
    AlphaMode alpha_mode = AlphaMode::Map;
    double alpha_a = 1e6;
    double alpha_b = 1e-6;
};

struct KfaState {
    BpfaState bpfa;
    KruskalDictionary kd;
    AlphaMode alpha_mode = AlphaMode::Map;
    double alpha_a = 1e6;
    double alpha_b = 1e-6;
};

/// Random start: delta ~ Gam(alpha0, 1), u ~ N(0, 1/m_t), lambda ~ N(0, 1/tau),
/// weights and precisions as in bpfa_init.
KfaState kfa_init(const FactorData& data, std::size_t atoms, RngStream rng,
                  const KfaOptions& opts = {}, const Hyperparameters* hyper = nullptr);

/// Vectors over all atom entries i with d_ik = a_i u_{i_t} + b_i (factor form)
/// or d_ik = f_i lambda + g_i (singular-value form).
struct Reparam {
    Eigen::VectorXd coef;    // a or f
    Eigen::VectorXd offset;  // b or g
};

Reparam reparam_factor(const KruskalDictionary& kd, std::size_t k, std::size_t t,
                       std::size_t r);
Reparam reparam_lambda(const KruskalDictionary& kd, std::size_t k, std::size_t r);

/// Redraws u^(kt)_{.r} given Gaussian evidence on the composed atom: per-entry
/// precision gamma and unscaled mean mu. prior_precision is m_t for KFA.
void draw_factor_vector(KruskalDictionary& kd, std::size_t k, std::size_t t, std::size_t r,
                        const Eigen::VectorXd& gamma, const Eigen::VectorXd& mu,
                        double prior_precision, RngStream& rng);

/// Redraws lambda_kr with prior precision tau_kr under the same evidence.
void draw_lambda(KruskalDictionary& kd, std::size_t k, std::size_t r,
                 const Eigen::VectorXd& gamma, const Eigen::VectorXd& mu, RngStream& rng);

/// Same draws with the composed atom k kept in `atom` and updated in place;
/// the offset comes from the cache instead of the other components.
void draw_factor_vector(KruskalDictionary& kd, std::size_t k, std::size_t t, std::size_t r,
                        const Eigen::VectorXd& gamma, const Eigen::VectorXd& mu,
                        double prior_precision, RngStream& rng, Eigen::VectorXd& atom);
void draw_lambda(KruskalDictionary& kd, std::size_t k, std::size_t r,
                 const Eigen::VectorXd& gamma, const Eigen::VectorXd& mu, RngStream& rng,
                 Eigen::VectorXd& atom);

/// Evidence form of sample_factor_vector / sample_lambda with the stats of
/// update_atom_stats (data precision only; the factor priors replace P).
void sample_factor_vector(KfaState& state, std::size_t k, std::size_t t, std::size_t r,
                          const AtomStats& stats, RngStream& rng,
                          Eigen::VectorXd* atom = nullptr);
void sample_lambda(KfaState& state, std::size_t k, std::size_t r, const AtomStats& stats,
                   RngStream& rng, Eigen::VectorXd* atom = nullptr);

/// Prior shape of delta_ki: alpha, or first_shape for i = 0 when set.
double delta_shape(const KruskalDictionary& kd, std::size_t i);

/// (shape, rate) of delta_ki | rest, sequential form with tau excluding delta_ki.
std::pair<double, double> delta_conditional(const KruskalDictionary& kd, std::size_t k,
                                            std::size_t i);
void sample_delta(KruskalDictionary& kd, std::size_t k, std::size_t i, RngStream& rng);

/// MAP, posterior draw or no-op, per mode, over the deltas governed by alpha.
double update_alpha(KruskalDictionary& kd, AlphaMode mode, double a, double b,
                    RngStream& rng);

/// Writes the composed Kruskal atom k into the BPFA dictionary and residual.
void commit_atom(KfaState& state, const FactorData& data, std::size_t k);

/// One sweep: per atom, stats once, every factor vector and singular value,
/// recompose, then weights; then pi, precisions, deltas and alpha.
void kfa_sweep(KfaState& state, const FactorData& data, const SweepOptions& opts = {});

}  // namespace tkfa
