#include "tkfa/kfa.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace tkfa {
namespace {

constexpr std::uint64_t kAtomDrawStream = 1ULL << 62;
constexpr std::uint64_t kGlobalStream = 1ULL << 63;
constexpr std::uint64_t kShrinkStream = (1ULL << 63) | 1ULL;

void check_indices(const KruskalDictionary& kd, std::size_t k, std::size_t t, std::size_t r) {
    if (k >= kd.atom_count())
        throw std::out_of_range("atom index " + std::to_string(k) + " out of range");
    if (t >= kd.order())
        throw std::out_of_range("mode index " + std::to_string(t) + " out of range");
    if (r >= kd.rank)
        throw std::out_of_range("component index " + std::to_string(r) + " out of range");
}

// prod_t u^(kt)_{i_t r}, skipping mode `skip` (pass order() to skip none).
Eigen::VectorXd factor_product(const KruskalDictionary& kd, std::size_t k, std::size_t r,
                               std::size_t skip) {
    const auto ri = static_cast<Eigen::Index>(r);
    Eigen::VectorXd out = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(kd.atom_size()));
    for (std::size_t t = 0; t < kd.order(); ++t) {
        if (t == skip) continue;
        const auto& u = kd.factors[k][t];
        const auto& c = kd.coords[t];
        for (Eigen::Index i = 0; i < out.size(); ++i) out[i] *= u(c[static_cast<std::size_t>(i)], ri);
    }
    return out;
}

}  // namespace

Eigen::MatrixXd KruskalDictionary::taus() const {
    Eigen::MatrixXd t(deltas.rows(), deltas.cols());
    for (Eigen::Index k = 0; k < deltas.rows(); ++k) {
        double acc = 1.0;
        for (Eigen::Index r = 0; r < deltas.cols(); ++r) {
            acc = std::min(acc * deltas(k, r), kTauCeiling);
            t(k, r) = acc;
        }
    }
    return t;
}

double KruskalDictionary::tau(std::size_t k, std::size_t r) const {
    double acc = 1.0;
    for (std::size_t i = 0; i <= r; ++i)
        acc = std::min(acc * deltas(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(i)),
                       kTauCeiling);
    return acc;
}

Eigen::VectorXd KruskalDictionary::component(std::size_t k, std::size_t r) const {
    return lambdas(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(r)) *
           factor_product(*this, k, r, order());
}

Eigen::VectorXd KruskalDictionary::compose(std::size_t k) const {
    Eigen::VectorXd d = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(atom_size()));
    for (std::size_t r = 0; r < rank; ++r) d += component(k, r);
    return d;
}

Eigen::MatrixXd KruskalDictionary::compose_all() const {
    Eigen::MatrixXd d(static_cast<Eigen::Index>(atom_size()),
                      static_cast<Eigen::Index>(atom_count()));
    for (std::size_t k = 0; k < atom_count(); ++k) d.col(static_cast<Eigen::Index>(k)) = compose(k);
    return d;
}

std::size_t KruskalDictionary::parameter_count() const {
    std::size_t per = 1;
    for (auto m : dims) per += m;
    return atom_count() * rank * per;
}

KfaState kfa_init(const FactorData& data, std::size_t atoms, RngStream rng,
                  const KfaOptions& opts, const Hyperparameters* hyper) {
    const std::size_t rank =
        opts.rank > 0 ? opts.rank : rank_report(data.item_dims).default_model_rank;
    if (!(opts.alpha0 > 0.0)) throw std::invalid_argument("kfa_init: alpha0 must be positive");

    KfaState s;
    s.bpfa = bpfa_init(data, atoms, rng, hyper);
    s.alpha_mode = opts.alpha_mode;
    s.alpha_a = opts.alpha_a;
    s.alpha_b = opts.alpha_b;

    KruskalDictionary& kd = s.kd;
    kd.dims = data.item_dims;
    kd.rank = rank;
    kd.alpha = opts.alpha0;
    kd.first_shape = opts.first_shape;
    kd.coords = mode_coordinates(kd.dims);
    const auto kk = static_cast<Eigen::Index>(atoms);
    const auto rr = static_cast<Eigen::Index>(rank);
    kd.lambdas.resize(kk, rr);
    kd.deltas.resize(kk, rr);
    kd.factors.assign(atoms, {});

    RngStream init = rng.split(0xbeefULL);
    for (std::size_t k = 0; k < atoms; ++k) {
        for (std::size_t r = 0; r < rank; ++r)
            kd.deltas(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(r)) =
                draw_gamma(delta_shape(kd, r), 1.0, init);
        for (std::size_t t = 0; t < kd.order(); ++t) {
            const auto m = static_cast<Eigen::Index>(kd.dims[t]);
            Eigen::MatrixXd u(m, rr);
            for (Eigen::Index r = 0; r < rr; ++r)
                for (Eigen::Index i = 0; i < m; ++i)
                    u(i, r) = draw_gaussian(0.0, static_cast<double>(m), init);
            kd.factors[k].push_back(std::move(u));
        }
        for (std::size_t r = 0; r < rank; ++r)
            kd.lambdas(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(r)) =
                draw_gaussian(0.0, kd.tau(k, r), init);
    }
    s.bpfa.dict = kd.compose_all();
    s.bpfa.residual = recompute_residual(s.bpfa, data);
    sample_gamma_s(s.bpfa, init);
    sample_gamma_eps(s.bpfa, data, init);
    return s;
}

Reparam reparam_factor(const KruskalDictionary& kd, std::size_t k, std::size_t t,
                       std::size_t r) {
    check_indices(kd, k, t, r);
    Reparam p;
    p.coef = kd.lambdas(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(r)) *
             factor_product(kd, k, r, t);
    p.offset = Eigen::VectorXd::Zero(p.coef.size());
    for (std::size_t q = 0; q < kd.rank; ++q)
        if (q != r) p.offset += kd.component(k, q);
    return p;
}

Reparam reparam_lambda(const KruskalDictionary& kd, std::size_t k, std::size_t r) {
    check_indices(kd, k, 0, r);
    Reparam p;
    p.coef = factor_product(kd, k, r, kd.order());
    p.offset = Eigen::VectorXd::Zero(p.coef.size());
    for (std::size_t q = 0; q < kd.rank; ++q)
        if (q != r) p.offset += kd.component(k, q);
    return p;
}

namespace {

void draw_factor_core(KruskalDictionary& kd, std::size_t t, std::size_t r,
                      const Eigen::VectorXd& gamma, const Eigen::VectorXd& mu,
                      double prior_precision, RngStream& rng, const Eigen::VectorXd& coef,
                      const Eigen::VectorXd& offset, Eigen::MatrixXd& u) {
    const auto m = static_cast<Eigen::Index>(kd.dims[t]);
    Eigen::VectorXd prec = Eigen::VectorXd::Constant(m, prior_precision);
    Eigen::VectorXd num = Eigen::VectorXd::Zero(m);
    const auto& c = kd.coords[t];
    for (Eigen::Index i = 0; i < coef.size(); ++i) {
        const double a = coef[i];
        if (a == 0.0) continue;
        const auto j = static_cast<Eigen::Index>(c[static_cast<std::size_t>(i)]);
        prec[j] += gamma[i] * a * a;
        num[j] += (mu[i] - gamma[i] * offset[i]) * a;
    }
    for (Eigen::Index j = 0; j < m; ++j) {
        const double pr = std::max(prec[j], kPrecisionFloor);
        u(j, static_cast<Eigen::Index>(r)) = draw_gaussian(num[j] / pr, pr, rng);
    }
}

double draw_lambda_core(const KruskalDictionary& kd, std::size_t k, std::size_t r,
                        const Eigen::VectorXd& gamma, const Eigen::VectorXd& mu, RngStream& rng,
                        const Eigen::VectorXd& coef, const Eigen::VectorXd& offset) {
    double prec = kd.tau(k, r);
    double num = 0.0;
    for (Eigen::Index i = 0; i < coef.size(); ++i) {
        const double f = coef[i];
        if (f == 0.0) continue;
        prec += gamma[i] * f * f;
        num += (mu[i] - gamma[i] * offset[i]) * f;
    }
    prec = std::clamp(prec, kPrecisionFloor, kTauCeiling);
    return draw_gaussian(num / prec, prec, rng);
}

}  // namespace

void draw_factor_vector(KruskalDictionary& kd, std::size_t k, std::size_t t, std::size_t r,
                        const Eigen::VectorXd& gamma, const Eigen::VectorXd& mu,
                        double prior_precision, RngStream& rng) {
    const Reparam p = reparam_factor(kd, k, t, r);
    draw_factor_core(kd, t, r, gamma, mu, prior_precision, rng, p.coef, p.offset,
                     kd.factors[k][t]);
}

void draw_factor_vector(KruskalDictionary& kd, std::size_t k, std::size_t t, std::size_t r,
                        const Eigen::VectorXd& gamma, const Eigen::VectorXd& mu,
                        double prior_precision, RngStream& rng, Eigen::VectorXd& atom) {
    check_indices(kd, k, t, r);
    const Eigen::VectorXd coef =
        kd.lambdas(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(r)) *
        factor_product(kd, k, r, t);
    auto& u = kd.factors[k][t];
    const auto& c = kd.coords[t];
    const auto ri = static_cast<Eigen::Index>(r);
    Eigen::VectorXd offset = atom;
    for (Eigen::Index i = 0; i < coef.size(); ++i)
        offset[i] -= coef[i] * u(c[static_cast<std::size_t>(i)], ri);
    draw_factor_core(kd, t, r, gamma, mu, prior_precision, rng, coef, offset, u);
    for (Eigen::Index i = 0; i < coef.size(); ++i)
        atom[i] = offset[i] + coef[i] * u(c[static_cast<std::size_t>(i)], ri);
}

void draw_lambda(KruskalDictionary& kd, std::size_t k, std::size_t r,
                 const Eigen::VectorXd& gamma, const Eigen::VectorXd& mu, RngStream& rng) {
    const Reparam p = reparam_lambda(kd, k, r);
    kd.lambdas(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(r)) =
        draw_lambda_core(kd, k, r, gamma, mu, rng, p.coef, p.offset);
}

void draw_lambda(KruskalDictionary& kd, std::size_t k, std::size_t r,
                 const Eigen::VectorXd& gamma, const Eigen::VectorXd& mu, RngStream& rng,
                 Eigen::VectorXd& atom) {
    check_indices(kd, k, 0, r);
    const Eigen::VectorXd coef = factor_product(kd, k, r, kd.order());
    double& l = kd.lambdas(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(r));
    const Eigen::VectorXd offset = atom - l * coef;
    l = draw_lambda_core(kd, k, r, gamma, mu, rng, coef, offset);
    atom = offset + l * coef;
}

void sample_factor_vector(KfaState& state, std::size_t k, std::size_t t, std::size_t r,
                          const AtomStats& stats, RngStream& rng, Eigen::VectorXd* atom) {
    check_indices(state.kd, k, t, r);
    const double prior = static_cast<double>(state.kd.dims[t]);
    if (atom)
        draw_factor_vector(state.kd, k, t, r, stats.data_precision, stats.mean, prior, rng, *atom);
    else
        draw_factor_vector(state.kd, k, t, r, stats.data_precision, stats.mean, prior, rng);
}

void sample_lambda(KfaState& state, std::size_t k, std::size_t r, const AtomStats& stats,
                   RngStream& rng, Eigen::VectorXd* atom) {
    if (atom)
        draw_lambda(state.kd, k, r, stats.data_precision, stats.mean, rng, *atom);
    else
        draw_lambda(state.kd, k, r, stats.data_precision, stats.mean, rng);
}

double delta_shape(const KruskalDictionary& kd, std::size_t i) {
    return i == 0 && kd.first_shape > 0.0 ? kd.first_shape : kd.alpha;
}

std::pair<double, double> delta_conditional(const KruskalDictionary& kd, std::size_t k,
                                            std::size_t i) {
    check_indices(kd, k, 0, i);
    const auto kk = static_cast<Eigen::Index>(k);
    const double shape = delta_shape(kd, i) + 0.5 * static_cast<double>(kd.rank - i);
    double rate = 1.0;
    double partial = 1.0;  // prod_{j <= r, j != i} delta_kj
    for (std::size_t r = 0; r < kd.rank; ++r) {
        if (r != i) partial = std::min(partial * kd.deltas(kk, static_cast<Eigen::Index>(r)),
                                       kTauCeiling);
        if (r < i) continue;
        const double l = kd.lambdas(kk, static_cast<Eigen::Index>(r));
        if (l != 0.0) rate += 0.5 * partial * l * l;
    }
    return {shape, std::min(rate, kTauCeiling)};
}

void sample_delta(KruskalDictionary& kd, std::size_t k, std::size_t i, RngStream& rng) {
    const auto [shape, rate] = delta_conditional(kd, k, i);
    kd.deltas(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(i)) =
        std::clamp(draw_gamma(shape, rate, rng), 1e-300, kTauCeiling);
}

double update_alpha(KruskalDictionary& kd, AlphaMode mode, double a, double b,
                    RngStream& rng) {
    const Eigen::Index skip = kd.first_shape > 0.0 ? 1 : 0;
    const Eigen::Index cols = kd.deltas.cols() - skip;
    if (mode == AlphaMode::Fixed || cols <= 0) return kd.alpha;
    AlphaPosterior post;
    post.a = a;
    post.b = b;
    post.count = static_cast<double>(kd.deltas.rows() * cols);
    post.sum_log_delta = kd.deltas.rightCols(cols).array().log().sum();
    kd.alpha = mode == AlphaMode::Map ? alpha_map(post) : alpha_sample(post, rng);
    return kd.alpha;
}

void commit_atom(KfaState& state, const FactorData& data, std::size_t k) {
    set_atom(state.bpfa, data, k, state.kd.compose(k));
}

void kfa_sweep(KfaState& state, const FactorData& data, const SweepOptions& opts) {
    BpfaState& b = state.bpfa;
    KruskalDictionary& kd = state.kd;
    const RngStream sweep_stream = b.rng.split(b.sweeps);
    for (std::size_t k = 0; k < kd.atom_count(); ++k) {
        const RngStream atom_stream = sweep_stream.split(k);
        if (opts.update_dictionary) {
            RngStream draw = atom_stream.split(kAtomDrawStream);
            const AtomStats st = update_atom_stats(b, data, k, opts.carried);
            Eigen::VectorXd atom = kd.compose(k);
            for (std::size_t t = 0; t < kd.order(); ++t)
                for (std::size_t r = 0; r < kd.rank; ++r)
                    sample_factor_vector(state, k, t, r, st, draw, &atom);
            for (std::size_t r = 0; r < kd.rank; ++r) sample_lambda(state, k, r, st, draw, &atom);
            commit_atom(state, data, k);
        }
        if (opts.update_weights) update_weights_for_atom(b, data, k, atom_stream, opts.threads);
    }
    if (opts.update_hyperparameters) {
        RngStream g = sweep_stream.split(kGlobalStream);
        update_global_weights_params(b, data, g, opts.carried);
    }
    if (opts.update_dictionary) {
        RngStream g = sweep_stream.split(kShrinkStream);
        for (std::size_t k = 0; k < kd.atom_count(); ++k)
            for (std::size_t i = 0; i < kd.rank; ++i) sample_delta(kd, k, i, g);
        update_alpha(kd, state.alpha_mode, state.alpha_a, state.alpha_b, g);
    }
    ++b.sweeps;
}

}  // namespace tkfa
