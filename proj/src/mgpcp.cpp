#include "tkfa/mgpcp.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tkfa {

MgpcpState mgpcp_init(const DenseTensor& x, std::size_t rank, const ObservationMask* mask,
                      RngStream rng, const MgpcpOptions& opts) {
    if (rank < 1) throw std::invalid_argument("mgpcp: rank must be at least 1");
    if (x.size() == 0) throw std::invalid_argument("mgpcp: empty tensor");
    if (mask && mask->dims != x.dims())
        throw std::invalid_argument("mgpcp: mask dims differ from tensor dims");

    MgpcpState s;
    s.rng = rng;
    const auto p = static_cast<Eigen::Index>(x.size());
    s.x = Eigen::VectorXd::Zero(p);
    s.mask = Eigen::VectorXd::Zero(p);
    for (Eigen::Index i = 0; i < p; ++i) {
        const auto li = static_cast<std::size_t>(i);
        if (mask && !mask->observed[li]) continue;
        if (!std::isfinite(x[li])) throw std::invalid_argument("mgpcp: non-finite observed entry");
        s.x[i] = x[li];
        s.mask[i] = 1.0;
        ++s.observed;
    }

    KruskalDictionary& kd = s.kd;
    kd.dims = x.dims();
    kd.rank = rank;
    kd.alpha = opts.alpha0;
    kd.first_shape = opts.first_shape;
    kd.coords = mode_coordinates(kd.dims);
    const auto rr = static_cast<Eigen::Index>(rank);
    kd.lambdas.resize(1, rr);
    kd.deltas.resize(1, rr);
    kd.factors.assign(1, {});
    s.omega.resize(rr, static_cast<Eigen::Index>(kd.order()));

    RngStream init = rng.split(0xc0ffeeULL);
    for (Eigen::Index r = 0; r < rr; ++r)
        kd.deltas(0, r) = draw_gamma(delta_shape(kd, static_cast<std::size_t>(r)), 1.0, init);
    for (std::size_t t = 0; t < kd.order(); ++t) {
        const auto m = static_cast<Eigen::Index>(kd.dims[t]);
        Eigen::MatrixXd u(m, rr);
        for (Eigen::Index r = 0; r < rr; ++r) {
            s.omega(r, static_cast<Eigen::Index>(t)) = static_cast<double>(m);
            for (Eigen::Index i = 0; i < m; ++i)
                u(i, r) = draw_gaussian(0.0, static_cast<double>(m), init);
        }
        kd.factors[0].push_back(std::move(u));
    }
    for (std::size_t r = 0; r < rank; ++r)
        kd.lambdas(0, static_cast<Eigen::Index>(r)) = draw_gaussian(0.0, kd.tau(0, r), init);

    const Eigen::VectorXd resid = (s.x - kd.compose(0)).cwiseProduct(s.mask);
    s.tau_eps = std::max(draw_gamma(opts.noise_shape + 0.5 * static_cast<double>(s.observed),
                                    opts.noise_rate + 0.5 * resid.squaredNorm(), init),
                         kPrecisionFloor);
    return s;
}

std::pair<double, double> omega_conditional(const MgpcpState& s, std::size_t r, std::size_t t,
                                            const MgpcpOptions& opts) {
    const auto& u = s.kd.factors.at(0).at(t);
    return {opts.omega_shape + 0.5 * static_cast<double>(s.kd.dims[t]),
            opts.omega_rate + 0.5 * u.col(static_cast<Eigen::Index>(r)).squaredNorm()};
}

void sample_omega(MgpcpState& s, std::size_t r, std::size_t t, const MgpcpOptions& opts,
                  RngStream& rng) {
    const auto [shape, rate] = omega_conditional(s, r, t, opts);
    s.omega(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(t)) =
        std::max(draw_gamma(shape, rate, rng), kPrecisionFloor);
}

std::pair<double, double> tau_eps_conditional(const MgpcpState& s, const Eigen::VectorXd& atom,
                                              const MgpcpOptions& opts) {
    const Eigen::VectorXd resid = (s.x - atom).cwiseProduct(s.mask);
    return {opts.noise_shape + 0.5 * static_cast<double>(s.observed),
            opts.noise_rate + 0.5 * resid.squaredNorm()};
}

void sample_tau_eps(MgpcpState& s, const Eigen::VectorXd& atom, const MgpcpOptions& opts,
                    RngStream& rng) {
    const auto [shape, rate] = tau_eps_conditional(s, atom, opts);
    s.tau_eps = std::max(draw_gamma(shape, rate, rng), kPrecisionFloor);
}

void mgpcp_sweep(MgpcpState& s, const MgpcpOptions& opts) {
    KruskalDictionary& kd = s.kd;
    RngStream rng = s.rng.split(s.sweeps);
    const Eigen::VectorXd gamma = s.tau_eps * s.mask;
    const Eigen::VectorXd mu = s.tau_eps * s.x;

    Eigen::VectorXd atom = kd.compose(0);
    for (std::size_t r = 0; r < kd.rank; ++r) {
        const auto ri = static_cast<Eigen::Index>(r);
        for (std::size_t t = 0; t < kd.order(); ++t)
            draw_factor_vector(kd, 0, t, r, gamma, mu, s.omega(ri, static_cast<Eigen::Index>(t)),
                               rng, atom);
        draw_lambda(kd, 0, r, gamma, mu, rng, atom);
    }
    for (std::size_t r = 0; r < kd.rank && opts.learn_omega; ++r)
        for (std::size_t t = 0; t < kd.order(); ++t) sample_omega(s, r, t, opts, rng);
    sample_tau_eps(s, atom, opts, rng);
    for (std::size_t i = 0; i < kd.rank; ++i) sample_delta(kd, 0, i, rng);
    update_alpha(kd, opts.alpha_mode, opts.alpha_a, opts.alpha_b, rng);
    ++s.sweeps;
}

Eigen::VectorXd singular_values(const KruskalDictionary& kd) {
    Eigen::VectorXd sv = kd.lambdas.row(0).cwiseAbs().transpose();
    for (const auto& u : kd.factors.at(0)) sv.array() *= u.colwise().norm().transpose().array();
    return sv;
}

MgpcpResult mgpcp_fit(const DenseTensor& x, std::size_t rank, const ObservationMask* mask,
                      RngStream rng, const MgpcpOptions& opts) {
    if (opts.sweeps < 1) throw std::invalid_argument("mgpcp: need at least one sweep");
    const std::size_t burnin = opts.burnin > 0 ? std::min(opts.burnin, opts.sweeps - 1)
                                               : opts.sweeps / 2;
    MgpcpResult res;
    res.state = mgpcp_init(x, rank, mask, rng, opts);
    const auto rr = static_cast<Eigen::Index>(rank);
    res.mean_singular_value = Eigen::VectorXd::Zero(rr);
    Eigen::VectorXd recon = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(x.size()));
    double spread = 0.0;
    for (std::size_t m : x.dims()) spread += std::sqrt(static_cast<double>(m));
    for (std::size_t it = 0; it < opts.sweeps; ++it) {
        mgpcp_sweep(res.state, opts);
        if (it < burnin) continue;
        res.mean_singular_value += singular_values(res.state.kd);
        res.noise_floor += spread / std::sqrt(res.state.tau_eps);
        recon += res.state.kd.compose(0);
        ++res.kept_samples;
    }
    const double n = static_cast<double>(res.kept_samples);
    res.mean_singular_value /= n;
    res.noise_floor /= n;
    recon /= n;
    res.reconstruction = DenseTensor(x.dims(), std::vector<double>(recon.data(), recon.data() + recon.size()));
    res.rank_estimate = static_cast<std::size_t>(
        (res.mean_singular_value.array() > std::max(opts.threshold, res.noise_floor)).count());
    return res;
}

double mgpcp_predict(const MgpcpResult& result, std::span<const std::size_t> index) {
    return result.reconstruction.at(index);
}

}  // namespace tkfa
