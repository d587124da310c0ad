#include "tkfa/bpfa.hpp"

#include "tkfa/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <stdexcept>
#include <string>

namespace tkfa {

unsigned resolve_threads(unsigned requested) {
    if (requested > 0) return requested;
    if (const char* env = std::getenv("TKFA_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v > 0) return static_cast<unsigned>(v);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

ObservationMask ObservationMask::all_observed(Dims dims) {
    ObservationMask m;
    m.observed.assign(element_count(dims), 1);
    m.dims = std::move(dims);
    return m;
}

std::size_t ObservationMask::observed_count() const {
    return static_cast<std::size_t>(std::count(observed.begin(), observed.end(), 1));
}

FactorData FactorData::from_stack(const DenseTensor& stack, const ObservationMask* mask) {
    if (stack.order() < 2)
        throw std::invalid_argument("FactorData: stack needs an item axis and at least one data axis");
    if (stack.size() == 0) throw std::invalid_argument("FactorData: empty data");
    if (mask && mask->dims != stack.dims())
        throw std::invalid_argument("FactorData: mask dims differ from data dims");

    FactorData out;
    out.item_dims.assign(stack.dims().begin(), stack.dims().end() - 1);
    const auto p = static_cast<Eigen::Index>(element_count(out.item_dims));
    const auto n = static_cast<Eigen::Index>(stack.dims().back());
    out.x.resize(p, n);
    out.mask.resize(p, n);
    std::size_t observed = 0;
    for (Eigen::Index j = 0; j < n; ++j) {
        for (Eigen::Index i = 0; i < p; ++i) {
            const std::size_t lin = static_cast<std::size_t>(i + j * p);
            const bool seen = mask == nullptr || mask->observed[lin] != 0;
            if (seen) {
                const double v = stack[lin];
                if (!std::isfinite(v))
                    throw std::invalid_argument("FactorData: non-finite observed entry");
                out.x(i, j) = v;
                out.mask(i, j) = 1.0;
                ++observed;
            } else {
                out.x(i, j) = 0.0;
                out.mask(i, j) = 0.0;
            }
        }
    }
    out.observed = observed;
    out.fully_observed = observed == static_cast<std::size_t>(p * n);
    return out;
}

FactorData FactorData::columns(const FactorData& src, std::span<const std::size_t> items) {
    FactorData out;
    out.item_dims = src.item_dims;
    out.x.resize(src.x.rows(), static_cast<Eigen::Index>(items.size()));
    out.mask.resize(src.x.rows(), static_cast<Eigen::Index>(items.size()));
    for (std::size_t j = 0; j < items.size(); ++j) {
        out.x.col(static_cast<Eigen::Index>(j)) = src.x.col(static_cast<Eigen::Index>(items[j]));
        out.mask.col(static_cast<Eigen::Index>(j)) =
            src.mask.col(static_cast<Eigen::Index>(items[j]));
    }
    out.observed = static_cast<std::size_t>(out.mask.sum());
    out.fully_observed = out.observed == static_cast<std::size_t>(out.mask.size());
    return out;
}

Hyperparameters Hyperparameters::defaults(std::size_t atoms) {
    Hyperparameters h;
    h.a_pi = static_cast<double>(atoms);
    h.b_pi = 1.0;
    return h;
}

CarriedStats CarriedStats::zeros(std::size_t p, std::size_t k) {
    CarriedStats c;
    c.atom_precision = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(k));
    c.atom_mean = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(k));
    c.pi_a = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(k));
    c.pi_b = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(k));
    return c;
}

CarriedStats& CarriedStats::operator+=(const CarriedStats& o) {
    atom_precision += o.atom_precision;
    atom_mean += o.atom_mean;
    pi_a += o.pi_a;
    pi_b += o.pi_b;
    gamma_s_shape += o.gamma_s_shape;
    gamma_s_rate += o.gamma_s_rate;
    gamma_eps_shape += o.gamma_eps_shape;
    gamma_eps_rate += o.gamma_eps_rate;
    items += o.items;
    return *this;
}

namespace {

constexpr std::size_t kItemBlock = 1024;
constexpr std::uint64_t kAtomDrawStream = 1ULL << 62;
constexpr std::uint64_t kGlobalStream = 1ULL << 63;

double floor_precision(double v) { return std::max(v, kPrecisionFloor); }

void check_atom_index(const BpfaState& s, std::size_t k) {
    if (k >= s.atom_count())
        throw std::out_of_range("atom index " + std::to_string(k) + " out of range");
}

}  // namespace

Eigen::MatrixXd recompute_residual(const BpfaState& state, const FactorData& data) {
    Eigen::MatrixXd r = data.x - state.dict * state.weights.effective();
    if (!data.fully_observed) r = r.cwiseProduct(data.mask);
    return r;
}

BpfaState bpfa_init(const FactorData& data, std::size_t atoms, RngStream rng,
                    const Hyperparameters* hyper) {
    if (atoms < 1) throw std::invalid_argument("bpfa_init: need at least one atom");
    if (data.item_count() == 0 || data.item_size() == 0)
        throw std::invalid_argument("bpfa_init: empty data");

    const auto p = static_cast<Eigen::Index>(data.item_size());
    const auto k = static_cast<Eigen::Index>(atoms);
    const auto n = static_cast<Eigen::Index>(data.item_count());

    BpfaState s;
    s.atom_dims = data.item_dims;
    s.hyper = hyper ? *hyper : Hyperparameters::defaults(atoms);
    s.rng = rng;
    RngStream init = rng.split(0xfeedULL);

    s.dict.resize(p, k);
    for (Eigen::Index j = 0; j < k; ++j)
        for (Eigen::Index i = 0; i < p; ++i)
            s.dict(i, j) = draw_gaussian(0.0, static_cast<double>(p), init);
    s.weights.s.resize(k, n);
    s.weights.z.resize(k, n);
    for (Eigen::Index j = 0; j < n; ++j)
        for (Eigen::Index i = 0; i < k; ++i) {
            s.weights.s(i, j) = draw_standard_normal(init);
            s.weights.z(i, j) = static_cast<std::uint8_t>(draw_bernoulli(0.5, init));
        }
    s.weights.pi = Eigen::VectorXd::Constant(k, 0.5);
    s.residual = recompute_residual(s, data);
    sample_gamma_s(s, init);
    sample_gamma_eps(s, data, init);
    return s;
}

AtomStats update_atom_stats(const BpfaState& state, const FactorData& data, std::size_t k,
                            const CarriedStats* carried) {
    check_atom_index(state, k);
    const auto p = static_cast<Eigen::Index>(state.item_size());
    const auto kk = static_cast<Eigen::Index>(k);
    const double ge = state.noise.gamma_eps;
    AtomStats st;
    st.prior_precision = static_cast<double>(p);
    st.data_precision = Eigen::VectorXd::Zero(p);
    st.mean = Eigen::VectorXd::Zero(p);
    const auto d = state.dict.col(kk);
    double full_energy = 0.0;
    for (Eigen::Index n = 0; n < state.residual.cols(); ++n) {
        if (!state.weights.z(kk, n)) continue;
        const double w = state.weights.s(kk, n);
        if (w == 0.0) continue;
        // x~^{\k} = residual + w d_k on observed entries.
        if (data.fully_observed) {
            full_energy += w * w;
            st.mean.noalias() += (w * ge) * (state.residual.col(n) + w * d);
        } else {
            const auto m = data.mask.col(n);
            st.data_precision.noalias() += (w * w * ge) * m;
            st.mean.noalias() += (w * ge) * (state.residual.col(n) + w * d.cwiseProduct(m));
        }
    }
    if (data.fully_observed) st.data_precision.setConstant(ge * full_energy);
    if (carried) {
        st.data_precision += carried->atom_precision.col(kk);
        st.mean += carried->atom_mean.col(kk);
    }
    return st;
}

void set_atom(BpfaState& state, const FactorData& data, std::size_t k,
              const Eigen::VectorXd& atom) {
    const auto kk = static_cast<Eigen::Index>(k);
    Eigen::VectorXd delta = atom - state.dict.col(kk);
    state.dict.col(kk) = atom;
    for (Eigen::Index n = 0; n < state.residual.cols(); ++n) {
        if (!state.weights.z(kk, n)) continue;
        const double w = state.weights.s(kk, n);
        if (w == 0.0) continue;
        if (data.fully_observed)
            state.residual.col(n).noalias() -= w * delta;
        else
            state.residual.col(n).noalias() -= w * delta.cwiseProduct(data.mask.col(n));
    }
}

void sample_atom(BpfaState& state, const FactorData& data, std::size_t k,
                 const AtomStats& stats, RngStream& rng) {
    check_atom_index(state, k);
    const Eigen::VectorXd prec = stats.precision();
    Eigen::VectorXd atom(prec.size());
    for (Eigen::Index i = 0; i < prec.size(); ++i) {
        const double pr = floor_precision(prec[i]);
        atom[i] = draw_gaussian(stats.mean[i] / pr, pr, rng);
    }
    set_atom(state, data, k, atom);
}

WeightContext weight_context(const BpfaState& state, const FactorData& data,
                             std::size_t k, std::size_t n) {
    const auto kk = static_cast<Eigen::Index>(k);
    const auto nn = static_cast<Eigen::Index>(n);
    const auto d = state.dict.col(kk);
    WeightContext ctx;
    ctx.dd = data.fully_observed ? d.squaredNorm()
                                 : d.cwiseAbs2().dot(data.mask.col(nn));
    const double w = state.weights.z(kk, nn) ? state.weights.s(kk, nn) : 0.0;
    ctx.dx = d.dot(state.residual.col(nn)) + w * ctx.dd;
    return ctx;
}

GaussianMoments s_conditional(int z, const WeightContext& ctx, const NoisePrecisions& noise) {
    GaussianMoments g;
    if (z) {
        g.precision = floor_precision(noise.gamma_s + noise.gamma_eps * ctx.dd);
        g.mean = noise.gamma_eps * ctx.dx / g.precision;
    } else {
        g.precision = floor_precision(noise.gamma_s);
        g.mean = 0.0;
    }
    return g;
}

double z_conditional(double pi, double s, const WeightContext& ctx, double gamma_eps) {
    if (pi <= 0.0) return 0.0;
    if (pi >= 1.0) return 1.0;
    const double logit = std::log(pi) - std::log1p(-pi) -
                         0.5 * gamma_eps * (s * s * ctx.dd - 2.0 * s * ctx.dx);
    if (logit >= 0.0) return 1.0 / (1.0 + std::exp(-logit));
    const double e = std::exp(logit);
    return e / (1.0 + e);
}

namespace {

// Changes the effective weight of (k, n) and patches the residual column.
void apply_weight(BpfaState& state, const FactorData& data, Eigen::Index k, Eigen::Index n,
                  double s_new, std::uint8_t z_new) {
    const double w_old = state.weights.z(k, n) ? state.weights.s(k, n) : 0.0;
    const double w_new = z_new ? s_new : 0.0;
    state.weights.s(k, n) = s_new;
    state.weights.z(k, n) = z_new;
    if (w_new == w_old) return;
    const auto d = state.dict.col(k);
    if (data.fully_observed)
        state.residual.col(n).noalias() -= (w_new - w_old) * d;
    else
        state.residual.col(n).noalias() -= (w_new - w_old) * d.cwiseProduct(data.mask.col(n));
}

}  // namespace

double sample_s(BpfaState& state, const FactorData& data, std::size_t k, std::size_t n,
                RngStream& rng) {
    check_atom_index(state, k);
    const auto kk = static_cast<Eigen::Index>(k);
    const auto nn = static_cast<Eigen::Index>(n);
    const WeightContext ctx = weight_context(state, data, k, n);
    const int z = state.weights.z(kk, nn);
    const GaussianMoments g = s_conditional(z, ctx, state.noise);
    const double s = draw_gaussian(g.mean, g.precision, rng);
    apply_weight(state, data, kk, nn, s, static_cast<std::uint8_t>(z));
    return s;
}

int sample_z(BpfaState& state, const FactorData& data, std::size_t k, std::size_t n,
             RngStream& rng) {
    check_atom_index(state, k);
    const auto kk = static_cast<Eigen::Index>(k);
    const auto nn = static_cast<Eigen::Index>(n);
    const WeightContext ctx = weight_context(state, data, k, n);
    const double s = state.weights.s(kk, nn);
    const double p = z_conditional(state.weights.pi[kk], s, ctx, state.noise.gamma_eps);
    const int z = draw_bernoulli(p, rng);
    apply_weight(state, data, kk, nn, s, static_cast<std::uint8_t>(z));
    return z;
}

void update_weights_for_atom(BpfaState& state, const FactorData& data, std::size_t k,
                             const RngStream& atom_stream, unsigned threads) {
    const auto kk = static_cast<Eigen::Index>(k);
    const std::size_t n_items = state.item_count();
    const std::size_t blocks = (n_items + kItemBlock - 1) / kItemBlock;
    const double pi = state.weights.pi[kk];
    const double dd_full = state.dict.col(kk).squaredNorm();

    parallel_for(blocks, threads, [&](std::size_t b) {
        RngStream rng = atom_stream.split(b);
        const std::size_t end = std::min(n_items, (b + 1) * kItemBlock);
        const auto d = state.dict.col(kk);
        for (std::size_t n = b * kItemBlock; n < end; ++n) {
            const auto nn = static_cast<Eigen::Index>(n);
            WeightContext ctx;
            ctx.dd = data.fully_observed ? dd_full : d.cwiseAbs2().dot(data.mask.col(nn));
            const double w_old = state.weights.z(kk, nn) ? state.weights.s(kk, nn) : 0.0;
            ctx.dx = d.dot(state.residual.col(nn)) + w_old * ctx.dd;

            const double p1 = z_conditional(pi, state.weights.s(kk, nn), ctx,
                                            state.noise.gamma_eps);
            const int z = draw_bernoulli(p1, rng);
            const GaussianMoments g = s_conditional(z, ctx, state.noise);
            const double s = draw_gaussian(g.mean, g.precision, rng);
            apply_weight(state, data, kk, nn, s, static_cast<std::uint8_t>(z));
        }
    });
}

std::pair<double, double> pi_conditional(const BpfaState& state, std::size_t k,
                                         const CarriedStats* carried) {
    check_atom_index(state, k);
    const auto kk = static_cast<Eigen::Index>(k);
    const double kd = static_cast<double>(state.atom_count());
    const double used = state.weights.z.row(kk).cast<double>().sum();
    const double n = static_cast<double>(state.item_count());
    double a = state.hyper.a_pi / kd + used;
    double b = state.hyper.b_pi * (kd - 1.0) / kd + n - used;
    if (carried) {
        a += carried->pi_a[kk];
        b += carried->pi_b[kk];
    }
    // K = 1 gives a zero second parameter; keep the beta proper.
    return {std::max(a, kPrecisionFloor), std::max(b, kPrecisionFloor)};
}

double sample_pi(BpfaState& state, std::size_t k, RngStream& rng, const CarriedStats* carried) {
    const auto [a, b] = pi_conditional(state, k, carried);
    const double v = draw_beta(a, b, rng);
    state.weights.pi[static_cast<Eigen::Index>(k)] = v;
    return v;
}

std::pair<double, double> gamma_eps_conditional(const BpfaState& state, const FactorData& data,
                                                const CarriedStats* carried) {
    double shape = state.hyper.c + 0.5 * static_cast<double>(data.observed);
    double rate = state.hyper.d + 0.5 * state.residual.squaredNorm();
    if (carried) {
        shape += carried->gamma_eps_shape;
        rate += carried->gamma_eps_rate;
    }
    return {shape, rate};
}

std::pair<double, double> gamma_s_conditional(const BpfaState& state,
                                              const CarriedStats* carried) {
    double shape = state.hyper.e + 0.5 * static_cast<double>(state.weights.s.size());
    double rate = state.hyper.f + 0.5 * state.weights.s.squaredNorm();
    if (carried) {
        shape += carried->gamma_s_shape;
        rate += carried->gamma_s_rate;
    }
    return {shape, rate};
}

double sample_gamma_eps(BpfaState& state, const FactorData& data, RngStream& rng,
                        const CarriedStats* carried) {
    const auto [shape, rate] = gamma_eps_conditional(state, data, carried);
    state.noise.gamma_eps = floor_precision(draw_gamma(shape, rate, rng));
    return state.noise.gamma_eps;
}

double sample_gamma_s(BpfaState& state, RngStream& rng, const CarriedStats* carried) {
    const auto [shape, rate] = gamma_s_conditional(state, carried);
    state.noise.gamma_s = floor_precision(draw_gamma(shape, rate, rng));
    return state.noise.gamma_s;
}

void update_global_weights_params(BpfaState& state, const FactorData& data, RngStream& rng,
                                  const CarriedStats* carried) {
    for (std::size_t k = 0; k < state.atom_count(); ++k) sample_pi(state, k, rng, carried);
    sample_gamma_eps(state, data, rng, carried);
    sample_gamma_s(state, rng, carried);
}

CarriedStats batch_statistics(const BpfaState& state, const FactorData& data) {
    const std::size_t k = state.atom_count();
    CarriedStats c = CarriedStats::zeros(state.item_size(), k);
    for (std::size_t j = 0; j < k; ++j) {
        const auto st = update_atom_stats(state, data, j);
        c.atom_precision.col(static_cast<Eigen::Index>(j)) = st.data_precision;
        c.atom_mean.col(static_cast<Eigen::Index>(j)) = st.mean;
        const double used = state.weights.z.row(static_cast<Eigen::Index>(j)).cast<double>().sum();
        c.pi_a[static_cast<Eigen::Index>(j)] = used;
        c.pi_b[static_cast<Eigen::Index>(j)] = static_cast<double>(state.item_count()) - used;
    }
    c.gamma_s_shape = 0.5 * static_cast<double>(state.weights.s.size());
    c.gamma_s_rate = 0.5 * state.weights.s.squaredNorm();
    c.gamma_eps_shape = 0.5 * static_cast<double>(data.observed);
    c.gamma_eps_rate = 0.5 * state.residual.squaredNorm();
    c.items = state.item_count();
    return c;
}

void bpfa_sweep(BpfaState& state, const FactorData& data, const SweepOptions& opts) {
    const RngStream sweep_stream = state.rng.split(state.sweeps);
    for (std::size_t k = 0; k < state.atom_count(); ++k) {
        const RngStream atom_stream = sweep_stream.split(k);
        if (opts.update_dictionary) {
            RngStream draw = atom_stream.split(kAtomDrawStream);
            const AtomStats st = update_atom_stats(state, data, k, opts.carried);
            sample_atom(state, data, k, st, draw);
        }
        if (opts.update_weights) update_weights_for_atom(state, data, k, atom_stream, opts.threads);
    }
    if (opts.update_hyperparameters) {
        RngStream g = sweep_stream.split(kGlobalStream);
        update_global_weights_params(state, data, g, opts.carried);
    }
    ++state.sweeps;
}

Eigen::MatrixXd reconstruct_items(const BpfaState& state) {
    return state.dict * state.weights.effective();
}

}  // namespace tkfa
