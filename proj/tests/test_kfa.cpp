#include "oracles.hpp"
#include "tkfa/kfa.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

using namespace tkfa;

namespace {

FactorData make_data(const Eigen::MatrixXd& x, const Dims& item_dims,
                     const std::vector<std::uint8_t>* observed = nullptr) {
    Dims d = item_dims;
    d.push_back(static_cast<std::size_t>(x.cols()));
    DenseTensor stack(d, std::vector<double>(x.data(), x.data() + x.size()));
    if (!observed) return FactorData::from_stack(stack);
    ObservationMask m;
    m.dims = d;
    m.observed = *observed;
    return FactorData::from_stack(stack, &m);
}

Eigen::MatrixXd random_x(Eigen::Index p, Eigen::Index n, std::uint64_t seed) {
    RngStream rng(seed, 91);
    Eigen::MatrixXd x(p, n);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = draw_standard_normal(rng);
    return x;
}

KfaState tiny(std::uint64_t seed, std::size_t rank = 2, const Dims& dims = {2, 2},
              std::size_t n = 3, const std::vector<std::uint8_t>* observed = nullptr,
              FactorData* out = nullptr) {
    const FactorData d =
        make_data(random_x(static_cast<Eigen::Index>(element_count(dims)),
                           static_cast<Eigen::Index>(n), seed),
                  dims, observed);
    KfaOptions ko;
    ko.rank = rank;
    ko.alpha0 = 2.0;
    KfaState st = kfa_init(d, 2, RngStream(seed, 1), ko);
    if (out) *out = d;
    return st;
}

/// Redraws the Kruskal dictionary, weights, precisions and data from the
/// generative model with a fixed alpha.
void draw_from_prior(KfaState& st, RngStream& rng) {
    auto& kd = st.kd;
    for (std::size_t k = 0; k < kd.atom_count(); ++k) {
        const auto kk = static_cast<Eigen::Index>(k);
        double tau = 1.0;
        for (std::size_t r = 0; r < kd.rank; ++r) {
            const auto rr = static_cast<Eigen::Index>(r);
            const double shape = r == 0 ? kd.first_shape : kd.alpha;
            kd.deltas(kk, rr) = draw_gamma(shape, 1.0, rng);
            tau *= kd.deltas(kk, rr);
            kd.lambdas(kk, rr) = draw_gaussian(0.0, tau, rng);
            for (std::size_t t = 0; t < kd.order(); ++t)
                for (Eigen::Index i = 0; i < kd.factors[k][t].rows(); ++i)
                    kd.factors[k][t](i, rr) =
                        draw_gaussian(0.0, static_cast<double>(kd.dims[t]), rng);
        }
    }
    BpfaState& b = st.bpfa;
    const auto& h = b.hyper;
    const double kk = static_cast<double>(b.atom_count());
    b.noise.gamma_eps = draw_gamma(h.c, h.d, rng);
    b.noise.gamma_s = draw_gamma(h.e, h.f, rng);
    for (Eigen::Index k = 0; k < b.weights.s.rows(); ++k) {
        b.weights.pi[k] = draw_beta(h.a_pi / kk, h.b_pi * (kk - 1.0) / kk, rng);
        for (Eigen::Index n = 0; n < b.weights.s.cols(); ++n) {
            b.weights.s(k, n) = draw_gaussian(0.0, b.noise.gamma_s, rng);
            b.weights.z(k, n) = static_cast<std::uint8_t>(draw_bernoulli(b.weights.pi[k], rng));
        }
    }
    b.dict = kd.compose_all();
}

Eigen::MatrixXd draw_x(const KfaState& st, RngStream& rng) {
    Eigen::MatrixXd x = oracle::compose_loops(st.kd) * st.bpfa.weights.effective();
    for (Eigen::Index i = 0; i < x.size(); ++i)
        x.data()[i] += draw_gaussian(0.0, st.bpfa.noise.gamma_eps, rng);
    return x;
}

}  // namespace

TEST_SUITE("kfa_model") {
TEST_CASE("init defaults: rank from the shape, first shape, parameter count") {
    const FactorData d = make_data(random_x(64, 5, 1), {8, 8});
    const KfaState st = kfa_init(d, 3, RngStream(1, 1));
    CHECK(st.kd.rank == 7);
    CHECK(st.kd.first_shape == 1.0);
    CHECK(st.kd.alpha == 1e6);
    CHECK(st.bpfa.dict.cols() == 3);
    CHECK((st.bpfa.dict - st.kd.compose_all()).cwiseAbs().maxCoeff() < 1e-12);

    KfaOptions ko;
    ko.rank = 1;
    const KfaState one = kfa_init(d, 1000, RngStream(1, 1), ko);
    CHECK(one.kd.parameter_count() == 17000);
    CHECK(st.kd.parameter_count() == 3 * 7 * 17);
}

TEST_CASE("composition matches nested loops") {
    const KfaState st = tiny(2, 3, {3, 4, 2}, 4);
    const Eigen::MatrixXd loops = oracle::compose_loops(st.kd);
    CHECK((st.kd.compose_all() - loops).cwiseAbs().maxCoeff() < 1e-12);
    for (std::size_t k = 0; k < st.kd.atom_count(); ++k) {
        Eigen::VectorXd sum = Eigen::VectorXd::Zero(24);
        for (std::size_t r = 0; r < 3; ++r) sum += st.kd.component(k, r);
        CHECK((sum - st.kd.compose(k)).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("reparameterization identities on random states") {
    for (std::uint64_t seed = 3; seed < 8; ++seed) {
        const KfaState st = tiny(seed, 3, {3, 4, 2}, 4);
        const auto& kd = st.kd;
        for (std::size_t k = 0; k < kd.atom_count(); ++k) {
            const Eigen::VectorXd atom = kd.compose(k);
            for (std::size_t r = 0; r < kd.rank; ++r) {
                for (std::size_t t = 0; t < kd.order(); ++t) {
                    const Reparam p = reparam_factor(kd, k, t, r);
                    Eigen::VectorXd v(atom.size());
                    for (Eigen::Index i = 0; i < atom.size(); ++i)
                        v[i] = p.coef[i] *
                                   kd.factors[k][t](kd.coords[t][static_cast<std::size_t>(i)],
                                                    static_cast<Eigen::Index>(r)) +
                               p.offset[i];
                    CHECK((v - atom).cwiseAbs().maxCoeff() < 1e-12);
                }
                const Reparam q = reparam_lambda(kd, k, r);
                const Eigen::VectorXd v =
                    q.coef * kd.lambdas(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(r)) +
                    q.offset;
                CHECK((v - atom).cwiseAbs().maxCoeff() < 1e-12);
            }
        }
    }
}

TEST_CASE("cached and uncached draws agree") {
    FactorData d;
    KfaState a = tiny(8, 3, {3, 4, 2}, 5, nullptr, &d);
    KfaState b = a;
    const AtomStats st = update_atom_stats(a.bpfa, d, 1);
    RngStream ra(8, 3), rb(8, 3);
    Eigen::VectorXd atom = b.kd.compose(1);
    for (std::size_t t = 0; t < 3; ++t)
        for (std::size_t r = 0; r < 3; ++r) {
            sample_factor_vector(a, 1, t, r, st, ra);
            sample_factor_vector(b, 1, t, r, st, rb, &atom);
        }
    for (std::size_t r = 0; r < 3; ++r) {
        sample_lambda(a, 1, r, st, ra);
        sample_lambda(b, 1, r, st, rb, &atom);
    }
    CHECK((atom - a.kd.compose(1)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((a.kd.lambdas - b.kd.lambdas).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("delta conditional closed form and alpha count") {
    KfaState st = tiny(9, 2);
    auto& kd = st.kd;
    kd.first_shape = 1.0;
    kd.alpha = 3.0;
    kd.lambdas.row(0) << 0.5, 2.0;
    kd.deltas.row(0) << 1.5, 4.0;
    const auto [s0, r0] = delta_conditional(kd, 0, 0);
    CHECK(s0 == doctest::Approx(2.0));
    CHECK(r0 == doctest::Approx(1.0 + 0.5 * (0.25 + 4.0 * 4.0)));
    const auto [s1, r1] = delta_conditional(kd, 0, 1);
    CHECK(s1 == doctest::Approx(3.5));
    CHECK(r1 == doctest::Approx(1.0 + 0.5 * 1.5 * 4.0));

    RngStream rng(9, 2);
    const double a = update_alpha(kd, AlphaMode::Map, 1e6, 1e-6, rng);
    AlphaPosterior p;
    p.a = 1e6;
    p.b = 1e-6;
    p.count = 2.0;
    p.sum_log_delta = kd.deltas.col(1).array().log().sum();
    CHECK(a == doctest::Approx(alpha_map(p)).epsilon(1e-12));

    KfaState rank1 = tiny(10, 1);
    const double before = rank1.kd.alpha;
    CHECK(update_alpha(rank1.kd, AlphaMode::Map, 1e6, 1e-6, rng) == before);
    CHECK(update_alpha(kd, AlphaMode::Fixed, 1e6, 1e-6, rng) == kd.alpha);
}

TEST_CASE("factor entry conditional matches the grid oracle") {
    std::vector<std::uint8_t> obs{1, 1, 0, 1, 1, 1, 1, 1, 0, 1, 1, 1};
    FactorData d;
    KfaState st = tiny(11, 2, {2, 2}, 3, &obs, &d);
    st.bpfa.weights.z.setOnes();
    st.bpfa.residual = recompute_residual(st.bpfa, d);
    const AtomStats stats = update_atom_stats(st.bpfa, d, 0);
    RngStream rng(11, 4);
    std::vector<double> xs;
    for (int i = 0; i < 100000; ++i) {
        sample_factor_vector(st, 0, 1, 1, stats, rng);
        xs.push_back(st.kd.factors[0][1](0, 1));
    }
    KfaState probe = st;
    const auto [lo, hi] = oracle::draw_range(xs, -1e9, 1e9);
    oracle::check_moments(xs, oracle::grid_moments(
                                  [&](double v) {
                                      probe.kd.factors[0][1](0, 1) = v;
                                      return oracle::kfa_log_joint(probe, d);
                                  },
                                  lo, hi));
}

TEST_CASE("singular value conditional matches the grid oracle") {
    FactorData d;
    KfaState st = tiny(12, 2, {2, 2}, 3, nullptr, &d);
    st.bpfa.weights.z.setOnes();
    st.bpfa.residual = recompute_residual(st.bpfa, d);
    const AtomStats stats = update_atom_stats(st.bpfa, d, 1);
    RngStream rng(12, 4);
    std::vector<double> xs;
    for (int i = 0; i < 100000; ++i) {
        sample_lambda(st, 1, 0, stats, rng);
        xs.push_back(st.kd.lambdas(1, 0));
    }
    KfaState probe = st;
    const auto [lo, hi] = oracle::draw_range(xs, -1e9, 1e9);
    oracle::check_moments(xs, oracle::grid_moments(
                                  [&](double v) {
                                      probe.kd.lambdas(1, 0) = v;
                                      return oracle::kfa_log_joint(probe, d);
                                  },
                                  lo, hi));
}

TEST_CASE("delta conditionals match the grid oracle") {
    KfaState st = tiny(13, 3);
    st.kd.alpha = 2.5;
    RngStream rng(13, 4);
    for (std::size_t i : {std::size_t{0}, std::size_t{2}}) {
        std::vector<double> xs;
        for (int n = 0; n < 100000; ++n) {
            sample_delta(st.kd, 1, i, rng);
            xs.push_back(st.kd.deltas(1, static_cast<Eigen::Index>(i)));
        }
        KruskalDictionary probe = st.kd;
        const auto [lo, hi] = oracle::draw_range(xs, 1e-12, 1e12);
        oracle::check_moments(xs, oracle::grid_moments(
                                      [&](double v) {
                                          probe.deltas(1, static_cast<Eigen::Index>(i)) = v;
                                          return oracle::kruskal_log_prior(probe);
                                      },
                                      lo, hi));
    }
}

TEST_CASE("rank-one dictionary is learned from noiseless data") {
    RngStream g(14, 0);
    const Eigen::Index k = 4, n = 300;
    Eigen::MatrixXd d(16, k);
    for (Eigen::Index j = 0; j < k; ++j) {
        Eigen::VectorXd a(4), b(4);
        for (int i = 0; i < 4; ++i) {
            a[i] = draw_standard_normal(g);
            b[i] = draw_standard_normal(g);
        }
        Eigen::MatrixXd outer = a * b.transpose();
        d.col(j) = Eigen::Map<Eigen::VectorXd>(outer.data(), 16);
    }
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(k, n);
    for (Eigen::Index j = 0; j < n; ++j) w(j % k, j) = draw_standard_normal(g);
    const FactorData data = make_data(d * w, {4, 4});
    KfaOptions ko;
    ko.rank = 1;
    KfaState st = kfa_init(data, 8, RngStream(14, 1), ko);
    const double start = (data.x - reconstruct_items(st.bpfa)).norm();
    Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(16, n);
    for (int it = 0; it < 60; ++it) {
        kfa_sweep(st, data);
        if (it >= 30) mean += reconstruct_items(st.bpfa);
    }
    mean /= 30.0;
    CHECK((data.x - mean).norm() < 0.05 * start);
    CHECK((st.bpfa.dict - st.kd.compose_all()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((st.bpfa.residual - recompute_residual(st.bpfa, data)).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("NaN-poisoned unobserved entries give bit-identical KFA chains") {
    RngStream g(15, 0);
    Eigen::MatrixXd x(16, 40);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = draw_standard_normal(g);
    std::vector<std::uint8_t> obs(static_cast<std::size_t>(x.size()));
    for (auto& o : obs) o = static_cast<std::uint8_t>(draw_bernoulli(0.6, g));
    Eigen::MatrixXd poisoned = x, other = x;
    for (std::size_t i = 0; i < obs.size(); ++i)
        if (!obs[i]) {
            poisoned.data()[i] = std::numeric_limits<double>::quiet_NaN();
            other.data()[i] = -7e5;
        }
    const FactorData a = make_data(poisoned, {4, 4}, &obs);
    const FactorData b = make_data(other, {4, 4}, &obs);
    KfaOptions ko;
    ko.rank = 2;
    KfaState sa = kfa_init(a, 4, RngStream(15, 1), ko);
    KfaState sb = kfa_init(b, 4, RngStream(15, 1), ko);
    for (int i = 0; i < 5; ++i) {
        kfa_sweep(sa, a);
        kfa_sweep(sb, b);
    }
    CHECK(sa.kd.lambdas == sb.kd.lambdas);
    CHECK(sa.kd.deltas == sb.kd.deltas);
    CHECK(sa.bpfa.dict == sb.bpfa.dict);
    CHECK(sa.bpfa.weights.z == sb.bpfa.weights.z);
    CHECK(sa.kd.alpha == sb.kd.alpha);
    CHECK(sa.bpfa.dict.allFinite());
}

TEST_CASE("Geweke joint-distribution test for the full KFA sweep") {
    Hyperparameters h = Hyperparameters::defaults(2);
    h.a_pi = 2.0;
    h.b_pi = 1.0;
    h.c = 5.0;
    h.d = 5.0;
    h.e = 5.0;
    h.f = 5.0;
    KfaOptions ko;
    ko.rank = 2;
    ko.alpha0 = 4.0;
    ko.first_shape = 3.0;
    ko.alpha_mode = AlphaMode::Fixed;
    const Dims item{2, 2};
    KfaState st = kfa_init(make_data(random_x(4, 3, 16), item), 2, RngStream(16, 1), ko, &h);
    CHECK(st.kd.alpha == 4.0);

    const auto stats = [](const KfaState& s, const Eigen::MatrixXd& x) {
        double u2 = 0.0;
        for (const auto& f : s.kd.factors)
            for (const auto& m : f) u2 += m.squaredNorm();
        return std::vector<double>{s.kd.lambdas(0, 0) * s.kd.lambdas(0, 0),
                                   s.kd.lambdas(1, 1) * s.kd.lambdas(1, 1),
                                   s.kd.deltas(0, 0),
                                   s.kd.deltas(1, 1),
                                   u2 / 16.0,
                                   s.bpfa.noise.gamma_eps,
                                   s.bpfa.noise.gamma_s,
                                   s.bpfa.weights.z.cast<double>().mean(),
                                   x.squaredNorm() / 12.0};
    };
    const std::size_t iters = 200000;
    std::vector<std::vector<double>> forward(9), chain(9);
    RngStream g(16, 2);
    for (std::size_t i = 0; i < iters; ++i) {
        draw_from_prior(st, g);
        const auto v = stats(st, draw_x(st, g));
        for (std::size_t j = 0; j < v.size(); ++j) forward[j].push_back(v[j]);
    }
    draw_from_prior(st, g);
    Eigen::MatrixXd x = draw_x(st, g);
    for (std::size_t i = 0; i < iters; ++i) {
        const FactorData data = make_data(x, item);
        st.bpfa.residual = recompute_residual(st.bpfa, data);
        kfa_sweep(st, data);
        x = draw_x(st, g);
        const auto v = stats(st, x);
        for (std::size_t j = 0; j < v.size(); ++j) chain[j].push_back(v[j]);
    }
    for (std::size_t j = 0; j < forward.size(); ++j) {
        const double diff = oracle::mean_of(forward[j]) - oracle::mean_of(chain[j]);
        const double se = std::hypot(oracle::se_iid(forward[j]), oracle::batch_se(chain[j]));
        CAPTURE(j);
        CHECK(std::abs(diff) <= 3.0 * se);
    }
}
}
