#include "tkfa/bcdf.hpp"

#include <doctest.h>

#include <numeric>
#include <vector>

using namespace tkfa;

namespace {

FactorData gaussian_items(Eigen::Index n, std::uint64_t seed) {
    RngStream g(seed, 0);
    Eigen::MatrixXd x(16, n);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = draw_standard_normal(g);
    DenseTensor stack({4, 4, static_cast<std::size_t>(n)},
                      std::vector<double>(x.data(), x.data() + x.size()));
    return FactorData::from_stack(stack);
}

/// Standard Gibbs from the same starting point as one full-data epoch: a
/// weights-only sweep followed by full sweeps.
BpfaState standard_gibbs(const BcdfModel& start, const FactorData& data, std::size_t inner) {
    BpfaState b = start.state.bpfa;
    b.weights.s = start.all_weights.s;
    b.weights.z = start.all_weights.z;
    b.residual = recompute_residual(b, data);
    SweepOptions local;
    local.update_dictionary = false;
    bpfa_sweep(b, data, local);
    for (std::size_t i = 1; i < inner; ++i) bpfa_sweep(b, data);
    return b;
}

}  // namespace

TEST_SUITE("streaming_bcdf") {
TEST_CASE("scss_apply: zero statistics give the plain prior") {
    const Hyperparameters h = Hyperparameters::defaults(4);
    const EffectivePrior e = scss_apply(Scss::zeros(16, 4), h, 16, 4);
    CHECK(e.atom_precision.isApproxToConstant(16.0));
    CHECK(e.atom_mean.isZero());
    CHECK(e.pi_a.isApproxToConstant(1.0));
    CHECK(e.pi_b.isApproxToConstant(0.75));
    CHECK(e.eps_shape == h.c);
    CHECK(e.s_rate == h.f);
}

TEST_CASE("scss_apply is additive in the carried statistics") {
    const Hyperparameters h = Hyperparameters::defaults(2);
    Scss a = Scss::zeros(3, 2), b = Scss::zeros(3, 2);
    a.atom_precision.setConstant(1.5);
    a.atom_mean.setConstant(-0.5);
    a.pi_a << 2, 3;
    a.pi_b << 1, 0;
    a.gamma_eps_shape = 4.0;
    a.gamma_eps_rate = 2.5;
    b.atom_precision.setConstant(0.5);
    b.pi_a << 1, 1;
    b.gamma_s_shape = 6.0;
    b.gamma_s_rate = 1.0;
    Scss sum = a;
    sum += b;
    const EffectivePrior e = scss_apply(sum, h, 3, 2);
    CHECK(e.atom_precision.isApproxToConstant(3.0 + 2.0));
    CHECK(e.atom_mean.isApproxToConstant(-0.5));
    CHECK(e.pi_a[0] == doctest::Approx(1.0 + 3.0));
    CHECK(e.pi_a[1] == doctest::Approx(1.0 + 4.0));
    CHECK(e.pi_b[0] == doctest::Approx(0.5 + 1.0));
    CHECK(e.eps_shape == doctest::Approx(h.c + 4.0));
    CHECK(e.eps_rate == doctest::Approx(h.d + 2.5));
    CHECK(e.s_shape == doctest::Approx(h.e + 6.0));
    CHECK(e.s_rate == doctest::Approx(h.f + 1.0));
}

TEST_CASE("batch statistics add up over a split of the items") {
    const FactorData data = gaussian_items(40, 1);
    BpfaState st = bpfa_init(data, 3, RngStream(1, 1));
    for (int i = 0; i < 2; ++i) bpfa_sweep(st, data);
    const Scss whole = batch_statistics(st, data);
    Scss parts = Scss::zeros(16, 3);
    for (std::size_t first : {std::size_t{0}, std::size_t{25}}) {
        std::vector<std::size_t> idx(first == 0 ? 25 : 15);
        std::iota(idx.begin(), idx.end(), first);
        const FactorData d = FactorData::columns(data, idx);
        BpfaState s = st;
        s.weights.s = st.weights.s.middleCols(static_cast<Eigen::Index>(first),
                                              static_cast<Eigen::Index>(idx.size()));
        s.weights.z = st.weights.z.middleCols(static_cast<Eigen::Index>(first),
                                              static_cast<Eigen::Index>(idx.size()));
        s.residual = recompute_residual(s, d);
        parts += batch_statistics(s, d);
    }
    CHECK((parts.atom_precision - whole.atom_precision).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((parts.atom_mean - whole.atom_mean).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(parts.pi_a == whole.pi_a);
    CHECK(parts.pi_b == whole.pi_b);
    CHECK(parts.gamma_eps_rate == doctest::Approx(whole.gamma_eps_rate).epsilon(1e-12));
    CHECK(parts.items == whole.items);
}

TEST_CASE("single-batch epoch reproduces standard Gibbs exactly") {
    const FactorData data = gaussian_items(60, 2);
    const MatrixSource src(data);
    BcdfModel m = bcdf_init(src, 5, false, RngStream(2, 1));
    const BcdfModel start = m;
    BatchPlan plan;
    plan.epochs = 1;
    plan.burnin_epochs = 0;
    plan.batch_size = 60;
    const BcdfReport rep = bcdf_train(src, m, plan);
    const BpfaState ref = standard_gibbs(start, data, plan.inner_iterations);
    CHECK(rep.batches == 1);
    CHECK(m.state.bpfa.dict == ref.dict);
    CHECK(m.state.bpfa.noise.gamma_eps == ref.noise.gamma_eps);
    CHECK(m.state.bpfa.noise.gamma_s == ref.noise.gamma_s);
    CHECK(m.state.bpfa.weights.pi == ref.weights.pi);
    CHECK(rep.last_scss == batch_statistics(ref, data));
}

TEST_CASE("single-batch KFA epoch reproduces standard KFA Gibbs") {
    const FactorData data = gaussian_items(30, 3);
    const MatrixSource src(data);
    KfaOptions ko;
    ko.rank = 2;
    BcdfModel m = bcdf_init(src, 4, true, RngStream(3, 1), ko);
    KfaState ref = m.state;
    ref.bpfa.weights.s = m.all_weights.s;
    ref.bpfa.weights.z = m.all_weights.z;
    ref.bpfa.residual = recompute_residual(ref.bpfa, data);
    BatchPlan plan;
    plan.epochs = 1;
    plan.burnin_epochs = 0;
    plan.batch_size = 100;
    const BcdfReport rep = bcdf_train(src, m, plan);
    SweepOptions local;
    local.update_dictionary = false;
    kfa_sweep(ref, data, local);
    for (std::size_t i = 1; i < plan.inner_iterations; ++i) kfa_sweep(ref, data);
    CHECK(m.state.kd.lambdas == ref.kd.lambdas);
    CHECK(m.state.bpfa.dict == ref.bpfa.dict);
    CHECK(rep.last_scss == batch_statistics(ref.bpfa, data));
}

TEST_CASE("multi-batch training visits every item and stays consistent") {
    const FactorData data = gaussian_items(100, 4);
    const MatrixSource src(data);
    BcdfModel m = bcdf_init(src, 6, false, RngStream(4, 1));
    BatchPlan plan;
    plan.epochs = 3;
    plan.burnin_epochs = 1;
    plan.batch_size = 30;
    std::vector<std::size_t> called;
    const BcdfReport rep =
        bcdf_train(src, m, plan, 1, [&](const BcdfModel&, std::size_t e) { called.push_back(e); });
    CHECK(rep.batches == 3 * 4);
    CHECK(called == std::vector<std::size_t>{1, 2});
    CHECK(rep.last_scss.items == 100);
    CHECK(m.state.bpfa.dict.allFinite());
    std::vector<std::size_t> all(100);
    std::iota(all.begin(), all.end(), std::size_t{0});
    CHECK(bcdf_reconstruct(m, all).allFinite());

    BcdfModel again = bcdf_init(src, 6, false, RngStream(4, 1));
    bcdf_train(src, again, plan);
    CHECK(again.state.bpfa.dict == m.state.bpfa.dict);
    CHECK(again.all_weights.s == m.all_weights.s);
}

TEST_CASE("invalid plans are rejected") {
    const FactorData data = gaussian_items(10, 5);
    const MatrixSource src(data);
    BcdfModel m = bcdf_init(src, 2, false, RngStream(5, 1));
    BatchPlan plan;
    plan.batch_size = 0;
    CHECK_THROWS(bcdf_train(src, m, plan));
    plan.batch_size = 5;
    plan.inner_iterations = 0;
    CHECK_THROWS(bcdf_train(src, m, plan));
}
}
