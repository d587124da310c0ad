#include "tkfa/bcdf.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <stdexcept>

namespace tkfa {

EffectivePrior scss_apply(const Scss& scss, const Hyperparameters& hyper, std::size_t item_size,
                          std::size_t atoms) {
    const auto p = static_cast<Eigen::Index>(item_size);
    const auto k = static_cast<Eigen::Index>(atoms);
    const double kd = static_cast<double>(atoms);
    EffectivePrior e;
    e.atom_precision = Eigen::MatrixXd::Constant(p, k, static_cast<double>(item_size));
    e.atom_mean = Eigen::MatrixXd::Zero(p, k);
    e.pi_a = Eigen::VectorXd::Constant(k, hyper.a_pi / kd);
    e.pi_b = Eigen::VectorXd::Constant(k, hyper.b_pi * (kd - 1.0) / kd);
    e.eps_shape = hyper.c;
    e.eps_rate = hyper.d;
    e.s_shape = hyper.e;
    e.s_rate = hyper.f;
    if (scss.atom_precision.size() == 0) return e;
    e.atom_precision += scss.atom_precision;
    e.atom_mean += scss.atom_mean;
    e.pi_a += scss.pi_a;
    e.pi_b += scss.pi_b;
    e.eps_shape += scss.gamma_eps_shape;
    e.eps_rate += scss.gamma_eps_rate;
    e.s_shape += scss.gamma_s_shape;
    e.s_rate += scss.gamma_s_rate;
    return e;
}

BcdfModel bcdf_init(const DataSource& source, std::size_t atoms, bool kruskal, RngStream rng,
                    const KfaOptions& kfa) {
    const std::size_t n = source.item_count();
    if (n == 0) throw std::invalid_argument("bcdf: empty data source");
    std::vector<std::size_t> head(std::min<std::size_t>(n, 5000));
    std::iota(head.begin(), head.end(), std::size_t{0});
    const FactorData first = source.fetch(head);

    BcdfModel m;
    m.kruskal = kruskal;
    if (kruskal)
        m.state = kfa_init(first, atoms, rng, kfa);
    else
        m.state.bpfa = bpfa_init(first, atoms, rng);

    RngStream w = rng.split(0x5ca1eULL);
    const auto k = static_cast<Eigen::Index>(atoms);
    const auto nn = static_cast<Eigen::Index>(n);
    m.all_weights.s.resize(k, nn);
    m.all_weights.z.resize(k, nn);
    for (Eigen::Index j = 0; j < nn; ++j)
        for (Eigen::Index i = 0; i < k; ++i) {
            m.all_weights.s(i, j) = draw_standard_normal(w);
            m.all_weights.z(i, j) = static_cast<std::uint8_t>(draw_bernoulli(0.5, w));
        }
    m.all_weights.pi = m.state.bpfa.weights.pi;
    return m;
}

namespace {

void load_batch(BcdfModel& m, const FactorData& data, std::span<const std::size_t> items) {
    BpfaState& b = m.state.bpfa;
    const auto k = static_cast<Eigen::Index>(b.atom_count());
    const auto nb = static_cast<Eigen::Index>(items.size());
    b.weights.s.resize(k, nb);
    b.weights.z.resize(k, nb);
    for (Eigen::Index j = 0; j < nb; ++j) {
        const auto src = static_cast<Eigen::Index>(items[static_cast<std::size_t>(j)]);
        b.weights.s.col(j) = m.all_weights.s.col(src);
        b.weights.z.col(j) = m.all_weights.z.col(src);
    }
    b.residual = recompute_residual(b, data);
}

void store_batch(BcdfModel& m, std::span<const std::size_t> items) {
    const BpfaState& b = m.state.bpfa;
    for (std::size_t j = 0; j < items.size(); ++j) {
        const auto dst = static_cast<Eigen::Index>(items[j]);
        m.all_weights.s.col(dst) = b.weights.s.col(static_cast<Eigen::Index>(j));
        m.all_weights.z.col(dst) = b.weights.z.col(static_cast<Eigen::Index>(j));
    }
    m.all_weights.pi = b.weights.pi;
}

void sweep(BcdfModel& m, const FactorData& data, const SweepOptions& opts) {
    if (m.kruskal)
        kfa_sweep(m.state, data, opts);
    else
        bpfa_sweep(m.state.bpfa, data, opts);
}

}  // namespace

BcdfReport bcdf_train(const DataSource& source, BcdfModel& m, const BatchPlan& plan,
                      unsigned threads, const EpochCallback& on_sample) {
    const std::size_t n = source.item_count();
    if (n == 0) throw std::invalid_argument("bcdf: empty data source");
    if (plan.batch_size < 1) throw std::invalid_argument("bcdf: batch size must be positive");
    if (plan.inner_iterations < 1)
        throw std::invalid_argument("bcdf: need at least one inner iteration");
    if (static_cast<std::size_t>(m.all_weights.s.cols()) != n)
        throw std::invalid_argument("bcdf: model weights do not match the data source");

    const std::size_t p = m.state.bpfa.item_size();
    const std::size_t k = m.state.bpfa.atom_count();
    BcdfReport report;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    RngStream shuffle_rng(plan.shuffle_seed, 0x5f0ffULL);

    for (std::size_t epoch = 0; epoch < plan.epochs; ++epoch) {
        if (plan.batch_size < n) std::shuffle(order.begin(), order.end(), shuffle_rng);
        Scss scss = Scss::zeros(p, k);
        for (std::size_t first = 0; first < n; first += plan.batch_size) {
            const std::size_t count = std::min(plan.batch_size, n - first);
            const std::span<const std::size_t> items(order.data() + first, count);
            const FactorData data = source.fetch(items);
            load_batch(m, data, items);

            SweepOptions local;
            local.update_dictionary = false;
            local.carried = &scss;
            local.threads = threads;
            sweep(m, data, local);
            SweepOptions full;
            full.carried = &scss;
            full.threads = threads;
            for (std::size_t it = 1; it < plan.inner_iterations; ++it) sweep(m, data, full);

            const Scss batch = batch_statistics(m.state.bpfa, data);
            scss += batch;
            store_batch(m, items);
            ++report.batches;
        }
        report.last_scss = scss;

        if (epoch == 0) {
            // One pass over every item with the dictionary frozen.
            std::vector<std::size_t> all(n);
            std::iota(all.begin(), all.end(), std::size_t{0});
            SweepOptions refresh;
            refresh.update_dictionary = false;
            refresh.update_hyperparameters = false;
            refresh.threads = threads;
            for (std::size_t first = 0; first < n; first += plan.batch_size) {
                const std::size_t count = std::min(plan.batch_size, n - first);
                const std::span<const std::size_t> items(all.data() + first, count);
                const FactorData data = source.fetch(items);
                load_batch(m, data, items);
                sweep(m, data, refresh);
                store_batch(m, items);
            }
        }
        if (epoch >= plan.burnin_epochs && on_sample) on_sample(m, epoch);
    }
    return report;
}

Eigen::MatrixXd bcdf_reconstruct(const BcdfModel& m, std::span<const std::size_t> items) {
    const auto k = static_cast<Eigen::Index>(m.state.bpfa.atom_count());
    Eigen::MatrixXd w(k, static_cast<Eigen::Index>(items.size()));
    for (std::size_t j = 0; j < items.size(); ++j) {
        const auto src = static_cast<Eigen::Index>(items[j]);
        w.col(static_cast<Eigen::Index>(j)) =
            m.all_weights.s.col(src).cwiseProduct(m.all_weights.z.col(src).cast<double>());
    }
    return m.state.bpfa.dict * w;
}

}  // namespace tkfa
