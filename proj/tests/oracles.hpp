#pragma once

#include "tkfa/bpfa.hpp"
#include "tkfa/kfa.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <vector>

namespace oracle {

inline double log_normal(double x, double mean, double precision) {
    return 0.5 * std::log(precision / (2.0 * std::numbers::pi)) -
           0.5 * precision * (x - mean) * (x - mean);
}

inline double log_gamma_pdf(double x, double shape, double rate) {
    return shape * std::log(rate) - std::lgamma(shape) + (shape - 1.0) * std::log(x) - rate * x;
}

inline double log_beta_pdf(double x, double a, double b) {
    return std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + (a - 1.0) * std::log(x) +
           (b - 1.0) * std::log1p(-x);
}

/// Likelihood of the observed entries under X = D (S o Z) + noise.
inline double log_likelihood(const Eigen::MatrixXd& dict, const tkfa::SparseWeights& w,
                             double gamma_eps, const tkfa::FactorData& data) {
    double acc = 0.0;
    for (Eigen::Index n = 0; n < data.x.cols(); ++n)
        for (Eigen::Index i = 0; i < data.x.rows(); ++i) {
            if (data.mask(i, n) == 0.0) continue;
            double mean = 0.0;
            for (Eigen::Index k = 0; k < dict.cols(); ++k)
                if (w.z(k, n)) mean += dict(i, k) * w.s(k, n);
            acc += log_normal(data.x(i, n), mean, gamma_eps);
        }
    return acc;
}

inline double log_weight_prior(const tkfa::BpfaState& st) {
    const double kk = static_cast<double>(st.atom_count());
    const auto& h = st.hyper;
    double acc = log_gamma_pdf(st.noise.gamma_eps, h.c, h.d) +
                 log_gamma_pdf(st.noise.gamma_s, h.e, h.f);
    for (Eigen::Index k = 0; k < st.weights.s.rows(); ++k) {
        const double pi = st.weights.pi[k];
        acc += log_beta_pdf(pi, h.a_pi / kk, h.b_pi * (kk - 1.0) / kk);
        for (Eigen::Index n = 0; n < st.weights.s.cols(); ++n) {
            acc += log_normal(st.weights.s(k, n), 0.0, st.noise.gamma_s);
            acc += st.weights.z(k, n) ? std::log(pi) : std::log1p(-pi);
        }
    }
    return acc;
}

/// Full BPFA log joint, written from the model definition.
inline double bpfa_log_joint(const tkfa::BpfaState& st, const tkfa::FactorData& data) {
    const double p = static_cast<double>(st.item_size());
    double acc = log_likelihood(st.dict, st.weights, st.noise.gamma_eps, data);
    for (Eigen::Index i = 0; i < st.dict.size(); ++i) acc += log_normal(st.dict.data()[i], 0.0, p);
    return acc + log_weight_prior(st);
}

/// Kruskal dictionary prior with first_shape / alpha deltas.
inline double kruskal_log_prior(const tkfa::KruskalDictionary& kd) {
    double acc = 0.0;
    for (std::size_t k = 0; k < kd.atom_count(); ++k) {
        double tau = 1.0;
        for (std::size_t r = 0; r < kd.rank; ++r) {
            const auto kk = static_cast<Eigen::Index>(k);
            const auto rr = static_cast<Eigen::Index>(r);
            const double shape = (r == 0 && kd.first_shape > 0.0) ? kd.first_shape : kd.alpha;
            acc += log_gamma_pdf(kd.deltas(kk, rr), shape, 1.0);
            tau *= kd.deltas(kk, rr);
            acc += log_normal(kd.lambdas(kk, rr), 0.0, tau);
            for (std::size_t t = 0; t < kd.order(); ++t) {
                const double m = static_cast<double>(kd.dims[t]);
                for (Eigen::Index i = 0; i < kd.factors[k][t].rows(); ++i)
                    acc += log_normal(kd.factors[k][t](i, rr), 0.0, m);
            }
        }
    }
    return acc;
}

/// Brute-force composed atoms by nested loops over entries and components.
inline Eigen::MatrixXd compose_loops(const tkfa::KruskalDictionary& kd) {
    const std::size_t p = kd.atom_size();
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(p),
                                              static_cast<Eigen::Index>(kd.atom_count()));
    for (std::size_t k = 0; k < kd.atom_count(); ++k)
        for (std::size_t i = 0; i < p; ++i) {
            const auto idx = tkfa::unvec_index(i, kd.dims);
            for (std::size_t r = 0; r < kd.rank; ++r) {
                double v = kd.lambdas(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(r));
                for (std::size_t t = 0; t < kd.order(); ++t)
                    v *= kd.factors[k][t](static_cast<Eigen::Index>(idx[t]),
                                          static_cast<Eigen::Index>(r));
                d(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) += v;
            }
        }
    return d;
}

inline double kfa_log_joint(const tkfa::KfaState& st, const tkfa::FactorData& data) {
    return log_likelihood(compose_loops(st.kd), st.bpfa.weights, st.bpfa.noise.gamma_eps, data) +
           kruskal_log_prior(st.kd) + log_weight_prior(st.bpfa);
}

struct Moments {
    double mean = 0.0;
    double var = 0.0;
};

/// Mean and variance of exp(logf) normalized on a uniform grid by the
/// trapezoid rule.
inline Moments grid_moments(const std::function<double(double)>& logf, double lo, double hi,
                            int nodes = 20001) {
    std::vector<double> xs(static_cast<std::size_t>(nodes)), ls(xs.size());
    double top = -INFINITY;
    for (int i = 0; i < nodes; ++i) {
        xs[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / (nodes - 1);
        ls[static_cast<std::size_t>(i)] = logf(xs[static_cast<std::size_t>(i)]);
        top = std::max(top, ls[static_cast<std::size_t>(i)]);
    }
    double z = 0.0, m1 = 0.0, m2 = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double w = std::exp(ls[i] - top) * ((i == 0 || i + 1 == xs.size()) ? 0.5 : 1.0);
        z += w;
        m1 += w * xs[i];
        m2 += w * xs[i] * xs[i];
    }
    Moments m;
    m.mean = m1 / z;
    m.var = m2 / z - m.mean * m.mean;
    return m;
}

/// Grid range covering the draws with margin, clipped to [floor, ceil].
inline std::pair<double, double> draw_range(const std::vector<double>& draws, double floor,
                                            double ceil) {
    const auto [mn, mx] = std::minmax_element(draws.begin(), draws.end());
    const double span = *mx - *mn;
    return {std::max(floor, *mn - 0.5 * span), std::min(ceil, *mx + 0.5 * span)};
}

/// Sample mean of draws within 3 Monte Carlo sigma of the oracle mean, and
/// sample variance within 3 sigma of the oracle variance (normal-theory
/// standard error of a variance with the empirical fourth moment).
inline void check_moments(const std::vector<double>& draws, const Moments& m) {
    const double n = static_cast<double>(draws.size());
    double s1 = 0.0;
    for (double d : draws) s1 += d;
    const double mean = s1 / n;
    double s2 = 0.0, s4 = 0.0;
    for (double d : draws) {
        const double c = d - mean;
        s2 += c * c;
        s4 += c * c * c * c;
    }
    const double var = s2 / (n - 1.0);
    const double m4 = s4 / n;
    CHECK(std::abs(mean - m.mean) <= 3.0 * std::sqrt(m.var / n));
    CHECK(std::abs(var - m.var) <= 3.0 * std::sqrt(std::max(m4 - var * var, 0.0) / n));
}

/// Batch-means standard error for an autocorrelated series.
inline double batch_se(const std::vector<double>& xs, std::size_t batches = 50) {
    const std::size_t len = xs.size() / batches;
    std::vector<double> means(batches, 0.0);
    for (std::size_t b = 0; b < batches; ++b) {
        for (std::size_t i = 0; i < len; ++i) means[b] += xs[b * len + i];
        means[b] /= static_cast<double>(len);
    }
    double mu = 0.0;
    for (double m : means) mu += m;
    mu /= static_cast<double>(batches);
    double v = 0.0;
    for (double m : means) v += (m - mu) * (m - mu);
    v /= static_cast<double>(batches - 1);
    return std::sqrt(v / static_cast<double>(batches));
}

inline double mean_of(const std::vector<double>& xs) {
    double s = 0.0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
}

inline double se_iid(const std::vector<double>& xs) {
    const double m = mean_of(xs);
    double v = 0.0;
    for (double x : xs) v += (x - m) * (x - m);
    v /= static_cast<double>(xs.size() - 1);
    return std::sqrt(v / static_cast<double>(xs.size()));
}

}  // namespace oracle
