#include "tkfa/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>

namespace tkfa {

std::size_t element_count(std::span<const std::size_t> dims) {
    return std::accumulate(dims.begin(), dims.end(), std::size_t{1},
                           std::multiplies<>());
}

std::size_t vec_index(std::span<const std::size_t> index,
                      std::span<const std::size_t> dims) {
    if (index.size() != dims.size())
        throw std::invalid_argument("vec_index: index has " +
                                    std::to_string(index.size()) +
                                    " axes, tensor has " +
                                    std::to_string(dims.size()));
    std::size_t linear = 0;
    std::size_t stride = 1;
    for (std::size_t t = 0; t < dims.size(); ++t) {
        if (index[t] >= dims[t])
            throw std::out_of_range("vec_index: axis " + std::to_string(t) +
                                    " index " + std::to_string(index[t]) +
                                    " out of range [0, " +
                                    std::to_string(dims[t]) + ")");
        linear += index[t] * stride;
        stride *= dims[t];
    }
    return linear;
}

std::vector<std::size_t> unvec_index(std::size_t linear,
                                     std::span<const std::size_t> dims) {
    std::vector<std::size_t> index(dims.size());
    for (std::size_t t = 0; t < dims.size(); ++t) {
        index[t] = linear % dims[t];
        linear /= dims[t];
    }
    return index;
}

std::vector<std::vector<std::uint32_t>>
mode_coordinates(std::span<const std::size_t> dims) {
    const std::size_t total = element_count(dims);
    std::vector<std::vector<std::uint32_t>> coords(
        dims.size(), std::vector<std::uint32_t>(total));
    std::size_t stride = 1;
    for (std::size_t t = 0; t < dims.size(); ++t) {
        for (std::size_t i = 0; i < total; ++i)
            coords[t][i] = static_cast<std::uint32_t>((i / stride) % dims[t]);
        stride *= dims[t];
    }
    return coords;
}

DenseTensor::DenseTensor(Dims dims) : dims_(std::move(dims)) {
    data_.assign(element_count(dims_), 0.0);
}

DenseTensor::DenseTensor(Dims dims, std::vector<double> data)
    : dims_(std::move(dims)), data_(std::move(data)) {
    if (data_.size() != element_count(dims_))
        throw std::invalid_argument("DenseTensor: data length " +
                                    std::to_string(data_.size()) +
                                    " does not match dims product " +
                                    std::to_string(element_count(dims_)));
}

Eigen::Map<const Eigen::MatrixXd> DenseTensor::as_matrix() const {
    const auto cols = dims_.empty() ? std::size_t{1} : dims_.back();
    const auto rows = cols == 0 ? std::size_t{0} : data_.size() / cols;
    return {data_.data(), static_cast<Eigen::Index>(rows),
            static_cast<Eigen::Index>(cols)};
}

Eigen::Map<Eigen::MatrixXd> DenseTensor::as_matrix() {
    const auto cols = dims_.empty() ? std::size_t{1} : dims_.back();
    const auto rows = cols == 0 ? std::size_t{0} : data_.size() / cols;
    return {data_.data(), static_cast<Eigen::Index>(rows),
            static_cast<Eigen::Index>(cols)};
}

DenseTensor mode_product(const DenseTensor& dict, const Eigen::MatrixXd& weights) {
    if (dict.order() < 1)
        throw std::invalid_argument("mode_product: dictionary has order 0");
    const std::size_t k = dict.dims().back();
    if (static_cast<std::size_t>(weights.rows()) != k)
        throw std::invalid_argument("mode_product: dictionary has " +
                                    std::to_string(k) + " atoms, weights have " +
                                    std::to_string(weights.rows()) + " rows");
    Dims out_dims = dict.dims();
    out_dims.back() = static_cast<std::size_t>(weights.cols());
    DenseTensor out(out_dims);
    out.as_matrix() = dict.as_matrix() * weights;
    return out;
}

DenseTensor kruskal_compose(std::span<const Eigen::MatrixXd> factors,
                            const Eigen::VectorXd& lambdas) {
    if (factors.empty())
        throw std::invalid_argument("kruskal_compose: no factor matrices");
    const Eigen::Index r = lambdas.size();
    Dims dims;
    for (std::size_t t = 0; t < factors.size(); ++t) {
        if (factors[t].cols() != r)
            throw std::invalid_argument(
                "kruskal_compose: factor " + std::to_string(t) + " has " +
                std::to_string(factors[t].cols()) + " components, expected " +
                std::to_string(r));
        dims.push_back(static_cast<std::size_t>(factors[t].rows()));
    }
    DenseTensor out(dims);
    const auto coords = mode_coordinates(dims);
    for (std::size_t i = 0; i < out.size(); ++i) {
        double v = 0.0;
        for (Eigen::Index c = 0; c < r; ++c) {
            double p = lambdas[c];
            for (std::size_t t = 0; t < factors.size(); ++t)
                p *= factors[t](coords[t][i], c);
            v += p;
        }
        out[i] = v;
    }
    return out;
}

RankReport rank_report(std::span<const std::size_t> dims) {
    if (dims.empty())
        throw std::invalid_argument("rank_report: empty dimension vector");
    for (auto m : dims)
        if (m == 0) throw std::invalid_argument("rank_report: zero dimension");

    Dims sorted(dims.begin(), dims.end());
    std::sort(sorted.begin(), sorted.end());
    const std::size_t largest = sorted.back();

    // Products can overflow for very large shapes; long double keeps the
    // comparison meaningful there.
    long double head_product = 1.0L;
    long double head_excess = 0.0L;
    for (std::size_t t = 0; t + 1 < sorted.size(); ++t) {
        head_product *= static_cast<long double>(sorted[t]);
        head_excess += static_cast<long double>(sorted[t] - 1);
    }

    RankReport rep;
    rep.dims = Dims(dims.begin(), dims.end());
    if (static_cast<long double>(largest) <= head_product - head_excess) {
        rep.balance = Balance::Balanced;
        long double total = head_product * static_cast<long double>(largest);
        long double dim_sum = 0.0L;
        for (auto m : sorted) dim_sum += static_cast<long double>(m);
        const long double denom =
            dim_sum - static_cast<long double>(sorted.size()) + 1.0L;
        rep.generic_rank = static_cast<std::size_t>(std::ceil(total / denom));
    } else {
        rep.balance = Balance::Unbalanced;
        rep.generic_rank = static_cast<std::size_t>(
            std::min(static_cast<long double>(largest), head_product));
    }
    rep.default_model_rank = rep.generic_rank > 1 ? rep.generic_rank - 1 : 1;
    return rep;
}

std::size_t numerical_rank(const Eigen::MatrixXd& m, double threshold) {
    if (!m.allFinite())
        throw std::invalid_argument("numerical_rank: non-finite entries");
    if (!(threshold > 0.0))
        throw std::invalid_argument("numerical_rank: threshold must be positive");
    if (m.size() == 0) return 0;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
    const auto& sv = svd.singularValues();
    return static_cast<std::size_t>((sv.array() > threshold).count());
}

double frobenius_norm(const DenseTensor& x) {
    double s = 0.0;
    for (double v : x.data()) s += v * v;
    return std::sqrt(s);
}

}  // namespace tkfa
