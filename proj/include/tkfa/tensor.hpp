#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace tkfa {

using Dims = std::vector<std::size_t>;

/// Product of all dimensions; 1 for an empty vector.
std::size_t element_count(std::span<const std::size_t> dims);

/// Linear offset of a multi-index under first-index-fastest layout:
/// i_1 + i_2 m_1 + ... + i_T m_1 ... m_{T-1} (0-based).
/// Throws std::out_of_range naming the offending axis.
std::size_t vec_index(std::span<const std::size_t> index,
                      std::span<const std::size_t> dims);

/// Inverse of vec_index.
std::vector<std::size_t> unvec_index(std::size_t linear,
                                     std::span<const std::size_t> dims);

/// coords[t][i] is the mode-t coordinate of linear index i.
std::vector<std::vector<std::uint32_t>>
mode_coordinates(std::span<const std::size_t> dims);

/// Order-T real array stored first-index-fastest.
class DenseTensor {
public:
    DenseTensor() = default;
    explicit DenseTensor(Dims dims);
    DenseTensor(Dims dims, std::vector<double> data);

    const Dims& dims() const { return dims_; }
    std::size_t order() const { return dims_.size(); }
    std::size_t size() const { return data_.size(); }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }

    double& operator[](std::size_t linear) { return data_[linear]; }
    double operator[](std::size_t linear) const { return data_[linear]; }

    double& at(std::span<const std::size_t> index) {
        return data_[vec_index(index, dims_)];
    }
    double at(std::span<const std::size_t> index) const {
        return data_[vec_index(index, dims_)];
    }
    double& at(std::initializer_list<std::size_t> index) {
        return at(std::span<const std::size_t>(index.begin(), index.size()));
    }
    double at(std::initializer_list<std::size_t> index) const {
        return at(std::span<const std::size_t>(index.begin(), index.size()));
    }

    /// Column-major view as an (m_1 ... m_{T-1}) x m_T matrix.
    Eigen::Map<const Eigen::MatrixXd> as_matrix() const;
    Eigen::Map<Eigen::MatrixXd> as_matrix();

    bool operator==(const DenseTensor&) const = default;

private:
    Dims dims_;
    std::vector<double> data_;
};

/// Mode-(T+1) product: D has dims (m_1..m_T, K), W is K x N; the result has
/// dims (m_1..m_T, N) with x_{i,n} = sum_k d_{i,k} w_{k,n}.
DenseTensor mode_product(const DenseTensor& dict, const Eigen::MatrixXd& weights);

/// One Kruskal atom: d_i = sum_r lambda_r prod_t U_t(i_t, r).
/// factors[t] is m_t x R.
DenseTensor kruskal_compose(std::span<const Eigen::MatrixXd> factors,
                            const Eigen::VectorXd& lambdas);

enum class Balance { Balanced, Unbalanced };

struct RankReport {
    Dims dims;
    Balance balance = Balance::Unbalanced;
    std::size_t generic_rank = 1;
    std::size_t default_model_rank = 1;
};

/// Balance class and generic rank (R_G for unbalanced, R_E for balanced)
/// of the shape. The largest dimension plays the role of m_T.
RankReport rank_report(std::span<const std::size_t> dims);

/// Number of singular values strictly above threshold.
std::size_t numerical_rank(const Eigen::MatrixXd& m, double threshold = 1e-6);

double frobenius_norm(const DenseTensor& x);

}  // namespace tkfa
