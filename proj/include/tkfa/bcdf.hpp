#pragma once

#include "tkfa/bpfa.hpp"
#include "tkfa/kfa.hpp"

#include <cstddef>
#include <functional>
#include <span>

namespace tkfa {

/// Pull-based access to a stack of items; fetch may be called in any order
/// and any number of times.
class DataSource {
public:
    virtual ~DataSource() = default;
    virtual std::size_t item_count() const = 0;
    virtual Dims item_dims() const = 0;
    virtual FactorData fetch(std::span<const std::size_t> items) const = 0;
};

/// Items already resident in memory.
class MatrixSource final : public DataSource {
public:
    explicit MatrixSource(const FactorData& data) : data_(data) {}
    std::size_t item_count() const override { return data_.item_count(); }
    Dims item_dims() const override { return data_.item_dims; }
    FactorData fetch(std::span<const std::size_t> items) const override {
        return FactorData::columns(data_, items);
    }

private:
    const FactorData& data_;
};

using Scss = CarriedStats;

struct BatchPlan {
    std::size_t epochs = 10;
    std::size_t burnin_epochs = 5;
    std::size_t batch_size = 5000;
    std::size_t inner_iterations = 3;
    std::uint64_t shuffle_seed = 0;
};

/// Prior parameters after adding carried statistics.
struct EffectivePrior {
    Eigen::MatrixXd atom_precision;  // P x K
    Eigen::MatrixXd atom_mean;       // P x K, unscaled
    Eigen::VectorXd pi_a;
    Eigen::VectorXd pi_b;
    double eps_shape = 0.0;
    double eps_rate = 0.0;
    double s_shape = 0.0;
    double s_rate = 0.0;
};

/// prior hyperparameters + accumulated SCSS; the atom prior precision is P.
EffectivePrior scss_apply(const Scss& scss, const Hyperparameters& hyper, std::size_t item_size,
                          std::size_t atoms);

/// Global model plus the local weights of every item.
struct BcdfModel {
    bool kruskal = false;
    KfaState state;           // weights and residual hold the current batch only
    SparseWeights all_weights;  // K x N
};

struct BcdfReport {
    std::size_t batches = 0;
    Scss last_scss;  // accumulated over the final epoch, before the reset
};

/// Called after every post-burn-in epoch with the model and epoch index.
using EpochCallback = std::function<void(const BcdfModel&, std::size_t epoch)>;

/// Streaming trainer: per epoch shuffle and partition, per batch one
/// local/hyperparameter pass then full sweeps with the SCSS as prior, SCSS
/// accumulated after the last inner iteration and reset at each epoch end.
/// After the first epoch every item's weights are refreshed once.
BcdfReport bcdf_train(const DataSource& source, BcdfModel& model, const BatchPlan& plan,
                      unsigned threads = 1, const EpochCallback& on_sample = {});

/// Fresh model with random state over all items of the source.
BcdfModel bcdf_init(const DataSource& source, std::size_t atoms, bool kruskal, RngStream rng,
                    const KfaOptions& kfa = {});

/// D (S o Z) for the given items using the stored weights.
Eigen::MatrixXd bcdf_reconstruct(const BcdfModel& model, std::span<const std::size_t> items);

}  // namespace tkfa
