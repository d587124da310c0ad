#pragma once

#include "tkfa/bcdf.hpp"
#include "tkfa/bpfa.hpp"
#include "tkfa/kfa.hpp"
#include "tkfa/tensor.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace tkfa {

/// Patches of size B_t at corners 0, D, 2D, ... along every axis.
struct PatchGrid {
    Dims image_dims;
    Dims patch_dims;
    std::size_t stride = 1;
    std::vector<std::vector<std::size_t>> corners;  // per axis
    std::vector<std::size_t> patch_offsets;         // image offsets of patch entries
    Dims grid_counts;

    std::size_t patch_count() const { return element_count(grid_counts); }
    std::size_t patch_size() const { return element_count(patch_dims); }
    /// Linear image index of the first entry of patch n.
    std::size_t base_offset(std::size_t n) const;
};

PatchGrid make_grid(const Dims& image_dims, const Dims& patch_dims, std::size_t stride);

/// Stack of all patches, dims (B_1..B_T, N).
DenseTensor extract_patches(const DenseTensor& image, const PatchGrid& grid);
ObservationMask extract_mask(const ObservationMask& mask, const PatchGrid& grid);

/// Patches pulled from an image on demand, scaled by 1/scale.
class PatchSource final : public DataSource {
public:
    PatchSource(const DenseTensor& image, const ObservationMask* mask, const PatchGrid& grid,
                double scale);
    std::size_t item_count() const override { return grid_.patch_count(); }
    Dims item_dims() const override { return grid_.patch_dims; }
    FactorData fetch(std::span<const std::size_t> items) const override;

private:
    const DenseTensor& image_;
    const ObservationMask* mask_;
    const PatchGrid& grid_;
    double scale_;
};

/// Overlap-averaged image estimate over kept samples.
struct ReconstructionAccumulator {
    Dims dims;
    std::vector<double> sum;
    std::vector<double> weight;
    std::size_t burnin = 0;
    std::size_t kept = 0;

    ReconstructionAccumulator() = default;
    ReconstructionAccumulator(Dims dims, std::size_t burnin);

    /// Pixels with zero weight take the fallback value; their count goes to
    /// *uncovered when given.
    DenseTensor result(const DenseTensor& fallback, std::size_t* uncovered = nullptr) const;
};

/// Adds the P x N patch estimates (already at image scale) unless
/// sample_index < burnin.
void accumulate_sample(ReconstructionAccumulator& acc, const PatchGrid& grid,
                       const Eigen::MatrixXd& patches, std::size_t sample_index);

DenseTensor add_noise(const DenseTensor& image, double sigma, RngStream& rng);

/// sigma for a noise level given as a percentage of the peak value.
double sigma_from_percent(double percent, double peak);

ObservationMask sample_mask(const Dims& dims, double keep_fraction, RngStream& rng);

inline constexpr double kPsnrCap = 99.99;

double mse(const DenseTensor& reference, const DenseTensor& estimate);
double psnr(const DenseTensor& reference, const DenseTensor& estimate, double peak);
double rrse(const DenseTensor& reference, const DenseTensor& estimate);
double rmse(const DenseTensor& reference, const DenseTensor& estimate);

enum class ModelKind { Bpfa, Kfa, Mgpcp, CdfKfa };

ModelKind parse_model(const std::string& name);
std::string model_name(ModelKind kind);

struct RestorationConfig {
    ModelKind model = ModelKind::Kfa;
    std::size_t atoms = 256;
    std::size_t rank = 0;  // 0 selects the rank_report default
    std::size_t stride = 1;
    Dims patch;            // empty selects 8x8 gray, 7x7x3 color
    double sigma = 0.0;    // pixel units
    double keep = 1.0;
    std::size_t samples = 150;
    std::size_t burnin = 40;
    std::uint64_t seed = 0;
    unsigned threads = 1;
    AlphaMode alpha_mode = AlphaMode::Map;
    BatchPlan plan;
    double peak = 255.0;
    std::optional<Eigen::MatrixXd> initial_dictionary;  // P x K, unit scale
    bool freeze_dictionary = false;
};

struct RestorationResult {
    DenseTensor corrupted;
    DenseTensor reconstruction;  // float, clipped to [0, peak]
    ObservationMask mask;
    double psnr_db = 0.0;
    double rrse = 0.0;
    double rmse = 0.0;
    std::size_t patches = 0;
    std::size_t uncovered = 0;
    std::size_t rank_used = 0;
    std::map<std::size_t, std::size_t> rank_histogram;
    Eigen::MatrixXd dictionary;  // P x K composed atoms, unit scale
    std::optional<KruskalDictionary> kruskal;
    NoisePrecisions noise;
};

/// Default patch shape for an image: 8x8 for gray, 7x7x3 for 3-channel color.
Dims default_patch(const Dims& image_dims);

/// Corrupt (noise, then mask), extract, train, average and score against
/// the clean image.
RestorationResult run_restoration(const DenseTensor& clean, const RestorationConfig& cfg);

/// Same, starting from an already corrupted image and mask; metrics against
/// reference when it is non-empty.
RestorationResult restore(const DenseTensor& corrupted, const ObservationMask& mask,
                          const DenseTensor& reference, const RestorationConfig& cfg);

/// numerical_rank of each atom unfolded to (m_1) x (m_2 ... m_T).
std::map<std::size_t, std::size_t> atom_rank_histogram(const Eigen::MatrixXd& atoms,
                                                       const Dims& atom_dims,
                                                       double threshold = 1e-6);

}  // namespace tkfa
