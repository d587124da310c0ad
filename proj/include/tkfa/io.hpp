#pragma once

#include "tkfa/kfa.hpp"
#include "tkfa/tensor.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

namespace tkfa {

/// P5 -> dims (W, H); P6 -> dims (W, H, 3) with planar channels. maxval 255.
DenseTensor read_image(const std::filesystem::path& path);
DenseTensor parse_image(std::istream& in);
/// Order 2 -> P5, order 3 with 3 channels -> P6; values rounded and clamped.
void write_image(const std::filesystem::path& path, const DenseTensor& image);
void format_image(std::ostream& out, const DenseTensor& image);

/// "KFT1", u32 order, u64 dims, f64 payload, all little-endian.
DenseTensor read_tensor(const std::filesystem::path& path);
DenseTensor parse_tensor(std::istream& in);
void write_tensor(const std::filesystem::path& path, const DenseTensor& x);
void format_tensor(std::ostream& out, const DenseTensor& x);

struct DictionaryRecord {
    std::string model;  // "bpfa" or "kfa"
    Dims dims;
    std::size_t atoms = 0;
    std::size_t rank = 0;
    double alpha = 0.0;
    double gamma_eps = 0.0;
    double gamma_s = 0.0;
    std::uint64_t seed = 0;
    Eigen::MatrixXd composed;              // P x K
    std::optional<KruskalDictionary> kruskal;

    /// Stored scalars: P K for bpfa, K R (1 + sum m_t) for kfa.
    std::size_t parameter_count() const;
};

DictionaryRecord make_bpfa_record(const Eigen::MatrixXd& dict, const Dims& dims,
                                  double gamma_eps, double gamma_s, std::uint64_t seed);
DictionaryRecord make_kfa_record(const KruskalDictionary& kd, double gamma_eps, double gamma_s,
                                 std::uint64_t seed);

void save_dictionary(const std::filesystem::path& path, const DictionaryRecord& rec);
/// expected_model, when non-empty, must match the stored model tag.
DictionaryRecord load_dictionary(const std::filesystem::path& path,
                                 const std::string& expected_model = {});

/// Atoms tiled on a ceil(sqrt K) grid with 1-pixel separators; each atom is
/// unfolded to 2-D and stretched to [0, 255].
DenseTensor dictionary_mosaic(const Eigen::MatrixXd& atoms, const Dims& atom_dims);

}  // namespace tkfa
