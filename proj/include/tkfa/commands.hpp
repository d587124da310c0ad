#pragma once

#include "tkfa/pipeline.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace tkfa {

struct RunConfig {
    std::string subcommand;
    ModelKind model = ModelKind::Kfa;
    std::string input;
    std::string reference;
    std::string output;
    std::string mask;
    std::string dict_in;
    std::string dict_out;
    std::string metrics;
    std::string report;
    std::size_t atoms = 0;  // 0 selects 256 for gray, 512 for color
    std::size_t rank = 0;   // 0 selects the rank_report default
    std::size_t stride = 1;
    Dims patch;             // empty selects default_patch
    double sigma = 0.0;     // pixel units
    double sigma_percent = -1.0;  // nonnegative overrides sigma as a percentage of the peak
    double keep = -1.0;     // negative selects 1 for denoise, 0.2 for inpaint
    std::optional<std::size_t> samples;  // 150 for restoration, 3000 for decompose
    std::optional<std::size_t> burnin;   // 40 for restoration, half for decompose
    std::uint64_t seed = 0;
    unsigned threads = 0;   // 0 defers to TKFA_THREADS, then the hardware
    bool streaming = false;
    std::size_t epochs = 10;
    std::optional<std::size_t> burnin_epochs;  // default 5, at most half the epochs
    std::size_t batch_size = 5000;
    AlphaMode alpha_mode = AlphaMode::Map;
    bool freeze_dictionary = false;
};

/// Ordered key=value lines.
class Metrics {
public:
    void add(const std::string& key, double value);
    void add(const std::string& key, std::size_t value);
    void add(const std::string& key, const std::string& value);
    const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }
    std::string value(const std::string& key) const;
    std::string format() const;

private:
    std::vector<std::pair<std::string, std::string>> entries_;
};

/// Images by extension (.pgm, .ppm); anything else is a tensor container.
bool is_image_path(const std::string& path);
DenseTensor read_array(const std::string& path);
void write_array(const std::string& path, const DenseTensor& x);

/// Denoising or inpainting of an image or volume. Without --reference the
/// input is clean and is corrupted here; with it the input is the observed
/// data and --mask, when given, marks observed entries by nonzero values.
Metrics cmd_restore(const RunConfig& cfg);
Metrics cmd_decompose(const RunConfig& cfg);
Metrics cmd_eval(const RunConfig& cfg);

/// 625 separable 4-D DCT-II atoms of side 5, unit norm.
Eigen::MatrixXd dct4_dictionary();

struct DctRecoveryConfig {
    std::size_t items = 500;
    std::size_t nonzeros = 8;
    double noise_variance = 0.01;
    std::size_t iterations = 100;
    std::uint64_t seed = 0;
    unsigned threads = 1;
};

struct DctRecoveryReport {
    double rmse_bpfa = 0.0;
    double rmse_kfa_r1 = 0.0;
    double rmse_kfa_r30 = 0.0;
    std::map<std::size_t, std::size_t> kfa_r30_ranks;
    Eigen::MatrixXd bpfa_atoms;
    Eigen::MatrixXd kfa_r1_atoms;
    Eigen::MatrixXd kfa_r30_atoms;
};

/// Trains BPFA and KFA (R = 1 and R = 30) on synthetic DCT data; RMSE is
/// between the clean signals and the reconstruction averaged over the
/// second half of the iterations.
DctRecoveryReport dct_recovery(const DctRecoveryConfig& cfg);
Metrics cmd_dct_recovery(const RunConfig& cfg);

/// Dispatches on cfg.subcommand, writes the metrics file (or prints it) and
/// the JSON run report. Returns a process exit code.
int run_command(const RunConfig& cfg, std::ostream& out, std::ostream& err);

}  // namespace tkfa
