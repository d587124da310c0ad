#include "tkfa/pipeline.hpp"

#include "tkfa/mgpcp.hpp"
#include "tkfa/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace tkfa {
namespace {

std::vector<std::size_t> axis_strides(const Dims& dims) {
    std::vector<std::size_t> s(dims.size());
    std::size_t acc = 1;
    for (std::size_t t = 0; t < dims.size(); ++t) {
        s[t] = acc;
        acc *= dims[t];
    }
    return s;
}

}  // namespace

PatchGrid make_grid(const Dims& image_dims, const Dims& patch_dims, std::size_t stride) {
    if (stride < 1) throw std::invalid_argument("patch stride must be at least 1");
    if (image_dims.size() != patch_dims.size())
        throw std::invalid_argument("patch order differs from image order");
    PatchGrid g;
    g.image_dims = image_dims;
    g.patch_dims = patch_dims;
    g.stride = stride;
    for (std::size_t t = 0; t < image_dims.size(); ++t) {
        if (patch_dims[t] < 1 || patch_dims[t] > image_dims[t])
            throw std::invalid_argument("patch larger than image along axis " + std::to_string(t));
        std::vector<std::size_t> c;
        for (std::size_t o = 0; o + patch_dims[t] <= image_dims[t]; o += stride) c.push_back(o);
        g.grid_counts.push_back(c.size());
        g.corners.push_back(std::move(c));
    }
    const auto strides = axis_strides(image_dims);
    const std::size_t p = element_count(patch_dims);
    g.patch_offsets.resize(p);
    for (std::size_t i = 0; i < p; ++i) {
        const auto idx = unvec_index(i, patch_dims);
        std::size_t off = 0;
        for (std::size_t t = 0; t < idx.size(); ++t) off += idx[t] * strides[t];
        g.patch_offsets[i] = off;
    }
    return g;
}

std::size_t PatchGrid::base_offset(std::size_t n) const {
    std::size_t base = 0;
    std::size_t acc = 1;
    for (std::size_t t = 0; t < grid_counts.size(); ++t) {
        base += corners[t][n % grid_counts[t]] * acc;
        n /= grid_counts[t];
        acc *= image_dims[t];
    }
    return base;
}

DenseTensor extract_patches(const DenseTensor& image, const PatchGrid& grid) {
    if (image.dims() != grid.image_dims)
        throw std::invalid_argument("extract_patches: image dims differ from grid");
    Dims dims = grid.patch_dims;
    dims.push_back(grid.patch_count());
    DenseTensor out(dims);
    const std::size_t p = grid.patch_size();
    for (std::size_t n = 0; n < grid.patch_count(); ++n) {
        const std::size_t base = grid.base_offset(n);
        for (std::size_t i = 0; i < p; ++i) out[n * p + i] = image[base + grid.patch_offsets[i]];
    }
    return out;
}

ObservationMask extract_mask(const ObservationMask& mask, const PatchGrid& grid) {
    if (mask.dims != grid.image_dims)
        throw std::invalid_argument("extract_mask: mask dims differ from grid");
    ObservationMask out;
    out.dims = grid.patch_dims;
    out.dims.push_back(grid.patch_count());
    const std::size_t p = grid.patch_size();
    out.observed.resize(p * grid.patch_count());
    for (std::size_t n = 0; n < grid.patch_count(); ++n) {
        const std::size_t base = grid.base_offset(n);
        for (std::size_t i = 0; i < p; ++i)
            out.observed[n * p + i] = mask.observed[base + grid.patch_offsets[i]];
    }
    return out;
}

PatchSource::PatchSource(const DenseTensor& image, const ObservationMask* mask,
                         const PatchGrid& grid, double scale)
    : image_(image), mask_(mask), grid_(grid), scale_(scale) {
    if (image.dims() != grid.image_dims)
        throw std::invalid_argument("PatchSource: image dims differ from grid");
    if (mask && mask->dims != grid.image_dims)
        throw std::invalid_argument("PatchSource: mask dims differ from grid");
    if (!(scale > 0.0)) throw std::invalid_argument("PatchSource: scale must be positive");
}

FactorData PatchSource::fetch(std::span<const std::size_t> items) const {
    const std::size_t p = grid_.patch_size();
    FactorData out;
    out.item_dims = grid_.patch_dims;
    out.x.resize(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(items.size()));
    out.mask.resize(out.x.rows(), out.x.cols());
    std::size_t observed = 0;
    for (std::size_t j = 0; j < items.size(); ++j) {
        const std::size_t base = grid_.base_offset(items[j]);
        for (std::size_t i = 0; i < p; ++i) {
            const std::size_t pix = base + grid_.patch_offsets[i];
            const bool seen = mask_ == nullptr || mask_->observed[pix] != 0;
            const auto r = static_cast<Eigen::Index>(i);
            const auto c = static_cast<Eigen::Index>(j);
            out.x(r, c) = seen ? image_[pix] / scale_ : 0.0;
            out.mask(r, c) = seen ? 1.0 : 0.0;
            observed += seen ? 1 : 0;
        }
    }
    out.observed = observed;
    out.fully_observed = observed == p * items.size();
    return out;
}

ReconstructionAccumulator::ReconstructionAccumulator(Dims d, std::size_t b)
    : dims(std::move(d)), burnin(b) {
    sum.assign(element_count(dims), 0.0);
    weight.assign(sum.size(), 0.0);
}

DenseTensor ReconstructionAccumulator::result(const DenseTensor& fallback,
                                              std::size_t* uncovered) const {
    if (fallback.dims() != dims)
        throw std::invalid_argument("accumulator: fallback dims differ");
    DenseTensor out(dims);
    std::size_t missing = 0;
    for (std::size_t i = 0; i < sum.size(); ++i) {
        if (weight[i] > 0.0) {
            out[i] = sum[i] / weight[i];
        } else {
            out[i] = fallback[i];
            ++missing;
        }
    }
    if (uncovered) *uncovered = missing;
    return out;
}

void accumulate_sample(ReconstructionAccumulator& acc, const PatchGrid& grid,
                       const Eigen::MatrixXd& patches, std::size_t sample_index) {
    if (sample_index < acc.burnin) return;
    if (acc.dims != grid.image_dims)
        throw std::invalid_argument("accumulate_sample: accumulator dims differ from grid");
    if (static_cast<std::size_t>(patches.rows()) != grid.patch_size() ||
        static_cast<std::size_t>(patches.cols()) != grid.patch_count())
        throw std::invalid_argument("accumulate_sample: patch matrix has the wrong shape");
    for (std::size_t n = 0; n < grid.patch_count(); ++n) {
        const std::size_t base = grid.base_offset(n);
        const auto col = patches.col(static_cast<Eigen::Index>(n));
        for (std::size_t i = 0; i < grid.patch_size(); ++i) {
            const std::size_t pix = base + grid.patch_offsets[i];
            acc.sum[pix] += col[static_cast<Eigen::Index>(i)];
            acc.weight[pix] += 1.0;
        }
    }
    ++acc.kept;
}

DenseTensor add_noise(const DenseTensor& image, double sigma, RngStream& rng) {
    if (!(sigma >= 0.0)) throw std::invalid_argument("add_noise: sigma must be nonnegative");
    DenseTensor out = image;
    if (sigma == 0.0) return out;
    for (auto& v : out.data()) v += sigma * draw_standard_normal(rng);
    return out;
}

double sigma_from_percent(double percent, double peak) { return percent / 100.0 * peak; }

ObservationMask sample_mask(const Dims& dims, double keep_fraction, RngStream& rng) {
    if (!(keep_fraction >= 0.0 && keep_fraction <= 1.0))
        throw std::invalid_argument("sample_mask: keep fraction outside [0, 1]");
    ObservationMask m;
    m.dims = dims;
    m.observed.resize(element_count(dims));
    for (auto& o : m.observed) o = static_cast<std::uint8_t>(draw_bernoulli(keep_fraction, rng));
    return m;
}

namespace {

void check_same(const DenseTensor& a, const DenseTensor& b) {
    if (a.dims() != b.dims()) throw std::invalid_argument("metric inputs have different dims");
}

}  // namespace

double mse(const DenseTensor& reference, const DenseTensor& estimate) {
    check_same(reference, estimate);
    if (reference.size() == 0) throw std::invalid_argument("metric on empty tensors");
    double acc = 0.0;
    for (std::size_t i = 0; i < reference.size(); ++i) {
        const double d = reference[i] - estimate[i];
        acc += d * d;
    }
    return acc / static_cast<double>(reference.size());
}

double psnr(const DenseTensor& reference, const DenseTensor& estimate, double peak) {
    if (!(peak > 0.0)) throw std::invalid_argument("psnr: peak must be positive");
    const double e = mse(reference, estimate);
    if (e == 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / e));
}

double rrse(const DenseTensor& reference, const DenseTensor& estimate) {
    check_same(reference, estimate);
    const double ref = frobenius_norm(reference);
    if (ref == 0.0) throw std::invalid_argument("rrse: zero reference");
    double acc = 0.0;
    for (std::size_t i = 0; i < reference.size(); ++i) {
        const double d = reference[i] - estimate[i];
        acc += d * d;
    }
    return std::sqrt(acc) / ref;
}

double rmse(const DenseTensor& reference, const DenseTensor& estimate) {
    return std::sqrt(mse(reference, estimate));
}

ModelKind parse_model(const std::string& name) {
    if (name == "bpfa") return ModelKind::Bpfa;
    if (name == "kfa") return ModelKind::Kfa;
    if (name == "mgpcp") return ModelKind::Mgpcp;
    if (name == "cdf-kfa") return ModelKind::CdfKfa;
    throw std::invalid_argument("unknown model '" + name + "'");
}

std::string model_name(ModelKind kind) {
    switch (kind) {
        case ModelKind::Bpfa: return "bpfa";
        case ModelKind::Kfa: return "kfa";
        case ModelKind::Mgpcp: return "mgpcp";
        case ModelKind::CdfKfa: return "cdf-kfa";
    }
    return "unknown";
}

Dims default_patch(const Dims& image_dims) {
    if (image_dims.size() == 2) return {8, 8};
    if (image_dims.size() == 3 && image_dims[2] == 3) return {7, 7, 3};
    if (image_dims.size() == 3) return {8, 8, 8};
    throw std::invalid_argument("no default patch shape for this image order");
}

std::map<std::size_t, std::size_t> atom_rank_histogram(const Eigen::MatrixXd& atoms,
                                                       const Dims& atom_dims,
                                                       double threshold) {
    if (atom_dims.empty() || static_cast<std::size_t>(atoms.rows()) != element_count(atom_dims))
        throw std::invalid_argument("atom_rank_histogram: atom dims do not match");
    const auto rows = static_cast<Eigen::Index>(atom_dims[0]);
    const auto cols = atoms.rows() / rows;
    std::map<std::size_t, std::size_t> hist;
    for (Eigen::Index k = 0; k < atoms.cols(); ++k) {
        const Eigen::VectorXd a = atoms.col(k);
        const Eigen::Map<const Eigen::MatrixXd> unfolded(a.data(), rows, cols);
        ++hist[numerical_rank(unfolded, threshold)];
    }
    return hist;
}

namespace {

DenseTensor to_image_scale(const DenseTensor& acc_result, double peak) {
    DenseTensor out = acc_result;
    for (auto& v : out.data()) v = std::clamp(v * peak, 0.0, peak);
    return out;
}

void run_gibbs(const FactorData& data, const PatchGrid& grid, const RestorationConfig& cfg,
               ReconstructionAccumulator& acc, RestorationResult& res) {
    const RngStream rng(cfg.seed, 1);
    const bool kruskal = cfg.model == ModelKind::Kfa;
    KfaState st;
    if (kruskal) {
        KfaOptions ko;
        ko.rank = cfg.rank;
        ko.alpha_mode = cfg.alpha_mode;
        st = kfa_init(data, cfg.atoms, rng, ko);
        res.rank_used = st.kd.rank;
    } else {
        st.bpfa = bpfa_init(data, cfg.atoms, rng);
    }
    if (cfg.initial_dictionary) {
        if (kruskal) throw std::invalid_argument("an initial dictionary requires the bpfa model");
        if (cfg.initial_dictionary->rows() != st.bpfa.dict.rows() ||
            cfg.initial_dictionary->cols() != st.bpfa.dict.cols())
            throw std::invalid_argument("initial dictionary shape does not match patches and K");
        st.bpfa.dict = *cfg.initial_dictionary;
        st.bpfa.residual = recompute_residual(st.bpfa, data);
    }
    SweepOptions opts;
    opts.threads = cfg.threads;
    opts.update_dictionary = !cfg.freeze_dictionary;
    for (std::size_t it = 0; it < cfg.samples; ++it) {
        if (kruskal)
            kfa_sweep(st, data, opts);
        else
            bpfa_sweep(st.bpfa, data, opts);
        if (it >= cfg.burnin) accumulate_sample(acc, grid, reconstruct_items(st.bpfa), it);
    }
    res.dictionary = st.bpfa.dict;
    res.noise = st.bpfa.noise;
    if (kruskal) res.kruskal = st.kd;
}

void run_streaming(const DenseTensor& scaled_source, const ObservationMask& mask,
                   const PatchGrid& grid, const RestorationConfig& cfg,
                   ReconstructionAccumulator& acc, RestorationResult& res) {
    PatchSource source(scaled_source, &mask, grid, 1.0);
    KfaOptions ko;
    ko.rank = cfg.rank;
    ko.alpha_mode = cfg.alpha_mode;
    BcdfModel model = bcdf_init(source, cfg.atoms, true, RngStream(cfg.seed, 1), ko);
    res.rank_used = model.state.kd.rank;
    BatchPlan plan = cfg.plan;
    plan.shuffle_seed = cfg.seed;
    std::vector<std::size_t> all(grid.patch_count());
    std::iota(all.begin(), all.end(), std::size_t{0});
    const auto keep = [&](const BcdfModel& m, std::size_t) {
        accumulate_sample(acc, grid, bcdf_reconstruct(m, all), acc.burnin);
    };
    bcdf_train(source, model, plan, cfg.threads, keep);
    res.dictionary = model.state.bpfa.dict;
    res.noise = model.state.bpfa.noise;
    res.kruskal = model.state.kd;
}

void run_mgpcp_patches(const FactorData& data, const PatchGrid& grid,
                       const RestorationConfig& cfg, ReconstructionAccumulator& acc,
                       RestorationResult& res) {
    const std::size_t rank =
        cfg.rank > 0 ? cfg.rank : rank_report(grid.patch_dims).generic_rank;
    res.rank_used = rank;
    MgpcpOptions mo;
    mo.sweeps = cfg.samples;
    mo.burnin = cfg.burnin;
    mo.alpha_mode = cfg.alpha_mode;
    const std::size_t n = data.item_count();
    Eigen::MatrixXd est(data.x.rows(), static_cast<Eigen::Index>(n));
    const RngStream master(cfg.seed, 2);
    parallel_for(n, cfg.threads, [&](std::size_t j) {
        const auto c = static_cast<Eigen::Index>(j);
        const Eigen::VectorXd col = data.x.col(c);
        DenseTensor patch(grid.patch_dims, std::vector<double>(col.data(), col.data() + col.size()));
        ObservationMask m;
        m.dims = grid.patch_dims;
        m.observed.resize(grid.patch_size());
        for (std::size_t i = 0; i < m.observed.size(); ++i)
            m.observed[i] = data.mask(static_cast<Eigen::Index>(i), c) > 0.0 ? 1 : 0;
        const MgpcpResult r = mgpcp_fit(patch, rank, &m, master.split(j), mo);
        est.col(c) = Eigen::Map<const Eigen::VectorXd>(r.reconstruction.data().data(),
                                                       static_cast<Eigen::Index>(r.reconstruction.size()));
    });
    accumulate_sample(acc, grid, est, acc.burnin);
}

}  // namespace

RestorationResult restore(const DenseTensor& corrupted, const ObservationMask& mask,
                          const DenseTensor& reference, const RestorationConfig& cfg) {
    if (mask.dims != corrupted.dims())
        throw std::invalid_argument("restore: mask dims differ from image dims");
    if (cfg.atoms < 1) throw std::invalid_argument("restore: K must be at least 1");
    if (cfg.samples < 1) throw std::invalid_argument("restore: need at least one sample");
    if (cfg.burnin >= cfg.samples && cfg.model != ModelKind::CdfKfa)
        throw std::invalid_argument("restore: burn-in must be smaller than the sample count");
    if (!(cfg.peak > 0.0)) throw std::invalid_argument("restore: peak must be positive");

    const Dims patch = cfg.patch.empty() ? default_patch(corrupted.dims()) : cfg.patch;
    const PatchGrid grid = make_grid(corrupted.dims(), patch, cfg.stride);

    DenseTensor scaled = corrupted;
    for (auto& v : scaled.data()) v /= cfg.peak;

    RestorationResult res;
    res.corrupted = corrupted;
    res.mask = mask;
    res.patches = grid.patch_count();
    ReconstructionAccumulator acc(corrupted.dims(), cfg.burnin);

    if (cfg.model == ModelKind::CdfKfa) {
        acc.burnin = 0;
        run_streaming(scaled, mask, grid, cfg, acc, res);
    } else {
        const PatchSource source(scaled, &mask, grid, 1.0);
        std::vector<std::size_t> all(grid.patch_count());
        std::iota(all.begin(), all.end(), std::size_t{0});
        const FactorData data = source.fetch(all);
        if (cfg.model == ModelKind::Mgpcp) {
            acc.burnin = 0;
            run_mgpcp_patches(data, grid, cfg, acc, res);
        } else {
            run_gibbs(data, grid, cfg, acc, res);
        }
    }

    DenseTensor fallback = scaled;
    for (std::size_t i = 0; i < fallback.size(); ++i)
        if (!mask.observed[i]) fallback[i] = 0.0;
    res.reconstruction = to_image_scale(acc.result(fallback, &res.uncovered), cfg.peak);
    if (res.dictionary.size() > 0)
        res.rank_histogram = atom_rank_histogram(res.dictionary, patch);
    if (reference.size() > 0) {
        res.psnr_db = psnr(reference, res.reconstruction, cfg.peak);
        res.rrse = rrse(reference, res.reconstruction);
        res.rmse = rmse(reference, res.reconstruction);
    }
    return res;
}

RestorationResult run_restoration(const DenseTensor& clean, const RestorationConfig& cfg) {
    RngStream noise_rng(cfg.seed, 0x9015eULL);
    RngStream mask_rng(cfg.seed, 0x3a5cULL);
    const DenseTensor noisy = add_noise(clean, cfg.sigma, noise_rng);
    const ObservationMask mask = cfg.keep >= 1.0 ? ObservationMask::all_observed(clean.dims())
                                                 : sample_mask(clean.dims(), cfg.keep, mask_rng);
    DenseTensor corrupted = noisy;
    for (std::size_t i = 0; i < corrupted.size(); ++i)
        if (!mask.observed[i]) corrupted[i] = 0.0;
    return restore(corrupted, mask, clean, cfg);
}

}  // namespace tkfa
