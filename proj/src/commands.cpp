#include "tkfa/commands.hpp"

#include "tkfa/io.hpp"
#include "tkfa/mgpcp.hpp"
#include "tkfa/parallel.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace tkfa {
namespace {

std::string format_real(double v) {
    std::ostringstream o;
    o.precision(10);
    o << v;
    return o.str();
}

std::string lower_extension(const std::string& path) {
    std::string ext = std::filesystem::path(path).extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return ext;
}

double data_peak(const DenseTensor& x) {
    double p = 0.0;
    for (double v : x.data()) p = std::max(p, std::abs(v));
    return p > 0.0 ? p : 1.0;
}

double safe_rrse(const DenseTensor& reference, const DenseTensor& estimate) {
    if (frobenius_norm(reference) > 0.0) return rrse(reference, estimate);
    return frobenius_norm(estimate) > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
}

ObservationMask mask_from_array(const DenseTensor& m, const Dims& dims) {
    if (m.dims() != dims) throw std::invalid_argument("mask dims differ from the input dims");
    ObservationMask out;
    out.dims = dims;
    out.observed.resize(m.size());
    for (std::size_t i = 0; i < m.size(); ++i) out.observed[i] = m[i] != 0.0 ? 1 : 0;
    return out;
}

void add_histogram(Metrics& m, const std::map<std::size_t, std::size_t>& hist,
                   const std::string& prefix) {
    for (const auto& [rank, count] : hist) m.add(prefix + std::to_string(rank), count);
}

double keep_fraction(const RunConfig& cfg) {
    if (cfg.keep >= 0.0) return cfg.keep;
    return cfg.subcommand == "inpaint" ? 0.2 : 1.0;
}

}  // namespace

void Metrics::add(const std::string& key, double value) { entries_.emplace_back(key, format_real(value)); }

void Metrics::add(const std::string& key, std::size_t value) {
    entries_.emplace_back(key, std::to_string(value));
}

void Metrics::add(const std::string& key, const std::string& value) {
    entries_.emplace_back(key, value);
}

std::string Metrics::value(const std::string& key) const {
    for (const auto& [k, v] : entries_)
        if (k == key) return v;
    throw std::out_of_range("no metric '" + key + "'");
}

std::string Metrics::format() const {
    std::string out;
    for (const auto& [k, v] : entries_) out += k + "=" + v + "\n";
    return out;
}

bool is_image_path(const std::string& path) {
    const std::string ext = lower_extension(path);
    return ext == ".pgm" || ext == ".ppm";
}

DenseTensor read_array(const std::string& path) {
    return is_image_path(path) ? read_image(path) : read_tensor(path);
}

void write_array(const std::string& path, const DenseTensor& x) {
    if (is_image_path(path))
        write_image(path, x);
    else
        write_tensor(path, x);
}

Metrics cmd_restore(const RunConfig& cfg) {
    if (cfg.input.empty()) throw std::invalid_argument("--input is required");
    const DenseTensor input = read_array(cfg.input);
    const bool image = is_image_path(cfg.input);

    RestorationConfig rc;
    rc.model = cfg.streaming ? ModelKind::CdfKfa : cfg.model;
    const bool color = input.order() == 3 && input.dims()[2] == 3;
    rc.atoms = cfg.atoms > 0 ? cfg.atoms : (color ? 512 : 256);
    rc.rank = cfg.rank;
    rc.stride = cfg.stride;
    rc.patch = cfg.patch;
    rc.sigma = cfg.sigma;
    rc.keep = keep_fraction(cfg);
    rc.samples = cfg.samples.value_or(150);
    rc.burnin = cfg.burnin.value_or(std::min<std::size_t>(40, rc.samples / 2));
    rc.seed = cfg.seed;
    rc.threads = resolve_threads(cfg.threads);
    rc.alpha_mode = cfg.alpha_mode;
    rc.plan.epochs = cfg.epochs;
    rc.plan.burnin_epochs =
        cfg.burnin_epochs.value_or(std::min<std::size_t>(rc.plan.burnin_epochs, cfg.epochs / 2));
    rc.plan.batch_size = cfg.batch_size;
    rc.freeze_dictionary = cfg.freeze_dictionary;
    if (!cfg.dict_in.empty()) rc.initial_dictionary = load_dictionary(cfg.dict_in).composed;

    RestorationResult res;
    if (cfg.reference.empty()) {
        rc.peak = image ? 255.0 : data_peak(input);
        if (cfg.sigma_percent >= 0.0) rc.sigma = sigma_from_percent(cfg.sigma_percent, rc.peak);
        res = run_restoration(input, rc);
    } else {
        const DenseTensor reference = read_array(cfg.reference);
        if (reference.dims() != input.dims())
            throw std::invalid_argument("reference dims differ from the input dims");
        rc.peak = image ? 255.0 : data_peak(reference);
        const ObservationMask mask = cfg.mask.empty()
                                         ? ObservationMask::all_observed(input.dims())
                                         : mask_from_array(read_array(cfg.mask), input.dims());
        res = restore(input, mask, reference, rc);
    }

    if (!cfg.output.empty()) write_array(cfg.output, res.reconstruction);
    if (!cfg.dict_out.empty()) {
        const Dims patch = rc.patch.empty() ? default_patch(input.dims()) : rc.patch;
        if (res.kruskal)
            save_dictionary(cfg.dict_out, make_kfa_record(*res.kruskal, res.noise.gamma_eps,
                                                          res.noise.gamma_s, cfg.seed));
        else if (res.dictionary.size() > 0)
            save_dictionary(cfg.dict_out, make_bpfa_record(res.dictionary, patch,
                                                           res.noise.gamma_eps,
                                                           res.noise.gamma_s, cfg.seed));
        else
            throw std::invalid_argument("the mgpcp model has no dictionary to save");
    }

    Metrics m;
    m.add("model", model_name(rc.model));
    m.add("psnr_db", res.psnr_db);
    m.add("rrse", res.rrse);
    m.add("rmse", res.rmse);
    m.add("patches", res.patches);
    m.add("uncovered", res.uncovered);
    m.add("atoms", rc.atoms);
    m.add("rank", res.rank_used);
    m.add("gamma_eps", res.noise.gamma_eps);
    add_histogram(m, res.rank_histogram, "atom_rank_");
    return m;
}

Metrics cmd_decompose(const RunConfig& cfg) {
    if (cfg.input.empty()) throw std::invalid_argument("--input is required");
    const DenseTensor x = read_array(cfg.input);
    const DenseTensor reference = cfg.reference.empty() ? x : read_array(cfg.reference);
    if (reference.dims() != x.dims())
        throw std::invalid_argument("reference dims differ from the input dims");

    std::optional<ObservationMask> mask;
    if (!cfg.mask.empty()) {
        mask = mask_from_array(read_array(cfg.mask), x.dims());
    } else if (cfg.keep >= 0.0 && cfg.keep < 1.0) {
        RngStream mask_rng(cfg.seed, 0x3a5cULL);
        mask = sample_mask(x.dims(), cfg.keep, mask_rng);
    }

    MgpcpOptions mo;
    mo.sweeps = cfg.samples.value_or(mo.sweeps);
    mo.burnin = cfg.burnin.value_or(0);
    mo.alpha_mode = cfg.alpha_mode;
    const std::size_t rank =
        cfg.rank > 0 ? cfg.rank : rank_report(x.dims()).default_model_rank;
    const MgpcpResult fit = mgpcp_fit(x, rank, mask ? &*mask : nullptr, RngStream(cfg.seed, 2), mo);
    if (!cfg.output.empty()) write_array(cfg.output, fit.reconstruction);

    Metrics m;
    m.add("model", std::string("mgpcp"));
    m.add("rank", rank);
    m.add("rank_estimate", fit.rank_estimate);
    m.add("rrse", safe_rrse(reference, fit.reconstruction));
    m.add("psnr_db", psnr(reference, fit.reconstruction, data_peak(reference)));
    m.add("observed", fit.state.observed);
    m.add("kept_samples", fit.kept_samples);
    m.add("tau_eps", fit.state.tau_eps);
    m.add("noise_floor", fit.noise_floor);
    for (Eigen::Index r = 0; r < fit.mean_singular_value.size(); ++r)
        m.add("singular_value_" + std::to_string(r + 1), fit.mean_singular_value[r]);
    return m;
}

Metrics cmd_eval(const RunConfig& cfg) {
    if (cfg.input.empty() || cfg.reference.empty())
        throw std::invalid_argument("eval needs --input and --reference");
    const DenseTensor est = read_array(cfg.input);
    const DenseTensor ref = read_array(cfg.reference);
    if (est.dims() != ref.dims()) throw std::invalid_argument("input and reference dims differ");
    const double peak = is_image_path(cfg.reference) ? 255.0 : data_peak(ref);
    Metrics m;
    m.add("psnr_db", psnr(ref, est, peak));
    m.add("rrse", safe_rrse(ref, est));
    m.add("rmse", rmse(ref, est));
    return m;
}

Eigen::MatrixXd dct4_dictionary() {
    constexpr int n = 5;
    Eigen::MatrixXd c(n, n);  // c(i, f): entry i of 1-D basis vector f
    for (int f = 0; f < n; ++f)
        for (int i = 0; i < n; ++i)
            c(i, f) = std::sqrt((f == 0 ? 1.0 : 2.0) / n) *
                      std::cos(std::numbers::pi * (2 * i + 1) * f / (2.0 * n));
    Eigen::MatrixXd d(n * n * n * n, n * n * n * n);
    for (int a = 0; a < d.cols(); ++a) {
        const int f[4] = {a % n, (a / n) % n, (a / (n * n)) % n, a / (n * n * n)};
        for (int e = 0; e < d.rows(); ++e) {
            const int i[4] = {e % n, (e / n) % n, (e / (n * n)) % n, e / (n * n * n)};
            d(e, a) = c(i[0], f[0]) * c(i[1], f[1]) * c(i[2], f[2]) * c(i[3], f[3]);
        }
    }
    return d;
}

DctRecoveryReport dct_recovery(const DctRecoveryConfig& cfg) {
    const Eigen::MatrixXd truth = dct4_dictionary();
    const auto k = truth.cols();
    const auto n = static_cast<Eigen::Index>(cfg.items);
    if (cfg.nonzeros > static_cast<std::size_t>(k) || cfg.iterations < 2)
        throw std::invalid_argument("dct_recovery: bad configuration");

    RngStream gen(cfg.seed, 0xdc7ULL);
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(k, n);
    std::vector<Eigen::Index> pool(static_cast<std::size_t>(k));
    for (Eigen::Index j = 0; j < n; ++j) {
        std::iota(pool.begin(), pool.end(), Eigen::Index{0});
        for (std::size_t q = 0; q < cfg.nonzeros; ++q) {
            const auto left = pool.size() - q;
            const auto pick = q + std::min<std::size_t>(
                                      static_cast<std::size_t>(gen.uniform() * static_cast<double>(left)),
                                      left - 1);
            std::swap(pool[q], pool[pick]);
            w(pool[q], j) = draw_standard_normal(gen);
        }
    }
    const Eigen::MatrixXd clean = truth * w;
    const double noise_precision = 1.0 / cfg.noise_variance;
    Eigen::MatrixXd noisy = clean;
    for (Eigen::Index i = 0; i < noisy.size(); ++i)
        noisy.data()[i] += draw_gaussian(0.0, noise_precision, gen);

    const Dims atom_dims{5, 5, 5, 5};
    Dims stack_dims = atom_dims;
    stack_dims.push_back(cfg.items);
    const FactorData data = FactorData::from_stack(
        DenseTensor(stack_dims, std::vector<double>(noisy.data(), noisy.data() + noisy.size())));

    const std::size_t burnin = cfg.iterations / 2;
    const auto score = [&](const Eigen::MatrixXd& mean) {
        return std::sqrt((mean - clean).squaredNorm() / static_cast<double>(clean.size()));
    };
    SweepOptions opts;
    opts.threads = cfg.threads;

    DctRecoveryReport rep;
    {
        BpfaState st = bpfa_init(data, static_cast<std::size_t>(k), RngStream(cfg.seed, 1));
        Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(clean.rows(), clean.cols());
        for (std::size_t it = 0; it < cfg.iterations; ++it) {
            bpfa_sweep(st, data, opts);
            if (it >= burnin) mean += reconstruct_items(st);
        }
        rep.rmse_bpfa = score(mean / static_cast<double>(cfg.iterations - burnin));
        rep.bpfa_atoms = st.dict;
    }
    for (std::size_t rank : {std::size_t{1}, std::size_t{30}}) {
        KfaOptions ko;
        ko.rank = rank;
        KfaState st = kfa_init(data, static_cast<std::size_t>(k), RngStream(cfg.seed, 1), ko);
        Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(clean.rows(), clean.cols());
        for (std::size_t it = 0; it < cfg.iterations; ++it) {
            kfa_sweep(st, data, opts);
            if (it >= burnin) mean += reconstruct_items(st.bpfa);
        }
        const double e = score(mean / static_cast<double>(cfg.iterations - burnin));
        if (rank == 1) {
            rep.rmse_kfa_r1 = e;
            rep.kfa_r1_atoms = st.bpfa.dict;
        } else {
            rep.rmse_kfa_r30 = e;
            rep.kfa_r30_atoms = st.bpfa.dict;
            rep.kfa_r30_ranks = atom_rank_histogram(st.bpfa.dict, atom_dims);
        }
    }
    return rep;
}

Metrics cmd_dct_recovery(const RunConfig& cfg) {
    DctRecoveryConfig dc;
    dc.seed = cfg.seed;
    dc.threads = resolve_threads(cfg.threads);
    if (cfg.samples) dc.iterations = *cfg.samples;
    const DctRecoveryReport rep = dct_recovery(dc);
    if (!cfg.output.empty()) {
        const std::filesystem::path dir(cfg.output);
        std::filesystem::create_directories(dir);
        const Dims atom_dims{5, 5, 5, 5};
        write_image((dir / "bpfa.pgm").string(), dictionary_mosaic(rep.bpfa_atoms, atom_dims));
        write_image((dir / "kfa_r1.pgm").string(), dictionary_mosaic(rep.kfa_r1_atoms, atom_dims));
        write_image((dir / "kfa_r30.pgm").string(),
                    dictionary_mosaic(rep.kfa_r30_atoms, atom_dims));
    }
    Metrics m;
    m.add("iterations", dc.iterations);
    m.add("rmse_bpfa", rep.rmse_bpfa);
    m.add("rmse_kfa_r1", rep.rmse_kfa_r1);
    m.add("rmse_kfa_r30", rep.rmse_kfa_r30);
    add_histogram(m, rep.kfa_r30_ranks, "kfa_r30_atom_rank_");
    return m;
}

int run_command(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    const auto start = std::chrono::steady_clock::now();
    Metrics m;
    try {
        if (cfg.subcommand == "denoise" || cfg.subcommand == "inpaint")
            m = cmd_restore(cfg);
        else if (cfg.subcommand == "decompose")
            m = cmd_decompose(cfg);
        else if (cfg.subcommand == "eval")
            m = cmd_eval(cfg);
        else if (cfg.subcommand == "dct-recovery")
            m = cmd_dct_recovery(cfg);
        else
            throw std::invalid_argument("unknown subcommand '" + cfg.subcommand + "'");

        const std::string text = m.format();
        if (cfg.metrics.empty()) {
            out << text;
        } else {
            std::ofstream f(cfg.metrics, std::ios::binary);
            f << text;
            if (!f) throw std::runtime_error("failed writing " + cfg.metrics);
        }
        if (!cfg.report.empty()) {
            nlohmann::ordered_json j;
            j["subcommand"] = cfg.subcommand;
            j["seed"] = cfg.seed;
            j["threads"] = resolve_threads(cfg.threads);
            j["runtime_s"] =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            nlohmann::ordered_json metrics = nlohmann::ordered_json::object();
            for (const auto& [k, v] : m.entries()) metrics[k] = v;
            j["metrics"] = metrics;
            std::ofstream f(cfg.report);
            f << j.dump(2) << '\n';
            if (!f) throw std::runtime_error("failed writing " + cfg.report);
        }
    } catch (const std::exception& e) {
        err << "tkfa " << cfg.subcommand << ": " << e.what() << '\n';
        return 1;
    }
    return 0;
}

}  // namespace tkfa
