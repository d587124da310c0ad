#include "tkfa/commands.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <sstream>
#include <string>

namespace {

tkfa::Dims parse_patch(const std::string& text) {
    tkfa::Dims d;
    std::stringstream ss(text);
    std::string part;
    while (std::getline(ss, part, 'x')) {
        const unsigned long v = std::stoul(part);
        if (v == 0) throw CLI::ValidationError("--patch", "sizes must be positive");
        d.push_back(v);
    }
    if (d.empty()) throw CLI::ValidationError("--patch", "expected sizes such as 8x8");
    return d;
}

tkfa::AlphaMode parse_alpha_mode(const std::string& text) {
    if (text == "map") return tkfa::AlphaMode::Map;
    if (text == "sample") return tkfa::AlphaMode::Sample;
    if (text == "fixed") return tkfa::AlphaMode::Fixed;
    throw CLI::ValidationError("--alpha-mode", "expected map, sample or fixed");
}

struct Flags {
    std::string model = "kfa";
    std::string patch;
    std::string alpha_mode = "map";
    std::size_t samples = 0;
    std::size_t burnin = 0;
    std::size_t burnin_epochs = 0;
    std::vector<CLI::Option*> burnin_epochs_opts;
};

void add_common(CLI::App* sub, tkfa::RunConfig& cfg, Flags& flags, CLI::Option*& samples,
                CLI::Option*& burnin) {
    sub->add_option("--model", flags.model, "bpfa, kfa, mgpcp or cdf-kfa")
        ->check(CLI::IsMember({"bpfa", "kfa", "mgpcp", "cdf-kfa"}))
        ->capture_default_str();
    sub->add_option("--input", cfg.input, "Input image (.pgm/.ppm) or tensor container");
    sub->add_option("--reference", cfg.reference,
                    "Clean reference; the input is then taken as already corrupted");
    sub->add_option("--output", cfg.output, "Reconstruction path (a directory for dct-recovery)");
    sub->add_option("--mask", cfg.mask, "Observation mask, nonzero where observed");
    sub->add_option("--dict", cfg.dict_in, "Initial dictionary file (bpfa)");
    sub->add_option("--dict-out", cfg.dict_out, "Write the learned dictionary here");
    sub->add_flag("--freeze-dict", cfg.freeze_dictionary, "Keep the dictionary fixed");
    sub->add_option("--metrics", cfg.metrics, "Write key=value metrics here instead of stdout");
    sub->add_option("--report", cfg.report, "Write a JSON run report with timing");
    sub->add_option("--k", cfg.atoms, "Dictionary size; 0 picks 256 gray, 512 color")
        ->capture_default_str();
    sub->add_option("--rank", cfg.rank, "Kruskal rank R; 0 picks the default for the shape")
        ->capture_default_str();
    sub->add_option("--stride", cfg.stride, "Patch grid spacing")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    sub->add_option("--patch", flags.patch, "Patch shape such as 8x8 or 7x7x3");
    sub->add_option("--sigma", cfg.sigma, "Noise standard deviation in pixel units")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
    sub->add_option("--sigma-percent", cfg.sigma_percent,
                    "Noise standard deviation as a percentage of the data peak")
        ->check(CLI::NonNegativeNumber);
    sub->add_option("--keep", cfg.keep,
                    "Fraction of observed pixels; default 1 (denoise) or 0.2 (inpaint)")
        ->check(CLI::Range(0.0, 1.0));
    samples = sub->add_option("--samples", flags.samples,
                              "Gibbs sweeps; default 150 (3000 for decompose, 100 for "
                              "dct-recovery)");
    burnin = sub->add_option("--burnin", flags.burnin,
                             "Sweeps discarded before averaging; default 40");
    sub->add_option("--seed", cfg.seed, "Random seed")->capture_default_str();
    sub->add_option("--threads", cfg.threads, "Worker threads; 0 uses TKFA_THREADS or all cores")
        ->capture_default_str();
    sub->add_flag("--streaming", cfg.streaming, "Train KFA with streaming batches");
    sub->add_option("--epochs", cfg.epochs, "Streaming epochs")->capture_default_str();
    auto* be = sub->add_option("--burnin-epochs", flags.burnin_epochs,
                               "Streaming epochs before samples are kept; default 5");
    flags.burnin_epochs_opts.push_back(be);
    sub->add_option("--batch-size", cfg.batch_size, "Streaming batch size")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    sub->add_option("--alpha-mode", flags.alpha_mode, "map, sample or fixed")
        ->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Bayesian tensor dictionary learning: restoration, decomposition, evaluation"};
    app.require_subcommand(1);
    tkfa::RunConfig cfg;
    Flags flags;
    CLI::Option* samples = nullptr;
    CLI::Option* burnin = nullptr;

    const std::pair<const char*, const char*> commands[] = {
        {"denoise", "Denoise an image or volume"},
        {"inpaint", "Fill in missing pixels, optionally with noise"},
        {"decompose", "Low-rank CP decomposition of a tensor"},
        {"eval", "PSNR, RRSE and RMSE between two files"},
        {"dct-recovery", "Synthetic 4-D DCT dictionary recovery"},
    };
    std::vector<std::pair<CLI::App*, std::pair<CLI::Option*, CLI::Option*>>> subs;
    for (const auto& [name, help] : commands) {
        CLI::App* sub = app.add_subcommand(name, help);
        add_common(sub, cfg, flags, samples, burnin);
        subs.push_back({sub, {samples, burnin}});
    }

    try {
        app.parse(argc, argv);
        for (const auto& [sub, opts] : subs) {
            if (!sub->parsed()) continue;
            cfg.subcommand = sub->get_name();
            if (opts.first->count() > 0) cfg.samples = flags.samples;
            if (opts.second->count() > 0) cfg.burnin = flags.burnin;
        }
        for (auto* o : flags.burnin_epochs_opts)
            if (o->count() > 0) cfg.burnin_epochs = flags.burnin_epochs;
        cfg.model = tkfa::parse_model(flags.model);
        cfg.alpha_mode = parse_alpha_mode(flags.alpha_mode);
        if (!flags.patch.empty()) cfg.patch = parse_patch(flags.patch);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }
    return tkfa::run_command(cfg, std::cout, std::cerr);
}
