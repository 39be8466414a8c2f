#include <CLI11.hpp>

#include <chrono>
#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "xfi/experiment.hpp"

namespace {

struct Options {
    std::string config_path;
    std::string preset = "desk";
    std::optional<std::uint64_t> seed;
    std::string out = "out";
};

xfi::ExperimentConfig resolve(const Options& o) {
    xfi::ExperimentConfig c = xfi::preset(o.preset);
    if (!o.config_path.empty()) c = xfi::load_config_file(o.config_path, std::move(c));
    if (o.seed) c.set_seed(*o.seed);
    c.validate();
    return c;
}

void print_rows(const xfi::Report& r) {
    std::cout << xfi::report_csv(r);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"xfi: modality-invariant fusion on synthetic multimodal data"};
    app.require_subcommand(1);
    app.fallthrough();
    Options o;
    app.add_option("--config", o.config_path, "INI config applied on top of the preset")->check(CLI::ExistingFile);
    app.add_option("--preset", o.preset, "built-in preset")->check(CLI::IsMember({"desk", "paper"}));
    app.add_option("--seed", o.seed, "overrides the data and training seeds");
    app.add_option("--out", o.out, "output directory");
    auto* train = app.add_subcommand("train", "fit one model and save checkpoint.xfi");
    auto* eval = app.add_subcommand("eval", "evaluate checkpoint.xfi on every non-empty modality subset");
    auto* ablate = app.add_subcommand("ablate", "train+eval per existence-probability vector");
    auto* variants = app.add_subcommand("variants", "train+eval the four fusion variants and two baselines");
    app.add_subcommand("config", "print the effective canonical config and its digest");
    CLI11_PARSE(app, argc, argv);

    try {
        const xfi::ExperimentConfig c = resolve(o);
        const auto start = std::chrono::steady_clock::now();
        std::string command;
        if (*train) {
            command = "train";
            const auto history = xfi::run_train(c, o.out);
            std::cout << "trained " << history.entries.size() << " steps, final loss "
                      << xfi::format_value(history.entries.empty() ? 0.0 : history.entries.back().loss) << "\n";
        } else if (*eval) {
            command = "eval";
            print_rows(xfi::run_eval(c, o.out));
        } else if (*ablate) {
            command = "ablate";
            print_rows(xfi::run_ablate(c, o.out));
        } else if (*variants) {
            command = "variants";
            print_rows(xfi::run_variants(c, o.out));
        } else {
            std::cout << xfi::canonical_text(c) << "# digest " << xfi::config_digest(c) << "\n";
            return 0;
        }
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        xfi::write_timing_sidecar(o.out, command, seconds);
    } catch (const xfi::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const xfi::IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 3;
    } catch (const xfi::DivergenceError& e) {
        std::cerr << "training diverged at step " << e.step() << ": " << e.what() << "\n";
        return 4;
    } catch (const xfi::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
