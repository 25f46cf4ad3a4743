#include <iostream>

#include <CLI11.hpp>

#include "quclab/experiment.hpp"

int main(int argc, char** argv) {
    CLI::App app{"quclab: weighted extension experiments"};
    app.set_version_flag("--version", QUCLAB_VERSION);
    app.require_subcommand(1);

    std::string config_path, out_dir;
    std::uint64_t seed = 0;
    std::vector<std::string> which;
    for (const auto& name : quclab::subcommands()) {
        auto* sub = app.add_subcommand(name);
        sub->add_option("--config", config_path, "TOML config")->required()->check(CLI::ExistingFile);
        sub->add_option("--out", out_dir, "output directory (overrides config)");
        sub->add_option("--seed", seed, "seed (overrides config)");
        if (name == "verify-inequalities")
            sub->add_option("--which", which, "hardy, trace, doubling, carleman, monotonicity")->delimiter(',');
    }
    CLI11_PARSE(app, argc, argv);

    const std::string name = app.get_subcommands().front()->get_name();
    auto* sub = app.get_subcommands().front();
    try {
        auto cfg = quclab::load_config(config_path);
        if (sub->count("--out")) cfg.out_dir = out_dir;
        if (sub->count("--seed")) cfg.seed = seed;
        if (!which.empty()) cfg.which = which;
        auto m = quclab::run(cfg, name);
        for (const auto& c : m.checks)
            std::cout << (c.passed ? "ok   " : (c.hard ? "FAIL " : "warn ")) << c.name << (c.detail.empty() ? "" : "  " + c.detail)
                      << "\n";
        std::cout << "manifest: " << (std::filesystem::path(cfg.out_dir) / "manifest.json").string() << "  config "
                  << m.config_hash << "  seed " << m.seed << "\n";
        return m.ok() ? 0 : 1;
    } catch (const quclab::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
