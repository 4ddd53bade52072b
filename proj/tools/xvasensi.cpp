// xvasensi: Monte Carlo CVA pricing, sensitivities, learning and hedging lab.

#include <CLI11.hpp>

#include <iostream>
#include <string>
#include <vector>

#include "xva/parallel.hpp"
#include "xva/pipelines.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_dir = "run";
    std::vector<std::string> overrides;
    long seed = -1;
    int threads = 0;
};

void add_common(CLI::App* app, CommonArgs& args) {
    app->add_option("--config", args.config_path, "structured text config file");
    app->add_option("--out", args.out_dir, "output directory");
    app->add_option("--set", args.overrides, "override a config value, section.key=value")
        ->take_all();
    app->add_option("--seed", args.seed, "override seeds.master");
    app->add_option("--threads", args.threads, "worker bound (outputs do not depend on it)");
}

xva::RunConfig resolve_config(const CommonArgs& args) {
    xva::RunConfig cfg;
    if (!args.config_path.empty()) cfg = xva::RunConfig::parse_file(args.config_path);
    for (const auto& ov : args.overrides) cfg.set_override(ov);
    if (args.seed >= 0) cfg.values["seeds.master"] = std::to_string(args.seed);
    if (args.threads > 0) xva::worker_count() = static_cast<unsigned>(args.threads);
    return cfg;
}

int run(const std::string& command, const CommonArgs& args) {
    try {
        xva::run_command(command, resolve_config(args), args.out_dir);
        return 0;
    } catch (const xva::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Monte Carlo CVA lab: pricing, bump sensitivities, Jacobian market sensitivities, "
                 "conditional CVA learning with twin validation, and VaR/ES hedging backtests"};
    app.require_subcommand(1);

    CommonArgs bs_args;
    CLI::App* bs = app.add_subcommand("bs-bench", "geometric basket Black-Scholes sensitivity bench");
    add_common(bs, bs_args);
    std::string bs_method;
    bs->add_option("--method", bs_method, "benchmark|linear|smart|aad|naive-aad");
    long bs_d = 0, bs_m = 0;
    bs->add_option("--d", bs_d, "number of assets");
    bs->add_option("--m", bs_m, "simulated paths");

    CLI::App* cva = app.add_subcommand("cva", "CVA lab commands");
    cva->require_subcommand(1);
    const std::vector<std::string> subnames = {"price",       "bump-sensis", "market-sensis",
                                               "learn",       "twin",        "risk-runoff",
                                               "risk-runon",  "hedge-backtest"};
    std::vector<CommonArgs> sub_args(subnames.size());
    std::vector<std::string> sub_method(subnames.size());
    for (std::size_t i = 0; i < subnames.size(); ++i) {
        CLI::App* sc = cva->add_subcommand(subnames[i]);
        add_common(sc, sub_args[i]);
        sc->add_option("--method", sub_method[i], "bump method where applicable");
    }

    CommonArgs rerun_args;
    std::string manifest_path;
    CLI::App* rr = app.add_subcommand("rerun", "re-execute a run from its manifest");
    rr->add_option("--manifest", manifest_path, "manifest.json of a previous run")->required();
    rr->add_option("--out", rerun_args.out_dir, "output directory");
    rr->add_option("--threads", rerun_args.threads, "worker bound");

    std::string report_dir;
    CLI::App* rep = app.add_subcommand("report", "summarize a run directory");
    rep->add_option("dir", report_dir, "run directory")->required();

    CLI11_PARSE(app, argc, argv);

    if (bs->parsed()) {
        if (!bs_method.empty()) bs_args.overrides.push_back("bs.method=" + bs_method);
        if (bs_d > 0) bs_args.overrides.push_back("bs.d=" + std::to_string(bs_d));
        if (bs_m > 0) bs_args.overrides.push_back("bs.m=" + std::to_string(bs_m));
        return run("bs-bench", bs_args);
    }
    if (cva->parsed()) {
        for (std::size_t i = 0; i < subnames.size(); ++i) {
            CLI::App* sc = cva->get_subcommands().front();
            if (sc->get_name() == subnames[i]) {
                if (!sub_method[i].empty())
                    sub_args[i].overrides.push_back("experiment.method=" + sub_method[i]);
                return run(subnames[i], sub_args[i]);
            }
        }
    }
    if (rr->parsed()) {
        try {
            std::string command;
            const xva::RunConfig cfg = xva::Manifest::config_from_manifest(manifest_path, &command);
            if (rerun_args.threads > 0)
                xva::worker_count() = static_cast<unsigned>(rerun_args.threads);
            xva::run_command(command, cfg, rerun_args.out_dir);
            return 0;
        } catch (const xva::ConfigError& e) {
            std::cerr << "config error: " << e.what() << "\n";
            return 2;
        } catch (const std::exception& e) {
            std::cerr << "numerical failure: " << e.what() << "\n";
            return 3;
        }
    }
    if (rep->parsed()) return xva::cmd_report(report_dir, std::cout);
    return 2;
}
