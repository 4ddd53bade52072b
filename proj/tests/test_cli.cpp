#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "xva/pipelines.hpp"

using namespace xva;
namespace fs = std::filesystem;

namespace {

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f.good());
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

// Small, fast lab configuration shared by the command tests.
RunConfig tiny_cfg() {
    return RunConfig::parse(R"(
[model]
economies = 2
counterparties = 2
r0[0] = 0.02
r0[1] = 0.015
fx0[1] = 1.1
gamma0[1] = 0.08
gamma0[2] = 0.12
[grid]
n = 12
h = 0.25
substeps = 2
[portfolio]
count = 12
[instruments]
zc_pillars = 0.5,1,2,3
fx_pillars = 0.5
cds_pillars = 1,2,3
[experiment]
m = 256
backtest_m = 256
t = 0.25
epochs = 20
twin_m = 128
[seeds]
master = 7
)");
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str() const { return path.string(); }
};

} // namespace

TEST_CASE("config parsing: sections, comments, overrides, failures") {
    RunConfig cfg = RunConfig::parse("# comment\n[model]\neconomies = 3 # trailing\nr0[0] = 0.02\n\n"
                                     "[grid]\nn = 50\n");
    REQUIRE(cfg.get_int("model.economies", 0) == 3);
    REQUIRE(cfg.get_double("model.r0[0]", 0) == 0.02);
    REQUIRE(cfg.get_int("grid.n", 0) == 50);
    cfg.set_override("grid.n=25");
    REQUIRE(cfg.get_int("grid.n", 0) == 25);
    REQUIRE_THROWS_AS(RunConfig::parse("[bad\n"), ConfigError);
    REQUIRE_THROWS_AS(RunConfig::parse("novalue\n"), ConfigError);
    REQUIRE_THROWS_AS(cfg.set_override("noequals"), ConfigError);
    REQUIRE_THROWS_AS(cfg.require_string("does.not.exist"), ConfigError);
    cfg.set_override("model.economies=x");
    REQUIRE_THROWS_AS(model_from_config(cfg), ConfigError);
}

TEST_CASE("model config keys are the documented parameter names") {
    RunConfig cfg;
    cfg.set_override("model.economies=2");
    cfg.set_override("model.counterparties=1");
    cfg.set_override("model.r0[0]=0.05");
    cfg.set_override("model.sigma_r[1]=0.02");
    cfg.set_override("model.fx0[1]=1.25");
    cfg.set_override("model.gamma0[1]=0.2");
    cfg.set_override("model.nu[1]=0.05");
    const ModelParams p = model_from_config(cfg);
    REQUIRE(p.r0[0] == 0.05);
    REQUIRE(p.sigma_r[1] == 0.02);
    REQUIRE(p.fx0[0] == 1.25);
    REQUIRE(p.gamma0[0] == 0.2);
    REQUIRE(p.nu[0] == 0.05);
}

TEST_CASE("price command: outputs, manifest, thread invariance, rerun") {
    const RunConfig cfg = tiny_cfg();
    TempDir d1("xva_run1"), d2("xva_run2"), d3("xva_run3");

    const unsigned saved = worker_count();
    worker_count() = 1;
    run_command("price", cfg, d1.str());
    worker_count() = 4;
    run_command("price", cfg, d2.str());
    worker_count() = saved;

    REQUIRE(read_file(d1.str() + "/price.csv") == read_file(d2.str() + "/price.csv"));
    REQUIRE(read_file(d1.str() + "/portfolio.csv") == read_file(d2.str() + "/portfolio.csv"));

    // rerun from the manifest reproduces the outputs bit for bit
    std::string command;
    const RunConfig from_manifest =
        Manifest::config_from_manifest(d1.str() + "/manifest.json", &command);
    REQUIRE(command == "price");
    run_command(command, from_manifest, d3.str());
    REQUIRE(read_file(d1.str() + "/price.csv") == read_file(d3.str() + "/price.csv"));

    // manifests record checksums of every output
    nlohmann::json doc;
    std::ifstream mf(d1.str() + "/manifest.json");
    mf >> doc;
    REQUIRE(doc["outputs"].contains("price.csv"));
    REQUIRE(doc["outputs"]["price.csv"] == file_checksum(d1.str() + "/price.csv"));
    REQUIRE(doc["metrics"].contains("cva"));
}

TEST_CASE("price with zero intensities is exactly zero CVA") {
    RunConfig cfg = tiny_cfg();
    cfg.set_override("model.gamma0[1]=0");
    cfg.set_override("model.gamma0[2]=0");
    cfg.set_override("model.alpha[1]=0");
    cfg.set_override("model.alpha[2]=0");
    TempDir d("xva_zero_gamma");
    run_command("price", cfg, d.str());
    const std::string csv = read_file(d.str() + "/price.csv");
    REQUIRE(csv.find("\n0,0,") != std::string::npos);
}

TEST_CASE("bump-sensis: smart equals linear under the one-hot plan through the cli path") {
    RunConfig cfg = tiny_cfg();
    cfg.set_override("experiment.m=96"); // 2p = 48 needed
    TempDir ds("xva_smart"), dl("xva_linear");
    cfg.set_override("experiment.method=smart");
    run_command("bump-sensis", cfg, ds.str());
    cfg.set_override("experiment.method=linear");
    cfg.set_override("experiment.plan=one_hot");
    run_command("bump-sensis", cfg, dl.str());
    // identical numbers, different method tag
    std::string a = read_file(ds.str() + "/bump_sensis.csv");
    std::string b = read_file(dl.str() + "/bump_sensis.csv");
    const auto strip_tag = [](std::string s, const std::string& tag) {
        std::string out;
        std::stringstream ss(s);
        std::string line;
        while (std::getline(ss, line)) {
            const auto pos = line.rfind(tag);
            out += (pos != std::string::npos && pos == line.size() - tag.size())
                       ? line.substr(0, pos)
                       : line;
            out += '\n';
        }
        return out;
    };
    REQUIRE(strip_tag(a, "smart") == strip_tag(b, "linear"));
}

TEST_CASE("market-sensis writes the jacobian and grouped market report") {
    RunConfig cfg = tiny_cfg();
    cfg.set_override("experiment.m=96");
    cfg.set_override("experiment.method=smart");
    TempDir d("xva_msens");
    run_command("market-sensis", cfg, d.str());
    const std::string ms = read_file(d.str() + "/market_sensis.csv");
    REQUIRE(ms.rfind("kind,index,pillar,estimate,method", 0) == 0);
    REQUIRE(ms.find("\nzc,") != std::string::npos);
    REQUIRE(ms.find("\nfx,") != std::string::npos);
    REQUIRE(ms.find("\ncds,") != std::string::npos);
    const std::string jac = read_file(d.str() + "/jacobian.csv");
    REQUIRE(jac.rfind("free_parameter,", 0) == 0);
}

TEST_CASE("learn and twin commands produce models and twin tables") {
    RunConfig cfg = tiny_cfg();
    cfg.set_override("experiment.mode=risk");
    cfg.set_override("experiment.learner=linear");
    TempDir d("xva_learn");
    run_command("learn", cfg, d.str());
    REQUIRE(fs::exists(d.path / "model.bin"));
    const Predictor p = load_predictor(d.str() + "/model.bin");
    REQUIRE(p.kind == Predictor::Kind::Linear);

    TempDir dt("xva_twin");
    run_command("twin", cfg, dt.str());
    const std::string twin = read_file(dt.str() + "/twin.csv");
    REQUIRE(twin.rfind("predictor,twin_stat,twin_stdev,twin_err,twin_ub,norm", 0) == 0);
    REQUIRE(twin.find("\nconstant,") != std::string::npos);
}

TEST_CASE("hedge-backtest emits one row set per method plus the unhedged row") {
    RunConfig cfg = tiny_cfg();
    cfg.set_override("experiment.mode=runon");
    cfg.set_override("experiment.methods=bump,ls,ple,ec");
    cfg.set_override("experiment.runon_hidden=8");
    cfg.set_override("experiment.epochs=10");
    cfg.set_override("experiment.ec_epochs=10");
    TempDir d("xva_hedge");
    run_command("hedge-backtest", cfg, d.str());
    const std::string csv = read_file(d.str() + "/hedge_backtest.csv");
    for (const char* method : {"unhedged", "bump", "ls", "ple", "ec"})
        REQUIRE(csv.find("UPL," + std::string(method) + ",") != std::string::npos);
    REQUIRE_THROWS_AS(
        [&] {
            RunConfig bad = cfg;
            bad.set_override("experiment.mode=runoff");
            bad.set_override("experiment.methods=ls");
            TempDir db("xva_hedge_bad");
            run_command("hedge-backtest", bad, db.str());
        }(),
        ConfigError);
}

TEST_CASE("bs-bench on one asset reduces to scalar Black-Scholes") {
    RunConfig cfg;
    cfg.set_override("bs.d=1");
    cfg.set_override("bs.m=80000");
    cfg.set_override("bs.spots=100");
    cfg.set_override("bs.vols=0.2");
    cfg.set_override("bs.strike=100");
    cfg.set_override("bs.maturity=1");
    cfg.set_override("bs.method=benchmark");
    cfg.set_override("seeds.master=11");
    TempDir d("xva_bs1");
    run_command("bs-bench", cfg, d.str());
    nlohmann::json doc;
    std::ifstream mf(d.str() + "/manifest.json");
    mf >> doc;
    REQUIRE(doc["metrics"]["max_rel_err"].get<double>() < 0.02);
    const std::string csv = read_file(d.str() + "/bs_bench.csv");
    REQUIRE(csv.find("delta,spot[0],0.539828") != std::string::npos);
}

TEST_CASE("report prints headline metrics and unknown commands fail cleanly") {
    const RunConfig cfg = tiny_cfg();
    TempDir d("xva_report");
    run_command("price", cfg, d.str());
    std::ostringstream os;
    REQUIRE(cmd_report(d.str(), os) == 0);
    REQUIRE(os.str().find("cva") != std::string::npos);
    std::ostringstream os2;
    REQUIRE(cmd_report("/nonexistent_run_dir", os2) == 2);
    REQUIRE_THROWS_AS(run_command("frobnicate", cfg, d.str()), ConfigError);
}

TEST_CASE("config errors surface for off-grid horizons and bad methods") {
    RunConfig cfg = tiny_cfg();
    cfg.set_override("experiment.t=0.33");
    TempDir d("xva_badt");
    REQUIRE_THROWS_AS(run_command("learn", cfg, d.str()), ConfigError);
    RunConfig cfg2 = tiny_cfg();
    cfg2.set_override("experiment.method=warp");
    REQUIRE_THROWS_AS(run_command("bump-sensis", cfg2, d.str()), ConfigError);
}

TEST_CASE("full-scale configuration builds a 90-parameter lab with 256 instruments") {
    const RunConfig cfg = RunConfig::parse_file(std::string(XVA_SOURCE_DIR) + "/configs/full-scale.ini");
    const CvaLab lab = lab_from_config(cfg);
    REQUIRE(lab.rho0.dim() == 90);
    REQUIRE(lab.rho0.dim_y() == 27);
    REQUIRE(lab.instruments.size() == 256);
    REQUIRE(lab.portfolio.size() == 500);
    // a reduced-path baseline run prices without blowing up
    const CvaEstimate est = baseline_cva(lab, 64, 5);
    REQUIRE(std::isfinite(est.estimate));
    REQUIRE(est.estimate >= 0.0);
}

TEST_CASE("aad and naive-aad methods run through the cli pipeline") {
    RunConfig cfg = tiny_cfg();
    cfg.set_override("experiment.m=128");
    cfg.set_override("experiment.epochs=5");
    cfg.set_override("experiment.hidden=8");
    for (const std::string method : {"aad", "naive-aad"}) {
        TempDir d("xva_aad_" + method);
        cfg.set_override("experiment.method=" + method);
        run_command("bump-sensis", cfg, d.str());
        const std::string csv = read_file(d.str() + "/bump_sensis.csv");
        REQUIRE(csv.find(method) != std::string::npos);
    }
}

TEST_CASE("risk-runoff and risk-runon commands write their report tables") {
    RunConfig cfg = tiny_cfg();
    cfg.set_override("experiment.epochs=5");
    cfg.set_override("experiment.hidden=8");
    cfg.set_override("experiment.runon_hidden=8");
    TempDir d1("xva_runoff_cmd");
    run_command("risk-runoff", cfg, d1.str());
    const std::string off = read_file(d1.str() + "/risk_runoff.csv");
    REQUIRE(off.rfind("statistic,delta_pi,loss_C,total", 0) == 0);
    REQUIRE(off.find("ES 99%") != std::string::npos);
    TempDir d2("xva_runon_cmd");
    run_command("risk-runon", cfg, d2.str());
    const std::string on = read_file(d2.str() + "/risk_runon.csv");
    REQUIRE(on.rfind("method,statistic,value", 0) == 0);
    for (const char* mth : {"nn", "ls", "ls_gamma", "bump"})
        REQUIRE(on.find(std::string(mth) + ",twin_ub") != std::string::npos);
}

TEST_CASE("correlation matrix wires through the config into the drivers") {
    RunConfig cfg = tiny_cfg();
    const std::string path = (fs::temp_directory_path() / "xva_corr.csv").string();
    {
        // dim_y = 5 for two economies, two counterparties
        std::ofstream f(path);
        for (int i = 0; i < 5; ++i) {
            for (int j = 0; j < 5; ++j) {
                double v = i == j ? 1.0 : 0.0;
                if ((i == 0 && j == 1) || (i == 1 && j == 0)) v = 0.9;
                f << v << (j + 1 < 5 ? "," : "\n");
            }
        }
    }
    cfg.set_override("model.correlation_file=" + path);
    const SimOptions opt = sim_options_from_config(cfg);
    REQUIRE(opt.corr_cholesky.has_value());
    REQUIRE(opt.corr_cholesky->rows() == 5);

    cfg.set_override("model.correlation_file=/nonexistent.csv");
    REQUIRE_THROWS_AS(sim_options_from_config(cfg), ConfigError);
    fs::remove(path);
}
