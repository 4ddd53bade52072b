#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <sstream>

#include "xva/engine.hpp"
#include "xva/parallel.hpp"
#include "xva/stats.hpp"

using namespace xva;

namespace {

ModelParams tiny_params() {
    ModelParams p(2, 1);
    p.r0 = {0.02, 0.01};
    p.a = {0.1, 0.2};
    p.b = {0.03, 0.02};
    p.sigma_r = {0.01, 0.012};
    p.fx0 = {1.2};
    p.sigma_fx = {0.1};
    p.gamma0 = {0.05};
    p.alpha = {0.06};
    p.delta = {0.5};
    p.nu = {0.05};
    return p;
}

} // namespace

TEST_CASE("parameter vector layout and naming") {
    ModelParams p = tiny_params();
    REQUIRE(p.dim_y() == 4);
    REQUIRE(p.dim_eps() == 10);
    REQUIRE(p.dim() == 14);
    const Eigen::VectorXd v = p.to_vector();
    const ModelParams q = ModelParams::from_vector(2, 1, v);
    REQUIRE(q.to_vector() == v);
    REQUIRE(p.name_of(0) == "r0[0]");
    REQUIRE(p.name_of(2) == "fx0[1]");
    REQUIRE(p.name_of(3) == "gamma0[1]");
    REQUIRE(p.name_of(13) == "nu[1]");
    REQUIRE(param_kind_is_volatility(p.kind_of(10))); // sigma_fx block
    // p = 90 for the ten-economy, eight-counterparty layout
    REQUIRE(ModelParams(10, 8).dim() == 90);
    REQUIRE(ModelParams(10, 8).dim_y() == 27);
}

TEST_CASE("feller violation is a warning, not an error") {
    ModelParams p = tiny_params();
    p.nu = {1.0}; // 2*delta*alpha = 0.06 < 1
    std::ostringstream warn;
    REQUIRE_NOTHROW(p.validate(&warn));
    REQUIRE(warn.str().find("Feller") != std::string::npos);
    p.sigma_r[0] = 0.0;
    REQUIRE_THROWS_AS(p.validate(nullptr), std::invalid_argument);
}

TEST_CASE("degenerate SDEs stay put") {
    ModelParams p = tiny_params();
    p.sigma_r = {0.0, 0.0};
    p.a = {0.0, 0.0};
    p.nu = {0.0};
    p.gamma0 = {0.06};
    p.alpha = {0.06};
    const SimGrid grid{20, 0.1, 5};
    const PathSet ps = simulate_paths({p}, grid, 1, 8);
    for (std::size_t j = 0; j < ps.paths; ++j)
        for (int i = 0; i <= grid.n; ++i) {
            REQUIRE(ps.rate(j, i, 0) == Catch::Approx(0.02).margin(1e-15));
            REQUIRE(ps.gamma(j, i, 0) == Catch::Approx(0.06).margin(1e-12));
        }
}

TEST_CASE("deterministic Vasicek matches the ODE closed form") {
    ModelParams p = tiny_params();
    p.r0 = {0.01, 0.01};
    p.a = {0.1, 0.1};
    p.b = {0.03, 0.03};
    p.sigma_r = {0.0, 0.0};
    const SimGrid grid{100, 0.1, 25};
    const PathSet ps = simulate_paths({p}, grid, 3, 1);
    const double exact = 0.03 - 0.02 * std::exp(-1.0); // b + (r0-b)e^{-aT}, T=10
    REQUIRE(std::fabs(ps.rate(0, grid.n, 0) - exact) < 1e-4);
}

TEST_CASE("no intensity, no defaults") {
    ModelParams p = tiny_params();
    p.gamma0 = {0.0};
    p.alpha = {0.0};
    const SimGrid grid{20, 0.1, 2};
    const PathSet ps = simulate_paths({p}, grid, 5, 256);
    for (std::size_t j = 0; j < ps.paths; ++j) REQUIRE(ps.default_step[j] == -1);
}

TEST_CASE("constant intensity reproduces the exponential default law") {
    ModelParams p = tiny_params();
    p.gamma0 = {0.2};
    p.alpha = {0.2};
    p.nu = {0.0};
    const SimGrid grid{20, 0.5, 2}; // T = 10
    const std::size_t m = 20000;
    const PathSet ps = simulate_paths({p}, grid, 7, m);
    double defaults = 0;
    for (std::size_t j = 0; j < m; ++j) defaults += ps.default_step[j] >= 0 ? 1.0 : 0.0;
    const double phat = defaults / m;
    const double pexact = 1.0 - std::exp(-0.2 * 10.0);
    const double se = std::sqrt(pexact * (1 - pexact) / m);
    REQUIRE(std::fabs(phat - pexact) < 3 * se);
}

TEST_CASE("default indicators are consistent with the intensity survival weights") {
    ModelParams p = tiny_params();
    const SimGrid grid{20, 0.1, 5};
    const std::size_t m = 8000;
    const PathSet ps = simulate_paths({p}, grid, 11, m);
    for (int i : {5, 10, 20}) {
        std::vector<double> indicator(m), weight(m), diff(m);
        for (std::size_t j = 0; j < m; ++j) {
            indicator[j] = ps.is_defaulted(j, i, 0) ? 0.0 : 1.0;
            double acc = 0.0;
            for (int l = 0; l < i; ++l) acc += grid.h * ps.gamma(j, l, 0);
            weight[j] = std::exp(-acc);
            diff[j] = indicator[j] - weight[j];
        }
        const McStats d = mc_stats(diff); // paired: same paths
        REQUIRE(std::fabs(d.mean) <= std::max(d.ci_halfwidth, 1e-12));
    }
}

TEST_CASE("fx is a martingale under flat zero rates") {
    ModelParams p = tiny_params();
    p.r0 = {0.0, 0.0};
    p.a = {0.0, 0.0};
    p.b = {0.0, 0.0};
    p.sigma_r = {0.0, 0.0};
    p.sigma_fx = {0.3};
    const SimGrid grid{10, 0.5, 5};
    const std::size_t m = 20000;
    const PathSet ps = simulate_paths({p}, grid, 13, m);
    for (int i : {2, 5, 10}) {
        std::vector<double> fx(m);
        for (std::size_t j = 0; j < m; ++j) fx[j] = ps.fx(j, i, 1);
        const McStats s = mc_stats(fx);
        REQUIRE(std::fabs(s.mean - 1.2) < 3 * s.se);
    }
}

TEST_CASE("path simulation does not depend on the worker count") {
    ModelParams p = tiny_params();
    const SimGrid grid{10, 0.1, 3};
    const unsigned saved = worker_count();
    worker_count() = 1;
    const PathSet a = simulate_paths({p}, grid, 17, 64);
    worker_count() = 4;
    const PathSet b = simulate_paths({p}, grid, 17, 64);
    worker_count() = saved;
    REQUIRE(a.factors == b.factors);
    REQUIRE(a.defaulted == b.defaulted);
}

TEST_CASE("mode and dimension validation") {
    ModelParams p = tiny_params();
    const SimGrid grid{4, 0.1, 1};
    std::vector<ModelParams> two = {p, p};
    two[1].r0[0] += 0.01;
    REQUIRE_THROWS_AS(simulate_paths(two, grid, 1, 3), std::invalid_argument); // params/paths mismatch
    REQUIRE_THROWS_AS(simulate_paths(two, grid, 1, 2, SimMode::Baseline), std::invalid_argument);
    REQUIRE_NOTHROW(simulate_paths(two, grid, 1, 2, SimMode::Sensis));
}

TEST_CASE("sample_defaults on explicit gamma paths") {
    const SimGrid grid{10, 1.0, 1};
    const std::size_t m = 30000;
    std::vector<double> gammas(m * (grid.n + 1), 0.15);
    const std::vector<int> steps = sample_defaults(gammas, m, grid, 23);
    double freq = 0;
    for (int s : steps) freq += s >= 0 ? 1 : 0;
    const double pexact = 1.0 - std::exp(-0.15 * 10.0);
    REQUIRE(std::fabs(freq / m - pexact) < 3 * std::sqrt(pexact * (1 - pexact) / m));

    std::fill(gammas.begin(), gammas.end(), 0.0);
    for (int s : sample_defaults(gammas, 100, grid, 29)) REQUIRE(s == -1);
}

TEST_CASE("pathset binary dump round-trips with its magic header") {
    ModelParams p = tiny_params();
    const SimGrid grid{6, 0.25, 2};
    const PathSet ps = simulate_paths({p}, grid, 31, 16);
    const std::string path = std::filesystem::temp_directory_path() / "xva_paths_test.bin";
    dump_pathset(ps, path);
    {
        std::ifstream f(path, std::ios::binary);
        char magic[16];
        f.read(magic, 16);
        REQUIRE(std::string(magic, 16) == "XVASENSI-PATHS01");
    }
    const PathSet back = load_pathset(path);
    REQUIRE(back.factors == ps.factors);
    REQUIRE(back.defaulted == ps.defaulted);
    REQUIRE(back.default_step == ps.default_step);
    std::filesystem::remove(path);
    REQUIRE_THROWS(load_pathset("/nonexistent/paths.bin"));
}

TEST_CASE("correlated drivers follow the configured cholesky factor") {
    ModelParams p = tiny_params();
    p.sigma_r = {0.02, 0.02};
    SimOptions opt;
    Eigen::MatrixXd corr = Eigen::MatrixXd::Identity(4, 4);
    corr(0, 1) = corr(1, 0) = 0.9;
    opt.corr_cholesky = Eigen::MatrixXd(corr.llt().matrixL());
    const SimGrid grid{10, 0.1, 5};
    const std::size_t m = 4000;
    const PathSet ps = simulate_paths({p}, grid, 37, m, SimMode::Baseline, opt);
    double sxy = 0, sx = 0, sy = 0, sxx = 0, syy = 0;
    for (std::size_t j = 0; j < m; ++j) {
        const double x = ps.rate(j, grid.n, 0) - 0.02, y = ps.rate(j, grid.n, 1) - 0.01;
        sx += x; sy += y; sxy += x * y; sxx += x * x; syy += y * y;
    }
    const double corr_hat = (sxy / m - sx * sy / (double(m) * m)) /
                            std::sqrt((sxx / m - sx * sx / (double(m) * m)) *
                                      (syy / m - sy * sy / (double(m) * m)));
    REQUIRE(corr_hat > 0.7); // strongly positive, identity would give ~0
}
