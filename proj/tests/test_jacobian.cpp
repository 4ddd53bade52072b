#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "xva/calibration.hpp"
#include "xva/products.hpp"

using namespace xva;

namespace {

// One-economy Vasicek toy: free parameters (r0, a, b), five ZC pillars.
struct VasicekToy {
    double sigma = 0.01;
    std::vector<double> pillars = {1, 2, 3, 5, 7};

    Eigen::VectorXd prices(const Eigen::VectorXd& psi) const {
        Eigen::VectorXd z(pillars.size());
        for (std::size_t i = 0; i < pillars.size(); ++i)
            z[i] = zc_bond_price(psi[1], psi[2], sigma, psi[0], pillars[i]);
        return z;
    }
    PricingMap map() const {
        return [*this](const Eigen::VectorXd& psi) { return prices(psi); };
    }
    // portfolio value: a couple of longer-dated bonds, analytic in psi
    static double value(const Eigen::VectorXd& psi, double sigma) {
        return 10.0 * zc_bond_price(psi[1], psi[2], sigma, psi[0], 8.0) +
               4.0 * zc_bond_price(psi[1], psi[2], sigma, psi[0], 4.5);
    }
};

} // namespace

TEST_CASE("cal_err basics") {
    Eigen::VectorXd z(3), model(3);
    z << 1.0, 2.0, 3.0;
    model = z;
    REQUIRE(cal_err(model, z) == 0.0);
    model[1] += 0.5;
    REQUIRE(cal_err(model, z) == Catch::Approx(0.25 / 3.0));
    REQUIRE(cal_err(model, z) >= 0.0);
    REQUIRE_THROWS(cal_err(Eigen::VectorXd(2), z));
}

TEST_CASE("calibration recovers the generating parameters") {
    VasicekToy toy;
    Eigen::VectorXd psi_true(3);
    psi_true << 0.02, 0.15, 0.035;
    const Eigen::VectorXd z = toy.prices(psi_true);

    // already at the optimum: returns immediately
    const CalibrationResult at = calibrate(toy.map(), z, psi_true);
    REQUIRE(at.converged);
    REQUIRE((at.psi - psi_true).norm() < 1e-12);

    // half-percent perturbed start
    Eigen::VectorXd psi0 = psi_true * 1.005;
    const CalibrationResult res = calibrate(toy.map(), z, psi0);
    REQUIRE(res.converged);
    for (int k = 0; k < 3; ++k)
        REQUIRE(std::fabs(res.psi[k] - psi_true[k]) < 1e-6 * std::fabs(psi_true[k]));

    // underdetermined: fewer instruments than free parameters
    VasicekToy thin;
    thin.pillars = {2, 5};
    const CalibrationResult ud = calibrate(thin.map(), thin.prices(psi_true), psi0);
    REQUIRE(ud.underdetermined);
}

TEST_CASE("identity calibration gives the identity jacobian exactly") {
    const PricingMap identity = [](const Eigen::VectorXd& psi) { return psi; };
    Eigen::VectorXd z(3), psi(3);
    z << 1.0, 2.0, 3.0;
    psi = z;
    const Eigen::MatrixXd jac = param_jacobian(identity, z, psi);
    REQUIRE((jac - Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-9);
    // chain rule through the identity leaves model sensitivities unchanged
    Eigen::VectorXd ms(3);
    ms << 4.0, -1.0, 0.5;
    REQUIRE((market_sensitivities(ms, jac) - ms).norm() < 1e-8);
    REQUIRE(market_sensitivities(Eigen::VectorXd::Zero(3), jac).norm() == 0.0);
}

TEST_CASE("linear model jacobian inverts the design matrix") {
    Eigen::MatrixXd A(3, 3);
    A << 2.0, 0.1, 0.0, 0.0, 1.5, 0.2, 0.1, 0.0, 0.8;
    const PricingMap f = [A](const Eigen::VectorXd& psi) { return (A * psi).eval(); };
    Eigen::VectorXd psi(3);
    psi << 1.0, 2.0, 3.0;
    const Eigen::VectorXd z = A * psi;
    const Eigen::MatrixXd jac = param_jacobian(f, z, psi);
    REQUIRE((jac - A.inverse()).cwiseAbs().maxCoeff() < 1e-6);
    // exact finite-difference Hessian agrees at the perfect fit
    JacobianOptions ex;
    ex.gauss_newton = false;
    const Eigen::MatrixXd jac2 = param_jacobian(f, z, psi, ex);
    REQUIRE((jac2 - A.inverse()).cwiseAbs().maxCoeff() < 1e-4);
}

TEST_CASE("rank-deficient calibration is reported, not silently inverted") {
    // two parameters moving prices identically
    const PricingMap f = [](const Eigen::VectorXd& psi) {
        Eigen::VectorXd z(3);
        const double s = psi[0] + psi[1];
        z << s, 2.0 * s, 3.0 * s;
        return z;
    };
    Eigen::VectorXd psi(2);
    psi << 1.0, 1.0;
    REQUIRE_THROWS_AS(param_jacobian(f, f(psi), psi), std::runtime_error);
}

TEST_CASE("chain-rule market sensitivities match bump-and-recalibrate") {
    VasicekToy toy;
    Eigen::VectorXd psi_star(3);
    psi_star << 0.02, 0.15, 0.035;
    const Eigen::VectorXd z0 = toy.prices(psi_star);

    const Eigen::MatrixXd jac = param_jacobian(toy.map(), z0, psi_star);
    Eigen::VectorXd model_sensis(3);
    {
        const double h = 1e-6;
        for (int k = 0; k < 3; ++k) {
            Eigen::VectorXd up = psi_star, dn = psi_star;
            up[k] += h * std::fabs(psi_star[k]);
            dn[k] -= h * std::fabs(psi_star[k]);
            model_sensis[k] =
                (VasicekToy::value(up, toy.sigma) - VasicekToy::value(dn, toy.sigma)) /
                (2 * h * std::fabs(psi_star[k]));
        }
    }
    const Eigen::VectorXd chain = market_sensitivities(model_sensis, jac);

    // oracle: bump each quote, recalibrate, revalue
    for (std::size_t k = 0; k < toy.pillars.size(); ++k) {
        const double dz = 1e-4;
        Eigen::VectorXd zu = z0, zd = z0;
        zu[k] += dz;
        zd[k] -= dz;
        const Eigen::VectorXd pu = calibrate(toy.map(), zu, psi_star).psi;
        const Eigen::VectorXd pd = calibrate(toy.map(), zd, psi_star).psi;
        const double direct =
            (VasicekToy::value(pu, toy.sigma) - VasicekToy::value(pd, toy.sigma)) / (2 * dz);
        REQUIRE(std::fabs(chain[k] - direct) <= 0.02 * std::max(std::fabs(direct), 1e-6));
    }
}

TEST_CASE("free mask freezes exactly the volatility parameters") {
    ModelParams p(2, 1);
    const std::vector<int> free_idx = default_free_mask(p);
    // p = 14, frozen: sigma_r x2, sigma_fx x1, nu x1
    REQUIRE(static_cast<int>(free_idx.size()) == p.dim() - 4);
    for (int k : free_idx) REQUIRE(!param_kind_is_volatility(p.kind_of(k)));
}

TEST_CASE("jacobian and market sensitivity csv outputs") {
    Eigen::MatrixXd jac(2, 3);
    jac << 1, 2, 3, 4, 5, 6;
    const std::string path = std::filesystem::temp_directory_path() / "xva_jac.csv";
    save_jacobian_csv(jac, {"r0[0]", "a[0]"}, path);
    std::ifstream f(path);
    std::string line;
    std::getline(f, line);
    REQUIRE(line == "free_parameter,z0,z1,z2");
    std::getline(f, line);
    REQUIRE(line == "r0[0],1,2,3");
    std::filesystem::remove(path);

    ModelParams p(2, 1);
    const InstrumentSet set = make_instrument_set(p, {1}, {0.5}, {2}, 0.6);
    Eigen::VectorXd ms(set.size());
    ms << 0.5, -0.25, 1.0, 2.0;
    const std::string path2 = std::filesystem::temp_directory_path() / "xva_msens.csv";
    save_market_sensitivities_csv(set, ms, "smart", path2);
    std::ifstream f2(path2);
    std::getline(f2, line);
    REQUIRE(line == "kind,index,pillar,estimate,method");
    std::getline(f2, line);
    REQUIRE(line == "zc,0,1,0.5,smart");
    std::filesystem::remove(path2);
}

TEST_CASE("calibration quotes reuse the instrument pricing code path bitwise") {
    ModelParams p(2, 2);
    p.r0 = {0.02, 0.015};
    p.a = {0.3, 0.35};
    p.b = {0.03, 0.025};
    p.sigma_r = {0.01, 0.012};
    p.fx0 = {1.1};
    p.sigma_fx = {0.1};
    p.gamma0 = {0.1, 0.15};
    p.alpha = {0.12, 0.18};
    p.delta = {0.5, 0.4};
    p.nu = {0.07, 0.08};
    const InstrumentSet set = make_instrument_set(p, {0.5, 1, 5}, {0.5}, {1, 5}, 0.6);
    const std::vector<int> free_idx = default_free_mask(p);
    const PricingMap f = make_pricing_map(set, p, free_idx);
    Eigen::VectorXd psi0(free_idx.size());
    const Eigen::VectorXd full = p.to_vector();
    for (std::size_t i = 0; i < free_idx.size(); ++i) psi0[i] = full[free_idx[i]];
    const Eigen::VectorXd z_map = f(psi0);
    const Eigen::VectorXd z_direct = instrument_prices(set, p, 0.0);
    for (int i = 0; i < set.size(); ++i) REQUIRE(z_map[i] == z_direct[i]); // bitwise
}
