#pragma once

#include <cmath>
#include <fstream>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "xva/engine.hpp"
#include "xva/products.hpp"
#include "xva/stats.hpp"

namespace xva {

// Model price map psi -> q instrument prices, over the free parameters only.
using PricingMap = std::function<Eigen::VectorXd(const Eigen::VectorXd& psi)>;

// Mean square calibration error between model and market prices.
inline double cal_err(const Eigen::VectorXd& model_prices, const Eigen::VectorXd& z) {
    if (model_prices.size() != z.size()) throw std::invalid_argument("cal_err: dimension mismatch");
    return (model_prices - z).squaredNorm() / static_cast<double>(z.size());
}

// Indices of the calibrated parameters: initial conditions and drift
// parameters, with all volatility parameters frozen.
inline std::vector<int> default_free_mask(const ModelParams& p) {
    std::vector<int> free_idx;
    for (int k = 0; k < p.dim(); ++k)
        if (!param_kind_is_volatility(p.kind_of(k))) free_idx.push_back(k);
    return free_idx;
}

// Pricing map for the lab: free components override rho0, quotes at t=0.
inline PricingMap make_pricing_map(const InstrumentSet& set, const ModelParams& rho0,
                                   const std::vector<int>& free_idx) {
    const Eigen::VectorXd base = rho0.to_vector();
    const int E = rho0.economies, C = rho0.counterparties;
    return [&set, base, free_idx, E, C](const Eigen::VectorXd& psi) {
        if (psi.size() != static_cast<Eigen::Index>(free_idx.size()))
            throw std::invalid_argument("pricing map: free parameter dimension mismatch");
        Eigen::VectorXd full = base;
        for (std::size_t i = 0; i < free_idx.size(); ++i) full[free_idx[i]] = psi[i];
        return instrument_prices(set, ModelParams::from_vector(E, C, full), 0.0);
    };
}

namespace detail {

inline double fd_step(double x, double rel = 1e-6, double floor = 1e-8) {
    return std::max(rel * std::fabs(x), floor);
}

// Central finite-difference Jacobian of the pricing map, q x k.
inline Eigen::MatrixXd price_jacobian(const PricingMap& f, const Eigen::VectorXd& psi) {
    const Eigen::Index k = psi.size();
    Eigen::VectorXd up = f(psi);
    Eigen::MatrixXd J(up.size(), k);
    for (Eigen::Index a = 0; a < k; ++a) {
        Eigen::VectorXd pu = psi, pd = psi;
        const double h = fd_step(psi[a]);
        pu[a] += h;
        pd[a] -= h;
        J.col(a) = (f(pu) - f(pd)) / (2.0 * h);
    }
    return J;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Calibration: Levenberg-Marquardt least squares
// ---------------------------------------------------------------------------

struct CalibrateOptions {
    int max_iterations = 200;
    double gradient_tol = 1e-10;
    double initial_lambda = 1e-6;
};

struct CalibrationResult {
    Eigen::VectorXd psi;
    bool converged = false;
    bool underdetermined = false;
    double gradient_norm = 0.0;
    double cal_err_value = 0.0;
    int iterations = 0;
};

inline CalibrationResult calibrate(const PricingMap& f, const Eigen::VectorXd& z,
                                   const Eigen::VectorXd& psi_init, const CalibrateOptions& opt = {}) {
    const double q = static_cast<double>(z.size());
    CalibrationResult res;
    res.psi = psi_init;
    res.underdetermined = z.size() < psi_init.size();

    Eigen::VectorXd r = f(res.psi) - z;
    double err = r.squaredNorm() / q;
    double lambda = opt.initial_lambda;

    for (int it = 0; it < opt.max_iterations; ++it) {
        res.iterations = it;
        const Eigen::MatrixXd J = detail::price_jacobian(f, res.psi);
        const Eigen::VectorXd grad = 2.0 * J.transpose() * r / q;
        res.gradient_norm = grad.norm();
        if (res.gradient_norm < opt.gradient_tol) {
            res.converged = true;
            break;
        }
        const Eigen::MatrixXd JtJ = J.transpose() * J;
        bool stepped = false;
        for (int tries = 0; tries < 40; ++tries) {
            Eigen::MatrixXd A = JtJ;
            A.diagonal().array() += lambda * (JtJ.trace() / std::max<double>(1, JtJ.rows()) + 1e-300);
            const Eigen::VectorXd step = A.ldlt().solve(-J.transpose() * r);
            const Eigen::VectorXd trial = res.psi + step;
            const Eigen::VectorXd rt = f(trial) - z;
            const double errt = rt.squaredNorm() / q;
            if (errt <= err * (1.0 + 1e-14) || step.norm() < 1e-16) {
                res.psi = trial;
                r = rt;
                err = errt;
                lambda = std::max(lambda * 0.3, 1e-12);
                stepped = true;
                break;
            }
            lambda *= 10.0;
        }
        if (!stepped) break;
    }
    if (!res.converged) { // final check (max_iterations may end on a solved state)
        const Eigen::MatrixXd J = detail::price_jacobian(f, res.psi);
        res.gradient_norm = (2.0 * J.transpose() * r / q).norm();
        res.converged = res.gradient_norm < opt.gradient_tol;
    }
    res.cal_err_value = err;
    return res;
}

// ---------------------------------------------------------------------------
// Implicit-function-theorem Jacobian d rho / d z
// ---------------------------------------------------------------------------

struct JacobianOptions {
    bool gauss_newton = true; // drop second-derivative-of-price terms
    double condition_limit = 1e12;
};

// d_z rho(z) = -(d2_psipsi cal_err)^{-1} (d2_psiz cal_err), a (free_p x q)
// matrix. With cal_err = |f(psi)-z|^2/q the cross term is exactly -(2/q) J,
// and the Gauss-Newton Hessian is (2/q) J'J; the scale factors cancel, which
// also makes the result invariant to rescaling cal_err by a constant.
inline Eigen::MatrixXd param_jacobian(const PricingMap& f, const Eigen::VectorXd& z,
                                      const Eigen::VectorXd& psi_star, const JacobianOptions& opt = {}) {
    const Eigen::Index k = psi_star.size();
    const double q = static_cast<double>(z.size());
    const Eigen::MatrixXd J = detail::price_jacobian(f, psi_star);

    Eigen::MatrixXd H(k, k);
    if (opt.gauss_newton) {
        H = 2.0 * J.transpose() * J / q;
    } else {
        // exact Hessian of cal_err by central second differences
        auto err_at = [&](const Eigen::VectorXd& psi) { return cal_err(f(psi), z); };
        for (Eigen::Index a = 0; a < k; ++a) {
            const double ha = detail::fd_step(psi_star[a]);
            for (Eigen::Index b = a; b < k; ++b) {
                const double hb = detail::fd_step(psi_star[b]);
                Eigen::VectorXd pp = psi_star, pm = psi_star, mp = psi_star, mm = psi_star;
                pp[a] += ha; pp[b] += hb;
                pm[a] += ha; pm[b] -= hb;
                mp[a] -= ha; mp[b] += hb;
                mm[a] -= ha; mm[b] -= hb;
                H(a, b) = H(b, a) = (err_at(pp) - err_at(pm) - err_at(mp) + err_at(mm)) / (4.0 * ha * hb);
            }
        }
    }

    Eigen::JacobiSVD<Eigen::MatrixXd> svd(H, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& s = svd.singularValues();
    if (s[s.size() - 1] <= 0.0 || s[0] / s[s.size() - 1] > opt.condition_limit)
        throw std::runtime_error(
            "param_jacobian: calibration Hessian is rank deficient (condition number above 1e12); "
            "free parameters are not identified by the instrument set");

    // solve H X = (2/q) J^T, never forming the inverse
    const Eigen::MatrixXd rhs = 2.0 * J.transpose() / q;
    return svd.solve(rhs);
}

// Chain rule: market sensitivities from model sensitivities restricted to the
// free parameters.
inline Eigen::VectorXd market_sensitivities(const Eigen::VectorXd& model_sensis_free,
                                            const Eigen::MatrixXd& jacobian) {
    if (model_sensis_free.size() != jacobian.rows())
        throw std::invalid_argument("market_sensitivities: dimension mismatch");
    return jacobian.transpose() * model_sensis_free;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

inline void save_jacobian_csv(const Eigen::MatrixXd& jac, const std::vector<std::string>& row_names,
                              const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("save_jacobian_csv: cannot open " + path);
    f << "free_parameter";
    for (Eigen::Index j = 0; j < jac.cols(); ++j) f << ",z" << j;
    f << '\n';
    for (Eigen::Index i = 0; i < jac.rows(); ++i) {
        f << row_names[i];
        for (Eigen::Index j = 0; j < jac.cols(); ++j) f << ',' << fmt6(jac(i, j));
        f << '\n';
    }
}

inline const char* instrument_kind_label(InstrumentKind k) {
    switch (k) {
        case InstrumentKind::Zc: return "zc";
        case InstrumentKind::FxForward: return "fx";
        case InstrumentKind::Cds: return "cds";
    }
    return "?";
}

inline void save_market_sensitivities_csv(const InstrumentSet& set, const Eigen::VectorXd& sensis,
                                          const std::string& method, const std::string& path) {
    if (sensis.size() != set.size())
        throw std::invalid_argument("save_market_sensitivities_csv: dimension mismatch");
    std::ofstream f(path);
    if (!f) throw std::runtime_error("save_market_sensitivities_csv: cannot open " + path);
    f << "kind,index,pillar,estimate,method\n";
    for (int i = 0; i < set.size(); ++i) {
        const Instrument& ins = set.instruments[i];
        f << instrument_kind_label(ins.kind) << ',' << ins.index << ',' << fmt6(ins.pillar) << ','
          << fmt6(sensis[i]) << ',' << method << '\n';
    }
}

} // namespace xva
