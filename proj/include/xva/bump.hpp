#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "xva/engine.hpp"
#include "xva/learners.hpp"
#include "xva/parallel.hpp"
#include "xva/rng.hpp"
#include "xva/stats.hpp"

namespace xva {

// Payoff sample xi(rho; omega_j): the path index selects the stochastic
// drivers, so evaluating at two parameter vectors with the same index is a
// common-random-numbers coupling.
using PayoffFn = std::function<double(const Eigen::VectorXd& rho, std::uint64_t path)>;

inline Eigen::VectorXd symmetrize(const Eigen::VectorXd& rho, const Eigen::VectorXd& rho0) {
    if (rho.size() != rho0.size()) throw std::invalid_argument("symmetrize: dimension mismatch");
    return 2.0 * rho0 - rho;
}

// ---------------------------------------------------------------------------
// Reports and bump plans
// ---------------------------------------------------------------------------

struct SensitivityEntry {
    std::string name;
    double estimate = 0.0;
    double ci_halfwidth = std::numeric_limits<double>::quiet_NaN(); // NaN when unavailable
    double gamma = std::numeric_limits<double>::quiet_NaN();
    double gamma_ci = std::numeric_limits<double>::quiet_NaN();
    bool failed = false;
};

struct SensitivityReport {
    std::string method;
    std::vector<SensitivityEntry> entries;

    Eigen::VectorXd estimates() const {
        Eigen::VectorXd v(entries.size());
        for (std::size_t i = 0; i < entries.size(); ++i) v[i] = entries[i].estimate;
        return v;
    }
};

inline void save_sensitivity_csv(const SensitivityReport& rep, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("save_sensitivity_csv: cannot open " + path);
    f << "parameter_name,estimate,ci_halfwidth,method\n";
    for (const auto& e : rep.entries) {
        f << e.name << ',' << fmt6(e.estimate) << ',';
        if (!std::isnan(e.ci_halfwidth)) f << fmt6(e.ci_halfwidth);
        f << ',' << rep.method << '\n';
    }
}

struct BumpPlan {
    enum class Mode { Gaussian, Deterministic1pct };
    Mode mode = Mode::Gaussian;
    std::vector<std::vector<int>> groups;  // disjoint cover of 0..p-1
    std::vector<double> sigma_per_group;   // relative stdev per group (Gaussian mode)
    double det_rel_bump = 0.01;            // deterministic mode bump size
    double abs_fallback = 1e-4;            // bump for parameters whose baseline is 0

    int group_of_path(std::size_t j, std::size_t m) const {
        return static_cast<int>(j * groups.size() / m);
    }
    void validate(int p) const {
        std::vector<int> seen(p, 0);
        if (groups.size() != sigma_per_group.size())
            throw std::invalid_argument("BumpPlan: sigma per group missing");
        for (const auto& g : groups)
            for (int k : g) {
                if (k < 0 || k >= p || seen[k]++) throw std::invalid_argument("BumpPlan: groups must partition the parameters");
            }
        for (int k = 0; k < p; ++k)
            if (!seen[k]) throw std::invalid_argument("BumpPlan: groups must cover all parameters");
        if (mode == Mode::Deterministic1pct)
            for (const auto& g : groups)
                if (g.size() != 1) throw std::invalid_argument("BumpPlan: deterministic plan needs singleton groups");
    }
};

// One singleton group per parameter, bumped deterministically: this is the
// smart-bump plan, and also the degenerate case under which the linear
// regression reduces to a block mean.
inline BumpPlan one_hot_plan(int p, double rel_bump = 0.01, double abs_fallback = 1e-4) {
    BumpPlan plan;
    plan.mode = BumpPlan::Mode::Deterministic1pct;
    plan.det_rel_bump = rel_bump;
    plan.abs_fallback = abs_fallback;
    for (int k = 0; k < p; ++k) {
        plan.groups.push_back({k});
        plan.sigma_per_group.push_back(rel_bump);
    }
    return plan;
}

// Group the lab parameters by kind (the ten horizontal blocks of the model
// parameter table); volatility groups get the noisier 5% randomization.
inline BumpPlan lab_bump_plan(const ModelParams& p, double sigma_base = 0.01, double sigma_vol = 0.05) {
    BumpPlan plan;
    std::vector<std::vector<int>> by_kind(10);
    for (int k = 0; k < p.dim(); ++k) by_kind[static_cast<int>(p.kind_of(k))].push_back(k);
    for (int g = 0; g < 10; ++g) {
        if (by_kind[g].empty()) continue;
        plan.groups.push_back(by_kind[g]);
        plan.sigma_per_group.push_back(param_kind_is_volatility(static_cast<ParamKind>(g)) ? sigma_vol
                                                                                           : sigma_base);
    }
    return plan;
}

// Spots in one half of the paths, volatilities in the other.
inline BumpPlan basket_bump_plan(int d, double sigma_spots = 0.01, double sigma_vols = 0.05) {
    BumpPlan plan;
    std::vector<int> spots(d), vols(d);
    for (int i = 0; i < d; ++i) spots[i] = i, vols[i] = d + i;
    plan.groups = {spots, vols};
    plan.sigma_per_group = {sigma_spots, sigma_vols};
    return plan;
}

// ---------------------------------------------------------------------------
// Benchmark bump sensitivities: 2p repricings with common random numbers
// ---------------------------------------------------------------------------

struct BenchmarkBumpConfig {
    double rel_bump = 0.01;
    double abs_fallback = 1e-4;
    bool want_gammas = false;
};

inline SensitivityReport benchmark_bump(const PayoffFn& payoff, const Eigen::VectorXd& rho0,
                                        std::size_t m, const std::vector<std::string>& names,
                                        const BenchmarkBumpConfig& cfg = {}) {
    if (m < 2) throw std::invalid_argument("benchmark_bump: m >= 2 required");
    const int p = static_cast<int>(rho0.size());
    SensitivityReport rep;
    rep.method = "benchmark";
    rep.entries.resize(p);

    std::vector<double> base;
    if (cfg.want_gammas) {
        base.resize(m);
        parallel_for(m, [&](std::size_t j) { base[j] = payoff(rho0, j); });
    }
    for (int k = 0; k < p; ++k) {
        const double bump = rho0[k] != 0.0 ? cfg.rel_bump * std::fabs(rho0[k]) : cfg.abs_fallback;
        Eigen::VectorXd up = rho0, dn = rho0;
        up[k] += bump;
        dn[k] -= bump;
        std::vector<double> diff(m), second(cfg.want_gammas ? m : 0);
        parallel_for(m, [&](std::size_t j) {
            const double fu = payoff(up, j);
            const double fd = payoff(dn, j);
            diff[j] = fu - fd;
            if (cfg.want_gammas) second[j] = fu - 2.0 * base[j] + fd;
        });
        const McStats sd = mc_stats(diff);
        SensitivityEntry& e = rep.entries[k];
        e.name = k < static_cast<int>(names.size()) ? names[k] : "p" + std::to_string(k);
        e.estimate = sd.mean / (2.0 * bump);
        e.ci_halfwidth = sd.ci_halfwidth / (2.0 * bump);
        if (cfg.want_gammas) {
            const McStats sg = mc_stats(second);
            e.gamma = sg.mean / (bump * bump);
            e.gamma_ci = sg.ci_halfwidth / (bump * bump);
        }
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Randomized bumps: draws, symmetrized payoff differences
// ---------------------------------------------------------------------------

struct BumpDraws {
    Eigen::MatrixXd rho;        // m x p randomized parameters
    Eigen::VectorXd varsigma;   // symmetrized payoff differences
    std::vector<int> group_of;  // block membership per path
};

inline BumpDraws draw_and_evaluate(const PayoffFn& payoff, const Eigen::VectorXd& rho0, std::size_t m,
                                   const BumpPlan& plan, std::uint64_t seed) {
    const int p = static_cast<int>(rho0.size());
    plan.validate(p);
    BumpDraws d;
    d.rho.resize(m, p);
    d.varsigma.resize(m);
    d.group_of.resize(m);
    const std::uint64_t draw_seed = derive_seed(seed, 11);

    parallel_for(m, [&](std::size_t j) {
        const int g = plan.group_of_path(j, m);
        d.group_of[j] = g;
        Eigen::VectorXd rho = rho0;
        if (plan.mode == BumpPlan::Mode::Gaussian) {
            RngStream ds = make_stream(draw_seed, j);
            for (int k : plan.groups[g]) {
                const double sd = rho0[k] != 0.0 ? plan.sigma_per_group[g] * std::fabs(rho0[k])
                                                 : plan.abs_fallback;
                rho[k] += sd * ds.normal();
            }
        } else {
            const int k = plan.groups[g][0];
            rho[k] += rho0[k] != 0.0 ? plan.det_rel_bump * std::fabs(rho0[k]) : plan.abs_fallback;
        }
        d.rho.row(j) = rho.transpose();
        const Eigen::VectorXd rho_bar = 2.0 * rho0 - rho;
        d.varsigma[j] = payoff(rho, j) - payoff(rho_bar, j);
    });
    return d;
}

// ---------------------------------------------------------------------------
// Linear bump sensitivities (and the smart-bump special case)
// ---------------------------------------------------------------------------

struct LinearBumpConfig {
    double ridge = 1e-8;
    double svd_truncation = 1e-10;
    // Gaussian-plan fast path: use the known diagonal covariance of the draws
    // instead of inverting the sample Gram matrix (no ridge in this case).
    bool analytic_covariance = false;
};

inline SensitivityReport linear_bump(const PayoffFn& payoff, const Eigen::VectorXd& rho0, std::size_t m,
                                     const BumpPlan& plan, const std::vector<std::string>& names,
                                     std::uint64_t seed, const LinearBumpConfig& cfg = {}) {
    const int p = static_cast<int>(rho0.size());
    plan.validate(p);
    for (std::size_t g = 0; g < plan.groups.size(); ++g) {
        const std::size_t lo = g * m / plan.groups.size(), hi = (g + 1) * m / plan.groups.size();
        if (hi - lo < plan.groups[g].size() + 2)
            throw std::invalid_argument("linear_bump: block sample smaller than group size + 2");
    }
    const BumpDraws d = draw_and_evaluate(payoff, rho0, m, plan, seed);

    SensitivityReport rep;
    rep.method = plan.mode == BumpPlan::Mode::Deterministic1pct ? "smart" : "linear";
    rep.entries.resize(p);
    for (int k = 0; k < p; ++k)
        rep.entries[k].name = k < static_cast<int>(names.size()) ? names[k] : "p" + std::to_string(k);

    for (std::size_t g = 0; g < plan.groups.size(); ++g) {
        std::vector<std::size_t> rows;
        for (std::size_t j = 0; j < m; ++j)
            if (d.group_of[j] == static_cast<int>(g)) rows.push_back(j);
        const auto& comps = plan.groups[g];
        Eigen::MatrixXd X(rows.size(), comps.size());
        Eigen::VectorXd y(rows.size());
        for (std::size_t r = 0; r < rows.size(); ++r) {
            for (std::size_t c = 0; c < comps.size(); ++c)
                X(r, c) = d.rho(rows[r], comps[c]) - rho0[comps[c]];
            y[r] = d.varsigma[rows[r]];
        }
        if (cfg.analytic_covariance && plan.mode == BumpPlan::Mode::Gaussian) {
            // E[x xi] / Var(x) componentwise, with the known draw variance
            for (std::size_t c = 0; c < comps.size(); ++c) {
                const int k = comps[c];
                const double sd = rho0[k] != 0.0 ? plan.sigma_per_group[g] * std::fabs(rho0[k])
                                                 : plan.abs_fallback;
                std::vector<double> xs(rows.size());
                for (std::size_t r = 0; r < rows.size(); ++r) xs[r] = X(r, c) * y[r];
                const McStats st = mc_stats(xs);
                rep.entries[k].estimate = st.mean / (sd * sd) / 2.0;
                rep.entries[k].ci_halfwidth = st.ci_halfwidth / (sd * sd) / 2.0;
            }
            continue;
        }
        LinearFitOptions lo;
        lo.intercept = false;
        lo.standardize = false;
        lo.ridge = cfg.ridge;
        lo.svd_truncation = cfg.svd_truncation;
        lo.want_std_errors = true;
        const LinearModel fit = fit_linear(X, y, lo);
        for (std::size_t c = 0; c < comps.size(); ++c) {
            SensitivityEntry& e = rep.entries[comps[c]];
            e.estimate = fit.coefficients[c] / 2.0; // d Sigma_0 = 2 d Pi_0
            e.ci_halfwidth = 1.96 * fit.std_errors[c] / 2.0;
            for (int dropped : fit.dropped)
                if (dropped == static_cast<int>(c)) e.failed = true;
        }
    }
    return rep;
}

// Smart bump sensitivities: the deterministic one-hot specialization of the
// linear bump machinery, one block of m/p paths per parameter. Sharing the
// code path keeps the specialization identity exact.
inline SensitivityReport smart_bump(const PayoffFn& payoff, const Eigen::VectorXd& rho0, std::size_t m,
                                    const std::vector<std::string>& names, std::uint64_t seed,
                                    double rel_bump = 0.01, double abs_fallback = 1e-4) {
    const int p = static_cast<int>(rho0.size());
    if (m < 2 * static_cast<std::size_t>(p)) throw std::invalid_argument("smart_bump: m >= 2p required");
    SensitivityReport rep =
        linear_bump(payoff, rho0, m, one_hot_plan(p, rel_bump, abs_fallback), names, seed);
    rep.method = "smart";
    return rep;
}

// ---------------------------------------------------------------------------
// AAD bump sensitivities: halved input gradient of a net trained on varsigma
// ---------------------------------------------------------------------------

struct AadBumpConfig {
    std::vector<int> hidden = {64, 64};
    TrainConfig train;
};

inline SensitivityReport aad_bump(const PayoffFn& payoff, const Eigen::VectorXd& rho0, std::size_t m,
                                  const BumpPlan& plan, const std::vector<std::string>& names,
                                  std::uint64_t seed, const AadBumpConfig& cfg = {}) {
    const BumpDraws d = draw_and_evaluate(payoff, rho0, m, plan, seed);
    SensitivityReport rep;
    rep.method = "aad";
    rep.entries.resize(rho0.size());
    for (int k = 0; k < rho0.size(); ++k)
        rep.entries[k].name = k < static_cast<int>(names.size()) ? names[k] : "p" + std::to_string(k);
    try {
        const MlpModel net = fit_mlp(d.rho, d.varsigma, cfg.hidden, cfg.train);
        const Eigen::VectorXd grad = net.input_gradient(rho0) / 2.0;
        for (int k = 0; k < rho0.size(); ++k) rep.entries[k].estimate = grad[k];
    } catch (const std::runtime_error&) {
        for (auto& e : rep.entries) e.failed = true; // diverged: withhold estimates
    }
    return rep;
}

// Price learner for the naive AAD demonstration: a net fit to raw payoffs.
inline Predictor train_price_learner(const PayoffFn& payoff, const Eigen::VectorXd& rho0, std::size_t m,
                                     const BumpPlan& plan, std::uint64_t seed,
                                     const AadBumpConfig& cfg = {}) {
    const int p = static_cast<int>(rho0.size());
    plan.validate(p);
    Eigen::MatrixXd rho(m, p);
    Eigen::VectorXd xi(m);
    const std::uint64_t draw_seed = derive_seed(seed, 11);
    parallel_for(m, [&](std::size_t j) {
        const int g = plan.group_of_path(j, m);
        Eigen::VectorXd r = rho0;
        RngStream ds = make_stream(draw_seed, j);
        for (int k : plan.groups[g]) {
            const double sd = rho0[k] != 0.0 ? plan.sigma_per_group[g] * std::fabs(rho0[k])
                                             : plan.abs_fallback;
            r[k] += sd * ds.normal();
        }
        rho.row(j) = r.transpose();
        xi[j] = payoff(r, j);
    });
    Predictor pr;
    pr.kind = Predictor::Kind::Mlp;
    pr.mlp = fit_mlp(rho, xi, cfg.hidden, cfg.train);
    return pr;
}

// Input gradient of a trained price net at rho0 (not halved, no CI): shown
// only to demonstrate its fragility next to the varsigma-based estimators.
inline SensitivityReport naive_aad(const Predictor& price_learner, const Eigen::VectorXd& rho0,
                                   const std::vector<std::string>& names) {
    SensitivityReport rep;
    rep.method = "naive-aad";
    const Eigen::VectorXd grad = price_learner.input_gradient(rho0);
    rep.entries.resize(grad.size());
    for (int k = 0; k < grad.size(); ++k) {
        rep.entries[k].name = k < static_cast<int>(names.size()) ? names[k] : "p" + std::to_string(k);
        rep.entries[k].estimate = grad[k];
    }
    return rep;
}

} // namespace xva
