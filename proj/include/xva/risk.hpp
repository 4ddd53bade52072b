#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "xva/learners.hpp"
#include "xva/rng.hpp"
#include "xva/stats.hpp"

namespace xva {

// ---------------------------------------------------------------------------
// Twin Monte Carlo validation
// ---------------------------------------------------------------------------

struct TwinReport {
    double twin_stat = 0.0;
    double twin_stdev = 0.0;
    double twin_err = std::numeric_limits<double>::quiet_NaN(); // N/A when twin_stat <= 0
    double twin_ub = 0.0;
    double norm = 1.0;
};

// Unbiased estimate of E[(Phi - E[xi|rho])^2] from two conditionally
// independent payoff copies, with its 95% upper bound.
inline TwinReport twin_validate(const Eigen::VectorXd& phi, const Eigen::VectorXd& xi1,
                                const Eigen::VectorXd& xi2, double norm = 1.0) {
    if (!(norm > 0.0)) throw std::invalid_argument("twin_validate: norm must be positive");
    const Eigen::Index m = phi.size();
    if (xi1.size() != m || xi2.size() != m || m == 0)
        throw std::invalid_argument("twin_validate: sample size mismatch");
    TwinReport rep;
    rep.norm = norm;
    const Eigen::ArrayXd term =
        phi.array().square() - (xi1 + xi2).array() * phi.array() + xi1.array() * xi2.array();
    rep.twin_stat = term.mean();
    rep.twin_stdev = std::sqrt((term - rep.twin_stat).square().mean());
    const double up = rep.twin_stat + 2.0 / std::sqrt(static_cast<double>(m)) * rep.twin_stdev;
    rep.twin_ub = std::sqrt(std::max(up, 0.0)) / norm;
    if (rep.twin_stat >= 0.0) rep.twin_err = std::sqrt(rep.twin_stat) / norm;
    return rep;
}

// ---------------------------------------------------------------------------
// Value-at-risk and expected shortfall
// ---------------------------------------------------------------------------

struct VarEs {
    double var = 0.0;
    double es = 0.0;
    bool thin_tail_warning = false; // fewer than 1/(1-alpha) samples
};

inline VarEs var_es(const std::vector<double>& samples, double alpha) {
    if (samples.empty()) throw std::invalid_argument("var_es: empty sample");
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("var_es: alpha outside (0,1)");
    VarEs out;
    out.thin_tail_warning = static_cast<double>(samples.size()) < 1.0 / (1.0 - alpha);
    out.var = quantile_higher(samples, alpha);
    double acc = 0.0;
    std::size_t count = 0;
    for (double v : samples)
        if (v >= out.var) {
            acc += v;
            ++count;
        }
    out.es = count ? acc / static_cast<double>(count) : out.var;
    return out;
}

inline VarEs var_es(const Eigen::VectorXd& samples, double alpha) {
    return var_es(std::vector<double>(samples.data(), samples.data() + samples.size()), alpha);
}

struct RiskReport {
    double expectation = 0.0;
    std::vector<double> levels;
    std::vector<double> var;
    std::vector<double> es;
};

inline RiskReport risk_report(const Eigen::VectorXd& samples,
                              const std::vector<double>& levels = {0.95, 0.975, 0.99}) {
    RiskReport rep;
    rep.expectation = samples.mean();
    rep.levels = levels;
    for (double a : levels) {
        const VarEs ve = var_es(samples, a);
        rep.var.push_back(ve.var);
        rep.es.push_back(ve.es);
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Hedged losses: L(Delta) = base - hedge * Delta - c,  E L = 0
// ---------------------------------------------------------------------------

struct HedgeProblem {
    Eigen::VectorXd base;   // CVA leg per scenario (delta Pi^phi [+ C_t])
    Eigen::MatrixXd hedge;  // per-scenario hedge leg (delta Z [+ CF]) columns

    // HVA trend making the sample mean of the loss zero for this Delta.
    double trend(const Eigen::VectorXd& delta) const {
        return base.mean() - hedge.colwise().mean().dot(delta);
    }
    Eigen::VectorXd loss(const Eigen::VectorXd& delta, double* c_out = nullptr) const {
        if (delta.size() != hedge.cols()) throw std::invalid_argument("HedgeProblem: Delta dimension mismatch");
        const double c = trend(delta);
        if (c_out) *c_out = c;
        return base - hedge * delta - Eigen::VectorXd::Constant(base.size(), c);
    }
};

// Run-off loss at horizon t: delta Pi^phi_t + C_t - (dZ_t + CF_t)' Delta - c.
// The predictor is evaluated on the dataset features; Z and CF come from the
// same simulated paths.
inline HedgeProblem build_runoff_problem(const Predictor& cva_predictor, double pi0,
                                         const RiskDataset& ds, const Eigen::VectorXd& z0) {
    if (ds.quotes.size() == 0)
        throw std::invalid_argument("build_runoff_problem: dataset generated without quotes");
    HedgeProblem hp;
    const Eigen::VectorXd phi = cva_predictor.predict_batch(ds.features);
    hp.base = phi.array() - pi0 + ds.loss_t.array();
    hp.hedge = (ds.quotes.rowwise() - z0.transpose()) + ds.cashflows;
    return hp;
}

// Run-on loss: delta Pi^phi_(t) - (dZ_(t))' Delta - c; no default-loss term.
inline HedgeProblem build_runon_problem(const Predictor& delta_cva_predictor, const RunOnDataset& ds) {
    HedgeProblem hp;
    hp.base = delta_cva_predictor.predict_batch(ds.features);
    hp.hedge = ds.dZ;
    return hp;
}

// ---------------------------------------------------------------------------
// Optimized sensitivities
// ---------------------------------------------------------------------------

// PnL-explain sensitivities: least squares of the centered CVA leg on the
// centered hedge leg.
inline Eigen::VectorXd ple_sensitivities(const HedgeProblem& hp, double ridge = 1e-8) {
    LinearFitOptions lo;
    lo.intercept = true;
    lo.standardize = true;
    lo.ridge = ridge;
    return fit_linear(hp.hedge, hp.base, lo).coefficients;
}

// LS run-on sensitivities: the raw cash-flow differences regressed on the
// instrument price moves, no prior predictor training.
inline LinearModel ls_sensitivities(const Eigen::VectorXd& cashflow_diff, const Eigen::MatrixXd& dZ,
                                    double ridge = 1e-8) {
    LinearFitOptions lo;
    lo.intercept = true;
    lo.standardize = true;
    lo.ridge = ridge;
    lo.want_std_errors = true;
    return fit_linear(dZ, cashflow_diff, lo);
}

struct EcConfig {
    double alpha = 0.95;
    int epochs = 500;
    int batch_size = 1024;
    double step = 1e-2;
    double ridge = 1e-10;
    std::uint64_t seed = 0;
    double oscillation_tol = 0.2; // flag if the final objective sits this far above the best seen
};

struct EcResult {
    Eigen::VectorXd delta;
    double k = 0.0; // value-at-risk of the optimally hedged loss
    double objective = 0.0;
    bool oscillation_flag = false;
};

// Expected-shortfall minimizing sensitivities via the convex reformulation
//   min_{Delta,k} k + (1-alpha)^{-1} E[(L(Delta) - k)^+],
// solved by Adam stochastic subgradient with k warm-started at the empirical
// VaR and Delta at the PnL-explain solution, then an exact final k step
// (coordinate minimization: the optimal k given Delta is the alpha-quantile).
inline EcResult ec_sensitivities(const HedgeProblem& hp, const EcConfig& cfg = {},
                                 const Eigen::VectorXd* warm_start = nullptr) {
    const Eigen::Index m = hp.base.size();
    const Eigen::Index q = hp.hedge.cols();
    const double tail = 1.0 / (1.0 - cfg.alpha);

    const Eigen::VectorXd bc = hp.base.array() - hp.base.mean();
    Eigen::MatrixXd Hc = hp.hedge.rowwise() - hp.hedge.colwise().mean();

    EcResult res;
    res.delta = q > 0 ? (warm_start ? *warm_start : ple_sensitivities(hp)) : Eigen::VectorXd(0);
    Eigen::VectorXd loss = bc - Hc * res.delta;
    res.k = quantile_higher(std::vector<double>(loss.data(), loss.data() + m), cfg.alpha);

    Eigen::VectorXd mom1 = Eigen::VectorXd::Zero(q), mom2 = Eigen::VectorXd::Zero(q);
    double km1 = 0.0, km2 = 0.0;
    AdamConfig adam;
    adam.step = cfg.step;
    long step_count = 0;
    RngStream shuffle = make_stream(cfg.seed, 0xEC);
    std::vector<Eigen::Index> order(m);
    for (Eigen::Index i = 0; i < m; ++i) order[i] = i;
    double best_obj = std::numeric_limits<double>::infinity();

    auto objective = [&](const Eigen::VectorXd& delta, double k) {
        const Eigen::ArrayXd l = (bc - Hc * delta).array() - k;
        return k + tail * l.max(0.0).mean() + cfg.ridge * delta.squaredNorm();
    };

    const int batch = std::max(1, cfg.batch_size);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (Eigen::Index i = m - 1; i > 0; --i)
            std::swap(order[i], order[static_cast<Eigen::Index>(shuffle.uniform() * (i + 1))]);
        for (Eigen::Index start = 0; start < m; start += batch) {
            const Eigen::Index bsz = std::min<Eigen::Index>(batch, m - start);
            Eigen::VectorXd gd = 2.0 * cfg.ridge * res.delta;
            double gk = 1.0;
            for (Eigen::Index i = 0; i < bsz; ++i) {
                const Eigen::Index j = order[start + i];
                const double l = bc[j] - Hc.row(j).dot(res.delta);
                if (l - res.k > 0.0) {
                    gk -= tail / bsz;
                    gd -= (tail / bsz) * Hc.row(j).transpose();
                }
            }
            ++step_count;
            const double c1 = 1.0 - std::pow(adam.beta1, step_count);
            const double c2 = 1.0 - std::pow(adam.beta2, step_count);
            mom1 = adam.beta1 * mom1 + (1.0 - adam.beta1) * gd;
            mom2 = adam.beta2 * mom2 + (1.0 - adam.beta2) * gd.cwiseProduct(gd);
            km1 = adam.beta1 * km1 + (1.0 - adam.beta1) * gk;
            km2 = adam.beta2 * km2 + (1.0 - adam.beta2) * gk * gk;
            if (q > 0)
                res.delta -=
                    (adam.step * (mom1 / c1).array() / ((mom2 / c2).array().sqrt() + adam.eps)).matrix();
            res.k -= adam.step * (km1 / c1) / (std::sqrt(km2 / c2) + adam.eps);
        }
        best_obj = std::min(best_obj, objective(res.delta, res.k));
    }
    // exact k given the final Delta
    loss = bc - Hc * res.delta;
    res.k = quantile_higher(std::vector<double>(loss.data(), loss.data() + m), cfg.alpha);
    res.objective = objective(res.delta, res.k);
    res.oscillation_flag =
        res.objective > best_obj + cfg.oscillation_tol * (std::fabs(best_obj) + 1e-12);
    return res;
}

// ---------------------------------------------------------------------------
// Taylor proxy risk and compression backtests
// ---------------------------------------------------------------------------

// Proxy samples Delta' d + 0.5 * sum_k Gamma_k d_k^2 over a scenario matrix.
inline RiskReport quadratic_proxy_risk(const Eigen::VectorXd& delta, const Eigen::VectorXd* gamma,
                                       const Eigen::MatrixXd& scenarios,
                                       const std::vector<double>& levels = {0.95, 0.975, 0.99}) {
    if (scenarios.cols() != delta.size())
        throw std::invalid_argument("quadratic_proxy_risk: scenario dimension mismatch");
    Eigen::VectorXd samples = scenarios * delta;
    if (gamma) {
        if (gamma->size() != delta.size())
            throw std::invalid_argument("quadratic_proxy_risk: gamma dimension mismatch");
        samples += 0.5 * (scenarios.array().square().matrix() * *gamma);
    }
    return risk_report(samples, levels);
}

struct CompressionRow {
    std::string method;
    double upl = 0.0;      // stdev of the hedged loss
    double ec = 0.0;       // ES at alpha of the hedged loss
    double c = 0.0;        // HVA trend
    double upl_ratio = 1.0;
    double ec_ratio = 1.0;
    double c_ratio = 1.0;
};

// Out-of-sample backtest: metric(Delta=0) / metric(Delta) per candidate.
// Near-perfect replication is floor-divided rather than reported as infinite.
inline std::vector<CompressionRow> compression_report(
    const std::vector<std::pair<std::string, Eigen::VectorXd>>& candidates, const HedgeProblem& hp,
    double alpha = 0.95) {
    std::vector<CompressionRow> rows;
    auto eval = [&](const std::string& name, const Eigen::VectorXd& delta) {
        CompressionRow r;
        r.method = name;
        const Eigen::VectorXd l = hp.loss(delta, &r.c);
        r.upl = std::sqrt(l.squaredNorm() / static_cast<double>(l.size()));
        r.ec = var_es(l, alpha).es;
        return r;
    };
    const CompressionRow unhedged = eval("unhedged", Eigen::VectorXd::Zero(hp.hedge.cols()));
    rows.push_back(unhedged);
    auto floored = [](double x) { return std::max(std::fabs(x), 1e-300); };
    for (const auto& [name, delta] : candidates) {
        CompressionRow r = eval(name, delta);
        r.upl_ratio = unhedged.upl / floored(r.upl);
        r.ec_ratio = unhedged.ec / floored(r.ec);
        r.c_ratio = floored(unhedged.c) / floored(r.c);
        rows.push_back(r);
    }
    return rows;
}

inline void save_compression_csv(const std::vector<CompressionRow>& rows, const std::string& horizon,
                                 const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("save_compression_csv: cannot open " + path);
    f << "metric,method,horizon,value,ratio\n";
    for (const auto& r : rows) {
        f << "UPL," << r.method << ',' << horizon << ',' << fmt6(r.upl) << ',' << fmt6(r.upl_ratio) << '\n';
        f << "EC," << r.method << ',' << horizon << ',' << fmt6(r.ec) << ',' << fmt6(r.ec_ratio) << '\n';
        f << "c," << r.method << ',' << horizon << ',' << fmt6(r.c) << ',' << fmt6(r.c_ratio) << '\n';
    }
}

} // namespace xva
