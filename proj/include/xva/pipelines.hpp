#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "xva/bump.hpp"
#include "xva/calibration.hpp"
#include "xva/config.hpp"
#include "xva/cva.hpp"
#include "xva/learners.hpp"
#include "xva/risk.hpp"

namespace xva {

// ---------------------------------------------------------------------------
// Shared pipeline pieces
// ---------------------------------------------------------------------------

inline PayoffFn make_lab_payoff(const CvaLab& lab, std::uint64_t omega_seed) {
    const int E = lab.economies(), C = lab.counterparties();
    return [&lab, omega_seed, E, C](const Eigen::VectorXd& rho, std::uint64_t path) {
        thread_local CvaLab::Workspace ws;
        const ModelParams p = ModelParams::from_vector(E, C, rho);
        CvaLab::Request req; // xi_{0,T}
        return lab.eval_path(p, make_stream(omega_seed, path), req, ws).xi_t;
    };
}

inline std::vector<std::string> lab_param_names(const ModelParams& p) {
    std::vector<std::string> names(p.dim());
    for (int k = 0; k < p.dim(); ++k) names[k] = p.name_of(k);
    return names;
}

inline TrainConfig train_config_from(const RunConfig& cfg, std::uint64_t seed) {
    TrainConfig tc;
    tc.epochs = static_cast<int>(cfg.get_int("experiment.epochs", 1000));
    tc.batch_size = static_cast<int>(cfg.get_int("experiment.batch", 256));
    tc.adam.step = cfg.get_double("experiment.learning_rate", 1e-3);
    tc.ridge = cfg.get_double("experiment.ridge", 1e-4);
    tc.seed = seed;
    return tc;
}

inline double sigma_eps_from(const RunConfig& cfg, double t) {
    const std::string s = cfg.get_string("experiment.sigma_eps", "auto");
    if (s == "auto") return 0.01 * std::sqrt(t); // Var(eps_(t)) = t * (1%)^2 relative
    RunConfig tmp;
    tmp.values["experiment.sigma_eps"] = s;
    return tmp.require_double("experiment.sigma_eps");
}

inline int t_index_from(const RunConfig& cfg, const SimGrid& grid, double dflt = 0.1) {
    const double t = cfg.get_double("experiment.t", dflt);
    const int idx = static_cast<int>(std::lround(t / grid.h));
    if (idx < 0 || idx > grid.n || std::fabs(idx * grid.h - t) > 1e-9)
        throw ConfigError("experiment.t must be a pricing-grid time");
    return idx;
}

inline SensitivityReport model_bump_report(const CvaLab& lab, const RunConfig& cfg,
                                           const std::string& method, std::uint64_t seed) {
    const Eigen::VectorXd rho0 = lab.rho0.to_vector();
    const std::vector<std::string> names = lab_param_names(lab.rho0);
    const std::size_t m = static_cast<std::size_t>(cfg.get_int("experiment.m", 16384));
    const PayoffFn payoff = make_lab_payoff(lab, derive_seed(seed, kSeedBump));
    const std::uint64_t draw_seed = derive_seed(seed, kSeedBump + 100);

    if (method == "benchmark") {
        BenchmarkBumpConfig bc;
        bc.want_gammas = cfg.get_bool("experiment.gammas", false);
        return benchmark_bump(payoff, rho0, m, names, bc);
    }
    if (method == "smart") return smart_bump(payoff, rho0, m, names, draw_seed);
    if (method == "linear") {
        const std::string plan_kind = cfg.get_string("experiment.plan", "kinds");
        const BumpPlan plan =
            plan_kind == "one_hot"
                ? one_hot_plan(static_cast<int>(rho0.size()))
                : lab_bump_plan(lab.rho0, cfg.get_double("experiment.sigma_base", 0.01),
                                cfg.get_double("experiment.sigma_vol", 0.05));
        LinearBumpConfig lc;
        lc.analytic_covariance = cfg.get_bool("experiment.analytic_covariance", false);
        SensitivityReport rep = linear_bump(payoff, rho0, m, plan, names, draw_seed, lc);
        rep.method = "linear"; // requested method, even under a degenerate plan
        return rep;
    }
    if (method == "aad" || method == "naive-aad") {
        const BumpPlan plan = lab_bump_plan(lab.rho0, cfg.get_double("experiment.sigma_base", 0.01),
                                            cfg.get_double("experiment.sigma_vol", 0.05));
        AadBumpConfig ac;
        ac.hidden = cfg.get_int_list("experiment.hidden", {64, 64});
        ac.train = train_config_from(cfg, derive_seed(seed, kSeedTraining));
        if (method == "aad") return aad_bump(payoff, rho0, m, plan, names, draw_seed, ac);
        const Predictor pr = train_price_learner(payoff, rho0, m, plan, draw_seed, ac);
        return naive_aad(pr, rho0, names);
    }
    throw ConfigError("unknown bump method: " + method);
}

// Model bump sensitivities restricted to the free parameters, pushed through
// the calibration Jacobian.
inline Eigen::VectorXd market_bump_delta(const CvaLab& lab, const RunConfig& cfg,
                                         const std::string& method, std::uint64_t seed,
                                         SensitivityReport* model_out = nullptr,
                                         Eigen::MatrixXd* jac_out = nullptr) {
    const SensitivityReport model = model_bump_report(lab, cfg, method, seed);
    const std::vector<int> free_idx = default_free_mask(lab.rho0);
    const PricingMap pricing = make_pricing_map(lab.instruments, lab.rho0, free_idx);
    const Eigen::VectorXd rho0 = lab.rho0.to_vector();
    Eigen::VectorXd psi0(free_idx.size());
    for (std::size_t i = 0; i < free_idx.size(); ++i) psi0[i] = rho0[free_idx[i]];
    const Eigen::VectorXd z0 = pricing(psi0);

    const CalibrationResult cal = calibrate(pricing, z0, psi0);
    if (!cal.converged)
        throw std::runtime_error("market_bump_delta: calibration failed, gradient norm " +
                                 std::to_string(cal.gradient_norm));
    JacobianOptions jo;
    jo.gauss_newton = cfg.get_bool("experiment.gauss_newton", true);
    const Eigen::MatrixXd jac = param_jacobian(pricing, z0, cal.psi, jo);

    Eigen::VectorXd model_free(free_idx.size());
    const Eigen::VectorXd est = model.estimates();
    for (std::size_t i = 0; i < free_idx.size(); ++i) model_free[i] = est[free_idx[i]];
    if (model_out) *model_out = model;
    if (jac_out) *jac_out = jac;
    return market_sensitivities(model_free, jac);
}

// ---------------------------------------------------------------------------
// Twin triples at a future pricing time
// ---------------------------------------------------------------------------

struct TwinTriples {
    Eigen::MatrixXd features;
    Eigen::VectorXd xi1, xi2;
    std::vector<OuterState> states;
};

inline TwinTriples generate_twin_triples(const CvaLab& lab, SimMode mode, int t_index, std::size_t m,
                                         double sigma_eps, std::uint64_t seed) {
    const int C = lab.counterparties(), dimy = lab.dim_y(), deps = lab.rho0.dim_eps();
    const int nfeat = C + dimy + (mode == SimMode::Risk ? deps : 0);
    TwinTriples tt;
    tt.features.resize(m, nfeat);
    tt.xi1.resize(m);
    tt.xi2.resize(m);
    tt.states.resize(m);

    const std::uint64_t eps_seed = derive_seed(seed, 21);
    const std::uint64_t prefix_seed = derive_seed(seed, 22);
    const std::uint64_t cont_seed = derive_seed(seed, 23);
    const SimGrid prefix_grid{t_index, lab.grid.h, lab.grid.substeps};

    parallel_for(m, [&](std::size_t j) {
        ModelParams p = lab.rho0;
        if (mode == SimMode::Risk) {
            RngStream es = make_stream(eps_seed, j);
            p = draw_eps_params(lab.rho0, sigma_eps, es);
        }
        PathWorkspace ws;
        simulate_path(p, prefix_grid, lab.sim_options, make_stream(prefix_seed, j), ws);
        OuterState st;
        st.params = p;
        st.factors = Eigen::Map<const Eigen::VectorXd>(ws.factors.data() + t_index * p.dim_y(),
                                                       p.dim_y());
        st.defaulted.assign(C, 0);
        for (int c = 0; c < C; ++c)
            st.defaulted[c] = (ws.default_step[c] >= 0 && ws.default_step[c] <= t_index) ? 1 : 0;

        CvaLab::Workspace cw;
        tt.xi1[j] = lab.xi_from_state(p, t_index, st.factors, st.defaulted,
                                      make_stream(cont_seed, 2 * j), cw);
        tt.xi2[j] = lab.xi_from_state(p, t_index, st.factors, st.defaulted,
                                      make_stream(cont_seed, 2 * j + 1), cw);
        int col = 0;
        for (int c = 0; c < C; ++c) tt.features(j, col++) = st.defaulted[c];
        tt.features.block(j, col, 1, dimy) = st.factors.transpose();
        col += dimy;
        if (mode == SimMode::Risk)
            tt.features.block(j, col, 1, deps) = p.to_vector().tail(deps).transpose();
        tt.states[j] = std::move(st);
    });
    return tt;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

namespace detail {

inline void write_lines(const std::string& path, const std::vector<std::string>& lines) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    for (const auto& l : lines) f << l << '\n';
}

inline std::vector<std::string> risk_rows(const RiskReport& rep) {
    std::vector<std::string> rows;
    rows.push_back("Expectation," + fmt6(rep.expectation));
    for (std::size_t i = 0; i < rep.levels.size(); ++i)
        rows.push_back("VaR " + fmt6(100.0 * rep.levels[i]) + "%," + fmt6(rep.var[i]));
    for (std::size_t i = 0; i < rep.levels.size(); ++i)
        rows.push_back("ES " + fmt6(100.0 * rep.levels[i]) + "%," + fmt6(rep.es[i]));
    return rows;
}

} // namespace detail

inline void cmd_price(const CvaLab& lab, const RunConfig& cfg, const std::string& out, Manifest& mf) {
    const std::size_t m = static_cast<std::size_t>(cfg.get_int("experiment.m", 16384));
    const std::uint64_t seed = derive_seed(master_seed(cfg), kSeedPricing);
    save_portfolio_csv(lab.portfolio, out + "/portfolio.csv");
    mf.record_output(out, "portfolio.csv");

    CvaEstimate est;
    if (cfg.get_bool("experiment.dump_paths", false)) {
        const PathSet ps = simulate_paths({lab.rho0}, lab.grid, seed, m, SimMode::Baseline,
                                          lab.sim_options);
        const std::vector<double> xi = cashflows_xi(lab, ps, 0);
        const McStats s = mc_stats(xi);
        est = {s.mean, s.ci_halfwidth, m};
        dump_pathset(ps, out + "/paths.bin");
        mf.record_output(out, "paths.bin");
    } else {
        est = baseline_cva(lab, m, seed);
    }
    detail::write_lines(out + "/price.csv",
                        {"estimate,ci_halfwidth,paths",
                         fmt6(est.estimate) + "," + fmt6(est.ci_halfwidth) + "," + std::to_string(m)});
    mf.record_output(out, "price.csv");
    mf.metric("cva", est.estimate);
    mf.metric("cva_ci_halfwidth", est.ci_halfwidth);

    if (cfg.get_bool("experiment.export_cashflows", false)) {
        std::vector<double> xi(m), loss(m);
        parallel_for(m, [&](std::size_t j) {
            CvaLab::Workspace ws;
            CvaLab::Request req;
            const auto ev = lab.eval_path(lab.rho0, make_stream(seed, j), req, ws);
            xi[j] = ev.xi_t;
            loss[j] = ev.loss_T;
        });
        save_cashflow_samples_csv(xi, loss, out + "/cashflows.csv");
        mf.record_output(out, "cashflows.csv");
    }
}

inline void cmd_bump_sensis(const CvaLab& lab, const RunConfig& cfg, const std::string& out,
                            Manifest& mf) {
    const std::string method = cfg.get_string("experiment.method", "smart");
    const SensitivityReport rep = model_bump_report(lab, cfg, method, master_seed(cfg));
    save_sensitivity_csv(rep, out + "/bump_sensis.csv");
    mf.record_output(out, "bump_sensis.csv");
    if (method == "benchmark" && cfg.get_bool("experiment.gammas", false)) {
        SensitivityReport gam;
        gam.method = "benchmark-gamma";
        gam.entries = rep.entries;
        for (auto& e : gam.entries) {
            e.estimate = e.gamma;
            e.ci_halfwidth = e.gamma_ci;
        }
        save_sensitivity_csv(gam, out + "/bump_gammas.csv");
        mf.record_output(out, "bump_gammas.csv");
    }
    double max_abs = 0.0;
    for (const auto& e : rep.entries) max_abs = std::max(max_abs, std::fabs(e.estimate));
    mf.metric("max_abs_sensitivity", max_abs);
}

inline void cmd_market_sensis(const CvaLab& lab, const RunConfig& cfg, const std::string& out,
                              Manifest& mf) {
    const std::string method = cfg.get_string("experiment.method", "smart");
    SensitivityReport model;
    Eigen::MatrixXd jac;
    const Eigen::VectorXd market = market_bump_delta(lab, cfg, method, master_seed(cfg), &model, &jac);
    save_sensitivity_csv(model, out + "/bump_sensis.csv");
    mf.record_output(out, "bump_sensis.csv");
    const std::vector<int> free_idx = default_free_mask(lab.rho0);
    std::vector<std::string> row_names;
    for (int k : free_idx) row_names.push_back(lab.rho0.name_of(k));
    save_jacobian_csv(jac, row_names, out + "/jacobian.csv");
    mf.record_output(out, "jacobian.csv");
    save_market_sensitivities_csv(lab.instruments, market, method, out + "/market_sensis.csv");
    mf.record_output(out, "market_sensis.csv");
    mf.metric("market_sensis_norm", market.norm());
}

inline void cmd_learn(const CvaLab& lab, const RunConfig& cfg, const std::string& out, Manifest& mf) {
    const SimMode mode = sim_mode_from_string(cfg.get_string("experiment.mode", "risk"));
    const int t_index = t_index_from(cfg, lab.grid);
    if (t_index == 0) throw ConfigError("learn: experiment.t must be > 0 (t=0 is the baseline price)");
    const double t = lab.grid.time(t_index);
    const std::size_t m = static_cast<std::size_t>(cfg.get_int("experiment.m", 16384));
    const double sigma = sigma_eps_from(cfg, t);
    const std::string learner = cfg.get_string("experiment.learner", "mlp");
    const LearnerKind kind = learner == "linear" ? LearnerKind::Linear : LearnerKind::Mlp;
    const TrainConfig tc = train_config_from(cfg, derive_seed(master_seed(cfg), kSeedTraining));
    RiskDataset ds;
    const Predictor pred = learn_conditional_cva(lab, mode, t_index, m, sigma,
                                                 kind, cfg.get_int_list("experiment.hidden", {128, 128}),
                                                 tc, derive_seed(master_seed(cfg), kSeedLearn), &ds);
    save_predictor(pred, out + "/model.bin");
    mf.record_output(out, "model.bin");
    const double final_loss = pred.kind == Predictor::Kind::Mlp ? pred.mlp.final_loss
                                                                : pred.linear.residual_stdev;
    detail::write_lines(out + "/learn.csv",
                        {"t,mode,learner,samples,sigma_eps,final_loss",
                         fmt6(t) + "," + cfg.get_string("experiment.mode", "risk") + "," + learner +
                             "," + std::to_string(m) + "," + fmt6(sigma) + "," + fmt6(final_loss)});
    mf.record_output(out, "learn.csv");
    mf.metric("final_loss", final_loss);
    mf.metric("label_mean", ds.labels.mean());
}

inline void cmd_twin(const CvaLab& lab, const RunConfig& cfg, const std::string& out, Manifest& mf) {
    const SimMode mode = sim_mode_from_string(cfg.get_string("experiment.mode", "risk"));
    const int t_index = t_index_from(cfg, lab.grid);
    const double t = lab.grid.time(t_index);
    const std::size_t m = static_cast<std::size_t>(cfg.get_int("experiment.m", 16384));
    const std::size_t m_val = static_cast<std::size_t>(cfg.get_int("experiment.twin_m", 4096));
    const double sigma = sigma_eps_from(cfg, t);
    const std::uint64_t seed = master_seed(cfg);

    const std::string learner = cfg.get_string("experiment.learner", "mlp");
    const TrainConfig tc = train_config_from(cfg, derive_seed(seed, kSeedTraining));
    RiskDataset train_ds;
    const Predictor pred = learn_conditional_cva(
        lab, mode, t_index, m, sigma, learner == "linear" ? LearnerKind::Linear : LearnerKind::Mlp,
        cfg.get_int_list("experiment.hidden", {128, 128}), tc, derive_seed(seed, kSeedLearn),
        &train_ds);

    const TwinTriples tt =
        generate_twin_triples(lab, mode, t_index, m_val, sigma, derive_seed(seed, kSeedTwin));
    const double norm = baseline_cva(lab, m, derive_seed(seed, kSeedPricing)).estimate;

    std::vector<std::string> rows = {"predictor,twin_stat,twin_stdev,twin_err,twin_ub,norm"};
    auto add_row = [&](const std::string& name, const Eigen::VectorXd& phi) {
        const TwinReport r = twin_validate(phi, tt.xi1, tt.xi2, norm);
        rows.push_back(name + "," + fmt6(r.twin_stat) + "," + fmt6(r.twin_stdev) + "," +
                       fmt6(r.twin_err) + "," + fmt6(r.twin_ub) + "," + fmt6(norm));
        mf.metric("twin_ub_" + name, r.twin_ub);
    };
    add_row(learner, pred.predict_batch(tt.features));
    add_row("constant", Eigen::VectorXd::Constant(m_val, train_ds.labels.mean()));
    if (cfg.get_bool("experiment.nested", false)) {
        const std::size_t inner = static_cast<std::size_t>(cfg.get_int("experiment.nested_inner", 256));
        const std::vector<double> nest =
            nested_cva(lab, tt.states, inner, t_index, derive_seed(seed, kSeedNested));
        add_row("nested", Eigen::Map<const Eigen::VectorXd>(nest.data(), nest.size()));
    }
    detail::write_lines(out + "/twin.csv", rows);
    mf.record_output(out, "twin.csv");
}

inline void cmd_risk_runoff(const CvaLab& lab, const RunConfig& cfg, const std::string& out,
                            Manifest& mf) {
    const int t_index = t_index_from(cfg, lab.grid);
    const double t = lab.grid.time(t_index);
    const std::size_t m = static_cast<std::size_t>(cfg.get_int("experiment.m", 16384));
    const std::size_t m_bt = static_cast<std::size_t>(cfg.get_int("experiment.backtest_m", m));
    const double sigma = sigma_eps_from(cfg, t);
    const std::uint64_t seed = master_seed(cfg);

    const TrainConfig tc = train_config_from(cfg, derive_seed(seed, kSeedTraining));
    const Predictor pred = learn_conditional_cva(lab, SimMode::Risk, t_index, m, sigma,
                                                 LearnerKind::Mlp,
                                                 cfg.get_int_list("experiment.hidden", {128, 128}), tc,
                                                 derive_seed(seed, kSeedLearn));
    const double pi0 = baseline_cva(lab, m, derive_seed(seed, kSeedPricing)).estimate;
    const RiskDataset ds = generate_risk_dataset(lab, SimMode::Risk, t_index, m_bt, sigma,
                                                 derive_seed(seed, kSeedBacktest), false);
    const Eigen::VectorXd dpi = pred.predict_batch(ds.features).array() - pi0;
    const Eigen::VectorXd total = dpi + ds.loss_t;

    const std::vector<double> levels = cfg.get_list("experiment.levels", {0.95, 0.975, 0.99});
    const RiskReport r1 = risk_report(dpi, levels), r2 = risk_report(ds.loss_t, levels),
                     r3 = risk_report(total, levels);
    const auto rows1 = detail::risk_rows(r1), rows2 = detail::risk_rows(r2),
               rows3 = detail::risk_rows(r3);
    std::vector<std::string> rows = {"statistic,delta_pi,loss_C,total"};
    for (std::size_t i = 0; i < rows1.size(); ++i) {
        const std::string stat = rows1[i].substr(0, rows1[i].find(','));
        auto val = [](const std::string& s) { return s.substr(s.find(',') + 1); };
        rows.push_back(stat + "," + val(rows1[i]) + "," + val(rows2[i]) + "," + val(rows3[i]));
    }
    detail::write_lines(out + "/risk_runoff.csv", rows);
    mf.record_output(out, "risk_runoff.csv");
    mf.metric("pi0", pi0);
    mf.metric("es95_total", r3.es[0]);
}

inline void cmd_risk_runon(const CvaLab& lab, const RunConfig& cfg, const std::string& out,
                           Manifest& mf) {
    const int t_index = t_index_from(cfg, lab.grid);
    const double t = lab.grid.time(t_index);
    const std::size_t m = static_cast<std::size_t>(cfg.get_int("experiment.m", 16384));
    const std::size_t m_bt = static_cast<std::size_t>(cfg.get_int("experiment.backtest_m", m));
    const std::uint64_t seed = master_seed(cfg);

    RunOnDataset train_ds;
    TrainConfig tc = train_config_from(cfg, derive_seed(seed, kSeedTraining));
    const Predictor pred = learn_delta_cva_runon(lab, t, m,
                                                 cfg.get_int_list("experiment.runon_hidden", {200}), tc,
                                                 derive_seed(seed, kSeedRunOn), &train_ds);
    const LinearModel ls = ls_sensitivities(train_ds.labels, train_ds.dZ,
                                            cfg.get_double("experiment.ls_ridge", 1e-8));
    // LS with diagonal quadratic terms in dZ
    const Eigen::Index q = train_ds.dZ.cols();
    Eigen::MatrixXd quad(train_ds.dZ.rows(), 2 * q);
    quad << train_ds.dZ, 0.5 * train_ds.dZ.array().square().matrix();
    LinearFitOptions qo;
    qo.intercept = true;
    qo.standardize = true;
    qo.ridge = cfg.get_double("experiment.ls_ridge", 1e-8);
    const LinearModel lsg = fit_linear(quad, train_ds.labels, qo);

    const Eigen::VectorXd bump =
        market_bump_delta(lab, cfg, cfg.get_string("experiment.method", "smart"), seed);

    // out-of-sample scenarios, with twin label pairs on shared scenarios
    const std::uint64_t bt = derive_seed(seed, kSeedBacktest);
    const RunOnDataset val1 = generate_runon_dataset(lab, t, m_bt, bt, derive_seed(bt, 1));
    const RunOnDataset val2 = generate_runon_dataset(lab, t, m_bt, bt, derive_seed(bt, 2));

    const std::vector<double> levels = cfg.get_list("experiment.levels", {0.95, 0.975, 0.99});
    std::vector<std::string> rows = {"method,statistic,value"};
    auto add_method = [&](const std::string& name, const Eigen::VectorXd& samples) {
        const TwinReport tw = twin_validate(samples, val1.labels, val2.labels, 1.0);
        rows.push_back(name + ",twin_ub," + fmt6(tw.twin_ub));
        for (const auto& rr : detail::risk_rows(risk_report(samples, levels))) {
            const auto comma = rr.find(',');
            rows.push_back(name + "," + rr.substr(0, comma) + "," + rr.substr(comma + 1));
        }
        mf.metric("es95_" + name, var_es(samples, 0.95).es);
    };
    add_method("nn", pred.predict_batch(val1.features));
    add_method("ls", ls.predict_batch(val1.dZ));
    {
        Eigen::MatrixXd quad_val(val1.dZ.rows(), 2 * q);
        quad_val << val1.dZ, 0.5 * val1.dZ.array().square().matrix();
        add_method("ls_gamma", lsg.predict_batch(quad_val));
    }
    add_method("bump", val1.dZ * bump);
    detail::write_lines(out + "/risk_runon.csv", rows);
    mf.record_output(out, "risk_runon.csv");
}

inline void cmd_hedge_backtest(const CvaLab& lab, const RunConfig& cfg, const std::string& out,
                               Manifest& mf) {
    const std::string mode = cfg.get_string("experiment.mode", "runon");
    const int t_index = t_index_from(cfg, lab.grid);
    const double t = lab.grid.time(t_index);
    const std::size_t m = static_cast<std::size_t>(cfg.get_int("experiment.m", 16384));
    const std::size_t m_bt = static_cast<std::size_t>(cfg.get_int("experiment.backtest_m", m));
    const std::uint64_t seed = master_seed(cfg);
    const double alpha = cfg.get_double("experiment.alpha", 0.95);

    std::vector<std::string> methods;
    {
        std::stringstream ss(cfg.get_string("experiment.methods",
                                            mode == "runon" ? "bump,ls,ple,ec" : "bump,ple,ec"));
        std::string tok;
        while (std::getline(ss, tok, ',')) methods.push_back(tok);
    }

    EcConfig ec_cfg;
    ec_cfg.alpha = alpha;
    ec_cfg.epochs = static_cast<int>(cfg.get_int("experiment.ec_epochs", 500));
    ec_cfg.batch_size = static_cast<int>(cfg.get_int("experiment.ec_batch", 1024));
    ec_cfg.step = cfg.get_double("experiment.ec_step", 1e-2);
    ec_cfg.seed = derive_seed(seed, kSeedTraining + 9);

    std::vector<std::pair<std::string, Eigen::VectorXd>> candidates;
    HedgeProblem problem_out;
    const TrainConfig tc = train_config_from(cfg, derive_seed(seed, kSeedTraining));

    if (mode == "runon") {
        RunOnDataset ds;
        const Predictor pred = learn_delta_cva_runon(
            lab, t, m, cfg.get_int_list("experiment.runon_hidden", {200}), tc,
            derive_seed(seed, kSeedRunOn), &ds);
        const HedgeProblem in = build_runon_problem(pred, ds);
        Eigen::VectorXd ple = ple_sensitivities(in);
        for (const std::string& name : methods) {
            if (name == "bump")
                candidates.emplace_back("bump", market_bump_delta(
                                                    lab, cfg, cfg.get_string("experiment.method", "smart"),
                                                    seed));
            else if (name == "ls")
                candidates.emplace_back("ls", ls_sensitivities(ds.labels, ds.dZ).coefficients);
            else if (name == "ple")
                candidates.emplace_back("ple", ple);
            else if (name == "ec")
                candidates.emplace_back("ec", ec_sensitivities(in, ec_cfg, &ple).delta);
            else
                throw ConfigError("hedge-backtest: unknown method " + name);
        }
        const std::uint64_t bt = derive_seed(seed, kSeedBacktest);
        const RunOnDataset val = generate_runon_dataset(lab, t, m_bt, bt, derive_seed(bt, 1));
        problem_out = build_runon_problem(pred, val);
    } else if (mode == "runoff") {
        const double sigma = sigma_eps_from(cfg, t);
        RiskDataset ds = generate_risk_dataset(lab, SimMode::Risk, t_index, m, sigma,
                                               derive_seed(seed, kSeedLearn), true);
        Predictor pred;
        pred.kind = Predictor::Kind::Mlp;
        pred.mlp = fit_mlp(ds.features, ds.labels, cfg.get_int_list("experiment.hidden", {128, 128}),
                           tc);
        const double pi0 = baseline_cva(lab, m, derive_seed(seed, kSeedPricing)).estimate;
        const Eigen::VectorXd z0 = instrument_prices(lab.instruments, lab.rho0, 0.0);
        const HedgeProblem in = build_runoff_problem(pred, pi0, ds, z0);
        Eigen::VectorXd ple = ple_sensitivities(in);
        for (const std::string& name : methods) {
            if (name == "bump")
                candidates.emplace_back("bump", market_bump_delta(
                                                    lab, cfg, cfg.get_string("experiment.method", "smart"),
                                                    seed));
            else if (name == "ple")
                candidates.emplace_back("ple", ple);
            else if (name == "ec")
                candidates.emplace_back("ec", ec_sensitivities(in, ec_cfg, &ple).delta);
            else
                throw ConfigError("hedge-backtest runoff: unsupported method " + name);
        }
        const RiskDataset val = generate_risk_dataset(lab, SimMode::Risk, t_index, m_bt, sigma,
                                                      derive_seed(seed, kSeedBacktest), true);
        problem_out = build_runoff_problem(pred, pi0, val, z0);
    } else {
        throw ConfigError("hedge-backtest: experiment.mode must be runon or runoff");
    }

    const std::vector<CompressionRow> rows = compression_report(candidates, problem_out, alpha);
    save_compression_csv(rows, fmt6(t), out + "/hedge_backtest.csv");
    mf.record_output(out, "hedge_backtest.csv");
    for (const auto& r : rows) {
        if (r.method == "unhedged") continue;
        mf.metric("upl_ratio_" + r.method, r.upl_ratio);
        mf.metric("ec_ratio_" + r.method, r.ec_ratio);
    }
}

// ---------------------------------------------------------------------------
// Black-Scholes bench
// ---------------------------------------------------------------------------

inline void cmd_bs_bench(const RunConfig& cfg, const std::string& out, Manifest& mf) {
    const int d = static_cast<int>(cfg.get_int("bs.d", 3));
    BasketSpec spec;
    std::vector<double> spots_def(d), vols_def(d);
    for (int i = 0; i < d; ++i) {
        spots_def[i] = 90.0 + 10.0 * i;
        vols_def[i] = 0.15 + 0.05 * i;
    }
    spec.spots = cfg.get_list("bs.spots", spots_def);
    spec.vols = cfg.get_list("bs.vols", vols_def);
    if (static_cast<int>(spec.spots.size()) != d || static_cast<int>(spec.vols.size()) != d)
        throw ConfigError("bs.spots/bs.vols must have d entries");
    spec.rate = cfg.get_double("bs.rate", 0.0);
    spec.strike = cfg.get_double("bs.strike", 100.0);
    spec.maturity = cfg.get_double("bs.maturity", 1.0);
    try {
        spec.validate();
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }

    const std::size_t m = static_cast<std::size_t>(cfg.get_int("bs.m", 100000));
    const std::string method = cfg.get_string("bs.method", "benchmark");
    const std::uint64_t seed = derive_seed(master_seed(cfg), kSeedBump);

    const BasketGreeks exact = basket_call_analytic(spec);
    Eigen::VectorXd rho0(2 * d);
    std::vector<std::string> names;
    for (int i = 0; i < d; ++i) rho0[i] = spec.spots[i];
    for (int i = 0; i < d; ++i) rho0[d + i] = spec.vols[i];
    for (int i = 0; i < d; ++i) names.push_back("spot[" + std::to_string(i) + "]");
    for (int i = 0; i < d; ++i) names.push_back("vol[" + std::to_string(i) + "]");
    const PayoffFn pay = [spec, seed](const Eigen::VectorXd& rho, std::uint64_t path) {
        return basket_payoff(spec, rho, make_stream(seed, path));
    };

    SensitivityReport rep;
    if (method == "benchmark") {
        BenchmarkBumpConfig bc;
        bc.want_gammas = cfg.get_bool("bs.gammas", true);
        rep = benchmark_bump(pay, rho0, m, names, bc);
    } else if (method == "smart") {
        rep = smart_bump(pay, rho0, m, names, derive_seed(seed, 7));
    } else if (method == "linear") {
        rep = linear_bump(pay, rho0, m, basket_bump_plan(d), names, derive_seed(seed, 7));
    } else if (method == "aad" || method == "naive-aad") {
        AadBumpConfig ac;
        ac.hidden = cfg.get_int_list("experiment.hidden", {64, 64});
        ac.train = train_config_from(cfg, derive_seed(seed, 8));
        if (method == "aad")
            rep = aad_bump(pay, rho0, m, basket_bump_plan(d), names, derive_seed(seed, 7), ac);
        else
            rep = naive_aad(train_price_learner(pay, rho0, m, basket_bump_plan(d),
                                                derive_seed(seed, 7), ac),
                            rho0, names);
    } else {
        throw ConfigError("bs.method must be benchmark|linear|smart|aad|naive-aad");
    }

    std::vector<std::string> rows = {"greek,parameter,analytic,estimate,ci_halfwidth,covered,method"};
    int covered = 0, with_ci = 0;
    double max_rel_err = 0.0;
    for (int i = 0; i < 2 * d; ++i) {
        const bool is_vol = i >= d;
        const double exact_v = is_vol ? exact.vegas[i - d] : exact.deltas[i];
        const SensitivityEntry& e = rep.entries[i];
        const bool has_ci = !std::isnan(e.ci_halfwidth);
        const bool cov = has_ci && std::fabs(e.estimate - exact_v) <= e.ci_halfwidth;
        if (has_ci) {
            ++with_ci;
            covered += cov ? 1 : 0;
        }
        max_rel_err = std::max(max_rel_err, std::fabs(e.estimate - exact_v) / std::fabs(exact_v));
        rows.push_back(std::string(is_vol ? "vega" : "delta") + "," + e.name + "," + fmt6(exact_v) +
                       "," + fmt6(e.estimate) + "," + (has_ci ? fmt6(e.ci_halfwidth) : "") + "," +
                       (has_ci ? (cov ? "1" : "0") : "") + "," + rep.method);
        if (method == "benchmark" && cfg.get_bool("bs.gammas", true)) {
            const double gex = exact.gammas[i % d];
            if (!is_vol)
                rows.push_back("gamma," + e.name + "," + fmt6(gex) + "," + fmt6(e.gamma) + "," +
                               fmt6(e.gamma_ci) + ",," + rep.method);
        }
    }
    rows.push_back("price,," + fmt6(exact.price) + ",,,," + rep.method);
    detail::write_lines(out + "/bs_bench.csv", rows);
    mf.record_output(out, "bs_bench.csv");
    mf.metric("max_rel_err", max_rel_err);
    if (with_ci) mf.metric("ci_coverage", static_cast<double>(covered) / with_ci);
}

// ---------------------------------------------------------------------------
// Report and dispatch
// ---------------------------------------------------------------------------

inline int cmd_report(const std::string& run_dir, std::ostream& os) {
    const std::string mpath = run_dir + "/manifest.json";
    std::ifstream f(mpath);
    if (!f) {
        os << "error: no manifest.json in " << run_dir << "\n";
        return 2;
    }
    nlohmann::json doc;
    f >> doc;
    os << "run: " << doc.value("command", "?") << "  (config hash " << doc.value("config_hash", "?")
       << ")\n";
    if (doc.contains("metrics"))
        for (const auto& [k, v] : doc["metrics"].items()) os << "  " << k << " = " << v << "\n";

    const std::string sens_path = run_dir + "/bump_sensis.csv";
    std::ifstream sf(sens_path);
    if (sf) {
        std::string line;
        std::getline(sf, line);
        std::vector<std::pair<double, std::string>> entries;
        while (std::getline(sf, line)) {
            const auto c1 = line.find(','), c2 = line.find(',', c1 + 1);
            if (c1 == std::string::npos || c2 == std::string::npos) continue;
            entries.emplace_back(std::fabs(std::stod(line.substr(c1 + 1, c2 - c1 - 1))),
                                 line.substr(0, c2));
        }
        std::sort(entries.rbegin(), entries.rend());
        os << "top sensitivities:\n";
        for (std::size_t i = 0; i < std::min<std::size_t>(10, entries.size()); ++i)
            os << "  " << entries[i].second << "\n";
    }
    for (const char* name : {"twin.csv", "hedge_backtest.csv", "risk_runoff.csv"}) {
        std::ifstream rf(run_dir + "/" + std::string(name));
        if (!rf) continue;
        os << name << ":\n";
        std::string line;
        while (std::getline(rf, line)) os << "  " << line << "\n";
    }
    return 0;
}

inline void run_command(const std::string& command, const RunConfig& cfg, const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    Manifest mf(command, cfg);
    if (command == "bs-bench") {
        cmd_bs_bench(cfg, out_dir, mf);
    } else {
        const CvaLab lab = lab_from_config(cfg);
        if (command == "price")
            cmd_price(lab, cfg, out_dir, mf);
        else if (command == "bump-sensis")
            cmd_bump_sensis(lab, cfg, out_dir, mf);
        else if (command == "market-sensis")
            cmd_market_sensis(lab, cfg, out_dir, mf);
        else if (command == "learn")
            cmd_learn(lab, cfg, out_dir, mf);
        else if (command == "twin")
            cmd_twin(lab, cfg, out_dir, mf);
        else if (command == "risk-runoff")
            cmd_risk_runoff(lab, cfg, out_dir, mf);
        else if (command == "risk-runon")
            cmd_risk_runon(lab, cfg, out_dir, mf);
        else if (command == "hedge-backtest")
            cmd_hedge_backtest(lab, cfg, out_dir, mf);
        else
            throw ConfigError("unknown command: " + command);
    }
    mf.write(out_dir);
}

} // namespace xva
