#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "xva/engine.hpp"
#include "xva/parallel.hpp"
#include "xva/products.hpp"
#include "xva/stats.hpp"

namespace xva {

// ---------------------------------------------------------------------------
// Cash-flow kernels (per path, array level)
// ---------------------------------------------------------------------------
//
// Survival weights are the discrete e^{-h sum gamma} increments, so that the
// intensity-based estimator telescopes exactly against the default-based one:
// with one client, MtM = 1 and constant gamma, xi_{0,T} = 1 - e^{-gamma n h}.

// xi_{t,T} at t = i0*h. mtm and gamma are [C x (n+1)] row-major per client,
// default_step gives the step at which each client's default takes effect
// (tau = step*h), -1 if the client survives the horizon.
inline double xi_from_arrays(const double* mtm, const double* gamma, const int* default_step, int C,
                             int n, double h, int i0) {
    double xi = 0.0;
    for (int c = 0; c < C; ++c) {
        const int ds = default_step[c];
        if (ds >= 0 && ds <= i0) continue; // 1{tau_c > t}
        const double* m = mtm + c * (n + 1);
        const double* g = gamma + c * (n + 1);
        double cum = 0.0, s_prev = 1.0;
        for (int j = i0; j < n; ++j) {
            cum += h * g[j];
            const double s_next = std::exp(-cum);
            const double expo = m[j] > 0.0 ? m[j] : 0.0;
            xi += expo * (s_prev - s_next);
            s_prev = s_next;
        }
    }
    return xi;
}

// Realized default losses C_t: positive exposure at the step straddling each
// default with tau <= t = i0*h.
inline double loss_from_arrays(const double* mtm, const int* default_step, int C, int n, double h,
                               int i0) {
    (void)h;
    double loss = 0.0;
    for (int c = 0; c < C; ++c) {
        const int ds = default_step[c];
        if (ds >= 1 && ds <= i0 && ds <= n) {
            const double e = mtm[c * (n + 1) + (ds - 1)];
            if (e > 0.0) loss += e;
        }
    }
    return loss;
}

// ---------------------------------------------------------------------------
// The CVA lab: model + portfolio + hedge instruments on one pricing grid
// ---------------------------------------------------------------------------

class CvaLab {
  public:
    ModelParams rho0;
    SimGrid grid;
    SimOptions sim_options;
    std::vector<Swap> portfolio;
    InstrumentSet instruments;

    CvaLab() = default;
    CvaLab(ModelParams rho0_, SimGrid grid_, std::vector<Swap> swaps, InstrumentSet set,
           SimOptions opt = {})
        : rho0(std::move(rho0_)), grid(grid_), sim_options(opt), portfolio(std::move(swaps)),
          instruments(std::move(set)) {
        build_weights();
    }

    int economies() const { return rho0.economies; }
    int counterparties() const { return rho0.counterparties; }
    int dim_y() const { return rho0.dim_y(); }

    // What to compute along one path.
    struct Request {
        int t_index = 0;          // pricing step for xi_{t,T}, C_t, state, quotes
        bool want_xi0 = false;    // also xi_{0,T}
        bool want_quotes = false; // Z_t quotes and cumulative instrument cash flows CF_t
    };

    struct Eval {
        double xi_t = 0.0;
        double xi_0 = 0.0;
        double loss_t = 0.0;   // C_t
        double loss_T = 0.0;   // C_T
        Eigen::VectorXd state; // factors at t
        std::vector<std::uint8_t> defaulted_t;
        Eigen::VectorXd quotes_t;
        Eigen::VectorXd cashflow_t;
    };

    // Scratch for repeated evaluations.
    struct Workspace {
        PathWorkspace path;
        std::vector<double> mtm;   // C x (n+1)
        std::vector<double> gamma; // C x (n+1)
        std::vector<double> ab;    // per economy affine tables
        std::vector<double> zc;    // per coupon-offset discount factors
    };

    // Full-path evaluation with the given parameters and driver stream. The
    // stream fixes omega: reusing the same stream with bumped parameters is
    // the common-random-numbers coupling used everywhere in this project.
    Eval eval_path(const ModelParams& p, RngStream stream, const Request& req, Workspace& ws) const {
        simulate_path(p, grid, sim_options, stream, ws.path);
        return eval_simulated(p, ws, req);
    }

    Eval eval_path(const ModelParams& p, RngStream stream, const Request& req) const {
        Workspace ws;
        return eval_path(p, stream, req, ws);
    }

    // xi_{t,T} restarted from a state at step i0 with fresh drivers; used by
    // the nested Monte Carlo estimator and the twin validation pairs.
    double xi_from_state(const ModelParams& p, int i0, const Eigen::VectorXd& state,
                         const std::vector<std::uint8_t>& defaulted, RngStream stream,
                         Workspace& ws) const {
        const int dim = p.dim_y();
        ws.path.factors.assign((grid.n + 1) * dim, 0.0);
        for (int k = 0; k < dim; ++k) ws.path.factors[i0 * dim + k] = state[k];
        continue_path(p, grid, sim_options, stream, ws.path, i0, defaulted);
        fill_mtm_gamma(p, ws, i0);
        return xi_from_arrays(ws.mtm.data(), ws.gamma.data(), ws.path.default_step.data(),
                              counterparties(), grid.n, grid.h, i0);
    }

    // Per-client aggregated MtM (reference currency) on stored PathSet data.
    void mtm_from_factors(const ModelParams& p, const std::vector<double>& factors, int first_step,
                          std::vector<double>& mtm_out, std::vector<double>& ab_scratch,
                          std::vector<double>& zc_scratch) const {
        const int E = economies(), C = counterparties(), n = grid.n;
        const int dim = dim_y();
        mtm_out.assign(C * (n + 1), 0.0);
        build_affine_tables(p, ab_scratch);
        for (int i = first_step; i <= n; ++i) {
            const double* f = factors.data() + i * dim;
            for (int e = 0; e < E; ++e) {
                const double r = f[e];
                const double fx = (e == 0) ? 1.0 : f[E + e - 1];
                // discount factors at all coupon offsets beyond i
                const int jj0 = i / coupon_step_ + 1;
                zc_scratch.assign(ncoupons_ + 1, 0.0);
                for (int jj = jj0; jj <= ncoupons_; ++jj) {
                    const int delta = jj * coupon_step_ - i;
                    const double* AB = ab_scratch.data() + e * 2 * (n + 1);
                    zc_scratch[jj] = std::exp(AB[delta] - AB[(n + 1) + delta] * r);
                }
                for (int c = 0; c < C; ++c) {
                    const double* w = wcoef_.data() + ((c * E + e) * (n + 1) + i) * (ncoupons_ + 1);
                    double v = wcst_[(c * E + e) * (n + 1) + i];
                    for (int jj = jj0; jj <= ncoupons_; ++jj) v += w[jj] * zc_scratch[jj];
                    mtm_out[c * (n + 1) + i] += fx * v;
                }
            }
        }
    }

    // Hedge instrument quotes at the state held in st (params_with_state).
    Eigen::VectorXd quotes(const ModelParams& st, double t) const {
        return instrument_prices(instruments, st, t);
    }

    // Cumulative instrument cash flows up to t = i0*h realized on a path:
    // ZC payouts, FX fixings, CDS premium accruals and default payments.
    Eigen::VectorXd instrument_cashflows(const std::vector<double>& factors, const int* default_step,
                                         int i0) const {
        const int E = economies(), dim = dim_y();
        const double t = grid.time(i0);
        Eigen::VectorXd cf(instruments.size());
        for (int k = 0; k < instruments.size(); ++k) {
            const Instrument& ins = instruments.instruments[k];
            double v = 0.0;
            if (ins.kind == InstrumentKind::Zc) {
                v = (ins.pillar <= t + 1e-12) ? 1.0 : 0.0;
            } else if (ins.kind == InstrumentKind::FxForward) {
                if (ins.pillar <= t + 1e-12) {
                    const int step = static_cast<int>(std::ceil(ins.pillar / grid.h - 1e-12));
                    v = factors[step * dim + E + ins.index - 1];
                }
            } else {
                const int c = ins.index;
                const int ds = default_step[c];
                const double tau = ds >= 0 ? ds * grid.h : 1e300;
                const double cutoff = std::min(t, ins.pillar);
                if (tau <= cutoff + 1e-12) v += instruments.lgd;
                const int months = static_cast<int>(std::lround(ins.pillar * 12.0));
                for (int mth = 1; mth <= months; ++mth) {
                    const double u = mth / 12.0;
                    if (u > cutoff + 1e-12) break;
                    if (tau > u) v -= ins.spread / 12.0;
                }
            }
            cf[k] = v;
        }
        return cf;
    }

  private:
    int coupon_step_ = 1; // pricing steps per coupon period
    int ncoupons_ = 0;    // coupon dates on the grid
    std::vector<double> wcst_;  // [C][E][(n+1)]
    std::vector<double> wcoef_; // [C][E][(n+1)][ncoupons_+1]

    void build_weights() {
        grid.validate();
        const int E = economies(), C = counterparties(), n = grid.n;
        double freq = portfolio.empty() ? 2.0 : portfolio.front().freq;
        for (const Swap& s : portfolio)
            if (s.freq != freq) throw std::invalid_argument("CvaLab: mixed coupon frequencies unsupported");
        const double steps = 1.0 / (freq * grid.h);
        coupon_step_ = static_cast<int>(std::lround(steps));
        if (std::fabs(steps - coupon_step_) > 1e-9 || coupon_step_ < 1)
            throw std::invalid_argument("CvaLab: coupon period must be a whole number of pricing steps");
        ncoupons_ = n / coupon_step_;
        wcst_.assign(C * E * (n + 1), 0.0);
        wcoef_.assign(static_cast<std::size_t>(C) * E * (n + 1) * (ncoupons_ + 1), 0.0);
        for (const Swap& s : portfolio) {
            const int mi = static_cast<int>(std::lround(s.maturity / grid.h));
            if (std::fabs(mi * grid.h - s.maturity) > 1e-9 || mi > n)
                throw std::invalid_argument("CvaLab: swap maturity off the pricing grid");
            const double sign = s.payer ? 1.0 : -1.0;
            const int mjj = mi / coupon_step_;
            for (int i = 0; i < mi; ++i) {
                const std::size_t base = (static_cast<std::size_t>(s.counterparty) * E + s.economy);
                wcst_[base * (n + 1) + i] += sign * s.notional;
                double* w = wcoef_.data() + (base * (n + 1) + i) * (ncoupons_ + 1);
                for (int jj = i / coupon_step_ + 1; jj <= mjj; ++jj)
                    w[jj] -= sign * s.notional * s.strike / s.freq;
                w[mjj] -= sign * s.notional;
            }
        }
    }

    void build_affine_tables(const ModelParams& p, std::vector<double>& ab) const {
        const int E = economies(), n = grid.n;
        ab.assign(static_cast<std::size_t>(E) * 2 * (n + 1), 0.0);
        for (int e = 0; e < E; ++e) {
            double* A = ab.data() + e * 2 * (n + 1);
            double* B = A + (n + 1);
            for (int d = 1; d <= n; ++d) {
                const double ttm = d * grid.h;
                A[d] = vasicek_A(p.a[e], p.b[e], p.sigma_r[e], ttm);
                B[d] = vasicek_B(p.a[e], ttm);
            }
        }
    }

    void fill_mtm_gamma(const ModelParams& p, Workspace& ws, int first_step) const {
        const int C = counterparties(), n = grid.n, dim = dim_y();
        mtm_from_factors(p, ws.path.factors, first_step, ws.mtm, ws.ab, ws.zc);
        ws.gamma.assign(C * (n + 1), 0.0);
        for (int i = first_step; i <= n; ++i)
            for (int c = 0; c < C; ++c)
                ws.gamma[c * (n + 1) + i] = ws.path.factors[i * dim + 2 * economies() - 1 + c];
    }

    Eval eval_simulated(const ModelParams& p, Workspace& ws, const Request& req) const {
        const int C = counterparties(), n = grid.n, dim = dim_y();
        fill_mtm_gamma(p, ws, 0);
        Eval out;
        const int* ds = ws.path.default_step.data();
        out.xi_t = xi_from_arrays(ws.mtm.data(), ws.gamma.data(), ds, C, n, grid.h, req.t_index);
        out.xi_0 = req.want_xi0 && req.t_index != 0
                       ? xi_from_arrays(ws.mtm.data(), ws.gamma.data(), ds, C, n, grid.h, 0)
                       : (req.t_index == 0 ? out.xi_t : 0.0);
        out.loss_t = loss_from_arrays(ws.mtm.data(), ds, C, n, grid.h, req.t_index);
        out.loss_T = loss_from_arrays(ws.mtm.data(), ds, C, n, grid.h, n);
        out.state = Eigen::Map<const Eigen::VectorXd>(ws.path.factors.data() + req.t_index * dim, dim);
        out.defaulted_t.assign(C, 0);
        for (int c = 0; c < C; ++c)
            out.defaulted_t[c] = (ds[c] >= 0 && ds[c] <= req.t_index) ? 1 : 0;
        if (req.want_quotes) {
            const ModelParams st = params_with_state(p, ws.path.factors.data() + req.t_index * dim);
            out.quotes_t = quotes(st, grid.time(req.t_index));
            out.cashflow_t = instrument_cashflows(ws.path.factors, ds, req.t_index);
        }
        return out;
    }
};

// ---------------------------------------------------------------------------
// Batch operations on materialized path sets
// ---------------------------------------------------------------------------

inline std::vector<double> cashflows_xi(const CvaLab& lab, const PathSet& ps, int t_index) {
    if (t_index < 0 || t_index > ps.grid.n) throw std::invalid_argument("cashflows_xi: t off the grid");
    const int C = ps.counterparties, n = ps.grid.n;
    std::vector<double> out(ps.paths, 0.0);
    parallel_for(ps.paths, [&](std::size_t j) {
        std::vector<double> mtm, ab, zc, gam(C * (n + 1));
        std::vector<double> factors(ps.factors.begin() + j * (n + 1) * ps.dim_y(),
                                    ps.factors.begin() + (j + 1) * (n + 1) * ps.dim_y());
        lab.mtm_from_factors(ps.params(j), factors, 0, mtm, ab, zc);
        for (int i = 0; i <= n; ++i)
            for (int c = 0; c < C; ++c) gam[c * (n + 1) + i] = ps.gamma(j, i, c);
        out[j] = xi_from_arrays(mtm.data(), gam.data(), ps.default_step.data() + j * C, C, n, ps.grid.h,
                                t_index);
    });
    return out;
}

inline std::vector<double> realized_loss_C(const CvaLab& lab, const PathSet& ps, int t_index) {
    if (t_index < 0 || t_index > ps.grid.n) throw std::invalid_argument("realized_loss_C: t off the grid");
    const int C = ps.counterparties, n = ps.grid.n;
    std::vector<double> out(ps.paths, 0.0);
    parallel_for(ps.paths, [&](std::size_t j) {
        std::vector<double> mtm, ab, zc;
        std::vector<double> factors(ps.factors.begin() + j * (n + 1) * ps.dim_y(),
                                    ps.factors.begin() + (j + 1) * (n + 1) * ps.dim_y());
        lab.mtm_from_factors(ps.params(j), factors, 0, mtm, ab, zc);
        out[j] = loss_from_arrays(mtm.data(), ps.default_step.data() + j * C, C, n, ps.grid.h, t_index);
    });
    return out;
}

struct CvaEstimate {
    double estimate = 0.0;
    double ci_halfwidth = 0.0;
    std::size_t paths = 0;
};

// Baseline CVA_0(rho0): sample mean of xi_{0,T} with a 95% confidence band.
inline CvaEstimate baseline_cva(const CvaLab& lab, std::size_t m, std::uint64_t seed) {
    if (m < 2) throw std::invalid_argument("baseline_cva: m >= 2 required");
    std::vector<double> xi(m);
    parallel_for(m, [&](std::size_t j) {
        CvaLab::Workspace ws;
        CvaLab::Request req; // t_index 0
        xi[j] = lab.eval_path(lab.rho0, make_stream(seed, j), req, ws).xi_t;
    });
    const McStats s = mc_stats(xi);
    return {s.mean, s.ci_halfwidth, m};
}

// Nested Monte Carlo conditional CVA: for each outer state, average xi_{t,T}
// over inner_m resimulated continuations. The restart is Markov in
// (X_t, Y_t, epsilon).
struct OuterState {
    Eigen::VectorXd factors;              // state at t
    std::vector<std::uint8_t> defaulted;  // X_t
    ModelParams params;                   // exogenous parameters of the path
};

inline std::vector<double> nested_cva(const CvaLab& lab, const std::vector<OuterState>& states,
                                      std::size_t inner_m, int t_index, std::uint64_t seed) {
    std::vector<double> out(states.size(), 0.0);
    parallel_for(states.size(), [&](std::size_t s) {
        CvaLab::Workspace ws;
        double acc = 0.0;
        for (std::size_t k = 0; k < inner_m; ++k) {
            RngStream inner = make_stream(seed, s * inner_m + k);
            acc += lab.xi_from_state(states[s].params, t_index, states[s].factors,
                                     states[s].defaulted, inner, ws);
        }
        out[s] = acc / static_cast<double>(inner_m);
    });
    return out;
}

inline void save_cashflow_samples_csv(const std::vector<double>& xi, const std::vector<double>& loss,
                                      const std::string& path) {
    if (xi.size() != loss.size()) throw std::invalid_argument("save_cashflow_samples_csv: size mismatch");
    std::ofstream f(path);
    if (!f) throw std::runtime_error("save_cashflow_samples_csv: cannot open " + path);
    f << "path_id,xi,loss_C\n";
    f.precision(17);
    for (std::size_t j = 0; j < xi.size(); ++j) f << j << ',' << xi[j] << ',' << loss[j] << '\n';
}

} // namespace xva
