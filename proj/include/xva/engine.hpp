#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iostream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "xva/parallel.hpp"
#include "xva/rng.hpp"

namespace xva {

// ---------------------------------------------------------------------------
// Model parameters
// ---------------------------------------------------------------------------

// Parameter kinds, in the order they appear in the flat parameter vector.
// The first three kinds are the initial conditions y of the risk factors,
// the remaining seven the exogenous SDE parameters epsilon.
enum class ParamKind { R0, Fx0, Gamma0, A, B, SigmaR, SigmaFx, Alpha, Delta, Nu };

inline const char* param_kind_name(ParamKind k) {
    switch (k) {
        case ParamKind::R0: return "r0";
        case ParamKind::Fx0: return "fx0";
        case ParamKind::Gamma0: return "gamma0";
        case ParamKind::A: return "a";
        case ParamKind::B: return "b";
        case ParamKind::SigmaR: return "sigma_r";
        case ParamKind::SigmaFx: return "sigma_fx";
        case ParamKind::Alpha: return "alpha";
        case ParamKind::Delta: return "delta";
        case ParamKind::Nu: return "nu";
    }
    return "?";
}

inline bool param_kind_is_initial(ParamKind k) {
    return k == ParamKind::R0 || k == ParamKind::Fx0 || k == ParamKind::Gamma0;
}

inline bool param_kind_is_volatility(ParamKind k) {
    return k == ParamKind::SigmaR || k == ParamKind::SigmaFx || k == ParamKind::Nu;
}

// One economy per currency: Vasicek short rate dr = a(b-r)dt + sigma_r dW.
// Foreign economies carry a lognormal exchange rate with volatility sigma_fx.
// One CIR default intensity per counterparty:
// dgamma = delta(alpha-gamma)dt + nu sqrt(gamma+) dW.
struct ModelParams {
    int economies = 0;        // E, economy 0 is the reference currency
    int counterparties = 0;   // C

    std::vector<double> r0, a, b, sigma_r;       // size E
    std::vector<double> fx0, sigma_fx;           // size E-1, foreign 1..E-1
    std::vector<double> gamma0, alpha, delta, nu; // size C

    ModelParams() = default;
    ModelParams(int E, int C)
        : economies(E), counterparties(C),
          r0(E, 0.0), a(E, 0.0), b(E, 0.0), sigma_r(E, 0.0),
          fx0(E - 1, 1.0), sigma_fx(E - 1, 0.0),
          gamma0(C, 0.0), alpha(C, 0.0), delta(C, 0.0), nu(C, 0.0) {}

    int dim_y() const { return 2 * economies - 1 + counterparties; }
    int dim_eps() const { return 4 * economies - 1 + 3 * counterparties; }
    int dim() const { return dim_y() + dim_eps(); }

    // Flat layout: [r0 | fx0 | gamma0 | a | b | sigma_r | sigma_fx | alpha | delta | nu]
    Eigen::VectorXd to_vector() const {
        Eigen::VectorXd v(dim());
        int k = 0;
        for (const auto* blk : {&r0, &fx0, &gamma0, &a, &b, &sigma_r, &sigma_fx, &alpha, &delta, &nu})
            for (double x : *blk) v[k++] = x;
        return v;
    }

    static ModelParams from_vector(int E, int C, const Eigen::VectorXd& v) {
        ModelParams p(E, C);
        if (v.size() != p.dim()) throw std::invalid_argument("ModelParams::from_vector: dimension mismatch");
        int k = 0;
        for (auto* blk : {&p.r0, &p.fx0, &p.gamma0, &p.a, &p.b, &p.sigma_r, &p.sigma_fx, &p.alpha, &p.delta, &p.nu})
            for (double& x : *blk) x = v[k++];
        return p;
    }

    ParamKind kind_of(int index) const {
        const int E = economies, C = counterparties;
        const int sizes[10] = {E, E - 1, C, E, E, E, E - 1, C, C, C};
        static constexpr ParamKind kinds[10] = {
            ParamKind::R0, ParamKind::Fx0, ParamKind::Gamma0, ParamKind::A, ParamKind::B,
            ParamKind::SigmaR, ParamKind::SigmaFx, ParamKind::Alpha, ParamKind::Delta, ParamKind::Nu};
        for (int g = 0; g < 10; ++g) {
            if (index < sizes[g]) return kinds[g];
            index -= sizes[g];
        }
        throw std::out_of_range("ModelParams::kind_of");
    }

    // Name of the flat-vector component, e.g. "r0[0]", "gamma0[1]". FX and
    // credit indices are 1-based, matching the config file keys.
    std::string name_of(int index) const {
        const int E = economies, C = counterparties;
        const int sizes[10] = {E, E - 1, C, E, E, E, E - 1, C, C, C};
        const int base[10] = {0, 1, 1, 0, 0, 0, 1, 1, 1, 1};
        static constexpr ParamKind kinds[10] = {
            ParamKind::R0, ParamKind::Fx0, ParamKind::Gamma0, ParamKind::A, ParamKind::B,
            ParamKind::SigmaR, ParamKind::SigmaFx, ParamKind::Alpha, ParamKind::Delta, ParamKind::Nu};
        for (int g = 0; g < 10; ++g) {
            if (index < sizes[g])
                return std::string(param_kind_name(kinds[g])) + "[" + std::to_string(index + base[g]) + "]";
            index -= sizes[g];
        }
        throw std::out_of_range("ModelParams::name_of");
    }

    // Positivity requirements plus a Feller-condition warning (not an error).
    void validate(std::ostream* warn = nullptr) const {
        auto require_pos = [](const std::vector<double>& v, const char* what) {
            for (double x : v)
                if (!(x > 0.0)) throw std::invalid_argument(std::string(what) + " must be strictly positive");
        };
        require_pos(sigma_r, "sigma_r");
        require_pos(sigma_fx, "sigma_fx");
        require_pos(gamma0, "gamma0");
        require_pos(delta, "delta");
        require_pos(nu, "nu");
        if (warn) {
            for (int c = 0; c < counterparties; ++c)
                if (2.0 * delta[c] * alpha[c] < nu[c] * nu[c])
                    *warn << "warning: Feller condition 2*delta*alpha >= nu^2 violated for counterparty "
                          << (c + 1) << "\n";
        }
    }
};

// ---------------------------------------------------------------------------
// Simulation grid
// ---------------------------------------------------------------------------

struct SimGrid {
    int n = 100;        // pricing steps
    double h = 0.1;     // step length in years
    int substeps = 25;  // Euler substeps per pricing step

    double horizon() const { return n * h; }
    double time(int i) const { return i * h; }

    void validate() const {
        if (n < 1 || substeps < 1 || !(h > 0.0))
            throw std::invalid_argument("SimGrid: need n >= 1, substeps >= 1, h > 0");
    }
};

enum class SimMode { Baseline, Risk, Sensis };

inline SimMode sim_mode_from_string(const std::string& s) {
    if (s == "baseline") return SimMode::Baseline;
    if (s == "risk") return SimMode::Risk;
    if (s == "sensis") return SimMode::Sensis;
    throw std::invalid_argument("unknown simulation mode: " + s);
}

// ---------------------------------------------------------------------------
// Simulated paths
// ---------------------------------------------------------------------------

// Factors at a pricing date, in the flat order [r_0.., fx_1.., gamma_1..].
// gamma entries are the truncated (nonnegative) CIR states.
struct PathSet {
    int economies = 0;
    int counterparties = 0;
    SimGrid grid;
    std::size_t paths = 0;

    // factors[path * (n+1) * dim_y + step * dim_y + k]
    std::vector<double> factors;
    // defaulted[path * (n+1) * C + step * C + c]
    std::vector<std::uint8_t> defaulted;
    // default_step[path * C + c]: step index at which X turns 1 (tau = step*h),
    // or -1 when the client survives the horizon
    std::vector<int> default_step;
    // one entry if parameters are shared across paths, otherwise one per path
    std::vector<ModelParams> params_per_path;

    int dim_y() const { return 2 * economies - 1 + counterparties; }

    const ModelParams& params(std::size_t path) const {
        return params_per_path.size() == 1 ? params_per_path[0] : params_per_path[path];
    }

    const double* factors_at(std::size_t path, int step) const {
        return factors.data() + (path * (grid.n + 1) + step) * dim_y();
    }
    double rate(std::size_t path, int step, int economy) const {
        return factors_at(path, step)[economy];
    }
    double fx(std::size_t path, int step, int foreign) const { // foreign in 1..E-1
        return factors_at(path, step)[economies + foreign - 1];
    }
    double gamma(std::size_t path, int step, int cpty) const { // cpty in 0..C-1
        return factors_at(path, step)[2 * economies - 1 + cpty];
    }
    bool is_defaulted(std::size_t path, int step, int cpty) const {
        return defaulted[(path * (grid.n + 1) + step) * counterparties + cpty] != 0;
    }
};

// Scratch buffer for one path; reused across evaluations of the same layout.
struct PathWorkspace {
    std::vector<double> factors;     // (n+1) x dim_y
    std::vector<double> thresholds;  // C standard exponentials
    std::vector<int> default_step;   // per counterparty, -1 if none
    std::vector<double> z;           // substep normals
    std::vector<double> zc;          // correlated normals
};

struct SimOptions {
    bool fx_rate_differential_drift = true;
    // Optional Cholesky factor correlating the dim_y Brownian drivers.
    std::optional<Eigen::MatrixXd> corr_cholesky;
};

namespace detail {

// Euler evolution of all factors over pricing steps [from, to), writing the
// state at each pricing date into ws.factors. The CIR state is full-truncated:
// the positive part enters drift and diffusion and the recorded intensity.
inline void evolve_factors(const ModelParams& p, const SimGrid& grid, const SimOptions& opt,
                           RngStream& stream, PathWorkspace& ws, int from, int to) {
    const int E = p.economies, C = p.counterparties;
    const int dim = 2 * E - 1 + C;
    const double dt = grid.h / grid.substeps;
    const double sqdt = std::sqrt(dt);

    std::vector<double>& z = ws.z;
    z.resize(dim);
    std::vector<double> state(ws.factors.begin() + from * dim, ws.factors.begin() + (from + 1) * dim);

    for (int i = from; i < to; ++i) {
        for (int s = 0; s < grid.substeps; ++s) {
            for (int k = 0; k < dim; ++k) z[k] = stream.normal();
            if (opt.corr_cholesky) {
                ws.zc.assign(dim, 0.0);
                const Eigen::MatrixXd& L = *opt.corr_cholesky;
                for (int r = 0; r < dim; ++r)
                    for (int c = 0; c <= r; ++c) ws.zc[r] += L(r, c) * z[c];
                z = ws.zc;
            }
            // FX first so its drift uses start-of-substep rates
            for (int f = 1; f < E; ++f) {
                double& fx = state[E + f - 1];
                const double drift = opt.fx_rate_differential_drift ? (state[0] - state[f]) : 0.0;
                fx += fx * (drift * dt + p.sigma_fx[f - 1] * sqdt * z[E + f - 1]);
            }
            for (int e = 0; e < E; ++e)
                state[e] += p.a[e] * (p.b[e] - state[e]) * dt + p.sigma_r[e] * sqdt * z[e];
            for (int c = 0; c < C; ++c) {
                double& x = state[2 * E - 1 + c];
                const double xp = x > 0.0 ? x : 0.0;
                x += p.delta[c] * (p.alpha[c] - xp) * dt + p.nu[c] * std::sqrt(xp * dt) * z[2 * E - 1 + c];
            }
        }
        double* out = ws.factors.data() + (i + 1) * dim;
        for (int k = 0; k < dim; ++k) out[k] = state[k];
        for (int c = 0; c < C; ++c) {
            double& g = out[2 * E - 1 + c];
            if (g < 0.0) g = 0.0;
        }
    }
}

// First step index j such that h * sum_{l<=j} gamma_l >= theta; the default
// is then effective at the pricing date (j+1)h. Returns -1 if no default.
inline int default_step_from_threshold(const double* gamma_of_step, int stride, int n, double h,
                                       double theta) {
    double acc = 0.0;
    for (int j = 0; j < n; ++j) {
        acc += h * gamma_of_step[j * stride];
        if (acc >= theta) return j + 1;
    }
    return -1;
}

} // namespace detail

// Simulate one full path into ws. Draw order is fixed (thresholds, then the
// substep normals), so a given stream yields the same drivers for any
// parameter value: this is what makes common-random-number bumps work.
inline void simulate_path(const ModelParams& p, const SimGrid& grid, const SimOptions& opt,
                          RngStream stream, PathWorkspace& ws) {
    const int dim = p.dim_y();
    ws.factors.resize((grid.n + 1) * dim);
    ws.thresholds.resize(p.counterparties);
    ws.default_step.assign(p.counterparties, -1);

    int k = 0;
    for (int e = 0; e < p.economies; ++e) ws.factors[k++] = p.r0[e];
    for (int f = 1; f < p.economies; ++f) ws.factors[k++] = p.fx0[f - 1];
    for (int c = 0; c < p.counterparties; ++c) ws.factors[k++] = p.gamma0[c];

    for (int c = 0; c < p.counterparties; ++c) ws.thresholds[c] = stream.exponential();
    detail::evolve_factors(p, grid, opt, stream, ws, 0, grid.n);

    const int dimy = dim;
    for (int c = 0; c < p.counterparties; ++c) {
        const double* g0 = ws.factors.data() + 2 * p.economies - 1 + c;
        ws.default_step[c] = detail::default_step_from_threshold(g0, dimy, grid.n, grid.h, ws.thresholds[c]);
    }
}

// Continue a path from pricing step i0 with fresh drivers: used by the nested
// Monte Carlo and twin validation restarts. ws.factors must hold the state at
// step i0; alive counterparties get fresh exponential thresholds (memoryless).
inline void continue_path(const ModelParams& p, const SimGrid& grid, const SimOptions& opt,
                          RngStream stream, PathWorkspace& ws, int i0,
                          const std::vector<std::uint8_t>& defaulted_at_i0) {
    const int dim = p.dim_y();
    ws.factors.resize((grid.n + 1) * dim);
    ws.thresholds.resize(p.counterparties);
    ws.default_step.assign(p.counterparties, -1);
    for (int c = 0; c < p.counterparties; ++c) ws.thresholds[c] = stream.exponential();
    detail::evolve_factors(p, grid, opt, stream, ws, i0, grid.n);
    for (int c = 0; c < p.counterparties; ++c) {
        if (defaulted_at_i0[c]) {
            ws.default_step[c] = i0; // defaulted on or before the restart date
            continue;
        }
        const double* g = ws.factors.data() + i0 * dim + 2 * p.economies - 1 + c;
        const int j = detail::default_step_from_threshold(g, dim, grid.n - i0, grid.h, ws.thresholds[c]);
        ws.default_step[c] = (j < 0) ? -1 : i0 + j;
    }
}

// Materialize a PathSet. params_per_path holds either one shared entry or one
// entry per path; stream ids are seed-derived per path, so the result is
// bit-identical for any worker count.
inline PathSet simulate_paths(const std::vector<ModelParams>& params_per_path, const SimGrid& grid,
                              std::uint64_t seed, std::size_t paths, SimMode mode = SimMode::Baseline,
                              const SimOptions& opt = {}) {
    grid.validate();
    if (params_per_path.empty()) throw std::invalid_argument("simulate_paths: no parameters");
    if (params_per_path.size() != 1 && params_per_path.size() != paths)
        throw std::invalid_argument("simulate_paths: params/stream assignment mismatch");
    if (mode == SimMode::Baseline && params_per_path.size() != 1)
        for (std::size_t j = 1; j < params_per_path.size(); ++j)
            if (!(params_per_path[j].to_vector().array() == params_per_path[0].to_vector().array()).all())
                throw std::invalid_argument("simulate_paths: baseline mode requires a single parameter set");

    PathSet ps;
    ps.economies = params_per_path[0].economies;
    ps.counterparties = params_per_path[0].counterparties;
    ps.grid = grid;
    ps.paths = paths;
    ps.params_per_path = params_per_path;
    const int dim = ps.dim_y();
    const int C = ps.counterparties;
    ps.factors.resize(paths * (grid.n + 1) * dim);
    ps.defaulted.assign(paths * (grid.n + 1) * C, 0);
    ps.default_step.assign(paths * C, -1);

    parallel_for(paths, [&](std::size_t j) {
        PathWorkspace ws;
        const ModelParams& p = params_per_path.size() == 1 ? params_per_path[0] : params_per_path[j];
        simulate_path(p, grid, opt, make_stream(seed, j), ws);
        std::copy(ws.factors.begin(), ws.factors.end(), ps.factors.begin() + j * (grid.n + 1) * dim);
        for (int c = 0; c < C; ++c) {
            const int ds = ws.default_step[c];
            ps.default_step[j * C + c] = ds;
            if (ds >= 0)
                for (int i = ds; i <= grid.n; ++i) ps.defaulted[(j * (grid.n + 1) + i) * C + c] = 1;
        }
    });
    return ps;
}

// Doubly-stochastic default sampling on existing intensity paths.
// gamma_paths: [paths][n+1] per counterparty slice; returns default steps.
inline std::vector<int> sample_defaults(const std::vector<double>& gamma_path_matrix, std::size_t paths,
                                        const SimGrid& grid, std::uint64_t seed) {
    std::vector<int> steps(paths, -1);
    for (std::size_t j = 0; j < paths; ++j) {
        RngStream s = make_stream(seed, j);
        const double theta = s.exponential();
        steps[j] = detail::default_step_from_threshold(gamma_path_matrix.data() + j * (grid.n + 1), 1,
                                                       grid.n, grid.h, theta);
    }
    return steps;
}

// ---------------------------------------------------------------------------
// Columnar binary dump
// ---------------------------------------------------------------------------

inline constexpr char kPathsMagic[17] = "XVASENSI-PATHS01";

inline void dump_pathset(const PathSet& ps, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("dump_pathset: cannot open " + path);
    f.write(kPathsMagic, 16);
    const std::uint32_t e = ps.economies, c = ps.counterparties, n = ps.grid.n, sub = ps.grid.substeps;
    const std::uint64_t m = ps.paths;
    const double h = ps.grid.h;
    f.write(reinterpret_cast<const char*>(&e), 4);
    f.write(reinterpret_cast<const char*>(&c), 4);
    f.write(reinterpret_cast<const char*>(&n), 4);
    f.write(reinterpret_cast<const char*>(&sub), 4);
    f.write(reinterpret_cast<const char*>(&h), 8);
    f.write(reinterpret_cast<const char*>(&m), 8);
    f.write(reinterpret_cast<const char*>(ps.factors.data()),
            static_cast<std::streamsize>(ps.factors.size() * sizeof(double)));
    f.write(reinterpret_cast<const char*>(ps.defaulted.data()),
            static_cast<std::streamsize>(ps.defaulted.size()));
    if (!f) throw std::runtime_error("dump_pathset: write failed for " + path);
}

inline PathSet load_pathset(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_pathset: cannot open " + path);
    char magic[16];
    f.read(magic, 16);
    if (std::memcmp(magic, kPathsMagic, 16) != 0)
        throw std::runtime_error("load_pathset: bad magic in " + path);
    std::uint32_t e = 0, c = 0, n = 0, sub = 0;
    std::uint64_t m = 0;
    double h = 0.0;
    f.read(reinterpret_cast<char*>(&e), 4);
    f.read(reinterpret_cast<char*>(&c), 4);
    f.read(reinterpret_cast<char*>(&n), 4);
    f.read(reinterpret_cast<char*>(&sub), 4);
    f.read(reinterpret_cast<char*>(&h), 8);
    f.read(reinterpret_cast<char*>(&m), 8);
    PathSet ps;
    ps.economies = static_cast<int>(e);
    ps.counterparties = static_cast<int>(c);
    ps.grid = SimGrid{static_cast<int>(n), h, static_cast<int>(sub)};
    ps.paths = m;
    ps.factors.resize(m * (n + 1) * ps.dim_y());
    ps.defaulted.resize(m * (n + 1) * c);
    f.read(reinterpret_cast<char*>(ps.factors.data()),
           static_cast<std::streamsize>(ps.factors.size() * sizeof(double)));
    f.read(reinterpret_cast<char*>(ps.defaulted.data()), static_cast<std::streamsize>(ps.defaulted.size()));
    if (!f) throw std::runtime_error("load_pathset: truncated file " + path);
    ps.default_step.assign(m * c, -1);
    for (std::size_t j = 0; j < m; ++j)
        for (std::uint32_t k = 0; k < c; ++k)
            for (std::uint32_t i = 0; i <= n; ++i)
                if (ps.defaulted[(j * (n + 1) + i) * c + k]) {
                    ps.default_step[j * c + k] = static_cast<int>(i);
                    break;
                }
    return ps;
}

} // namespace xva
