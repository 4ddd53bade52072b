#pragma once

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "xva/engine.hpp"
#include "xva/stats.hpp"

namespace xva {

// ---------------------------------------------------------------------------
// Affine bond formulas
// ---------------------------------------------------------------------------

// Vasicek zero-coupon price P = exp(A - B r) for time to maturity ttm.
inline double vasicek_B(double a, double ttm) {
    if (a == 0.0) return ttm;
    return -std::expm1(-a * ttm) / a;
}

inline double vasicek_A(double a, double b, double sigma, double ttm) {
    const double B = vasicek_B(a, ttm);
    const double s2 = sigma * sigma;
    const double x = a * ttm;
    // g = (B-ttm)/(2a^2) + B^2/(4a); the direct form cancels badly for small
    // a*ttm, so switch to its series there (g -> -ttm^3/6 as a -> 0)
    double g;
    if (std::fabs(x) < 0.02) {
        g = -ttm * ttm * ttm * (1.0 / 6.0 - x / 8.0 + 7.0 * x * x / 120.0);
    } else {
        const double e = std::expm1(-x);
        g = (e * e - 2.0 * e - 2.0 * x) / (4.0 * a * a * a);
    }
    return b * (B - ttm) - s2 * g;
}

inline double zc_bond_price(double a, double b, double sigma, double r, double ttm) {
    if (ttm < 0.0) throw std::invalid_argument("zc_bond_price: negative time to maturity");
    if (ttm == 0.0) return 1.0;
    return std::exp(vasicek_A(a, b, sigma, ttm) - vasicek_B(a, ttm) * r);
}

// CIR survival transform E[exp(-int_0^ttm gamma)] = A exp(-B g).
inline void cir_AB(double delta, double alpha, double nu, double ttm, double& A, double& B) {
    if (ttm <= 0.0) { A = 1.0; B = 0.0; return; }
    if (nu * nu < 1e-14) { // deterministic intensity limit
        B = vasicek_B(delta, ttm);
        A = std::exp(-alpha * (ttm - B));
        return;
    }
    const double theta = std::sqrt(delta * delta + 2.0 * nu * nu);
    const double e = std::expm1(theta * ttm); // exp(theta ttm) - 1
    const double den = (delta + theta) * e + 2.0 * theta;
    B = 2.0 * e / den;
    A = std::pow(2.0 * theta * std::exp(0.5 * (delta + theta) * ttm) / den,
                 2.0 * delta * alpha / (nu * nu));
}

inline double cir_survival(double delta, double alpha, double nu, double gamma, double ttm) {
    double A, B;
    cir_AB(delta, alpha, nu, ttm, A, B);
    return A * std::exp(-B * gamma);
}

// ---------------------------------------------------------------------------
// Interest rate swaps
// ---------------------------------------------------------------------------

struct Swap {
    int economy = 0;
    int counterparty = 0;   // 0-based
    double notional = 0.0;
    double maturity = 0.0;  // years, on the pricing grid
    double strike = 0.0;    // fixed rate
    double freq = 2.0;      // payments per year
    bool payer = true;      // pays fixed, receives float
};

// Par-floater decomposition: float leg = 1 - P(t, M), fixed leg = annuity.
// Value in the swap's local currency per unit notional sign-adjusted below.
inline double swap_value_local(const Swap& s, double a, double b, double sigma, double r, double t) {
    if (t >= s.maturity) return 0.0;
    const double dt = 1.0 / s.freq;
    double annuity = 0.0;
    const int npay = static_cast<int>(std::lround(s.maturity * s.freq));
    for (int k = 1; k <= npay; ++k) {
        const double tk = k * dt;
        if (tk > t + 1e-12) annuity += dt * zc_bond_price(a, b, sigma, r, tk - t);
    }
    const double pm = zc_bond_price(a, b, sigma, r, s.maturity - t);
    const double v = (1.0 - pm) - s.strike * annuity;
    return (s.payer ? 1.0 : -1.0) * s.notional * v;
}

// Value in the reference currency given the state of the swap's economy.
inline double swap_value(const Swap& s, const ModelParams& p, double r_econ, double fx_econ, double t) {
    const int e = s.economy;
    const double local = swap_value_local(s, p.a[e], p.b[e], p.sigma_r[e], r_econ, t);
    return e == 0 ? local : local * fx_econ;
}

inline double par_swap_rate(double a, double b, double sigma, double r, double maturity, double freq) {
    const double dt = 1.0 / freq;
    double annuity = 0.0;
    const int npay = static_cast<int>(std::lround(maturity * freq));
    for (int k = 1; k <= npay; ++k) annuity += dt * zc_bond_price(a, b, sigma, r, k * dt);
    const double pm = zc_bond_price(a, b, sigma, r, maturity);
    if (annuity <= 0.0) throw std::runtime_error("par_swap_rate: empty annuity");
    return (1.0 - pm) / annuity;
}

struct PortfolioSpec {
    int count = 500;
    double notional_min = 1.0;
    double notional_max = 100.0;
    double freq = 2.0;
    double maturity_max = 10.0; // <= grid horizon
};

// Random swap portfolio with strikes solved so every swap is worth 0 at time 0
// under the baseline parameters.
inline std::vector<Swap> generate_portfolio(const PortfolioSpec& spec, const ModelParams& rho0,
                                            RngStream stream) {
    if (spec.count < 1) throw std::invalid_argument("generate_portfolio: count >= 1 required");
    std::vector<Swap> out;
    out.reserve(spec.count);
    const int nmat = static_cast<int>(std::lround(spec.maturity_max * spec.freq));
    for (int i = 0; i < spec.count; ++i) {
        Swap s;
        s.economy = static_cast<int>(stream.uniform() * rho0.economies);
        s.counterparty = static_cast<int>(stream.uniform() * rho0.counterparties);
        s.notional = spec.notional_min + stream.uniform() * (spec.notional_max - spec.notional_min);
        s.maturity = (1 + static_cast<int>(stream.uniform() * nmat)) / spec.freq;
        s.freq = spec.freq;
        s.payer = stream.uniform() < 0.5;
        const int e = s.economy;
        s.strike = par_swap_rate(rho0.a[e], rho0.b[e], rho0.sigma_r[e], rho0.r0[e], s.maturity, s.freq);
        out.push_back(s);
    }
    return out;
}

inline void save_portfolio_csv(const std::vector<Swap>& swaps, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("save_portfolio_csv: cannot open " + path);
    f << "economy,counterparty,notional,maturity,strike,freq,payer\n";
    f.precision(17);
    for (const Swap& s : swaps)
        f << s.economy << ',' << s.counterparty << ',' << s.notional << ',' << s.maturity << ','
          << s.strike << ',' << s.freq << ',' << (s.payer ? 1 : 0) << '\n';
}

inline std::vector<Swap> load_portfolio_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("load_portfolio_csv: cannot open " + path);
    std::string line;
    if (!std::getline(f, line)) throw std::runtime_error("load_portfolio_csv: empty file");
    std::vector<Swap> out;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string tok;
        Swap s;
        auto next = [&]() {
            if (!std::getline(ss, tok, ',')) throw std::runtime_error("load_portfolio_csv: short row");
            return tok;
        };
        s.economy = std::stoi(next());
        s.counterparty = std::stoi(next());
        s.notional = std::stod(next());
        s.maturity = std::stod(next());
        s.strike = std::stod(next());
        s.freq = std::stod(next());
        s.payer = std::stoi(next()) != 0;
        out.push_back(s);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Market instruments: ZC curves, FX forwards, CDS curves
// ---------------------------------------------------------------------------

enum class InstrumentKind { Zc, FxForward, Cds };

struct Instrument {
    InstrumentKind kind;
    int index;      // economy (Zc), foreign economy (FxForward), counterparty (Cds)
    double pillar;  // maturity in years from time 0
    double spread;  // CDS only: fixed running spread (par at rho0)
};

struct InstrumentSet {
    std::vector<double> zc_pillars;
    std::vector<double> fx_pillars;
    std::vector<double> cds_pillars;
    double lgd = 0.6;
    std::vector<Instrument> instruments; // zc block, fx block, cds block

    int size() const { return static_cast<int>(instruments.size()); }
};

inline double cds_premium_leg_unit(const ModelParams& p, int c, double gamma, double t, double pillar) {
    // expected premium flows from t for unit running spread, monthly accrual
    const int months = static_cast<int>(std::lround(pillar * 12.0));
    double leg = 0.0;
    for (int k = 1; k <= months; ++k) {
        const double u = k / 12.0;
        if (u > t + 1e-12)
            leg += (1.0 / 12.0) * cir_survival(p.delta[c], p.alpha[c], p.nu[c], gamma, u - t);
    }
    return leg;
}

inline double cds_protection_leg(const ModelParams& p, int c, double gamma, double t, double pillar,
                                 double lgd) {
    return lgd * (1.0 - cir_survival(p.delta[c], p.alpha[c], p.nu[c], gamma, pillar - t));
}

// Build the instrument set and solve the CDS par spreads under rho0, so that
// every quote (CDS upfront in particular) is exactly 0-consistent at rho0.
inline InstrumentSet make_instrument_set(const ModelParams& rho0, std::vector<double> zc_pillars,
                                         std::vector<double> fx_pillars, std::vector<double> cds_pillars,
                                         double lgd) {
    InstrumentSet set;
    set.zc_pillars = std::move(zc_pillars);
    set.fx_pillars = std::move(fx_pillars);
    set.cds_pillars = std::move(cds_pillars);
    set.lgd = lgd;
    for (int e = 0; e < rho0.economies; ++e)
        for (double u : set.zc_pillars) set.instruments.push_back({InstrumentKind::Zc, e, u, 0.0});
    for (int f = 1; f < rho0.economies; ++f)
        for (double u : set.fx_pillars) set.instruments.push_back({InstrumentKind::FxForward, f, u, 0.0});
    for (int c = 0; c < rho0.counterparties; ++c)
        for (double u : set.cds_pillars) {
            const double prot = cds_protection_leg(rho0, c, rho0.gamma0[c], 0.0, u, lgd);
            const double prem1 = cds_premium_leg_unit(rho0, c, rho0.gamma0[c], 0.0, u);
            if (prem1 <= 0.0) throw std::runtime_error("make_instrument_set: empty CDS premium leg");
            set.instruments.push_back({InstrumentKind::Cds, c, u, prot / prem1});
        }
    return set;
}

// Quote one instrument given a parameter vector whose initial conditions are
// read as the current state. Matured instruments quote 0.
inline double instrument_price(const Instrument& ins, const InstrumentSet& set, const ModelParams& st,
                               double t) {
    if (ins.pillar <= t + 1e-12) return 0.0;
    switch (ins.kind) {
        case InstrumentKind::Zc: {
            const int e = ins.index;
            return zc_bond_price(st.a[e], st.b[e], st.sigma_r[e], st.r0[e], ins.pillar - t);
        }
        case InstrumentKind::FxForward: {
            const int f = ins.index;
            const double pd = zc_bond_price(st.a[0], st.b[0], st.sigma_r[0], st.r0[0], ins.pillar - t);
            const double pf = zc_bond_price(st.a[f], st.b[f], st.sigma_r[f], st.r0[f], ins.pillar - t);
            return st.fx0[f - 1] * pf / pd;
        }
        case InstrumentKind::Cds: {
            const int c = ins.index;
            const double g = st.gamma0[c];
            return cds_protection_leg(st, c, g, t, ins.pillar, set.lgd) -
                   ins.spread * cds_premium_leg_unit(st, c, g, t, ins.pillar);
        }
    }
    return 0.0;
}

inline Eigen::VectorXd instrument_prices(const InstrumentSet& set, const ModelParams& state_params,
                                         double t) {
    Eigen::VectorXd z(set.size());
    for (int i = 0; i < set.size(); ++i)
        z[i] = instrument_price(set.instruments[i], set, state_params, t);
    return z;
}

// Copy of the exogenous parameters with initial conditions replaced by the
// factor state at a pricing date (layout of PathSet::factors_at).
inline ModelParams params_with_state(const ModelParams& base, const double* factors) {
    ModelParams p = base;
    int k = 0;
    for (int e = 0; e < p.economies; ++e) p.r0[e] = factors[k++];
    for (int f = 1; f < p.economies; ++f) p.fx0[f - 1] = factors[k++];
    for (int c = 0; c < p.counterparties; ++c) p.gamma0[c] = factors[k++];
    return p;
}

// ---------------------------------------------------------------------------
// Geometric basket Black-Scholes oracle
// ---------------------------------------------------------------------------

struct BasketSpec {
    std::vector<double> spots;
    std::vector<double> vols;
    double rate = 0.0;
    double strike = 100.0;
    double maturity = 1.0;

    int d() const { return static_cast<int>(spots.size()); }
    void validate() const {
        if (spots.empty() || spots.size() != vols.size())
            throw std::invalid_argument("BasketSpec: spots/vols size mismatch");
        for (double s : spots)
            if (!(s > 0.0)) throw std::invalid_argument("BasketSpec: spots must be positive");
        for (double v : vols)
            if (!(v > 0.0)) throw std::invalid_argument("BasketSpec: vols must be positive");
        if (!(strike > 0.0) || !(maturity > 0.0)) throw std::invalid_argument("BasketSpec: bad strike/maturity");
    }
};

struct BasketGreeks {
    double price = 0.0;
    std::vector<double> deltas, vegas, gammas;
};

// The geometric average of independent lognormals is lognormal, so the call
// price is Black's formula on the effective forward/vol; Greeks by chain rule.
inline BasketGreeks basket_call_analytic(const BasketSpec& spec) {
    spec.validate();
    const int d = spec.d();
    const double T = spec.maturity, K = spec.strike, r = spec.rate;
    double lnG0 = 0.0, sum_var = 0.0;
    for (int i = 0; i < d; ++i) {
        lnG0 += std::log(spec.spots[i]) / d;
        sum_var += spec.vols[i] * spec.vols[i];
    }
    const double G0 = std::exp(lnG0);
    const double sigG = std::sqrt(sum_var) / d;
    const double mu = r - 0.5 * sum_var / d;
    const double F = G0 * std::exp((mu + 0.5 * sigG * sigG) * T);
    const double st = sigG * std::sqrt(T);
    const double d1 = std::log(F / K) / st + 0.5 * st;
    const double d2 = d1 - st;
    const double disc = std::exp(-r * T);

    BasketGreeks g;
    g.price = disc * (F * normal_cdf(d1) - K * normal_cdf(d2));
    g.deltas.resize(d);
    g.vegas.resize(d);
    g.gammas.resize(d);
    const double deltaG = disc * (F / G0) * normal_cdf(d1);
    const double gammaG = disc * (F / G0) * normal_pdf(d1) / (G0 * st);
    for (int i = 0; i < d; ++i) {
        const double Si = spec.spots[i], si = spec.vols[i];
        const double dG0 = G0 / (d * Si);
        const double d2G0 = (1.0 / d) * (1.0 / d - 1.0) * G0 / (Si * Si);
        g.deltas[i] = deltaG * dG0;
        g.gammas[i] = gammaG * dG0 * dG0 + deltaG * d2G0;
        const double dF = F * T * si * (1.0 / (d * d) - 1.0 / d);
        const double dsigG = si / (d * d * sigG);
        g.vegas[i] = disc * (dF * normal_cdf(d1) + F * normal_pdf(d1) * std::sqrt(T) * dsigG);
    }
    return g;
}

// Simulated payoff for the basket under parameters rho = (spots..., vols...),
// driven by d standard normals from the path stream. Used with common random
// numbers by the bump estimators and as the Monte Carlo oracle.
inline double basket_payoff(const BasketSpec& spec, const Eigen::VectorXd& rho, RngStream stream) {
    const int d = spec.d();
    if (rho.size() != 2 * d) throw std::invalid_argument("basket_payoff: rho must hold spots then vols");
    const double T = spec.maturity;
    double lng = 0.0;
    for (int i = 0; i < d; ++i) {
        const double s = rho[i], v = rho[d + i];
        const double z = stream.normal();
        lng += (std::log(s) + (spec.rate - 0.5 * v * v) * T + v * std::sqrt(T) * z) / d;
    }
    const double payoff = std::max(std::exp(lng) - spec.strike, 0.0);
    return std::exp(-spec.rate * T) * payoff;
}

} // namespace xva
