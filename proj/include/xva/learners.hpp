#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "xva/cva.hpp"
#include "xva/engine.hpp"
#include "xva/rng.hpp"

namespace xva {

// ---------------------------------------------------------------------------
// Truncated-SVD ridge linear regression
// ---------------------------------------------------------------------------

struct LinearFitOptions {
    bool intercept = false;
    bool standardize = false;    // scale columns to unit RMS (centering only with intercept)
    double ridge = 1e-8;         // relative to the trace scale of X'X
    double svd_truncation = 1e-10;
    bool want_std_errors = false;
};

struct LinearModel {
    Eigen::VectorXd coefficients;
    double intercept = 0.0;
    Eigen::VectorXd std_errors;      // slope standard errors (if requested)
    std::vector<int> dropped;        // all-zero/truncated feature columns
    double residual_stdev = 0.0;

    double predict(const Eigen::VectorXd& x) const { return coefficients.dot(x) + intercept; }
    Eigen::VectorXd predict_batch(const Eigen::MatrixXd& X) const {
        return (X * coefficients).array() + intercept;
    }
};

inline LinearModel fit_linear(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                              const LinearFitOptions& opt = {}) {
    const auto m = X.rows();
    const auto k = X.cols();
    if (y.size() != m) throw std::invalid_argument("fit_linear: rows mismatch");
    if (m < 1 || k < 1) throw std::invalid_argument("fit_linear: empty problem");

    Eigen::RowVectorXd mean_x = Eigen::RowVectorXd::Zero(k);
    double mean_y = 0.0;
    if (opt.intercept) {
        mean_x = X.colwise().mean();
        mean_y = y.mean();
    }
    Eigen::MatrixXd Xc = X.rowwise() - mean_x;
    Eigen::VectorXd yc = y.array() - mean_y;

    Eigen::VectorXd scale = Eigen::VectorXd::Ones(k);
    if (opt.standardize) {
        for (Eigen::Index j = 0; j < k; ++j) {
            const double s = std::sqrt(Xc.col(j).squaredNorm() / static_cast<double>(m));
            scale[j] = s > 1e-300 ? s : 1.0;
        }
        Xc.array().rowwise() /= scale.transpose().array();
    }

    Eigen::BDCSVD<Eigen::MatrixXd> svd(Xc, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::VectorXd& s = svd.singularValues();
    const double smax = s.size() ? s[0] : 0.0;
    const double lambda = opt.ridge > 0.0 ? opt.ridge * Xc.squaredNorm() / static_cast<double>(k) : 0.0;

    Eigen::VectorXd uty = svd.matrixU().transpose() * yc;
    Eigen::VectorXd f(s.size());
    int rank = 0;
    for (Eigen::Index i = 0; i < s.size(); ++i) {
        if (s[i] > opt.svd_truncation * smax && s[i] > 0.0) {
            f[i] = s[i] / (s[i] * s[i] + lambda);
            ++rank;
        } else {
            f[i] = 0.0;
        }
    }
    Eigen::VectorXd beta_s = svd.matrixV() * f.cwiseProduct(uty).eval();

    LinearModel model;
    model.coefficients = beta_s.cwiseQuotient(scale);
    model.intercept = opt.intercept ? mean_y - mean_x * model.coefficients : 0.0;
    for (Eigen::Index j = 0; j < k; ++j)
        if (Xc.col(j).squaredNorm() == 0.0) model.dropped.push_back(static_cast<int>(j));

    const Eigen::VectorXd resid = yc - Xc * beta_s;
    const double dof = std::max<double>(1.0, static_cast<double>(m) - rank - (opt.intercept ? 1 : 0));
    model.residual_stdev = std::sqrt(resid.squaredNorm() / dof);
    if (opt.want_std_errors) {
        // heteroskedasticity-robust (HC1) sandwich; for a single constant
        // regressor this reduces to the classical block-sample formula
        Eigen::MatrixXd W = Eigen::MatrixXd::Zero(k, k);
        for (Eigen::Index i = 0; i < s.size(); ++i)
            if (f[i] > 0.0)
                W += (f[i] / s[i]) * svd.matrixV().col(i) * svd.matrixV().col(i).transpose();
        const Eigen::MatrixXd M =
            Xc.transpose() * (Xc.array().colwise() * resid.array().square()).matrix();
        const Eigen::MatrixXd sandwich = (static_cast<double>(m) / dof) * W * M * W;
        model.std_errors = Eigen::VectorXd::Zero(k);
        for (Eigen::Index j = 0; j < k; ++j)
            model.std_errors[j] = std::sqrt(std::max(sandwich(j, j), 0.0)) / scale[j];
    }
    return model;
}

// ---------------------------------------------------------------------------
// Multi-layer perceptron: softplus hidden layers, identity output
// ---------------------------------------------------------------------------

struct AdamConfig {
    double step = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct TrainConfig {
    int epochs = 1000;
    int batch_size = 256;
    AdamConfig adam;
    double ridge = 1e-6; // weight decay on the standardized loss
    std::uint64_t seed = 0;
    bool shuffle_each_epoch = true;
};

namespace detail {

inline double softplus(double x) {
    if (x > 30.0) return x;
    if (x < -30.0) return std::exp(x);
    return std::log1p(std::exp(x));
}
inline double logistic(double x) {
    if (x > 30.0) return 1.0;
    if (x < -30.0) return std::exp(x);
    return 1.0 / (1.0 + std::exp(-x));
}

} // namespace detail

struct MlpModel {
    std::vector<Eigen::MatrixXd> W; // fan_in x fan_out
    std::vector<Eigen::VectorXd> b;
    Eigen::VectorXd mean_x, scale_x;
    double mean_y = 0.0, scale_y = 1.0;
    double final_loss = 0.0;

    int input_dim() const { return W.empty() ? 0 : static_cast<int>(W.front().rows()); }
    int layers() const { return static_cast<int>(W.size()); }

    Eigen::VectorXd forward_standardized(Eigen::VectorXd h) const {
        for (std::size_t l = 0; l < W.size(); ++l) {
            Eigen::VectorXd a = W[l].transpose() * h + b[l];
            if (l + 1 < W.size())
                for (Eigen::Index i = 0; i < a.size(); ++i) a[i] = detail::softplus(a[i]);
            h = std::move(a);
        }
        return h;
    }

    double predict(const Eigen::VectorXd& x) const {
        Eigen::VectorXd xs = (x - mean_x).cwiseQuotient(scale_x);
        return mean_y + scale_y * forward_standardized(xs)[0];
    }

    Eigen::VectorXd predict_batch(const Eigen::MatrixXd& X) const {
        Eigen::VectorXd out(X.rows());
        for (Eigen::Index i = 0; i < X.rows(); ++i) out[i] = predict(X.row(i).transpose());
        return out;
    }

    // Exact reverse-mode gradient of predict with respect to the raw inputs.
    Eigen::VectorXd input_gradient(const Eigen::VectorXd& x) const {
        Eigen::VectorXd h = (x - mean_x).cwiseQuotient(scale_x);
        std::vector<Eigen::VectorXd> acts; // pre-activations per hidden layer
        acts.reserve(W.size());
        for (std::size_t l = 0; l + 1 < W.size(); ++l) {
            Eigen::VectorXd a = W[l].transpose() * h + b[l];
            acts.push_back(a);
            for (Eigen::Index i = 0; i < a.size(); ++i) a[i] = detail::softplus(a[i]);
            h = std::move(a);
        }
        Eigen::VectorXd g = W.back().col(0); // d out / d last hidden
        for (int l = static_cast<int>(W.size()) - 2; l >= 0; --l) {
            for (Eigen::Index i = 0; i < g.size(); ++i) g[i] *= detail::logistic(acts[l][i]);
            g = (W[l] * g).eval();
        }
        return scale_y * g.cwiseQuotient(scale_x);
    }
};

// Mean-squared-error + ridge training by Adam over shuffled mini-batches.
// Single-threaded and seed-deterministic: two runs with the same inputs give
// bitwise-identical weights.
inline MlpModel fit_mlp(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                        const std::vector<int>& hidden, const TrainConfig& cfg) {
    const Eigen::Index m = X.rows(), k = X.cols();
    if (y.size() != m || m == 0) throw std::invalid_argument("fit_mlp: bad sample");
    if (!X.allFinite() || !y.allFinite()) throw std::invalid_argument("fit_mlp: non-finite inputs");

    MlpModel model;
    model.mean_x = X.colwise().mean();
    model.scale_x.resize(k);
    for (Eigen::Index j = 0; j < k; ++j) {
        const double v = (X.col(j).array() - model.mean_x[j]).square().sum() / static_cast<double>(m);
        model.scale_x[j] = v > 1e-24 ? std::sqrt(v) : 1.0;
    }
    model.mean_y = y.mean();
    {
        const double vy = (y.array() - model.mean_y).square().sum() / static_cast<double>(m);
        model.scale_y = vy > 1e-24 ? std::sqrt(vy) : 1.0;
    }
    Eigen::MatrixXd Xs = (X.rowwise() - model.mean_x.transpose()).array().rowwise() /
                         model.scale_x.transpose().array();
    Eigen::VectorXd ys = (y.array() - model.mean_y) / model.scale_y;

    std::vector<int> sizes;
    sizes.push_back(static_cast<int>(k));
    for (int hhidden : hidden) sizes.push_back(hhidden);
    sizes.push_back(1);
    const int L = static_cast<int>(sizes.size()) - 1;

    RngStream init = make_stream(cfg.seed, 0xA1);
    for (int l = 0; l < L; ++l) {
        Eigen::MatrixXd Wl = Eigen::MatrixXd::Zero(sizes[l], sizes[l + 1]);
        if (l + 1 < L) { // output layer stays zero-initialized
            const double bound = std::sqrt(1.0 / sizes[l]);
            for (Eigen::Index i = 0; i < Wl.rows(); ++i)
                for (Eigen::Index j = 0; j < Wl.cols(); ++j)
                    Wl(i, j) = bound * (2.0 * init.uniform() - 1.0);
        }
        model.W.push_back(std::move(Wl));
        model.b.push_back(Eigen::VectorXd::Zero(sizes[l + 1]));
    }

    std::vector<Eigen::MatrixXd> mW(L), vW(L);
    std::vector<Eigen::VectorXd> mb(L), vb(L);
    for (int l = 0; l < L; ++l) {
        mW[l] = Eigen::MatrixXd::Zero(sizes[l], sizes[l + 1]);
        vW[l] = mW[l];
        mb[l] = Eigen::VectorXd::Zero(sizes[l + 1]);
        vb[l] = mb[l];
    }

    std::vector<Eigen::Index> order(m);
    for (Eigen::Index i = 0; i < m; ++i) order[i] = i;
    RngStream shuffle = make_stream(cfg.seed, 0xB2);
    const int batch = std::max(1, cfg.batch_size);
    long step_count = 0;
    double last_loss = 0.0;

    std::vector<Eigen::MatrixXd> H(L + 1), A(L);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        if (cfg.shuffle_each_epoch)
            for (Eigen::Index i = m - 1; i > 0; --i)
                std::swap(order[i], order[static_cast<Eigen::Index>(shuffle.uniform() * (i + 1))]);
        double epoch_loss = 0.0;
        for (Eigen::Index start = 0; start < m; start += batch) {
            const Eigen::Index bsz = std::min<Eigen::Index>(batch, m - start);
            Eigen::MatrixXd Xb(bsz, k);
            Eigen::VectorXd yb(bsz);
            for (Eigen::Index i = 0; i < bsz; ++i) {
                Xb.row(i) = Xs.row(order[start + i]);
                yb[i] = ys[order[start + i]];
            }
            // forward
            H[0] = Xb;
            for (int l = 0; l < L; ++l) {
                A[l] = (H[l] * model.W[l]).rowwise() + model.b[l].transpose();
                if (l + 1 < L)
                    H[l + 1] = A[l].unaryExpr([](double v) { return detail::softplus(v); });
                else
                    H[l + 1] = A[l];
            }
            Eigen::VectorXd resid = H[L].col(0) - yb;
            epoch_loss += resid.squaredNorm();
            // backward
            Eigen::MatrixXd delta = (2.0 / bsz) * resid;
            ++step_count;
            const double c1 = 1.0 - std::pow(cfg.adam.beta1, step_count);
            const double c2 = 1.0 - std::pow(cfg.adam.beta2, step_count);
            for (int l = L - 1; l >= 0; --l) {
                Eigen::MatrixXd gW = H[l].transpose() * delta + 2.0 * cfg.ridge * model.W[l];
                Eigen::VectorXd gb = delta.colwise().sum();
                if (l > 0) {
                    Eigen::MatrixXd up = delta * model.W[l].transpose();
                    delta = up.cwiseProduct(
                        A[l - 1].unaryExpr([](double v) { return detail::logistic(v); }));
                }
                mW[l] = cfg.adam.beta1 * mW[l] + (1.0 - cfg.adam.beta1) * gW;
                vW[l] = cfg.adam.beta2 * vW[l] + (1.0 - cfg.adam.beta2) * gW.cwiseProduct(gW);
                mb[l] = cfg.adam.beta1 * mb[l] + (1.0 - cfg.adam.beta1) * gb;
                vb[l] = cfg.adam.beta2 * vb[l] + (1.0 - cfg.adam.beta2) * gb.cwiseProduct(gb);
                model.W[l] -= (cfg.adam.step * (mW[l] / c1).array() /
                               ((vW[l] / c2).array().sqrt() + cfg.adam.eps))
                                  .matrix();
                model.b[l] -= (cfg.adam.step * (mb[l] / c1).array() /
                               ((vb[l] / c2).array().sqrt() + cfg.adam.eps))
                                  .matrix();
            }
        }
        last_loss = epoch_loss / static_cast<double>(m);
        if (!std::isfinite(last_loss))
            throw std::runtime_error("fit_mlp: loss diverged (NaN) at epoch " + std::to_string(epoch));
    }
    model.final_loss = last_loss;
    return model;
}

// ---------------------------------------------------------------------------
// Predictor: linear or MLP behind one interface
// ---------------------------------------------------------------------------

struct Predictor {
    enum class Kind { Linear, Mlp } kind = Kind::Linear;
    LinearModel linear;
    MlpModel mlp;

    double predict(const Eigen::VectorXd& x) const {
        return kind == Kind::Linear ? linear.predict(x) : mlp.predict(x);
    }
    Eigen::VectorXd predict_batch(const Eigen::MatrixXd& X) const {
        return kind == Kind::Linear ? linear.predict_batch(X) : mlp.predict_batch(X);
    }
    Eigen::VectorXd input_gradient(const Eigen::VectorXd& x) const {
        return kind == Kind::Linear ? linear.coefficients : mlp.input_gradient(x);
    }
};

inline Eigen::VectorXd input_gradient(const Predictor& p, const Eigen::VectorXd& x) {
    return p.input_gradient(x);
}

// ---------------------------------------------------------------------------
// Model file format
// ---------------------------------------------------------------------------

inline constexpr char kModelMagic[17] = "XVASENSI-MODEL01";

namespace detail {

inline void write_vec(std::ofstream& f, const Eigen::VectorXd& v) {
    const std::uint64_t n = v.size();
    f.write(reinterpret_cast<const char*>(&n), 8);
    f.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(n * 8));
}
inline Eigen::VectorXd read_vec(std::ifstream& f) {
    std::uint64_t n = 0;
    f.read(reinterpret_cast<char*>(&n), 8);
    Eigen::VectorXd v(n);
    f.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * 8));
    return v;
}

} // namespace detail

inline void save_predictor(const Predictor& p, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("save_predictor: cannot open " + path);
    f.write(kModelMagic, 16);
    const std::uint32_t kind = p.kind == Predictor::Kind::Linear ? 0 : 1;
    f.write(reinterpret_cast<const char*>(&kind), 4);
    if (p.kind == Predictor::Kind::Linear) {
        detail::write_vec(f, p.linear.coefficients);
        f.write(reinterpret_cast<const char*>(&p.linear.intercept), 8);
    } else {
        const std::uint32_t layers = p.mlp.layers();
        f.write(reinterpret_cast<const char*>(&layers), 4);
        for (std::uint32_t l = 0; l < layers; ++l) {
            const std::uint64_t rows = p.mlp.W[l].rows(), cols = p.mlp.W[l].cols();
            f.write(reinterpret_cast<const char*>(&rows), 8);
            f.write(reinterpret_cast<const char*>(&cols), 8);
            f.write(reinterpret_cast<const char*>(p.mlp.W[l].data()),
                    static_cast<std::streamsize>(rows * cols * 8));
            detail::write_vec(f, p.mlp.b[l]);
        }
        detail::write_vec(f, p.mlp.mean_x);
        detail::write_vec(f, p.mlp.scale_x);
        f.write(reinterpret_cast<const char*>(&p.mlp.mean_y), 8);
        f.write(reinterpret_cast<const char*>(&p.mlp.scale_y), 8);
    }
    if (!f) throw std::runtime_error("save_predictor: write failed");
}

inline Predictor load_predictor(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_predictor: cannot open " + path);
    char magic[16];
    f.read(magic, 16);
    if (std::memcmp(magic, kModelMagic, 16) != 0)
        throw std::runtime_error("load_predictor: bad magic in " + path);
    std::uint32_t kind = 0;
    f.read(reinterpret_cast<char*>(&kind), 4);
    Predictor p;
    if (kind == 0) {
        p.kind = Predictor::Kind::Linear;
        p.linear.coefficients = detail::read_vec(f);
        f.read(reinterpret_cast<char*>(&p.linear.intercept), 8);
    } else {
        p.kind = Predictor::Kind::Mlp;
        std::uint32_t layers = 0;
        f.read(reinterpret_cast<char*>(&layers), 4);
        for (std::uint32_t l = 0; l < layers; ++l) {
            std::uint64_t rows = 0, cols = 0;
            f.read(reinterpret_cast<char*>(&rows), 8);
            f.read(reinterpret_cast<char*>(&cols), 8);
            Eigen::MatrixXd W(rows, cols);
            f.read(reinterpret_cast<char*>(W.data()), static_cast<std::streamsize>(rows * cols * 8));
            p.mlp.W.push_back(std::move(W));
            p.mlp.b.push_back(detail::read_vec(f));
        }
        p.mlp.mean_x = detail::read_vec(f);
        p.mlp.scale_x = detail::read_vec(f);
        f.read(reinterpret_cast<char*>(&p.mlp.mean_y), 8);
        f.read(reinterpret_cast<char*>(&p.mlp.scale_y), 8);
    }
    if (!f) throw std::runtime_error("load_predictor: truncated file " + path);
    return p;
}

// ---------------------------------------------------------------------------
// Conditional CVA learning (baseline and risk modes)
// ---------------------------------------------------------------------------

enum class LearnerKind { Mlp, Linear };

// One simulated training/validation row per path at the pricing time t.
struct RiskDataset {
    Eigen::MatrixXd features;   // (X_t, Y_t[, eps]) per path
    Eigen::VectorXd labels;     // xi_{t,T}
    Eigen::VectorXd loss_t;     // C_t
    Eigen::MatrixXd states;     // Y_t factors
    std::vector<std::uint8_t> defaulted; // m x C
    std::vector<ModelParams> params;     // per-path parameters (eps draws)
    Eigen::MatrixXd quotes;     // Z_t (if requested)
    Eigen::MatrixXd cashflows;  // CF_t (if requested)
    int t_index = 0;
};

inline ModelParams draw_eps_params(const ModelParams& rho0, double sigma_eps, RngStream& s) {
    ModelParams p = rho0;
    for (auto* blk : {&p.a, &p.b, &p.sigma_r, &p.sigma_fx, &p.alpha, &p.delta, &p.nu})
        for (double& v : *blk) v += sigma_eps * std::fabs(v) * s.normal();
    return p;
}

inline RiskDataset generate_risk_dataset(const CvaLab& lab, SimMode mode, int t_index, std::size_t m,
                                         double sigma_eps, std::uint64_t seed, bool want_quotes) {
    if (t_index <= 0 || t_index > lab.grid.n)
        throw std::invalid_argument("generate_risk_dataset: t must be a positive grid step");
    const int C = lab.counterparties(), dimy = lab.dim_y(), deps = lab.rho0.dim_eps();
    const int nfeat = C + dimy + (mode == SimMode::Risk ? deps : 0);
    const int q = lab.instruments.size();

    RiskDataset ds;
    ds.t_index = t_index;
    ds.features.resize(m, nfeat);
    ds.labels.resize(m);
    ds.loss_t.resize(m);
    ds.states.resize(m, dimy);
    ds.defaulted.assign(m * C, 0);
    ds.params.resize(m, lab.rho0);
    if (want_quotes) {
        ds.quotes.resize(m, q);
        ds.cashflows.resize(m, q);
    }

    const std::uint64_t eps_seed = derive_seed(seed, 1);
    for (std::size_t j = 0; j < m && mode == SimMode::Risk; ++j) {
        RngStream es = make_stream(eps_seed, j);
        ds.params[j] = draw_eps_params(lab.rho0, sigma_eps, es);
    }

    parallel_for(m, [&](std::size_t j) {
        CvaLab::Workspace ws;
        CvaLab::Request req;
        req.t_index = t_index;
        req.want_quotes = want_quotes;
        const CvaLab::Eval ev = lab.eval_path(ds.params[j], make_stream(seed, j), req, ws);
        ds.labels[j] = ev.xi_t;
        ds.loss_t[j] = ev.loss_t;
        ds.states.row(j) = ev.state.transpose();
        int col = 0;
        for (int c = 0; c < C; ++c) {
            ds.features(j, col++) = ev.defaulted_t[c];
            ds.defaulted[j * C + c] = ev.defaulted_t[c];
        }
        ds.features.block(j, col, 1, dimy) = ev.state.transpose();
        col += dimy;
        if (mode == SimMode::Risk) {
            const Eigen::VectorXd v = ds.params[j].to_vector();
            ds.features.block(j, col, 1, deps) = v.tail(deps).transpose();
        }
        if (want_quotes) {
            ds.quotes.row(j) = ev.quotes_t.transpose();
            ds.cashflows.row(j) = ev.cashflow_t.transpose();
        }
    });
    return ds;
}

// Learn CVA_t(X_t, rho_t): features (X_t, Y_t) in baseline mode, plus the
// randomized exogenous parameters in risk mode; labels xi_{t,T}.
inline Predictor learn_conditional_cva(const CvaLab& lab, SimMode mode, int t_index, std::size_t m,
                                       double sigma_eps, LearnerKind kind,
                                       const std::vector<int>& hidden, const TrainConfig& cfg,
                                       std::uint64_t sim_seed, RiskDataset* out_ds = nullptr) {
    if (t_index == 0)
        throw std::invalid_argument("learn_conditional_cva: t=0 is the unconditional baseline CVA");
    RiskDataset ds = generate_risk_dataset(lab, mode, t_index, m, sigma_eps, sim_seed, false);
    Predictor p;
    if (kind == LearnerKind::Mlp) {
        p.kind = Predictor::Kind::Mlp;
        p.mlp = fit_mlp(ds.features, ds.labels, hidden, cfg);
    } else {
        p.kind = Predictor::Kind::Linear;
        LinearFitOptions lo;
        lo.intercept = true;
        lo.standardize = true;
        p.linear = fit_linear(ds.features, ds.labels, lo);
    }
    if (out_ds) *out_ds = std::move(ds);
    return p;
}

// ---------------------------------------------------------------------------
// Run-on delta-CVA learning
// ---------------------------------------------------------------------------

// Scenario set for the run-on risk view at horizon t: exogenous parameters
// shifted with per-component relative stdev 1% * sqrt(t), the Y state evolved
// to t with drivers independent of the payoff drivers.
struct RunOnDataset {
    Eigen::MatrixXd features;  // rho_j - rho0
    Eigen::VectorXd labels;    // xi_{0,T}(rho_j; w_j) - xi_{0,T}(rho0; w_j)
    Eigen::MatrixXd dZ;        // Z_0(rho_j) - z0
    Eigen::VectorXd xi_base;   // xi_{0,T}(rho0; w_j)
    std::vector<ModelParams> scenario_params; // rho_j as full parameter sets
};

// Scenario draws come from scenario_seed, payoff drivers from payoff_seed:
// re-running with the same scenario_seed and a fresh payoff_seed yields a
// conditionally independent label copy for twin validation.
inline RunOnDataset generate_runon_dataset(const CvaLab& lab, double t, std::size_t m,
                                           std::uint64_t scenario_seed, std::uint64_t payoff_seed) {
    const int p = lab.rho0.dim();
    const int q = lab.instruments.size();
    const double sigma = 0.01 * std::sqrt(t);
    const int t_index = static_cast<int>(std::lround(t / lab.grid.h));
    if (t_index < 1 || std::fabs(t_index * lab.grid.h - t) > 1e-9)
        throw std::invalid_argument("generate_runon_dataset: t must be a positive grid time");

    RunOnDataset ds;
    ds.features.resize(m, p);
    ds.labels.resize(m);
    ds.dZ.resize(m, q);
    ds.xi_base.resize(m);
    ds.scenario_params.resize(m, lab.rho0);

    const Eigen::VectorXd rho0_vec = lab.rho0.to_vector();
    const Eigen::VectorXd z0 = instrument_prices(lab.instruments, lab.rho0, 0.0);
    const std::uint64_t eps_seed = derive_seed(scenario_seed, 2);
    const std::uint64_t ytilde_seed = derive_seed(scenario_seed, 3);

    parallel_for(m, [&](std::size_t j) {
        RngStream es = make_stream(eps_seed, j);
        const ModelParams peps = draw_eps_params(lab.rho0, sigma, es);
        // independent drivers for the state scenario
        PathWorkspace ws;
        SimGrid short_grid{t_index, lab.grid.h, lab.grid.substeps};
        simulate_path(peps, short_grid, lab.sim_options, make_stream(ytilde_seed, j), ws);
        const ModelParams rho_j =
            params_with_state(peps, ws.factors.data() + t_index * peps.dim_y());
        ds.scenario_params[j] = rho_j;
        ds.features.row(j) = (rho_j.to_vector() - rho0_vec).transpose();
        ds.dZ.row(j) = (instrument_prices(lab.instruments, rho_j, 0.0) - z0).transpose();

        // common payoff drivers across the two legs
        CvaLab::Workspace cw;
        CvaLab::Request req;
        const double xi_s = lab.eval_path(rho_j, make_stream(payoff_seed, j), req, cw).xi_t;
        const double xi_0 = lab.eval_path(lab.rho0, make_stream(payoff_seed, j), req, cw).xi_t;
        ds.labels[j] = xi_s - xi_0;
        ds.xi_base[j] = xi_0;
    });
    return ds;
}

inline Predictor learn_delta_cva_runon(const CvaLab& lab, double t, std::size_t m,
                                       const std::vector<int>& hidden, const TrainConfig& cfg,
                                       std::uint64_t seed, RunOnDataset* out_ds = nullptr) {
    if (!(t > 0.0)) throw std::invalid_argument("learn_delta_cva_runon: t > 0 required");
    RunOnDataset ds = generate_runon_dataset(lab, t, m, derive_seed(seed, 101), seed);
    Predictor p;
    p.kind = Predictor::Kind::Mlp;
    p.mlp = fit_mlp(ds.features, ds.labels, hidden, cfg);
    if (out_ds) *out_ds = std::move(ds);
    return p;
}

} // namespace xva
