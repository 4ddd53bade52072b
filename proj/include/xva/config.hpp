#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "xva/cva.hpp"
#include "xva/stats.hpp"
#include "xva/engine.hpp"
#include "xva/products.hpp"

namespace xva {

// Configuration problems map to CLI exit code 2; numerical failures to 3.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Flat key-value config with INI-style sections
// ---------------------------------------------------------------------------

class RunConfig {
  public:
    std::map<std::string, std::string> values; // "section.key" -> value

    static RunConfig parse_file(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw ConfigError("cannot open config file: " + path);
        std::stringstream ss;
        ss << f.rdbuf();
        return parse(ss.str());
    }

    static RunConfig parse(const std::string& text) {
        RunConfig cfg;
        std::string section;
        std::istringstream in(text);
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const std::string t = trim(strip_comment(line));
            if (t.empty()) continue;
            if (t.front() == '[') {
                if (t.back() != ']') throw ConfigError("bad section header at line " + std::to_string(lineno));
                section = trim(t.substr(1, t.size() - 2));
                continue;
            }
            const auto eq = t.find('=');
            if (eq == std::string::npos)
                throw ConfigError("expected key = value at line " + std::to_string(lineno));
            const std::string key = trim(t.substr(0, eq));
            const std::string val = trim(t.substr(eq + 1));
            if (key.empty()) throw ConfigError("empty key at line " + std::to_string(lineno));
            cfg.values[section.empty() ? key : section + "." + key] = val;
        }
        return cfg;
    }

    // "section.key=value" command-line override
    void set_override(const std::string& assignment) {
        const auto eq = assignment.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got: " + assignment);
        values[trim(assignment.substr(0, eq))] = trim(assignment.substr(eq + 1));
    }

    bool has(const std::string& key) const { return values.count(key) > 0; }

    std::string get_string(const std::string& key, const std::string& fallback) const {
        const auto it = values.find(key);
        return it == values.end() ? fallback : it->second;
    }
    std::string require_string(const std::string& key) const {
        const auto it = values.find(key);
        if (it == values.end()) throw ConfigError("missing config key: " + key);
        return it->second;
    }
    double get_double(const std::string& key, double fallback) const {
        const auto it = values.find(key);
        if (it == values.end()) return fallback;
        return to_double(it->second, key);
    }
    double require_double(const std::string& key) const { return to_double(require_string(key), key); }
    long get_int(const std::string& key, long fallback) const {
        const auto it = values.find(key);
        if (it == values.end()) return fallback;
        return to_int(it->second, key);
    }
    bool get_bool(const std::string& key, bool fallback) const {
        const auto it = values.find(key);
        if (it == values.end()) return fallback;
        if (it->second == "true" || it->second == "1" || it->second == "yes") return true;
        if (it->second == "false" || it->second == "0" || it->second == "no") return false;
        throw ConfigError("expected boolean for " + key);
    }
    std::vector<double> get_list(const std::string& key, const std::vector<double>& fallback) const {
        const auto it = values.find(key);
        if (it == values.end()) return fallback;
        std::vector<double> out;
        std::stringstream ss(it->second);
        std::string tok;
        while (std::getline(ss, tok, ',')) {
            const std::string t = trim(tok);
            if (!t.empty()) out.push_back(to_double(t, key));
        }
        return out;
    }
    std::vector<int> get_int_list(const std::string& key, const std::vector<int>& fallback) const {
        const auto it = values.find(key);
        if (it == values.end()) return fallback;
        std::vector<int> out;
        for (double v : get_list(key, {})) out.push_back(static_cast<int>(v));
        return out;
    }

  private:
    static std::string strip_comment(const std::string& s) {
        bool at_start = true;
        for (std::size_t i = 0; i < s.size(); ++i) {
            const char c = s[i];
            if (c == '#' || (c == ';' && at_start)) return s.substr(0, i);
            if (!std::isspace(static_cast<unsigned char>(c))) at_start = false;
        }
        return s;
    }
    static std::string trim(const std::string& s) {
        std::size_t a = 0, b = s.size();
        while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
        while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
        return s.substr(a, b - a);
    }
    static double to_double(const std::string& s, const std::string& key) {
        try {
            std::size_t pos = 0;
            const double v = std::stod(s, &pos);
            if (pos != s.size()) throw std::invalid_argument(s);
            return v;
        } catch (const std::exception&) {
            throw ConfigError("expected number for " + key + ", got: " + s);
        }
    }
    static long to_int(const std::string& s, const std::string& key) {
        try {
            std::size_t pos = 0;
            const long v = std::stol(s, &pos);
            if (pos != s.size()) throw std::invalid_argument(s);
            return v;
        } catch (const std::exception&) {
            throw ConfigError("expected integer for " + key + ", got: " + s);
        }
    }
};

// ---------------------------------------------------------------------------
// Lab construction from a config
// ---------------------------------------------------------------------------

inline ModelParams model_from_config(const RunConfig& cfg) {
    const int E = static_cast<int>(cfg.get_int("model.economies", 3));
    const int C = static_cast<int>(cfg.get_int("model.counterparties", 2));
    if (E < 1 || C < 1) throw ConfigError("model.economies and model.counterparties must be >= 1");
    ModelParams p(E, C);
    auto read = [&](const char* name, std::vector<double>& dst, int base, double dflt) {
        for (std::size_t i = 0; i < dst.size(); ++i) {
            const std::string key =
                "model." + std::string(name) + "[" + std::to_string(i + base) + "]";
            dst[i] = cfg.get_double(key, dflt);
        }
    };
    read("r0", p.r0, 0, 0.02);
    read("a", p.a, 0, 0.25);
    read("b", p.b, 0, 0.035);
    read("sigma_r", p.sigma_r, 0, 0.012);
    read("fx0", p.fx0, 1, 1.0);
    read("sigma_fx", p.sigma_fx, 1, 0.10);
    read("gamma0", p.gamma0, 1, 0.08);
    read("alpha", p.alpha, 1, 0.10);
    read("delta", p.delta, 1, 0.5);
    read("nu", p.nu, 1, 0.07);
    return p;
}

inline SimGrid grid_from_config(const RunConfig& cfg) {
    SimGrid g;
    g.n = static_cast<int>(cfg.get_int("grid.n", 100));
    g.h = cfg.get_double("grid.h", 0.1);
    g.substeps = static_cast<int>(cfg.get_int("grid.substeps", 25));
    try {
        g.validate();
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
    return g;
}

inline SimOptions sim_options_from_config(const RunConfig& cfg) {
    SimOptions opt;
    const std::string drift = cfg.get_string("model.fx_drift", "rate_differential");
    if (drift == "rate_differential")
        opt.fx_rate_differential_drift = true;
    else if (drift == "zero")
        opt.fx_rate_differential_drift = false;
    else
        throw ConfigError("model.fx_drift must be rate_differential or zero");
    const std::string corr_file = cfg.get_string("model.correlation_file", "");
    if (!corr_file.empty()) {
        std::ifstream f(corr_file);
        if (!f) throw ConfigError("cannot open model.correlation_file: " + corr_file);
        std::vector<std::vector<double>> rows;
        std::string line;
        while (std::getline(f, line)) {
            if (line.empty()) continue;
            std::vector<double> row;
            std::stringstream ss(line);
            std::string tok;
            while (std::getline(ss, tok, ',')) row.push_back(std::stod(tok));
            rows.push_back(std::move(row));
        }
        const std::size_t d = rows.size();
        Eigen::MatrixXd corr(d, d);
        for (std::size_t i = 0; i < d; ++i) {
            if (rows[i].size() != d) throw ConfigError("correlation matrix must be square");
            for (std::size_t j = 0; j < d; ++j) corr(i, j) = rows[i][j];
        }
        Eigen::LLT<Eigen::MatrixXd> llt(corr);
        if (llt.info() != Eigen::Success)
            throw ConfigError("correlation matrix is not positive definite");
        opt.corr_cholesky = Eigen::MatrixXd(llt.matrixL());
    }
    return opt;
}

inline std::uint64_t master_seed(const RunConfig& cfg) {
    return static_cast<std::uint64_t>(cfg.get_int("seeds.master", 42));
}

// Stream-id spaces of the run components.
enum SeedComponent : std::uint64_t {
    kSeedPortfolio = 1,
    kSeedPricing = 2,
    kSeedBump = 3,
    kSeedLearn = 4,
    kSeedTwin = 5,
    kSeedBacktest = 6,
    kSeedTraining = 7,
    kSeedRunOn = 8,
    kSeedNested = 9,
    kSeedTwinContinue = 10,
};

inline CvaLab lab_from_config(const RunConfig& cfg) {
    ModelParams rho0 = model_from_config(cfg);
    std::ostringstream warnings;
    try {
        // gamma0/alpha may be zero in degenerate no-credit-risk configs
        auto relaxed = rho0;
        for (double& g : relaxed.gamma0) g = std::max(g, 1e-300);
        relaxed.validate(&warnings);
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
    const SimGrid grid = grid_from_config(cfg);

    PortfolioSpec pspec;
    pspec.count = static_cast<int>(cfg.get_int("portfolio.count", 250));
    pspec.notional_min = cfg.get_double("portfolio.notional_min", 1.0);
    pspec.notional_max = cfg.get_double("portfolio.notional_max", 100.0);
    pspec.freq = cfg.get_double("portfolio.freq", 2.0);
    pspec.maturity_max = cfg.get_double("portfolio.maturity_max", grid.horizon());
    const std::uint64_t pf_seed = derive_seed(master_seed(cfg), kSeedPortfolio);
    std::vector<Swap> swaps = generate_portfolio(pspec, rho0, make_stream(pf_seed, 0));

    std::vector<double> zc_def = {0.01, 0.1, 0.2, 0.5};
    for (int y = 1; y <= static_cast<int>(grid.horizon() + 1e-9); ++y) zc_def.push_back(y);
    std::vector<double> fx_def = {0.01, 0.1, 0.2, 0.5};
    std::vector<double> cds_def;
    for (int y = 1; y <= static_cast<int>(grid.horizon() + 1e-9); ++y) cds_def.push_back(y);
    InstrumentSet set = make_instrument_set(rho0, cfg.get_list("instruments.zc_pillars", zc_def),
                                            cfg.get_list("instruments.fx_pillars", fx_def),
                                            cfg.get_list("instruments.cds_pillars", cds_def),
                                            cfg.get_double("instruments.lgd", 0.6));

    try {
        return CvaLab(std::move(rho0), grid, std::move(swaps), std::move(set),
                      sim_options_from_config(cfg));
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
}

// ---------------------------------------------------------------------------
// Manifest: resolved config, seeds, metrics, output checksums
// ---------------------------------------------------------------------------

inline std::uint64_t fnv1a64(const char* data, std::size_t len, std::uint64_t h = 1469598103934665603ULL) {
    for (std::size_t i = 0; i < len; ++i) {
        h ^= static_cast<unsigned char>(data[i]);
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::string file_checksum(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("file_checksum: cannot open " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    const std::string bytes = ss.str();
    char buf[19];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(fnv1a64(bytes.data(), bytes.size())));
    return buf;
}

inline std::uint64_t config_hash(const RunConfig& cfg) {
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& [k, v] : cfg.values) {
        h = fnv1a64(k.data(), k.size(), h);
        h = fnv1a64("=", 1, h);
        h = fnv1a64(v.data(), v.size(), h);
        h = fnv1a64("\n", 1, h);
    }
    return h;
}

class Manifest {
  public:
    nlohmann::json doc;

    Manifest(const std::string& command, const RunConfig& cfg) {
        doc["command"] = command;
        doc["config"] = nlohmann::json::object();
        for (const auto& [k, v] : cfg.values) doc["config"][k] = v;
        char buf[19];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(config_hash(cfg)));
        doc["config_hash"] = buf;
        doc["seeds"]["master"] = master_seed(cfg);
        doc["metrics"] = nlohmann::json::object();
        doc["outputs"] = nlohmann::json::object();
    }

    void metric(const std::string& key, double value) { doc["metrics"][key] = value; }
    void metric(const std::string& key, const nlohmann::json& value) { doc["metrics"][key] = value; }

    void record_output(const std::string& dir, const std::string& filename) {
        doc["outputs"][filename] = file_checksum(dir + "/" + filename);
    }

    void write(const std::string& dir) const {
        const std::string path = dir + "/manifest.json";
        std::ofstream f(path);
        if (!f) throw std::runtime_error("Manifest: cannot write " + path);
        f << doc.dump(2) << '\n';
    }

    static RunConfig config_from_manifest(const std::string& path, std::string* command) {
        std::ifstream f(path);
        if (!f) throw ConfigError("cannot open manifest: " + path);
        nlohmann::json doc;
        f >> doc;
        RunConfig cfg;
        for (const auto& [k, v] : doc.at("config").items()) cfg.values[k] = v.get<std::string>();
        if (command) *command = doc.at("command").get<std::string>();
        return cfg;
    }
};

} // namespace xva
