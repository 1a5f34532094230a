// config.hpp — single structured run configuration: one JSON file drives
// every CLI verb; flags only override keys. Validation collects every
// violation before reporting.

#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "kam.hpp"
#include "melnikov.hpp"
#include "vendor_json.hpp"

namespace qpkam {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct RunConfig {
    // geometry
    double delta{0.3};
    std::optional<double> j_threshold;
    // momentum map
    std::vector<Site> momentum_rows{{1, 0}, {0, 1}};
    // truncation
    TruncationBox trunc{8.0, 16.0};
    double hp_p{1.0};
    double gamma{1e-2};
    // potential: either a file or a generated one
    std::optional<std::string> potential_file;
    uint64_t potential_seed{7};
    double potential_epsilon{1e-5};
    int potential_radius{2};
    double width_a{1.0};
    double smoothness_p{2.0};
    // schedule
    KamSchedule schedule{};
    double eps_star{0.1};
    LieParams lie{};
    // omega source
    std::string omega_mode{"explicit"};  // explicit | lowdisc | grid
    std::vector<std::vector<double>> omega_values{{0.6180339887498949, 0.41421356237309503}};
    int omega_count{100};
    uint64_t omega_seed{3};
    int omega_grid_per_dim{5};
    // melnikov / measure
    int mel_N{3};
    double mel_L_audit{8.0};
    std::optional<std::vector<double>> mel_tau_list;
    std::vector<double> mel_gammas{1e-2, 3e-3, 1e-3, 3e-4};
    int mel_samples{2000};
    uint64_t mel_seed{11};
    // comparison
    double interior_margin{4.0};
    std::string output_dir{"out"};

    std::string canonical_json;  // the dump the hash is computed from
    uint64_t hash{0};

    int dim() const { return static_cast<int>(momentum_rows.size()); }

    GeometryParams geometry() const { return GeometryParams::make(delta, j_threshold); }

    std::shared_ptr<const MomentumMap> momentum_map() const {
        return std::make_shared<MomentumMap>(momentum_rows);
    }

    TravelingWavePotential potential(const MomentumMap& map) const {
        if (potential_file) {
            std::ifstream in(*potential_file);
            if (!in) throw ConfigError("cannot open potential file " + *potential_file);
            nlohmann::json j;
            in >> j;
            return potential_from_json(j, map);
        }
        return random_potential(potential_seed, potential_epsilon, potential_radius, map,
                                width_a, smoothness_p);
    }

    std::vector<std::vector<double>> omegas() const {
        if (omega_mode == "explicit") return omega_values;
        std::vector<std::vector<double>> out;
        if (omega_mode == "lowdisc") {
            Halton h(dim(), omega_seed);
            for (int i = 0; i < omega_count; ++i) {
                std::vector<double> w = h.next();
                for (double& x : w) x = 2.0 * x - 1.0;
                out.push_back(std::move(w));
            }
            return out;
        }
        if (omega_mode == "grid") {
            const int per = omega_grid_per_dim;
            std::vector<int> idx(static_cast<size_t>(dim()), 0);
            while (true) {
                std::vector<double> w(static_cast<size_t>(dim()));
                for (int i = 0; i < dim(); ++i)
                    w[static_cast<size_t>(i)] =
                        -1.0 + 2.0 * (idx[static_cast<size_t>(i)] + 0.5) / per;
                out.push_back(w);
                int i = 0;
                for (; i < dim(); ++i) {
                    if (++idx[static_cast<size_t>(i)] < per) break;
                    idx[static_cast<size_t>(i)] = 0;
                }
                if (i == dim()) break;
            }
            return out;
        }
        throw ConfigError("unknown omega mode " + omega_mode);
    }

    MelnikovConfig melnikov(double mel_gamma) const {
        const GeometryParams g = geometry();
        return MelnikovConfig::make(mel_N, dim(), g.mu, mel_gamma, mel_L_audit,
                                    momentum_map()->c() * width_a / 8.0, mel_tau_list);
    }
};

inline RunConfig config_from_json(const nlohmann::json& j) {
    std::vector<std::string> errs;
    RunConfig c;
    auto get = [&](const nlohmann::json& obj, const char* key, auto& dst) {
        if (obj.contains(key)) {
            try {
                dst = obj.at(key).get<std::decay_t<decltype(dst)>>();
            } catch (const std::exception& e) {
                errs.push_back(std::string("bad value for ") + key + ": " + e.what());
            }
        }
    };

    if (j.contains("geometry")) {
        const auto& g = j.at("geometry");
        get(g, "delta", c.delta);
        if (g.contains("j_threshold") && !g.at("j_threshold").is_null()) {
            double t = 0;
            get(g, "j_threshold", t);
            c.j_threshold = t;
        }
    }
    if (j.contains("momentum_rows")) {
        c.momentum_rows.clear();
        for (const auto& r : j.at("momentum_rows")) {
            if (!r.is_array() || r.size() != 2) {
                errs.push_back("momentum_rows entries must be integer pairs");
                continue;
            }
            c.momentum_rows.push_back({r[0].get<int>(), r[1].get<int>()});
        }
    }
    if (j.contains("truncation")) {
        get(j.at("truncation"), "site_radius", c.trunc.site_radius);
        get(j.at("truncation"), "fourier_radius", c.trunc.fourier_radius);
    }
    get(j, "hp_p", c.hp_p);
    get(j, "gamma", c.gamma);
    if (j.contains("potential")) {
        const auto& p = j.at("potential");
        if (p.contains("file")) {
            std::string f;
            get(p, "file", f);
            c.potential_file = f;
        }
        get(p, "seed", c.potential_seed);
        get(p, "epsilon", c.potential_epsilon);
        get(p, "support_radius", c.potential_radius);
        get(p, "width_a", c.width_a);
        get(p, "smoothness_p", c.smoothness_p);
    }
    if (j.contains("schedule")) {
        const auto& s = j.at("schedule");
        get(s, "a0", c.schedule.a0);
        get(s, "K0", c.schedule.K0);
        get(s, "tau", c.schedule.tau);
        get(s, "n_max", c.schedule.n_max);
        get(s, "stop_floor_factor", c.schedule.stop_floor_factor);
    }
    get(j, "eps_star", c.eps_star);
    if (j.contains("lie")) {
        get(j.at("lie"), "max_terms", c.lie.max_terms);
        get(j.at("lie"), "tail_tol", c.lie.tail_tol);
    }
    if (j.contains("omega")) {
        const auto& o = j.at("omega");
        get(o, "mode", c.omega_mode);
        if (o.contains("values")) {
            c.omega_values.clear();
            for (const auto& row : o.at("values"))
                c.omega_values.push_back(row.get<std::vector<double>>());
        }
        get(o, "count", c.omega_count);
        get(o, "seed", c.omega_seed);
        get(o, "grid_per_dim", c.omega_grid_per_dim);
    }
    if (j.contains("melnikov")) {
        const auto& m = j.at("melnikov");
        get(m, "N", c.mel_N);
        get(m, "L_audit", c.mel_L_audit);
        if (m.contains("tau_list") && !m.at("tau_list").is_null())
            c.mel_tau_list = m.at("tau_list").get<std::vector<double>>();
        get(m, "gammas", c.mel_gammas);
        get(m, "samples", c.mel_samples);
        get(m, "seed", c.mel_seed);
    }
    get(j, "interior_margin", c.interior_margin);
    get(j, "output_dir", c.output_dir);

    // cross-field validation, collecting everything
    if (!(c.delta > 0 && c.delta < 0.5)) errs.push_back("geometry.delta must lie in (0, 1/2)");
    if (c.momentum_rows.size() < 1 || c.momentum_rows.size() > 6)
        errs.push_back("momentum_rows must have 1..6 rows");
    else {
        try {
            MomentumMap m(c.momentum_rows);
        } catch (const std::exception& e) {
            errs.push_back(std::string("momentum_rows: ") + e.what());
        }
    }
    if (!(c.trunc.site_radius > 0)) errs.push_back("truncation.site_radius must be positive");
    if (!(c.trunc.fourier_radius > 0))
        errs.push_back("truncation.fourier_radius must be positive");
    if (!(c.gamma > 0)) errs.push_back("gamma must be positive");
    if (!(c.hp_p >= 0)) errs.push_back("hp_p must be >= 0");
    if (!(c.width_a > 0)) errs.push_back("potential.width_a must be positive");
    if (!(c.smoothness_p > c.momentum_rows.size() / 2.0))
        errs.push_back("potential.smoothness_p must exceed d/2");
    if (!(c.schedule.K0 > 0)) errs.push_back("schedule.K0 must be positive");
    if (!(c.schedule.tau > 0)) errs.push_back("schedule.tau must be positive");
    if (c.schedule.n_max < 0) errs.push_back("schedule.n_max must be >= 0");
    if (c.omega_mode != "explicit" && c.omega_mode != "lowdisc" && c.omega_mode != "grid")
        errs.push_back("omega.mode must be explicit | lowdisc | grid");
    if (c.omega_mode == "explicit") {
        for (const auto& w : c.omega_values) {
            if (static_cast<int>(w.size()) != c.dim())
                errs.push_back("omega.values entries must have dimension d");
            for (double x : w)
                if (!(x >= -1.0 && x <= 1.0)) {
                    errs.push_back("omega.values must lie in [-1,1]^d");
                    break;
                }
        }
    }
    if (c.mel_N < 2) errs.push_back("melnikov.N must be >= 2");
    if (c.mel_samples < 100) errs.push_back("melnikov.samples must be >= 100");
    if (c.mel_tau_list) {
        try {
            MelnikovConfig::make(c.mel_N, c.dim(), 1.0 - 2.0 * c.delta, c.gamma, c.mel_L_audit,
                                 1.0, c.mel_tau_list);
        } catch (const std::exception& e) {
            errs.push_back(std::string("melnikov.tau_list: ") + e.what());
        }
    }

    if (!errs.empty()) {
        std::ostringstream os;
        os << "invalid configuration (" << errs.size() << " problem(s)):";
        for (const std::string& e : errs) os << "\n  - " << e;
        throw ConfigError(os.str());
    }

    c.canonical_json = j.dump();
    c.hash = fnv1a64(c.canonical_json);
    return c;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
    return config_from_json(j);
}

inline std::string version_string() { return "qpkam 0.1.0"; }

inline std::string file_header(const RunConfig& cfg) {
    return "# " + version_string() + " config=" + hex64(cfg.hash) + "\n";
}

}  // namespace qpkam
