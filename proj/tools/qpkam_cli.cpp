// qpkam_cli — batch driver: configuration ingestion, run orchestration,
// persistence, and table emission. Every output embeds the config hash and
// the version string; identical config + seeds give byte-identical files.
//
// Exit codes: 0 success, 2 configuration error, 3 run aborts occurred
// (partial results written).

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "qpkam/config.hpp"

namespace fs = std::filesystem;
using namespace qpkam;

namespace {

struct Session {
    RunConfig cfg;
    std::shared_ptr<const MomentumMap> map;
    SiteTable sites;
    NormContext nctx;

    explicit Session(RunConfig c)
        : cfg(std::move(c)),
          map(cfg.momentum_map()),
          sites(cfg.geometry()),
          nctx{&sites, map->c(), cfg.hp_p} {
        fs::create_directories(cfg.output_dir);
    }

    std::ofstream open(const std::string& name) const {
        std::ofstream os(fs::path(cfg.output_dir) / name, std::ios::trunc);
        if (!os) throw std::runtime_error("cannot write " + name);
        os << file_header(cfg);
        return os;
    }
};

std::string csv(double v) { return dbl_str(v); }

int cmd_lattice(const Session& s) {
    const GeometryParams geom = s.sites.geom();
    {
        std::ofstream os = s.open("site_table.csv");
        os << "j1,j2,v1,v2,b,norm_j,traviata_applicable,traviata_pass\n";
        for (const Site& j : site_ball(s.cfg.trunc.site_radius)) {
            const SiteData& sd = s.sites.at(j);
            const TraviataReport rep = traviata_check(geom, j);
            os << j.x << "," << j.y << "," << sd.v.v.x << "," << sd.v.v.y << "," << sd.b << ","
               << csv(j.norm()) << "," << (rep.applicable() ? 1 : 0) << ","
               << (rep.applicable() ? (rep.passed() ? 1 : 0) : -1) << "\n";
        }
    }
    {
        std::ofstream os = s.open("lattice_sweep.txt");
        // cramer sweep: all admissible instances must satisfy the bound
        long long checked = 0, failures = 0;
        const double R = 3.0;
        const std::vector<Generator> gens = enumerate_generators(R - 1e-9);
        for (size_t a = 0; a < gens.size(); ++a)
            for (size_t b = a + 1; b < gens.size(); ++b)
                for (const Site& x : site_ball(20.0))
                    for (int A = 1; A <= 5; ++A) {
                        ++checked;
                        if (!cramer_bound_holds(gens[a], gens[b], x, A, R)) ++failures;
                    }
        os << "cramer instances checked " << checked << " failures " << failures << "\n";
        long long applicable = 0, passed = 0;
        for (const Site& j : site_ball(s.cfg.trunc.site_radius)) {
            const TraviataReport rep = traviata_check(geom, j);
            if (!rep.applicable()) continue;
            ++applicable;
            passed += rep.passed();
        }
        os << "traviata applicable " << applicable << " passed " << passed << "\n";
        if (failures > 0) return 3;
    }
    return 0;
}

void write_manifest(const Session& s, const ReductionResult& red,
                    const std::vector<double>& omega, int index) {
    nlohmann::json m;
    m["version"] = version_string();
    m["config_hash"] = hex64(s.cfg.hash);
    m["omega"] = omega;
    m["gamma"] = s.cfg.gamma;
    m["steps"] = red.steps;
    m["converged"] = red.converged;
    if (red.abort_reason) m["abort"] = *red.abort_reason;
    m["first_step_tail"] = red.first_step_tail;
    m["eps0"] = red.state.log.empty() ? 0.0 : red.state.log.front().p_norm_after / s.cfg.gamma;
    nlohmann::json steps = nlohmann::json::array();
    for (const StepLog& l : red.state.log) {
        nlohmann::json e;
        e["n"] = l.n;
        e["K"] = l.K;
        e["width"] = l.width;
        e["p_norm_before"] = l.p_norm_before;
        e["p_norm_after"] = l.p_norm_after;
        e["s_norm"] = l.s_norm;
        e["omega_shift"] = l.omega_shift;
        e["lie_tail"] = l.lie_tail;
        e["dropped_mass"] = l.dropped_mass;
        e["diag_imag_defect"] = l.diag_imag_defect;
        e["membership"] = l.membership;
        steps.push_back(e);
    }
    m["step_log"] = steps;
    {
        const TravelingWavePotential V = s.cfg.potential(*s.map);
        m["potential_hash"] = hex64(fnv1a64(potential_to_json(V).dump()));
        m["potential_norm"] = potential_norm(V);
    }
    std::ofstream os = s.open("manifest_" + std::to_string(index) + ".json");
    os << m.dump(2) << "\n";
}

void write_spectrum(const Session& s, const ReducedSpectrum& spec, int index) {
    std::ofstream os = s.open("spectrum_" + std::to_string(index) + ".csv");
    os << "j1,j2,v1,v2,b,Omega,a_vb,r1,r2,varpi,theta1,theta2\n";
    for (const Site& j : site_ball(s.cfg.trunc.site_radius)) {
        const SiteData& sd = s.sites.at(j);
        const auto vit = spec.varpi.find({sd.v, sd.b});
        const auto t1 = spec.theta1.find(j);
        const auto t2 = spec.theta2.find(j);
        os << j.x << "," << j.y << "," << sd.v.v.x << "," << sd.v.v.y << "," << sd.b << ","
           << csv(spec.omega(j, s.sites)) << "," << csv(spec.D.a_at(sd.v, sd.b)) << ","
           << csv(spec.D.r1_at(j)) << "," << csv(spec.D.r2_at(j)) << ","
           << csv(vit == spec.varpi.end() ? 0.0 : vit->second) << ","
           << csv(t1 == spec.theta1.end() ? 0.0 : t1->second) << ","
           << csv(t2 == spec.theta2.end() ? 0.0 : t2->second) << "\n";
    }
}

int cmd_reduce(const Session& s, std::vector<ReductionResult>* keep = nullptr) {
    const TravelingWavePotential V = s.cfg.potential(*s.map);
    FirstStepParams fsp;
    fsp.eps_star = s.cfg.eps_star;
    fsp.lie = s.cfg.lie;
    int aborts = 0, index = 0;
    for (const std::vector<double>& omega : s.cfg.omegas()) {
        ReductionResult red;
        try {
            red = run_reduction(V, omega, s.cfg.schedule, s.cfg.gamma, s.cfg.trunc, s.sites,
                                s.map, s.nctx, fsp);
        } catch (const HomologicalError& e) {
            red.abort_reason = e.what();
        }
        if (red.abort_reason) ++aborts;
        write_manifest(s, red, omega, index);
        write_spectrum(s, red.spectrum, index);
        if (keep) keep->push_back(red);
        ++index;
    }
    std::cout << index << " reduction(s), " << aborts << " abort(s)\n";
    return aborts > 0 ? 3 : 0;
}

int cmd_spectrum_compare(const Session& s) {
    const TravelingWavePotential V = s.cfg.potential(*s.map);
    FirstStepParams fsp;
    fsp.eps_star = s.cfg.eps_star;
    fsp.lie = s.cfg.lie;
    int aborts = 0, index = 0;
    std::ofstream summary = s.open("compare_summary.csv");
    summary << "omega_index,compared,ambiguous,max_mismatch\n";
    for (const std::vector<double>& omega : s.cfg.omegas()) {
        ReductionResult red;
        try {
            red = run_reduction(V, omega, s.cfg.schedule, s.cfg.gamma, s.cfg.trunc, s.sites,
                                s.map, s.nctx, fsp);
        } catch (const HomologicalError& e) {
            red.abort_reason = e.what();
        }
        if (red.abort_reason) {
            ++aborts;
            summary << index << ",0,0,nan\n";
            ++index;
            continue;
        }
        const auto oracle = spectrum_oracle(V, omega, s.cfg.trunc, *s.map);
        const SpectrumComparison cmp = compare_to_oracle(red.spectrum, oracle, omega, s.cfg.trunc,
                                                         s.sites, s.cfg.interior_margin);
        summary << index << "," << cmp.compared << "," << cmp.ambiguous << ","
                << csv(cmp.max_mismatch) << "\n";
        ++index;
    }
    return aborts > 0 ? 3 : 0;
}

int cmd_melnikov(const Session& s) {
    const TravelingWavePotential V = s.cfg.potential(*s.map);
    FirstStepParams fsp;
    fsp.eps_star = s.cfg.eps_star;
    fsp.lie = s.cfg.lie;
    std::ofstream os = s.open("melnikov_audit.csv");
    os << "omega_index,pass,worst_final_margin,levels_enumerated,failures\n";
    int aborts = 0, index = 0;
    for (const std::vector<double>& omega : s.cfg.omegas()) {
        ReductionResult red;
        try {
            red = run_reduction(V, omega, s.cfg.schedule, s.cfg.gamma, s.cfg.trunc, s.sites,
                                s.map, s.nctx, fsp);
        } catch (const HomologicalError& e) {
            red.abort_reason = e.what();
        }
        if (red.abort_reason) {
            ++aborts;
            os << index << ",-1,nan,0,0\n";
            ++index;
            continue;
        }
        const MelnikovConfig mc = s.cfg.melnikov(s.cfg.gamma);
        const AuditReport rep = check_C_star(red.spectrum, omega, mc, *s.map);
        long long enumerated = 0, failures = 0;
        for (const LevelStats& st : rep.levels) {
            enumerated += st.enumerated;
            failures += st.failures;
        }
        os << index << "," << (rep.pass ? 1 : 0) << "," << csv(rep.worst_final_margin) << ","
           << enumerated << "," << failures << "\n";
        ++index;
    }
    return aborts > 0 ? 3 : 0;
}

int cmd_measure(const Session& s) {
    const TravelingWavePotential V = s.cfg.potential(*s.map);
    FirstStepParams fsp;
    fsp.eps_star = s.cfg.eps_star;
    fsp.lie = s.cfg.lie;
    // frozen spectrum from the first configured omega
    const std::vector<std::vector<double>> oms = s.cfg.omegas();
    if (oms.empty()) throw ConfigError("measure: need at least one omega");
    ReductionResult red = run_reduction(V, oms.front(), s.cfg.schedule, s.cfg.gamma, s.cfg.trunc,
                                        s.sites, s.map, s.nctx, fsp);
    if (red.abort_reason) {
        std::cerr << "measure: reference reduction aborted: " << *red.abort_reason << "\n";
        return 3;
    }
    const MelnikovConfig mc = s.cfg.melnikov(s.cfg.gamma);
    const MeasureReport rep =
        measure_sweep(red.spectrum, mc, s.cfg.mel_gammas, s.cfg.mel_samples, s.cfg.mel_seed,
                      *s.map, s.sites, true, &s.cfg.trunc);
    {
        std::ofstream os = s.open("measure.csv");
        os << "gamma,samples,excluded_count,fraction,ci_low,ci_high\n";
        for (const MeasureRow& r : rep.rows)
            os << csv(r.gamma) << "," << r.samples << "," << r.excluded << "," << csv(r.fraction)
               << "," << csv(r.ci_low) << "," << csv(r.ci_high) << "\n";
    }
    {
        std::ofstream os = s.open("measure_witnesses.txt");
        os << "embedding_violations " << rep.embedding_violations << "\n";
        for (const std::string& w : rep.witnesses) os << w << "\n";
    }
    return 0;
}

int cmd_report(const Session& s) {
    std::ofstream os = s.open("report.txt");
    os << version_string() << " run report\n";
    for (const auto& entry : fs::directory_iterator(s.cfg.output_dir)) {
        const std::string name = entry.path().filename().string();
        if (name.rfind("manifest_", 0) != 0) continue;
        std::ifstream in(entry.path());
        std::string line;
        std::getline(in, line);  // header comment
        nlohmann::json m;
        try {
            in >> m;
        } catch (...) {
            continue;
        }
        os << name << ": steps=" << m.value("steps", -1)
           << " converged=" << m.value("converged", false);
        if (m.contains("abort")) os << " abort=" << m["abort"].get<std::string>();
        os << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"quasi-periodic Schrodinger reducibility engine"};
    app.require_subcommand(1);

    std::string config_path;
    std::string output_override;
    app.add_option("-c,--config", config_path, "run configuration (JSON)")->required();
    app.add_option("-o,--output-dir", output_override, "override output directory");

    auto* lattice = app.add_subcommand("lattice", "site tables and geometric-lemma sweeps");
    auto* reduce = app.add_subcommand("reduce", "run the reduction per omega");
    auto* compare = app.add_subcommand("spectrum-compare", "reduction vs dense quasi-energies");
    auto* melnikov = app.add_subcommand("melnikov", "Melnikov audit per omega");
    auto* measure = app.add_subcommand("measure", "resonance measure sweep over gamma");
    auto* report = app.add_subcommand("report", "summarize manifests in the output directory");

    CLI11_PARSE(app, argc, argv);

    try {
        RunConfig cfg = load_config(config_path);
        if (!output_override.empty()) cfg.output_dir = output_override;
        Session s(std::move(cfg));
        if (lattice->parsed()) return cmd_lattice(s);
        if (reduce->parsed()) return cmd_reduce(s);
        if (compare->parsed()) return cmd_spectrum_compare(s);
        if (melnikov->parsed()) return cmd_melnikov(s);
        if (measure->parsed()) return cmd_measure(s);
        if (report->parsed()) return cmd_report(s);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
