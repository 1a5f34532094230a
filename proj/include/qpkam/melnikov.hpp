// melnikov.hpp — Melnikov-condition auditing up to order N and measure
// estimation of the non-resonant frequency set.
//
// Audited expressions: d = w.l + K + sum_h eta_{1h} a(v_h, b_h)
//                                 + sum_k eta_{2k} R(j_k),  R = r1 + r2,
// drawn from the finite tables of a reduced spectrum. The audit follows the
// inductive structure: a tuple with n nonzero signs must clear the level-n
// threshold (O0-type at level 0, gamma <l>^{-tau_n} afterwards). Enumeration
// is exact branch-and-bound over the signed table terms: a branch is closed
// as soon as the remaining slots cannot bridge the margin, which is the
// numerical form of the large-|v|/|b|/|j| automatic pass.

#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "kam.hpp"

namespace qpkam {

// ------------------------------------------------------------------ config

struct MelnikovConfig {
    int N{3};
    double gamma{1e-3};
    std::vector<double> tau_list;  // tau_0 .. tau_{2N}
    double L_audit{8.0};
    double c_aprime{0.125};        // c a' in the Case II window |v| < |l| / (c a')

    // tau_{n+1} > (5/2 + 2/mu) N tau_n + d + 1
    static std::vector<double> recursive_taus(int N, int d, double mu) {
        std::vector<double> taus{static_cast<double>(d + 1)};
        const double factor = (2.5 + 2.0 / mu) * N;
        for (int n = 0; n < 2 * N; ++n)
            taus.push_back(std::floor(factor * taus.back() + d + 1) + 1.0);
        return taus;
    }

    static MelnikovConfig make(int N, int d, double mu, double gamma, double L_audit,
                               double c_aprime,
                               std::optional<std::vector<double>> taus = std::nullopt) {
        if (N < 2) throw std::invalid_argument("MelnikovConfig: N >= 2 required");
        MelnikovConfig cfg;
        cfg.N = N;
        cfg.gamma = gamma;
        cfg.L_audit = L_audit;
        cfg.c_aprime = c_aprime;
        cfg.tau_list = taus ? *taus : recursive_taus(N, d, mu);
        if (static_cast<int>(cfg.tau_list.size()) != 2 * N + 1)
            throw std::invalid_argument("MelnikovConfig: need tau_0..tau_{2N}");
        if (std::abs(cfg.tau_list[0] - (d + 1)) > 1e-9)
            throw std::invalid_argument("MelnikovConfig: tau_0 must equal d + 1");
        const double factor = (2.5 + 2.0 / mu) * N;
        for (int n = 0; n < 2 * N; ++n) {
            if (!(cfg.tau_list[static_cast<size_t>(n + 1)] >
                  factor * cfg.tau_list[static_cast<size_t>(n)] + d + 1))
                throw std::invalid_argument(
                    "MelnikovConfig: tau recursion violated at level " + std::to_string(n + 1));
        }
        return cfg;
    }
};

// ------------------------------------------------------------------- tuples

struct MelnikovTuple {
    Fourier ell;
    long long Kint{0};
    std::vector<Generator> v_list;
    std::vector<long long> b_list;
    std::vector<int> eta1;         // signs for the a-terms
    std::vector<Site> j_list;
    std::vector<int> eta2;         // signs for the R-terms

    int active() const noexcept {
        int n = 0;
        for (int e : eta1) n += (e != 0);
        for (int e : eta2) n += (e != 0);
        return n;
    }
};

struct MelnikovValue {
    double value{0.0};
    int missing_terms{0};  // referenced table entries that read as zero
};

inline MelnikovValue melnikov_value(const ReducedSpectrum& spec, const std::vector<double>& omega,
                                    const MelnikovTuple& t) {
    MelnikovValue out;
    double s = static_cast<double>(t.Kint);
    for (int i = 0; i < t.ell.dim(); ++i) s += omega[static_cast<size_t>(i)] * t.ell[i];
    for (size_t h = 0; h < t.v_list.size(); ++h) {
        if (t.eta1[h] == 0) continue;
        auto it = spec.D.a_symbol.find({t.v_list[h], t.b_list[h]});
        if (it == spec.D.a_symbol.end())
            ++out.missing_terms;
        else
            s += t.eta1[h] * it->second;
    }
    for (size_t k = 0; k < t.j_list.size(); ++k) {
        if (t.eta2[k] == 0) continue;
        const bool have = spec.D.r1.count(t.j_list[k]) || spec.D.r2.count(t.j_list[k]);
        if (!have)
            ++out.missing_terms;
        else
            s += t.eta2[k] * (spec.D.r1_at(t.j_list[k]) + spec.D.r2_at(t.j_list[k]));
    }
    out.value = s;
    return out;
}

// Builds the tuple realizing w.l + Omega.L for an integer-coefficient
// combination L with |L| <= N, under the momentum and gauge constraints.
inline MelnikovTuple tuple_from_GN(const Fourier& ell, const std::map<Site, long long>& L,
                                   const GeometryParams& geom, const MomentumMap& map, int N) {
    long long total = 0, lsum = 0;
    Site msum{0, 0};
    long long K = 0;
    for (const auto& [j, Lj] : L) {
        total += std::llabs(Lj);
        lsum += Lj;
        msum.x += static_cast<int>(Lj) * j.x;
        msum.y += static_cast<int>(Lj) * j.y;
        K += Lj * j.norm2();
    }
    if (total > N)
        throw std::invalid_argument("tuple_from_GN: |L| = " + std::to_string(total) +
                                    " exceeds N = " + std::to_string(N));
    if (ell.component_sum() + lsum != 0)
        throw std::invalid_argument("tuple_from_GN: gauge constraint sum l_i + sum L_j != 0");
    if (map.momentum(ell) + msum != Site{0, 0})
        throw std::invalid_argument("tuple_from_GN: momentum constraint pi(l) + sum j L_j != 0");
    if (ell.is_zero() && K == 0)
        throw std::invalid_argument("tuple_from_GN: l = 0 requires sum |j|^2 L_j != 0");

    MelnikovTuple t;
    t.ell = ell;
    t.Kint = K;
    for (const auto& [j, Lj] : L) {
        if (Lj == 0) continue;
        const SiteData sd = site_data(geom, j);
        const int sign = Lj > 0 ? 1 : -1;
        for (long long r = 0; r < std::llabs(Lj); ++r) {
            t.v_list.push_back(sd.v);
            t.b_list.push_back(sd.b);
            t.eta1.push_back(sign);
            t.j_list.push_back(j);
            t.eta2.push_back(sign);
        }
    }
    return t;
}

// ----------------------------------------------------------------- the audit

struct SignedTerm {
    double value{0.0};
    bool is_a{false};
    Generator v;
    long long b{0};
    Site j;
    double vnorm{0.0};
    double babs{0.0};
    double jbracket{0.0};
    std::string str() const {
        if (is_a) return "a(" + v.str() + "," + std::to_string(b) + ")=" + dbl_str(value);
        return "R(" + j.str() + ")=" + dbl_str(value);
    }
};

inline std::vector<SignedTerm> audit_terms(const ReducedSpectrum& spec) {
    std::vector<SignedTerm> terms;
    for (const auto& [vb, x] : spec.D.a_symbol) {
        if (x == 0.0) continue;
        SignedTerm t;
        t.value = x;
        t.is_a = true;
        t.v = vb.first;
        t.b = vb.second;
        t.vnorm = vb.first.norm();
        t.babs = std::abs(static_cast<double>(vb.second));
        terms.push_back(t);
    }
    std::map<Site, double> R;
    for (const auto& [j, x] : spec.D.r1) R[j] += x;
    for (const auto& [j, x] : spec.D.r2) R[j] += x;
    for (const auto& [j, x] : R) {
        if (x == 0.0) continue;
        SignedTerm t;
        t.value = x;
        t.is_a = false;
        t.j = j;
        t.jbracket = j.bracket();
        terms.push_back(t);
    }
    std::sort(terms.begin(), terms.end(), [](const SignedTerm& a, const SignedTerm& b) {
        return std::abs(a.value) > std::abs(b.value);
    });
    return terms;
}

struct LevelStats {
    long long bases{0};
    long long pruned_at_root{0};  // margin already covers n worst terms
    long long enumerated{0};
    long long failures{0};
};

struct AuditFailure {
    int level{0};
    Fourier ell;
    long long K{0};
    double value{0.0};
    double threshold{0.0};
    std::string terms;
};

struct AuditReport {
    bool pass{true};
    std::vector<LevelStats> levels;                 // index = number of active terms
    std::vector<AuditFailure> failures;
    double worst_final_margin{std::numeric_limits<double>::infinity()};  // |d|/thr at tau_{2N}
    long long case2_terms{0};                        // in-window terms at the top level
    long long case1_terms{0};
    std::string summary() const {
        std::ostringstream os;
        os << (pass ? "pass" : "FAIL") << " worst final margin " << worst_final_margin;
        for (size_t n = 0; n < levels.size(); ++n)
            os << " | L" << n << " bases=" << levels[n].bases << " enum=" << levels[n].enumerated
               << " fail=" << levels[n].failures;
        return os.str();
    }
};

namespace detail {

// depth-first over multisets of signed terms; sound pruning by remaining reach
inline void audit_recurse(const std::vector<SignedTerm>& terms, size_t start, int slots,
                          double partial, double thr, const Fourier& ell, long long K, int level,
                          LevelStats& stats, std::vector<AuditFailure>& failures,
                          std::vector<const SignedTerm*>& chosen, bool& pass,
                          double& worst_ratio) {
    if (slots == 0) {
        const double v = std::abs(partial);
        worst_ratio = std::min(worst_ratio, thr > 0 ? v / thr : std::numeric_limits<double>::infinity());
        if (v < thr) {
            pass = false;
            ++stats.failures;
            if (failures.size() < 64) {
                AuditFailure f;
                f.level = level;
                f.ell = ell;
                f.K = K;
                f.value = partial;
                f.threshold = thr;
                for (const SignedTerm* t : chosen) f.terms += t->str() + " ";
                failures.push_back(f);
            }
        }
        return;
    }
    if (start >= terms.size()) return;
    const double reach = static_cast<double>(slots) * std::abs(terms[start].value);
    if (std::abs(partial) - reach >= thr) return;  // cannot re-enter the gap
    for (size_t i = start; i < terms.size(); ++i) {
        const double mag = std::abs(terms[i].value);
        if (std::abs(partial) - static_cast<double>(slots) * mag >= thr) return;  // sorted
        ++stats.enumerated;
        chosen.push_back(&terms[i]);
        audit_recurse(terms, i, slots - 1, partial + terms[i].value, thr, ell, K, level, stats,
                      failures, chosen, pass, worst_ratio);
        audit_recurse(terms, i, slots - 1, partial - terms[i].value, thr, ell, K, level, stats,
                      failures, chosen, pass, worst_ratio);
        chosen.pop_back();
    }
}

}  // namespace detail

// Audits every level n = 0 .. 2N over 0 < |l| <= L_audit, |K| <= 2|l| (plus
// the l = 0, K != 0 bases and a spot band |K| in (2|l|, 2|l| + 3]).
// Level 0 is the Diophantine gate |w.l + K| >= 2 gamma |l|^{-tau_0}; level n
// uses gamma <l>^{-tau_n}.
inline AuditReport check_C_star(const ReducedSpectrum& spec, const std::vector<double>& omega,
                                const MelnikovConfig& cfg, const MomentumMap& map) {
    AuditReport rep;
    rep.levels.assign(static_cast<size_t>(2 * cfg.N + 1), LevelStats{});
    const std::vector<SignedTerm> terms = audit_terms(spec);

    // Case I / II classification at the top level, for reporting
    for (const SignedTerm& t : terms) {
        const double lmin = 1.0;
        const bool in_window =
            t.is_a ? (t.vnorm < lmin / cfg.c_aprime)  // windows only widen with |l|
                   : true;
        (in_window ? rep.case2_terms : rep.case1_terms) += 1;
    }

    auto omega_dot = [&](const Fourier& l) {
        double s = 0.0;
        for (int i = 0; i < l.dim(); ++i) s += omega[static_cast<size_t>(i)] * l[i];
        return s;
    };

    std::vector<const SignedTerm*> chosen;
    auto run_levels = [&](const Fourier& ell, long long K) {
        const double wl = omega_dot(ell);
        const double base = wl + static_cast<double>(K);
        const double lb = ell.bracket();
        for (int n = 0; n <= 2 * cfg.N; ++n) {
            LevelStats& st = rep.levels[static_cast<size_t>(n)];
            ++st.bases;
            double thr;
            if (n == 0) {
                if (ell.is_zero()) continue;  // (l,K) != (0,0) handled by K != 0
                thr = 2.0 * cfg.gamma * std::pow(ell.norm(), -cfg.tau_list[0]);
            } else {
                thr = cfg.gamma * std::pow(lb, -cfg.tau_list[static_cast<size_t>(n)]);
            }
            if (n == 0) {
                rep.worst_final_margin = std::min(
                    rep.worst_final_margin,
                    thr > 0 ? std::abs(base) / thr : std::numeric_limits<double>::infinity());
                if (std::abs(base) < thr) {
                    rep.pass = false;
                    ++st.failures;
                    if (rep.failures.size() < 64)
                        rep.failures.push_back(
                            {0, ell, K, base, thr, ""});
                }
                continue;
            }
            const double worst_term = terms.empty() ? 0.0 : std::abs(terms[0].value);
            if (std::abs(base) - n * worst_term >= thr) {
                ++st.pruned_at_root;
                continue;
            }
            double ratio = std::numeric_limits<double>::infinity();
            detail::audit_recurse(terms, 0, n, base, thr, ell, K, n, st, rep.failures, chosen,
                                  rep.pass, ratio);
        }
    };

    for (const Fourier& ell : fourier_ball(map.dim(), cfg.L_audit)) {
        if (ell.is_zero()) {
            for (long long K = -4; K <= 4; ++K)
                if (K != 0) run_levels(ell, K);
            continue;
        }
        const long long Kmax = static_cast<long long>(std::ceil(2.0 * ell.norm()));
        for (long long K = -Kmax; K <= Kmax; ++K) run_levels(ell, K);
        // discarded band |K| > 2|l|: the paper bounds |d| >= 1/2 there
        for (long long K : {Kmax + 1, Kmax + 2, Kmax + 3}) {
            for (const long long sK : {K, -K}) {
                const double v = omega_dot(ell) + static_cast<double>(sK);
                const double slack =
                    terms.empty() ? 0.0 : 2.0 * cfg.N * std::abs(terms[0].value);
                if (std::abs(v) - slack < 0.5) {
                    rep.pass = false;
                    rep.failures.push_back({-1, ell, sK, v, 0.5, "discarded-band"});
                }
            }
        }
    }
    return rep;
}

// Case I numeric form: every out-of-window term is small enough that
// dropping it costs at most the level-threshold gap. Returns the worst slack
// (>= 0 means the automatic pass is justified numerically).
inline double case1_margin_slack(const ReducedSpectrum& spec, const MelnikovConfig& cfg) {
    const std::vector<SignedTerm> terms = audit_terms(spec);
    double worst = std::numeric_limits<double>::infinity();
    for (int n = 1; n <= 2 * cfg.N; ++n) {
        const double tau_prev = cfg.tau_list[static_cast<size_t>(n - 1)];
        for (double ln = std::max(2.0, cfg.c_aprime); ln <= cfg.L_audit; ln += 1.0) {
            const double lb = std::sqrt(1.0 + ln * ln);
            const double gap =
                cfg.gamma * (std::pow(lb, -tau_prev) - std::pow(lb, -tau_prev - 1.0));
            for (const SignedTerm& t : terms) {
                const bool out_window =
                    t.is_a ? (cfg.c_aprime * t.vnorm >= ln || t.babs >= std::pow(ln, tau_prev / 2.0))
                           : (t.jbracket >= std::pow(ln, tau_prev / spec.mu));
                if (!out_window) continue;
                worst = std::min(worst, gap - std::abs(t.value));
            }
        }
    }
    return worst;
}

// -------------------------------------------------------------- measure sweep

struct MeasureRow {
    double gamma{0.0};
    int samples{0};
    int excluded{0};
    double fraction{0.0};
    double ci_low{0.0};
    double ci_high{0.0};
};

struct MeasureReport {
    std::vector<MeasureRow> rows;
    std::vector<std::string> witnesses;       // worst tuple per failed omega (capped)
    int embedding_violations{0};              // N=2 audit passes but C1/C2 window fails
};

namespace detail {

inline void wilson_interval(int k, int n, double& lo, double& hi) {
    if (n == 0) {
        lo = hi = 0.0;
        return;
    }
    const double z = 1.96, p = static_cast<double>(k) / n;
    const double den = 1.0 + z * z / n;
    const double center = (p + z * z / (2.0 * n)) / den;
    const double half = z * std::sqrt(p * (1.0 - p) / n + z * z / (4.0 * n * n)) / den;
    lo = std::max(0.0, center - half);
    hi = std::min(1.0, center + half);
}

}  // namespace detail

// Frozen-spectrum sweep: the tables are fixed, omega runs over a
// low-discrepancy sample of [-1,1]^d, the audit runs per gamma.
inline MeasureReport measure_sweep(const ReducedSpectrum& spec, const MelnikovConfig& cfg,
                                   const std::vector<double>& gammas, int samples, uint64_t seed,
                                   const MomentumMap& map, const SiteTable& sites,
                                   bool check_embedding = false,
                                   const TruncationBox* trunc = nullptr) {
    if (samples < 100) throw std::invalid_argument("measure_sweep: need samples >= 100");
    MeasureReport out;
    std::vector<std::vector<double>> omegas;
    Halton halton(map.dim(), seed);
    for (int s = 0; s < samples; ++s) {
        std::vector<double> w = halton.next();
        for (double& x : w) x = 2.0 * x - 1.0;
        omegas.push_back(std::move(w));
    }

    for (double g : gammas) {
        MelnikovConfig c = cfg;
        c.gamma = g;
        MeasureRow row;
        row.gamma = g;
        row.samples = samples;
        if (g > 0) {
            for (const std::vector<double>& w : omegas) {
                const AuditReport rep = check_C_star(spec, w, c, map);
                if (!rep.pass) {
                    ++row.excluded;
                    if (out.witnesses.size() < 100 && !rep.failures.empty()) {
                        const AuditFailure& f = rep.failures.front();
                        out.witnesses.push_back(
                            "gamma=" + dbl_str(g) + " level=" + std::to_string(f.level) +
                            " l=" + f.ell.str() + " K=" + std::to_string(f.K) +
                            " value=" + dbl_str(f.value) + " " + f.terms);
                    }
                }
            }
        }
        row.fraction = static_cast<double>(row.excluded) / samples;
        detail::wilson_interval(row.excluded, samples, row.ci_low, row.ci_high);
        out.rows.push_back(row);
    }

    // containment of the N=2 audit in the engine-facing C1/C2 windows
    if (check_embedding && trunc != nullptr) {
        MelnikovConfig c2 = MelnikovConfig::make(2, map.dim(), sites.geom().mu, cfg.gamma,
                                                 cfg.L_audit, cfg.c_aprime);
        const double tau_top = c2.tau_list.back();
        for (const std::vector<double>& w : omegas) {
            const AuditReport rep = check_C_star(spec, w, c2, map);
            if (!rep.pass) continue;
            DivisorContext ctx{w, cfg.gamma, tau_top, cfg.L_audit};
            const MembershipReport mem =
                resonance_membership(spec.D, ctx, map, sites, *trunc, 2.0, 1.0, 1.0);
            if (!mem.C1.pass || !mem.C2.pass) ++out.embedding_violations;
        }
    }
    return out;
}

}  // namespace qpkam
