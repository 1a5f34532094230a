// kam.hpp — the KAM step, the full reduction loop with its schedules, the
// asymptotic repackaging of the reduced frequencies, and the independent
// quasi-energy spectral oracle.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "homological.hpp"

namespace qpkam {

// -------------------------------------------------------------------- schedule

struct KamSchedule {
    double a0{0.25};   // initial width (= a/4 from the first step)
    double K0{4.0};
    double eps0{0.0};  // measured at run time: gamma^{-1} |P0|
    double tau{1.0};
    int n_max{6};
    double stop_floor_factor{1e-13};  // stop when |P_n| < factor * gamma

    double width(int n) const {
        // a_n = a0 (1 - sum_{k=0}^{n-1} 2^{-k-2}), a_infty = a0 / 2
        double s = 0.0;
        for (int k = 0; k < n; ++k) s += std::pow(2.0, -k - 2);
        return a0 * (1.0 - s);
    }
    double cutoff(int n) const { return K0 * std::pow(4.0, n); }
    double eps(int n) const { return eps0 * std::exp(-std::pow(1.5, n) + 1.0); }
};

struct StepLog {
    int n{0};
    double K{0};
    double width{0};
    double p_norm_before{0};
    double p_norm_after{0};
    double s_norm{0};
    double omega_shift{0};   // |Omega~ - Omega~+| bound (norm of the absorbed diagonal)
    double lie_tail{0};
    double dropped_mass{0};
    double diag_imag_defect{0};
    std::string membership;
};

struct KamAbort : std::runtime_error {
    int step;
    explicit KamAbort(int n, const std::string& what)
        : std::runtime_error("KAM step " + std::to_string(n) + ": " + what), step(n) {}
};

struct KamState {
    int n{0};
    DiagonalData D;
    QuasiToeplitzOperator P;
    std::vector<QuasiToeplitzOperator> transforms;  // S0, S1, ...
    std::vector<double> omega;
    std::vector<StepLog> log;
};

// ------------------------------------------------------------------- KAM step

// One conjugation of D + P by e^S with S = -(homological solution):
//   P+ = Pi_{>K} P + [P,S] + sum_{h>=2} (ad S)^{h-1}([P,S] - Pi_band P)/h!
//   D+ = D + diag((Pi_{l=0} P)_j)
inline KamState kam_step(const KamState& state, const KamSchedule& schedule, double gamma,
                         const SiteTable& sites, const NormContext& nctx,
                         const LieParams& lie_prm = {}) {
    const int n = state.n;
    const double K = std::min(schedule.cutoff(n), state.P.trunc().fourier_radius);
    const double a_now = state.P.width();
    const double a_next = schedule.width(n + 1) * (a_now / schedule.width(n));

    StepLog log;
    log.n = n + 1;
    log.K = K;
    log.width = a_next;
    log.p_norm_before = qt_norm(state.P, nctx);

    // smallness gates
    const QuasiToeplitzOperator tilde =
        diagonal_as_qt(state.D, a_now, state.P.map_ptr(), state.P.trunc(), sites);
    const double tilde_norm = qt_norm(tilde, nctx);
    if (16.0 * tilde_norm > gamma)
        throw KamAbort(n + 1, "smallness violated: 16 |Omega~| = " + dbl_str(16.0 * tilde_norm) +
                                  " > gamma = " + dbl_str(gamma));
    if (16.0 * log.p_norm_before > gamma * std::pow(K, -3.0 * schedule.tau - 1.0))
        throw KamAbort(n + 1, "smallness violated: 16 |P| = " +
                                  dbl_str(16.0 * log.p_norm_before) + " > gamma K^{-3tau-1} = " +
                                  dbl_str(gamma * std::pow(K, -3.0 * schedule.tau - 1.0)));

    DivisorContext ctx{state.omega, gamma, schedule.tau, K};
    const MembershipReport mem =
        resonance_membership(state.D, ctx, state.P.map(), sites, state.P.trunc());
    log.membership = mem.summary();
    if (!mem.pass()) throw KamAbort(n + 1, "membership failure: " + mem.summary());

    // S solves -i S' + [D, S] = -Pi_band P
    QuasiToeplitzOperator S = solve_homological(state.D, ctx, state.P, sites, nctx);
    S *= Complex{-1.0, 0.0};
    log.s_norm = qt_norm(S, nctx);

    const QuasiToeplitzOperator Pband = qt_project_band(state.P, K);

    QtProductResult PS = qt_commutator(state.P, S, a_next, sites);
    double dropped = PS.dropped_mass;

    // P+ accumulator
    QuasiToeplitzOperator Pplus = qt_project_high(state.P, K);
    Pplus.set_width(a_next);
    {
        QuasiToeplitzOperator t = PS.op;
        Pplus += t;
    }
    // tail: sum_{k>=1} (ad S)^k C / (k+1)!,  C = [P,S] - Pi_band P
    {
        QuasiToeplitzOperator C = PS.op;
        {
            QuasiToeplitzOperator pb = Pband;
            pb.set_width(a_next);
            C -= pb;
        }
        QuasiToeplitzOperator term = C;
        const double base = std::max(qt_norm(C, nctx), 1e-300);
        std::vector<double> fact{1.0, 1.0};
        for (int k = 2; k <= lie_prm.max_terms + 1; ++k) fact.push_back(fact.back() * k);
        for (int k = 1; k <= lie_prm.max_terms; ++k) {
            QtProductResult c = qt_commutator(term, S, a_next, sites);
            dropped += c.dropped_mass;
            term = std::move(c.op);
            const double coeff = 1.0 / fact[static_cast<size_t>(k + 1)];
            QuasiToeplitzOperator scaled = term;
            scaled *= Complex{coeff, 0.0};
            Pplus += scaled;
            const double tn = qt_norm(term, nctx) * coeff;
            if (tn <= lie_prm.tail_tol * base) {
                log.lie_tail = tn;
                break;
            }
            if (k == lie_prm.max_terms) log.lie_tail = tn;
        }
    }

    // absorb the time average into the diagonal
    KamState next;
    next.n = n + 1;
    next.omega = state.omega;
    next.transforms = state.transforms;
    next.transforms.push_back(S);
    next.D = state.D;
    {
        const QuasiToeplitzOperator avg = qt_time_average(state.P);
        const DiagonalDecomposition dec = diagonal_decompose(avg, sites);
        log.diag_imag_defect = dec.imag_defect;
        log.omega_shift = qt_norm(avg, nctx);
        for (const auto& [vb, x] : dec.data.a_symbol) next.D.a_symbol[vb] += x;
        for (const auto& [j, x] : dec.data.r1) next.D.r1[j] += x;
        for (const auto& [j, x] : dec.data.r2) next.D.r2[j] += x;
    }
    // drop the absorbed average from P+ (it came in through Pi_{>K}? no:
    // the average sits in neither Pi_{>K} nor the commutator series input,
    // so nothing to remove; P+ keeps only its own new average)
    Pplus.prune();
    log.p_norm_after = qt_norm(Pplus, nctx);
    log.dropped_mass = dropped;
    next.P = std::move(Pplus);
    next.log = state.log;
    next.log.push_back(log);
    return next;
}

// ------------------------------------------------------------ reduced spectrum

struct ReducedSpectrum {
    DiagonalData D;
    double kappa{0.0};
    double c{1.0};     // momentum-map constant, fixes the decay rate kappa = a' c
    double mu{0.4};

    std::map<std::pair<Generator, long long>, double> varpi;  // a <b>^2 e^{kappa |v|}
    std::map<Site, double> theta1;                            // r1 <b(j)> <j>^mu
    std::map<Site, double> theta2;                            // r2 <j>^{2mu}

    double omega(const Site& j, const SiteTable& sites) const { return D.omega(j, sites); }

    // Reconstruction through the expansion; exact inverse of the repackaging.
    double omega_from_expansion(const Site& j, const SiteTable& sites) const {
        const SiteData& sd = sites.at(j);
        double val = static_cast<double>(j.norm2());
        auto it = varpi.find({sd.v, sd.b});
        if (it != varpi.end())
            val += it->second * std::exp(-kappa * sd.v.norm()) /
                   (sd.b_bracket() * sd.b_bracket());
        auto i1 = theta1.find(j);
        if (i1 != theta1.end())
            val += i1->second / (sd.b_bracket() * std::pow(j.bracket(), mu));
        auto i2 = theta2.find(j);
        if (i2 != theta2.end()) val += i2->second / std::pow(j.bracket(), 2.0 * mu);
        return val;
    }
};

inline ReducedSpectrum repackage_spectrum(const DiagonalData& D, double width_a_final, double c,
                                          const GeometryParams& geom) {
    ReducedSpectrum spec;
    spec.D = D;
    spec.c = c;
    spec.mu = geom.mu;
    spec.kappa = width_a_final * c;  // a' c with a' the final half width
    for (const auto& [vb, x] : D.a_symbol) {
        const double bb = std::sqrt(1.0 + static_cast<double>(vb.second) * vb.second);
        spec.varpi[vb] = x * bb * bb * std::exp(spec.kappa * vb.first.norm());
    }
    for (const auto& [j, x] : D.r1) {
        const SiteData sd = site_data(geom, j);
        spec.theta1[j] = x * sd.b_bracket() * std::pow(j.bracket(), geom.mu);
    }
    for (const auto& [j, x] : D.r2)
        spec.theta2[j] = x * std::pow(j.bracket(), 2.0 * geom.mu);
    return spec;
}

// ---------------------------------------------------------------- full reduction

struct ReductionResult {
    ReducedSpectrum spectrum;
    KamState state;
    bool converged{false};
    int steps{0};
    std::optional<std::string> abort_reason;
    double first_step_tail{0.0};
};

// First step then KAM iterations until the floor, an abort, or n_max.
inline ReductionResult run_reduction(const TravelingWavePotential& V,
                                     const std::vector<double>& omega,
                                     const KamSchedule& schedule_in, double gamma,
                                     const TruncationBox& trunc, const SiteTable& sites,
                                     std::shared_ptr<const MomentumMap> map,
                                     const NormContext& nctx, const FirstStepParams& fsp = {}) {
    ReductionResult out;
    KamSchedule schedule = schedule_in;
    KamState state;
    state.omega = omega;
    state.D.site_radius = trunc.site_radius;

    if (V.empty()) {
        // trivial limit: already diagonal, zero steps
        out.state = state;
        out.state.P = QuasiToeplitzOperator(2, schedule.a0, map, trunc);
        out.spectrum = repackage_spectrum(state.D, V.width_a() / 8.0, map->c(), sites.geom());
        out.converged = true;
        return out;
    }

    DivisorContext ctx{omega, gamma, schedule.tau, schedule.K0};
    FirstStepResult first = first_step_solver(V, ctx, trunc, sites, map, nctx, fsp);
    out.first_step_tail = first.lie_tail;
    state.P = first.P0;
    state.transforms.push_back(first.S0);
    schedule.a0 = first.P0.width();
    schedule.eps0 = qt_norm(state.P, nctx) / gamma;

    StepLog l0;
    l0.n = 0;
    l0.width = state.P.width();
    l0.p_norm_after = schedule.eps0 * gamma;
    l0.lie_tail = first.lie_tail;
    l0.dropped_mass = first.dropped_mass;
    state.log.push_back(l0);

    while (state.n < schedule.n_max) {
        const double pn = qt_norm(state.P, nctx);
        if (pn < schedule.stop_floor_factor * gamma) break;
        try {
            state = kam_step(state, schedule, gamma, sites, nctx);
        } catch (const KamAbort& e) {
            out.abort_reason = e.what();
            break;
        }
    }
    out.steps = state.n;
    out.converged = !out.abort_reason &&
                    (qt_norm(state.P, nctx) < schedule.stop_floor_factor * gamma ||
                     state.n == schedule.n_max);
    out.spectrum = repackage_spectrum(state.D, V.width_a() / 8.0, map->c(), sites.geom());
    out.state = std::move(state);
    return out;
}

// ------------------------------------------------------------- spectral oracle

// The finite quasi-energy matrix H_{(l,j),(l',j')} = (w.l + |j|^2) delta +
// V(l-l') [j-j' = pi(l-l')] decouples over the invariants (j - pi(l), sum l_i);
// each class is solved densely. Eigenvalues are labeled by the basis pair
// whose unperturbed energy has the same rank within the block.
struct QuasiEnergyLevel {
    Fourier ell;
    Site j;
    double eigenvalue;
    double unperturbed;
    int block;
};

inline std::vector<QuasiEnergyLevel> spectrum_oracle(const TravelingWavePotential& V,
                                                     const std::vector<double>& omega,
                                                     const TruncationBox& trunc,
                                                     const MomentumMap& map,
                                                     size_t max_block = 4000) {
    struct BlockKey {
        Site c;
        int s;
        bool operator<(const BlockKey& o) const {
            if (c != o.c) return c < o.c;
            return s < o.s;
        }
    };
    std::map<BlockKey, std::vector<std::pair<Fourier, Site>>> blocks;
    for (const Fourier& ell : fourier_ball(map.dim(), trunc.fourier_radius)) {
        const Site shift = map.momentum(ell);
        for (const Site& j : site_ball(trunc.site_radius))
            blocks[BlockKey{j - shift, ell.component_sum()}].push_back({ell, j});
    }

    auto omega_dot = [&](const Fourier& l) {
        double s = 0.0;
        for (int i = 0; i < l.dim(); ++i) s += omega[static_cast<size_t>(i)] * l[i];
        return s;
    };

    std::vector<QuasiEnergyLevel> out;
    int block_id = 0;
    for (const auto& [key, basis] : blocks) {
        const size_t nb = basis.size();
        if (nb > max_block)
            throw std::runtime_error("spectrum_oracle: block size " + std::to_string(nb) +
                                     " exceeds dense-solve limit " + std::to_string(max_block));
        Eigen::MatrixXcd H = Eigen::MatrixXcd::Zero(static_cast<Eigen::Index>(nb),
                                                    static_cast<Eigen::Index>(nb));
        Eigen::VectorXd diag(static_cast<Eigen::Index>(nb));
        for (size_t r = 0; r < nb; ++r) {
            diag[static_cast<Eigen::Index>(r)] =
                omega_dot(basis[r].first) + static_cast<double>(basis[r].second.norm2());
            H(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(r)) =
                diag[static_cast<Eigen::Index>(r)];
            for (size_t q = 0; q < nb; ++q) {
                if (q == r) continue;
                const Fourier dl = basis[r].first - basis[q].first;
                const Complex v = V.at(dl);
                if (v != Complex{} && basis[r].second - basis[q].second == map.momentum(dl))
                    H(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(q)) = v;
            }
        }
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> solver(H);
        if (solver.info() != Eigen::Success)
            throw std::runtime_error("spectrum_oracle: eigensolver failed");

        // pair sorted eigenvalues with basis states sorted by unperturbed energy
        std::vector<size_t> order(nb);
        for (size_t r = 0; r < nb; ++r) order[r] = r;
        std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
            return diag[static_cast<Eigen::Index>(a)] < diag[static_cast<Eigen::Index>(b)];
        });
        for (size_t r = 0; r < nb; ++r) {
            QuasiEnergyLevel lvl;
            lvl.ell = basis[order[r]].first;
            lvl.j = basis[order[r]].second;
            lvl.eigenvalue = solver.eigenvalues()[static_cast<Eigen::Index>(r)];
            lvl.unperturbed = diag[static_cast<Eigen::Index>(order[r])];
            lvl.block = block_id;
            out.push_back(lvl);
        }
        ++block_id;
    }
    return out;
}

// ------------------------------------------------------------ oracle comparison

struct SpectrumComparison {
    double max_mismatch{0.0};
    size_t compared{0};
    size_t ambiguous{0};  // cluster ambiguities (shared nearest eigenvalue)
    Fourier worst_ell;
    Site worst_j;
};

// Matches w.l + Omega_j against the oracle eigenvalues for interior (l, j);
// nearest-eigenvalue matching with collision detection.
inline SpectrumComparison compare_to_oracle(const ReducedSpectrum& spec,
                                            const std::vector<QuasiEnergyLevel>& oracle,
                                            const std::vector<double>& omega,
                                            const TruncationBox& trunc, const SiteTable& sites,
                                            double interior_margin) {
    SpectrumComparison cmp;
    std::vector<double> eigs(oracle.size());
    for (size_t i = 0; i < oracle.size(); ++i) eigs[i] = oracle[i].eigenvalue;
    std::sort(eigs.begin(), eigs.end());
    std::map<double, int> claims;

    auto omega_dot = [&](const Fourier& l) {
        double s = 0.0;
        for (int i = 0; i < l.dim(); ++i) s += omega[static_cast<size_t>(i)] * l[i];
        return s;
    };

    for (const QuasiEnergyLevel& lvl : oracle) {
        if (lvl.ell.norm() > trunc.fourier_radius - interior_margin) continue;
        if (lvl.j.norm() > trunc.site_radius - interior_margin) continue;
        const double target = omega_dot(lvl.ell) + spec.omega(lvl.j, sites);
        auto it = std::lower_bound(eigs.begin(), eigs.end(), target);
        double best = std::numeric_limits<double>::infinity();
        double chosen = 0.0;
        if (it != eigs.end() && std::abs(*it - target) < best) {
            best = std::abs(*it - target);
            chosen = *it;
        }
        if (it != eigs.begin() && std::abs(*std::prev(it) - target) < best) {
            best = std::abs(*std::prev(it) - target);
            chosen = *std::prev(it);
        }
        ++cmp.compared;
        if (++claims[chosen] > 1) ++cmp.ambiguous;
        if (best > cmp.max_mismatch) {
            cmp.max_mismatch = best;
            cmp.worst_ell = lvl.ell;
            cmp.worst_j = lvl.j;
        }
    }
    return cmp;
}

}  // namespace qpkam
