// homological.hpp — small divisors, resonance-set membership, and the exact
// solvers for the two homological equations with their quasi-Toeplitz
// decompositions.
//
// The divisor attached to an entry is d(l,j) = w.l + Omega_j - Omega_{j-pi(l)}.
// On a fiber where pi(l) is an integer multiple k of the generator v, the
// Toeplitz surrogate is
//   d(l,v,b) = w.l + 2 k b - |pi(l)|^2 + a(v,b) - a(v, b - v.pi(l)),
// with the signed multiple k (so that d(l,j) and d(l,v(j),b(j)) agree up to
// r-terms whenever v(j - pi(l)) = v(j)).

#pragma once

#include <functional>
#include <limits>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "potential.hpp"
#include "toeplitz.hpp"

namespace qpkam {

struct DivisorContext {
    std::vector<double> omega;
    double gamma{1e-2};
    double tau{1.0};
    double K{4.0};  // Fourier cutoff of the current step

    double omega_dot(const Fourier& ell) const {
        if (static_cast<int>(omega.size()) != ell.dim())
            throw std::invalid_argument("DivisorContext: omega dimension mismatch");
        double s = 0.0;
        for (int i = 0; i < ell.dim(); ++i) s += omega[i] * ell[i];
        return s;
    }

    void validate() const {
        if (!(gamma > 0) || !(tau > 0) || !(K > 0))
            throw std::invalid_argument("DivisorContext: gamma, tau, K must be positive");
        for (double w : omega)
            if (!(w >= -1.0 && w <= 1.0))
                throw std::invalid_argument("DivisorContext: omega must lie in [-1,1]^d");
    }
};

// ------------------------------------------------------------------- divisors

inline double small_divisor(const DiagonalData& D, const DivisorContext& ctx, const Fourier& ell,
                            const Site& j, const MomentumMap& map, const SiteTable& sites,
                            const TruncationBox& trunc) {
    const Site col = j - map.momentum(ell);
    if (!trunc.site_ok(j) || !trunc.site_ok(col))
        throw std::invalid_argument("small_divisor: index outside the site box");
    return ctx.omega_dot(ell) + D.omega(j, sites) - D.omega(col, sites);
}

inline double toeplitz_divisor(const DiagonalData& D, const DivisorContext& ctx,
                               const Fourier& ell, const Generator& v, long long b,
                               const MomentumMap& map) {
    const Site pi = map.momentum(ell);
    const std::optional<long long> k = parallel_multiple(pi, v);
    if (!k)
        throw std::invalid_argument("toeplitz_divisor: pi(l) must be a nonzero multiple of v");
    const long long shift = v.v.dot(pi);  // = k |v|^2
    return ctx.omega_dot(ell) + 2.0 * static_cast<double>(*k) * static_cast<double>(b) -
           static_cast<double>(pi.norm2()) + D.a_at(v, b) - D.a_at(v, b - shift);
}

// --------------------------------------------------------------- membership

struct MembershipReport {
    struct SetReport {
        bool pass{true};
        double worst_margin{std::numeric_limits<double>::infinity()};  // |d| / threshold
        std::string witness;
    };
    SetReport O0, C1, C2;
    bool pass() const noexcept { return O0.pass && C1.pass && C2.pass; }
    std::string summary() const {
        auto one = [](const char* name, const SetReport& r) {
            return std::string(name) + (r.pass ? " pass" : " FAIL " + r.witness);
        };
        return one("O0:", O0) + "  " + one("C1:", C1) + "  " + one("C2:", C2);
    }
};

namespace detail {

inline void record(MembershipReport::SetReport& rep, double value, double threshold,
                   const std::string& witness) {
    const double margin = threshold > 0 ? std::abs(value) / threshold
                                        : std::numeric_limits<double>::infinity();
    if (margin < rep.worst_margin) {
        rep.worst_margin = margin;
        rep.witness = witness + " |d|=" + dbl_str(std::abs(value));
    }
    if (std::abs(value) < threshold) rep.pass = false;
}

}  // namespace detail

// Scans all 0 < |l| <= min(K, L):
//   O0: |w.l + k| >= m0 gamma |l|^{-(d+1)} for the nearest integer k,
//   C1: |d(l,j)|   >= m1 gamma |l|^{-tau} for all in-box j with j-pi(l) in box,
//   C2: |d(l,v,b)| >= m2 gamma |l|^{-tau} on the fiber parallel to pi(l), with
//       |b| running over everything the box or the symbol tables can realize.
inline MembershipReport resonance_membership(const DiagonalData& D, const DivisorContext& ctx,
                                             const MomentumMap& map, const SiteTable& sites,
                                             const TruncationBox& trunc, double mult0 = 2.0,
                                             double mult1 = 1.0, double mult2 = 2.0) {
    ctx.validate();
    MembershipReport rep;
    const double Kcap = std::min(ctx.K, trunc.fourier_radius);
    const double b_audit = D.max_realized_b(sites) + 1.0;
    const std::vector<Site> box_sites = site_ball(trunc.site_radius);

    for (const Fourier& ell : fourier_ball(map.dim(), Kcap)) {
        if (ell.is_zero()) continue;
        const double wl = ctx.omega_dot(ell);
        const double ln = ell.norm();

        const double k0 = -std::round(wl);
        detail::record(rep.O0, wl + k0, mult0 * ctx.gamma * std::pow(ln, -(map.dim() + 1.0)),
                       "O0 l=" + ell.str() + " k=" + dbl_str(k0));

        const double thr1 = mult1 * ctx.gamma * std::pow(ln, -ctx.tau);
        const Site pi = map.momentum(ell);
        for (const Site& j : box_sites) {
            if (!trunc.site_ok(j - pi)) continue;
            const double d = wl + D.omega(j, sites) - D.omega(j - pi, sites);
            detail::record(rep.C1, d, thr1, "C1 l=" + ell.str() + " j=" + j.str());
        }

        if (!pi.is_zero()) {
            const Generator v = direction_generator(pi);
            const double thr2 = mult2 * ctx.gamma * std::pow(ln, -ctx.tau);
            const long long shift = v.v.dot(pi);
            const long long B =
                static_cast<long long>(std::ceil(b_audit)) + std::llabs(shift);
            const std::optional<long long> k = parallel_multiple(pi, v);
            for (long long b = -B; b <= B; ++b) {
                const double d = wl + 2.0 * static_cast<double>(*k) * static_cast<double>(b) -
                                 static_cast<double>(pi.norm2()) + D.a_at(v, b) -
                                 D.a_at(v, b - shift);
                detail::record(rep.C2, d, thr2,
                               "C2 l=" + ell.str() + " v=" + v.str() + " b=" + std::to_string(b));
            }
        }
    }
    return rep;
}

// ------------------------------------------------------- homological equation

struct HomologicalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Solves -i S' + [D, S] = Pi_{0<|l|<=K} P entrywise: S = P / d(l,j) on the
// band, zero elsewhere. The stored decomposition divides the symbol part by
// the fiber divisors and files the mismatch and the non-parallel regions
// into the (1,1) and (2,0) classes.
inline QuasiToeplitzOperator solve_homological(const DiagonalData& D, const DivisorContext& ctx,
                                               const QuasiToeplitzOperator& P,
                                               const SiteTable& sites, const NormContext& nctx) {
    if (P.order() != 2) throw std::invalid_argument("solve_homological: P must have order 2");
    const MomentumMap& map = P.map();
    const TruncationBox& box = P.trunc();

    {
        const QuasiToeplitzOperator tilde =
            diagonal_as_qt(D, P.width(), P.map_ptr(), box, *nctx.sites);
        const double tn = qt_norm(tilde, nctx);
        if (16.0 * tn > ctx.gamma)
            throw HomologicalError("solve_homological: 16 |Omega~| = " + dbl_str(16.0 * tn) +
                                   " exceeds gamma = " + dbl_str(ctx.gamma));
    }
    {
        const MembershipReport mem = resonance_membership(D, ctx, map, sites, box);
        if (!mem.pass())
            throw HomologicalError("solve_homological: small divisor violation: " +
                                   mem.summary());
    }

    const double Kcap = std::min(ctx.K, box.fourier_radius);
    auto in_band = [&](const Fourier& l) { return !l.is_zero() && l.norm() <= Kcap + 1e-12; };

    QuasiToeplitzOperator S(2, P.width(), P.map_ptr(), box);
    const GeometryParams& geom = sites.geom();

    // symbol part: divide by w.l on pi(l)=0, by the fiber divisor on parallel
    // fibers; non-parallel fibers contribute nothing to the symbol
    for (const auto& [k, val] : P.symbol().values()) {
        if (!in_band(k.ell)) continue;
        const Site pi = map.momentum(k.ell);
        if (pi.is_zero()) {
            S.symbol().set(k.ell, k.v, k.b, val / ctx.omega_dot(k.ell));
        } else if (parallel_multiple(pi, k.v)) {
            S.symbol().set(k.ell, k.v, k.b, val / toeplitz_divisor(D, ctx, k.ell, k.v, k.b, map));
        }
    }

    // site-level corrections from the symbol part of P
    MomentumOperator S1(P.map_ptr(), box), S2(P.map_ptr(), box);
    {
        std::map<std::pair<Generator, long long>, std::vector<std::pair<Fourier, Complex>>> fibers;
        for (const auto& [k, val] : P.symbol().values())
            if (in_band(k.ell)) fibers[{k.v, k.b}].emplace_back(k.ell, val);
        for (const Site& j : site_ball(box.site_radius)) {
            const SiteData& sd = sites.at(j);
            auto it = fibers.find({sd.v, sd.b});
            if (it == fibers.end()) continue;
            const double band = map.c() * std::pow(j.bracket(), geom.delta);
            for (const auto& [ell, val] : it->second) {
                const Site pi = map.momentum(ell);
                if (!box.site_ok(j - pi)) continue;
                const double d = small_divisor(D, ctx, ell, j, map, sites, box);
                if (pi.is_zero()) continue;  // symbol already divides by w.l = d
                if (parallel_multiple(pi, sd.v)) {
                    // parallel mismatch: 1/d - 1/d_fiber, class (1,1)
                    const double df = toeplitz_divisor(D, ctx, ell, sd.v, sd.b, map);
                    S1.add(j, ell, val * (1.0 / d - 1.0 / df));
                } else if (ell.norm() < band) {
                    S1.add(j, ell, val / d);  // region A2, class (1,1)
                } else {
                    S2.add(j, ell, val / d);  // region A3, class (2,0)
                }
            }
        }
    }

    // divided remainders keep their classes
    for (const WeightedRemainder& r : P.remainders()) {
        MomentumOperator& dst = (r.w.n <= 1) ? S1 : S2;
        for (const auto& [k, val] : r.op.entries()) {
            if (!in_band(k.ell)) continue;
            dst.add(k.j, k.ell, val / small_divisor(D, ctx, k.ell, k.j, map, sites, box));
        }
    }

    S1.prune();
    S2.prune();
    S.add_remainder(OrderWeight{1, 1}, std::move(S1));
    S.add_remainder(OrderWeight{2, 0}, std::move(S2));
    return S;
}

// Residual of the homological equation for the represented operators,
// computed entrywise: (w.l + Omega_j - Omega_{j-pi(l)}) S - Pi_band P.
inline MomentumOperator homological_residual(const DiagonalData& D, const DivisorContext& ctx,
                                             const QuasiToeplitzOperator& S,
                                             const QuasiToeplitzOperator& P,
                                             const SiteTable& sites) {
    const MomentumMap& map = P.map();
    const TruncationBox& box = P.trunc();
    const double Kcap = std::min(ctx.K, box.fourier_radius);
    MomentumOperator res(P.map_ptr(), box);
    const MomentumOperator Smat = S.represented(sites);
    for (const auto& [k, v] : Smat.entries())
        res.add(k.j, k.ell,
                v * small_divisor(D, ctx, k.ell, k.j, map, sites, box));
    const MomentumOperator Pmat = P.represented(sites);
    for (const auto& [k, v] : Pmat.entries())
        if (!k.ell.is_zero() && k.ell.norm() <= Kcap + 1e-12) res.add(k.j, k.ell, -v);
    res.prune(0.0);
    return res;
}

// ----------------------------------------------------------------- first step

struct FirstStepResult {
    QuasiToeplitzOperator S0;  // order 1, generator of the first transformation
    QuasiToeplitzOperator P0;  // order 2, the conjugated perturbation
    double lie_tail{0.0};
    double dropped_mass{0.0};
    int lie_terms{0};
};

struct FirstStepParams {
    double eps_star{0.1};  // smallness gate for gamma^{-1} ||V||
    LieParams lie{};
};

// Conjugates -Delta + M_V by e^{S0} with S0 killing the potential at first
// order:  (S0)_j^{j-pi(l)}(l) = -V(l) / (w.l + 2 j.pi(l) - |pi(l)|^2).
// Returns S0 with its symbol/remainder split and P0 = sum_h h (ad S0)^h M_V/(h+1)!.
inline FirstStepResult first_step_solver(const TravelingWavePotential& V,
                                         const DivisorContext& ctx, const TruncationBox& trunc,
                                         const SiteTable& sites,
                                         std::shared_ptr<const MomentumMap> map_ptr,
                                         const NormContext& nctx,
                                         const FirstStepParams& prm = {}) {
    const MomentumMap& map = *map_ptr;
    const GeometryParams& geom = sites.geom();
    const double vnorm = potential_norm(V);
    if (vnorm / ctx.gamma >= prm.eps_star)
        throw HomologicalError("first_step_solver: smallness violated, gamma^{-1}||V|| = " +
                               dbl_str(vnorm / ctx.gamma) + " >= " + dbl_str(prm.eps_star));

    const double a0 = V.width_a() / 4.0;
    const double a_gen = V.width_a() / 3.0;

    // Diophantine gate on the actual divisors of the step
    const double thr_base = 2.0 * ctx.gamma;
    auto o0_threshold = [&](const Fourier& l) {
        return thr_base * std::pow(l.norm(), -(map.dim() + 1.0));
    };
    // widest b-shift any product chain can reach on a fiber
    long long max_shift = 0;
    for (const auto& [l1, v1] : V.coeffs()) {
        (void)v1;
        const Site pi1 = map.momentum(l1);
        max_shift = std::max(max_shift, std::llabs(pi1.x) + std::llabs(pi1.y));
    }
    max_shift *= static_cast<long long>(std::ceil(std::pow(trunc.site_radius, geom.delta)) + 1);
    for (const auto& [ell, val] : V.coeffs()) {
        (void)val;
        const Site pi = map.momentum(ell);
        const double wl = ctx.omega_dot(ell);
        for (const Site& j : site_ball(trunc.site_radius)) {
            if (!trunc.site_ok(j - pi)) continue;
            const double den = wl + 2.0 * static_cast<double>(j.dot(pi)) -
                               static_cast<double>(pi.norm2());
            if (std::abs(den) < o0_threshold(ell))
                throw HomologicalError("first_step_solver: O0 violation at l=" + ell.str() +
                                       " j=" + j.str() + " |den|=" + dbl_str(std::abs(den)));
        }
        const Generator v = direction_generator(pi);
        const std::optional<long long> k = parallel_multiple(pi, v);
        const long long B = static_cast<long long>(
                                std::ceil(std::pow(trunc.site_radius, 1.0 + geom.delta))) +
                            max_shift;
        for (long long b = -B; b <= B; ++b) {
            const double den = wl + 2.0 * static_cast<double>(*k) * static_cast<double>(b) -
                               static_cast<double>(pi.norm2());
            if (std::abs(den) < o0_threshold(ell))
                throw HomologicalError("first_step_solver: O0 fiber violation at l=" + ell.str() +
                                       " b=" + std::to_string(b));
        }
    }

    FirstStepResult out;
    out.S0 = QuasiToeplitzOperator(1, a_gen, map_ptr, trunc);

    // symbol: fibers parallel to pi(l), divisor with the signed multiple
    for (const auto& [ell, val] : V.coeffs()) {
        const Site pi = map.momentum(ell);
        const Generator v = direction_generator(pi);
        const long long k = *parallel_multiple(pi, v);
        std::set<long long> bs;
        for (const Site& j : site_ball(trunc.site_radius)) {
            const SiteData& sd = sites.at(j);
            if (sd.v == v) bs.insert(sd.b);
        }
        for (long long b : bs) {
            const double den = ctx.omega_dot(ell) +
                               2.0 * static_cast<double>(k) * static_cast<double>(b) -
                               static_cast<double>(pi.norm2());
            out.S0.symbol().set(ell, v, b, -val / den);
        }
    }

    // remainders: R (Bony region or tiny sites) in (2,0), P in (1,0)
    {
        MomentumOperator R(map_ptr, trunc), Pp(map_ptr, trunc);
        const double jmin = geom.j_min();
        for (const Site& j : site_ball(trunc.site_radius)) {
            const SiteData& sd = sites.at(j);
            for (const auto& [ell, val] : V.coeffs()) {
                const Site pi = map.momentum(ell);
                if (!trunc.site_ok(j - pi)) continue;
                if (parallel_multiple(pi, sd.v)) continue;  // covered by the symbol
                const double den = ctx.omega_dot(ell) +
                                   2.0 * static_cast<double>(j.dot(pi)) -
                                   static_cast<double>(pi.norm2());
                const Complex entry = -val / den;
                const bool smooth_region =
                    ell.norm() >= map.c() * std::pow(j.bracket(), geom.delta) ||
                    j.bracket() <= jmin;
                (smooth_region ? R : Pp).add(j, ell, entry);
            }
        }
        R.prune();
        Pp.prune();
        out.S0.add_remainder(OrderWeight{2, 0}, std::move(R));
        out.S0.add_remainder(OrderWeight{1, 0}, std::move(Pp));
    }

    // C1 = [M_V, S0] with the explicit symbol for the parallel part
    const MomentumOperator MV = multiplication_operator(V, trunc, map_ptr);
    QuasiToeplitzOperator C1(2, a_gen, map_ptr, trunc);
    {
        // symbol: sum over l1+l2=l with pi(l2) parallel to v of
        //   -2 (pi(l1).pi(l2)) V(l1) V(l2) / (A_0 A_1),
        //   A_eps = w.l2 + 2 k2 b - |pi(l2)|^2 - 2 eps pi(l1).pi(l2)
        for (const auto& [l2, v2] : V.coeffs()) {
            const Site pi2 = map.momentum(l2);
            const Generator v = direction_generator(pi2);
            const long long k2 = *parallel_multiple(pi2, v);
            std::set<long long> bs;
            for (const Site& j : site_ball(trunc.site_radius))
                if (sites.at(j).v == v) bs.insert(sites.at(j).b);
            for (const auto& [l1, v1] : V.coeffs()) {
                const Fourier l = l1 + l2;
                if (!trunc.fourier_ok(l)) continue;
                const Site pi1 = map.momentum(l1);
                const double cross = 2.0 * static_cast<double>(pi1.dot(pi2));
                for (long long b : bs) {
                    const double A0 = ctx.omega_dot(l2) +
                                      2.0 * static_cast<double>(k2) * static_cast<double>(b) -
                                      static_cast<double>(pi2.norm2());
                    const double A1 = A0 - cross;
                    C1.symbol().add(l, v, b, -cross * v1 * v2 / (A0 * A1));
                }
            }
        }
        // full commutator; the non-parallel chains and the box-edge corrections
        // land in the remainder
        const MomentumOperator S0full = out.S0.represented(sites);
        ComposeResult comm = commutator(MV, S0full);
        out.dropped_mass += comm.dropped_mass;
        MomentumOperator Rfull = std::move(comm.op);
        Rfull -= lt_materialize(C1.symbol(), trunc, sites, map_ptr);
        Rfull.prune();
        C1.add_remainder(OrderWeight{2, 0}, std::move(Rfull));
    }

    // P0 = sum_{h>=1} h/(h+1)! (ad S0)^h M_V, where (ad S0)^1 M_V = C1;
    // higher terms through the order-1 x order-1 product route
    out.P0 = C1;
    out.P0 *= Complex{0.5, 0.0};
    out.P0.set_width(a0);
    {
        const double base = qt_norm(C1, nctx);
        QuasiToeplitzOperator W = qt_downgrade(C1);
        std::vector<double> fact{1.0, 1.0};
        for (int h = 2; h <= prm.lie.max_terms + 1; ++h) fact.push_back(fact.back() * h);
        for (int h = 2; h <= prm.lie.max_terms; ++h) {
            QtProductResult c = qt_commutator(W, out.S0, a0, sites);
            out.dropped_mass += c.dropped_mass;
            QuasiToeplitzOperator term = std::move(c.op);  // order 2
            const double coeff = static_cast<double>(h) / fact[static_cast<size_t>(h + 1)];
            QuasiToeplitzOperator scaled = term;
            scaled *= Complex{coeff, 0.0};
            scaled.set_width(a0);
            out.P0 += scaled;
            out.lie_terms = h;
            const double tn = qt_norm(term, nctx) * coeff;
            if (tn <= prm.lie.tail_tol * std::max(base, 1e-300)) {
                out.lie_tail = tn;
                break;
            }
            W = qt_downgrade(term);
        }
    }
    out.P0.prune();
    return out;
}

}  // namespace qpkam
