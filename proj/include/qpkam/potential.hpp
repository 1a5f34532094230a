// potential.hpp — gauge-invariant traveling-wave potentials V and their
// multiplication operators M_V, plus the covariance identities as a
// numerical defect.
//
// Admissible Fourier support: V(l) = 0 whenever pi(l) = 0 or sum_i l_i != 0,
// and V(-l) = conj(V(l)) so the potential is real-valued.

#pragma once

#include <complex>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "operator_core.hpp"
#include "vendor_json.hpp"

namespace qpkam {

class TravelingWavePotential {
public:
    TravelingWavePotential() = default;
    TravelingWavePotential(double width_a, double smoothness_p, int dim)
        : a_(width_a), p_(smoothness_p), dim_(dim) {
        if (!(a_ > 0)) throw std::invalid_argument("TravelingWavePotential: width a must be > 0");
        if (!(p_ > dim / 2.0))
            throw std::invalid_argument("TravelingWavePotential: need p > d/2");
    }

    double width_a() const noexcept { return a_; }
    double smoothness_p() const noexcept { return p_; }
    int dim() const noexcept { return dim_; }
    const std::map<Fourier, Complex>& coeffs() const noexcept { return coeffs_; }
    bool empty() const noexcept { return coeffs_.empty(); }

    Complex at(const Fourier& ell) const {
        auto it = coeffs_.find(ell);
        return it == coeffs_.end() ? Complex{} : it->second;
    }

    // Sets V(l) and V(-l) = conj(v) together; rejects inadmissible modes.
    void set_mode(const MomentumMap& map, const Fourier& ell, Complex v) {
        if (ell.dim() != dim_) throw std::invalid_argument("set_mode: dimension mismatch");
        if (map.momentum(ell).is_zero())
            throw std::invalid_argument("set_mode: pi(l) = 0 is not admissible");
        if (ell.component_sum() != 0)
            throw std::invalid_argument("set_mode: sum of components must vanish");
        if (v == Complex{}) {
            coeffs_.erase(ell);
            coeffs_.erase(-ell);
            return;
        }
        coeffs_[ell] = v;
        coeffs_[-ell] = std::conj(v);
    }

    void scale(double s) {
        for (auto& [l, v] : coeffs_) v *= s;
        if (s == 0.0) coeffs_.clear();
    }

    // Reality defect; 0 by construction, checked in tests.
    double reality_defect() const {
        double worst = 0.0;
        for (const auto& [l, v] : coeffs_) worst = std::max(worst, std::abs(v - std::conj(at(-l))));
        return worst;
    }

private:
    double a_{1.0};
    double p_{2.0};
    int dim_{2};
    std::map<Fourier, Complex> coeffs_;
};

// ||V||_{a,p} = sqrt( sum_l e^{2a|l|} |V(l)|^2 <l>^{2p} )
inline double potential_norm(const TravelingWavePotential& V) {
    double s = 0.0;
    for (const auto& [l, v] : V.coeffs()) {
        const double w = std::exp(2.0 * V.width_a() * l.norm()) *
                         std::pow(l.bracket(), 2.0 * V.smoothness_p());
        s += w * std::norm(v);
    }
    return std::sqrt(s);
}

// Deterministic pseudo-random potential with ||V||_{a,p} = epsilon exactly.
// Complex Gaussian per admissible mode pair, then a single rescale.
inline TravelingWavePotential random_potential(uint64_t seed, double epsilon, int support_radius,
                                               const MomentumMap& map, double width_a = 1.0,
                                               double smoothness_p = 2.0) {
    if (epsilon < 0) throw std::invalid_argument("random_potential: epsilon must be >= 0");
    TravelingWavePotential V(width_a, smoothness_p, map.dim());
    std::vector<Fourier> admissible;
    for (const Fourier& l : fourier_ball(map.dim(), support_radius)) {
        if (l.is_zero() || map.momentum(l).is_zero() || l.component_sum() != 0) continue;
        if (-l < l) continue;  // one representative per +-pair
        admissible.push_back(l);
    }
    if (admissible.empty())
        throw std::runtime_error("random_potential: empty admissible support");
    Rng rng(seed);
    for (const Fourier& l : admissible) V.set_mode(map, l, rng.complex_gaussian());
    const double n = potential_norm(V);
    V.scale(epsilon == 0.0 ? 0.0 : epsilon / n);
    return V;
}

// (M_V)_j^{j-pi(l)}(l) = V(l) over the box; momentum preserving by
// construction and self-adjoint because V is real-valued.
inline MomentumOperator multiplication_operator(const TravelingWavePotential& V,
                                                const TruncationBox& trunc,
                                                std::shared_ptr<const MomentumMap> map) {
    MomentumOperator M(map, trunc);
    for (const Site& j : site_ball(trunc.site_radius))
        for (const auto& [l, v] : V.coeffs()) M.add(j, l, v);
    return M;
}

// Max entrywise defect of the two covariance identities for A = M_V:
//   A(phi + K zeta) tau_zeta = tau_zeta A(phi),   tau_zeta = diag(e^{i j.zeta})
//   A(phi + t 1) e^{it} = e^{it} A(phi)
inline double covariance_check(const TravelingWavePotential& V, const std::vector<double>& phi,
                               const std::array<double, 2>& zeta, double t,
                               const TruncationBox& trunc, const MomentumMap& map) {
    if (static_cast<int>(phi.size()) != map.dim())
        throw std::invalid_argument("covariance_check: phi dimension mismatch");
    const Complex I{0.0, 1.0};
    auto phase = [&](const Fourier& l, const std::vector<double>& ang) {
        double s = 0.0;
        for (int i = 0; i < l.dim(); ++i) s += l[i] * ang[i];
        return std::exp(I * s);
    };

    std::vector<double> phi_shift_z(phi), phi_shift_t(phi);
    for (int i = 0; i < map.dim(); ++i) {
        phi_shift_z[i] += map.rows()[i].x * zeta[0] + map.rows()[i].y * zeta[1];
        phi_shift_t[i] += t;
    }

    double worst = 0.0;
    for (const Site& j : site_ball(trunc.site_radius)) {
        const Complex tau_row = std::exp(I * (j.x * zeta[0] + j.y * zeta[1]));
        for (const auto& [l, v] : V.coeffs()) {
            const Site col = j - map.momentum(l);
            if (!trunc.site_ok(col)) continue;
            const Complex tau_col = std::exp(I * (col.x * zeta[0] + col.y * zeta[1]));
            // translation covariance
            const Complex lhs1 = v * phase(l, phi_shift_z) * tau_col;
            const Complex rhs1 = tau_row * v * phase(l, phi);
            worst = std::max(worst, std::abs(lhs1 - rhs1));
            // gauge covariance
            const Complex g = std::exp(I * t);
            const Complex lhs2 = v * phase(l, phi_shift_t) * g;
            const Complex rhs2 = g * v * phase(l, phi);
            worst = std::max(worst, std::abs(lhs2 - rhs2));
        }
    }
    return worst;
}

// ------------------------------------------------------------------- file I/O

// JSON with (l, re, im) triples plus a, p; doubles round-trip bit-exactly.
inline nlohmann::json potential_to_json(const TravelingWavePotential& V) {
    nlohmann::json j;
    j["a"] = V.width_a();
    j["p"] = V.smoothness_p();
    j["d"] = V.dim();
    nlohmann::json modes = nlohmann::json::array();
    for (const auto& [l, v] : V.coeffs()) {
        nlohmann::json m;
        std::vector<int> lv(static_cast<size_t>(l.dim()));
        for (int i = 0; i < l.dim(); ++i) lv[static_cast<size_t>(i)] = l[i];
        m["l"] = lv;
        m["re"] = v.real();
        m["im"] = v.imag();
        modes.push_back(m);
    }
    j["modes"] = modes;
    return j;
}

inline TravelingWavePotential potential_from_json(const nlohmann::json& j, const MomentumMap& map) {
    TravelingWavePotential V(j.at("a").get<double>(), j.at("p").get<double>(),
                             j.at("d").get<int>());
    for (const auto& m : j.at("modes")) {
        const Fourier l(m.at("l").get<std::vector<int>>());
        const Complex v{m.at("re").get<double>(), m.at("im").get<double>()};
        if (-l < l) continue;  // pair is set from one representative
        V.set_mode(map, l, v);
    }
    return V;
}

}  // namespace qpkam
