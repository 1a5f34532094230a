// operator_core.hpp — sparse momentum-preserving operator values on a finite
// box of Z^2 x Z^d, with certified norm brackets, products, commutators,
// band projections and the Bony split.
//
// An operator stores only M_j^{j-pi(l)}(l); the column index is structural.
// Norms on h^p = l^1 cap h^p are bracketed, not computed exactly: the upper
// bound comes from the convolution-kernel (Young) estimate
//   ||u*v||_p <= 2^{2p+1} ||u||_p ||v||_p,
// the lower bound from normalized coordinate vectors.

#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "geometry.hpp"
#include "util.hpp"

namespace qpkam {

// ------------------------------------------------------------ truncation box

struct TruncationBox {
    double site_radius{8.0};     // keep |j| <= J
    double fourier_radius{16.0}; // keep |l| <= L

    bool site_ok(const Site& j) const noexcept {
        return static_cast<double>(j.norm2()) <= site_radius * site_radius + 1e-12;
    }
    bool fourier_ok(const Fourier& l) const noexcept {
        return static_cast<double>(l.norm2()) <= fourier_radius * fourier_radius + 1e-12;
    }
};

struct OrderWeight {
    int n{0};
    int m{0};
    friend bool operator==(const OrderWeight& a, const OrderWeight& b) noexcept {
        return a.n == b.n && a.m == b.m;
    }
};

struct NormBound {
    double upper{0.0};
    double lower{0.0};
};

// --------------------------------------------------------- h^p vector algebra

// ||u||_p = ||u||_{l1} + ||u||_{h^p} on finitely supported u : Z^2 -> C.
inline double hp_norm(const std::map<Site, double>& u, double p) {
    double l1 = 0.0, h2 = 0.0;
    for (const auto& [j, v] : u) {
        const double a = std::abs(v);
        l1 += a;
        h2 += std::pow(j.bracket(), 2.0 * p) * a * a;
    }
    return l1 + std::sqrt(h2);
}

inline std::map<Site, double> convolve(const std::map<Site, double>& u,
                                       const std::map<Site, double>& v) {
    std::map<Site, double> w;
    for (const auto& [a, x] : u)
        for (const auto& [b, y] : v) w[a + b] += x * y;
    return w;
}

inline double algebra_constant(double p) noexcept { return std::pow(2.0, 2.0 * p + 1.0); }

// ------------------------------------------------------------ MomentumOperator

class MomentumOperator {
public:
    struct Key {
        Site j;
        Fourier ell;
        friend bool operator<(const Key& a, const Key& b) noexcept {
            if (a.j != b.j) return a.j < b.j;
            return a.ell < b.ell;
        }
    };
    using EntryMap = std::map<Key, Complex>;

    MomentumOperator() = default;
    MomentumOperator(std::shared_ptr<const MomentumMap> map, TruncationBox trunc)
        : map_(std::move(map)), trunc_(trunc) {
        if (!map_) throw std::invalid_argument("MomentumOperator: null map");
    }

    const MomentumMap& map() const { return *map_; }
    std::shared_ptr<const MomentumMap> map_ptr() const { return map_; }
    const TruncationBox& trunc() const noexcept { return trunc_; }
    const EntryMap& entries() const noexcept { return entries_; }
    bool empty() const noexcept { return entries_.empty(); }
    size_t size() const noexcept { return entries_.size(); }

    Site column(const Key& k) const { return k.j - map_->momentum(k.ell); }

    // Adds value at (j, l); silently drops out-of-box endpoints so callers
    // can materialize formulas without their own box checks.
    void add(const Site& j, const Fourier& ell, Complex v) {
        if (v == Complex{}) return;
        if (!trunc_.site_ok(j) || !trunc_.fourier_ok(ell)) return;
        if (!trunc_.site_ok(j - map_->momentum(ell))) return;
        entries_[Key{j, ell}] += v;
    }

    void set(const Site& j, const Fourier& ell, Complex v) {
        if (!trunc_.site_ok(j) || !trunc_.fourier_ok(ell)) return;
        if (!trunc_.site_ok(j - map_->momentum(ell))) return;
        if (v == Complex{})
            entries_.erase(Key{j, ell});
        else
            entries_[Key{j, ell}] = v;
    }

    Complex at(const Site& j, const Fourier& ell) const {
        auto it = entries_.find(Key{j, ell});
        return it == entries_.end() ? Complex{} : it->second;
    }

    void prune(double tiny = 1e-280) {
        for (auto it = entries_.begin(); it != entries_.end();)
            it = (std::abs(it->second) < tiny) ? entries_.erase(it) : std::next(it);
    }

    MomentumOperator& operator+=(const MomentumOperator& o) {
        require_compatible(o);
        for (const auto& [k, v] : o.entries_) entries_[k] += v;
        return *this;
    }
    MomentumOperator& operator-=(const MomentumOperator& o) {
        require_compatible(o);
        for (const auto& [k, v] : o.entries_) entries_[k] -= v;
        return *this;
    }
    MomentumOperator& operator*=(Complex c) {
        for (auto& [k, v] : entries_) v *= c;
        return *this;
    }
    friend MomentumOperator operator+(MomentumOperator a, const MomentumOperator& b) {
        a += b;
        return a;
    }
    friend MomentumOperator operator-(MomentumOperator a, const MomentumOperator& b) {
        a -= b;
        return a;
    }
    friend MomentumOperator operator*(Complex c, MomentumOperator a) {
        a *= c;
        return a;
    }

    void require_compatible(const MomentumOperator& o) const {
        if (!map_ || !o.map_ || *map_ != *o.map_)
            throw std::invalid_argument("MomentumOperator: momentum map mismatch");
    }

    double max_abs() const noexcept {
        double m = 0.0;
        for (const auto& [k, v] : entries_) m = std::max(m, std::abs(v));
        return m;
    }

private:
    std::shared_ptr<const MomentumMap> map_;
    TruncationBox trunc_{};
    EntryMap entries_;
};

// ---------------------------------------------------------------- norm brackets

namespace detail {

// Weighted majorant rows: for each (j, j') the sum over l of
// e^{a|l|} |M_j^{j'}(l)| <j>^{mu n} <b(j)>^m, flattened two ways:
// per-column vectors (lower bound) and per-offset max kernel (upper bound).
struct Majorant {
    std::map<Site, std::map<Site, double>> columns;  // col j' -> (row j -> value)
    std::map<Site, double> kernel;                   // offset k -> max over j-j'=k
};

inline Majorant weighted_majorant(const MomentumOperator& M, double a, const SiteTable& sites,
                                  OrderWeight w) {
    Majorant maj;
    std::map<std::pair<Site, Site>, double> cells;
    for (const auto& [k, v] : M.entries()) {
        const Site col = k.j - M.map().momentum(k.ell);
        const double weight = sites.weight(k.j, w.n, w.m);
        cells[{col, k.j}] += std::exp(a * k.ell.norm()) * std::abs(v) * weight;
    }
    for (const auto& [jj, val] : cells) {
        maj.columns[jj.first][jj.second] += val;
        const Site off = jj.second - jj.first;
        double& cur = maj.kernel[off];
        cur = std::max(cur, val);
    }
    return maj;
}

}  // namespace detail

// |M|_{a,-N} bracket. Upper: 2^{2p+1} ||f||_p with f the offset-max kernel.
// Lower: max over columns j' of ||column||_p / ||e_{j'}||_p.
inline NormBound order_norm(const MomentumOperator& M, double a, OrderWeight w, double p,
                            const SiteTable& sites) {
    if (a < 0) throw std::invalid_argument("order_norm: a must be >= 0");
    NormBound nb;
    if (M.empty()) return nb;
    const detail::Majorant maj = detail::weighted_majorant(M, a, sites, w);
    nb.upper = algebra_constant(p) * hp_norm(maj.kernel, p);
    for (const auto& [col, colmap] : maj.columns) {
        const double denom = 1.0 + std::pow(col.bracket(), p);
        nb.lower = std::max(nb.lower, hp_norm(colmap, p) / denom);
    }
    return nb;
}

inline NormBound majorant_norm(const MomentumOperator& M, double a, double p,
                               const SiteTable& sites) {
    return order_norm(M, a, OrderWeight{0, 0}, p, sites);
}

// sup-over-samples plus gamma-weighted finite-difference Lipschitz part.
inline NormBound lipschitz_norm(const std::vector<std::pair<std::vector<double>, MomentumOperator>>& samples,
                                double a, double gamma, double p, const SiteTable& sites) {
    if (samples.size() < 2)
        throw std::invalid_argument("lipschitz_norm: need at least 2 samples");
    NormBound sup{};
    for (const auto& [om, M] : samples) {
        const NormBound nb = majorant_norm(M, a, p, sites);
        sup.upper = std::max(sup.upper, nb.upper);
        sup.lower = std::max(sup.lower, nb.lower);
    }
    double lip_u = 0.0, lip_l = 0.0;
    for (size_t i = 0; i < samples.size(); ++i) {
        for (size_t k = i + 1; k < samples.size(); ++k) {
            double dist2 = 0.0;
            for (size_t t = 0; t < samples[i].first.size(); ++t) {
                const double d = samples[i].first[t] - samples[k].first[t];
                dist2 += d * d;
            }
            const double dist = std::sqrt(dist2);
            if (dist == 0.0)
                throw std::invalid_argument("lipschitz_norm: samples must have distinct omega");
            MomentumOperator diff = samples[i].second - samples[k].second;
            diff *= Complex{1.0 / dist, 0.0};
            const NormBound nb = majorant_norm(diff, a, p, sites);
            lip_u = std::max(lip_u, nb.upper);
            lip_l = std::max(lip_l, nb.lower);
        }
    }
    return NormBound{sup.upper + gamma * lip_u, sup.lower + gamma * lip_l};
}

// ---------------------------------------------------------------------- algebra

struct ComposeResult {
    MomentumOperator op;
    double dropped_mass{0.0};  // plain majorant mass of chain terms lost to the l-cap
};

// (MN)_j(l) = sum_{l1+l2=l} M_j(l1) N_{j-pi(l1)}(l2), capped to the box.
// Entries of both factors already have in-box endpoints, so the only drops
// come from |l1+l2| exceeding the Fourier radius; their mass is reported.
inline ComposeResult compose(const MomentumOperator& M, const MomentumOperator& N) {
    M.require_compatible(N);
    TruncationBox box{std::min(M.trunc().site_radius, N.trunc().site_radius),
                      std::min(M.trunc().fourier_radius, N.trunc().fourier_radius)};
    ComposeResult res{MomentumOperator(M.map_ptr(), box), 0.0};

    // index N by row site
    std::unordered_map<Site, std::vector<std::pair<Fourier, Complex>>, SiteHash> rows;
    for (const auto& [k, v] : N.entries()) rows[k.j].emplace_back(k.ell, v);

    for (const auto& [k, mv] : M.entries()) {
        const Site mid = k.j - M.map().momentum(k.ell);
        auto it = rows.find(mid);
        if (it == rows.end()) continue;
        for (const auto& [l2, nv] : it->second) {
            const Fourier l = k.ell + l2;
            if (!box.fourier_ok(l)) {
                res.dropped_mass += std::abs(mv) * std::abs(nv);
                continue;
            }
            res.op.add(k.j, l, mv * nv);
        }
    }
    return res;
}

inline ComposeResult commutator(const MomentumOperator& M, const MomentumOperator& N) {
    ComposeResult mn = compose(M, N);
    const ComposeResult nm = compose(N, M);
    mn.op -= nm.op;
    mn.dropped_mass += nm.dropped_mass;
    return mn;
}

// Keep |l| <= K (keep_low) or |l| > K; the two parts partition M exactly.
inline MomentumOperator project_band(const MomentumOperator& M, double K, bool keep_low) {
    if (K < 0) throw std::invalid_argument("project_band: K must be >= 0");
    MomentumOperator out(M.map_ptr(), M.trunc());
    for (const auto& [k, v] : M.entries()) {
        const bool low = k.ell.norm() <= K + 1e-12;
        if (low == keep_low) out.add(k.j, k.ell, v);
    }
    return out;
}

inline MomentumOperator time_average(const MomentumOperator& M) {
    return project_band(M, 0.0, true);
}

// Bony split: B keeps |l| <= c <j>^delta (row-dependent band), R the rest.
inline std::pair<MomentumOperator, MomentumOperator> bony_split(const MomentumOperator& M,
                                                                double delta, double c) {
    MomentumOperator B(M.map_ptr(), M.trunc()), R(M.map_ptr(), M.trunc());
    for (const auto& [k, v] : M.entries()) {
        const double cut = c * std::pow(k.j.bracket(), delta);
        if (k.ell.norm() <= cut + 1e-12)
            B.add(k.j, k.ell, v);
        else
            R.add(k.j, k.ell, v);
    }
    return {std::move(B), std::move(R)};
}

// Max violation of M_j^{j-pi(l)}(l) = conj(M_{j-pi(l)}^j(-l)); 0 iff self-adjoint.
inline double selfadjoint_defect(const MomentumOperator& M) {
    double worst = 0.0;
    for (const auto& [k, v] : M.entries()) {
        const Site col = k.j - M.map().momentum(k.ell);
        const Complex partner = M.at(col, -k.ell);
        worst = std::max(worst, std::abs(v - std::conj(partner)));
    }
    return worst;
}

inline MomentumOperator adjoint(const MomentumOperator& M) {
    MomentumOperator out(M.map_ptr(), M.trunc());
    for (const auto& [k, v] : M.entries()) {
        const Site col = k.j - M.map().momentum(k.ell);
        out.add(col, -k.ell, std::conj(v));
    }
    return out;
}

// Gauge covariance: entries vanish unless sum_i l_i = 0.
inline bool is_gauge_covariant(const MomentumOperator& M, double tol = 0.0) {
    for (const auto& [k, v] : M.entries())
        if (k.ell.component_sum() != 0 && std::abs(v) > tol) return false;
    return true;
}

// --------------------------------------------------------- sup / decay constants

// C(p, sigma) = sup_{k in N} e^{-sigma k} k^p  (the unspecified constant of the
// smoothing estimates, implemented directly).
inline double decay_sup_constant(double p, double sigma) {
    if (sigma <= 0) throw std::invalid_argument("decay_sup_constant: sigma > 0 required");
    // maximum near k = p / sigma; scan a window around it
    const long kc = std::lround(std::max(1.0, p / sigma));
    double best = 0.0;
    for (long k = std::max(1L, kc / 4); k <= 4 * kc + 8; ++k)
        best = std::max(best, std::exp(-sigma * static_cast<double>(k)) *
                                  std::pow(static_cast<double>(k), p));
    return best;
}

// Upper-norm constant for kernels A e^{-theta |j-j'|}: the kernel-bound norm of
// f_j = e^{-theta|j|} restricted to offsets reachable in a box of radius 2J.
inline double exp_kernel_norm(double theta, double p, double radius) {
    std::map<Site, double> f;
    for (const Site& s : site_ball(radius)) f[s] = std::exp(-theta * s.norm());
    return algebra_constant(p) * hp_norm(f, p);
}

// ------------------------------------------------------------------- snapshots

inline void save_operator(const MomentumOperator& M, std::ostream& os) {
    os << "qpkam-operator v1\n";
    os << "dim " << M.map().dim() << "\n";
    os << "rows";
    for (const Site& r : M.map().rows()) os << " " << r.x << " " << r.y;
    os << "\n";
    os << "trunc " << dbl_str(M.trunc().site_radius) << " " << dbl_str(M.trunc().fourier_radius)
       << "\n";
    os << "entries " << M.size() << "\n";
    for (const auto& [k, v] : M.entries()) {
        os << k.j.x << " " << k.j.y;
        for (int i = 0; i < k.ell.dim(); ++i) os << " " << k.ell[i];
        os << " " << dbl_str(v.real()) << " " << dbl_str(v.imag()) << "\n";
    }
}

inline MomentumOperator load_operator(std::istream& is) {
    std::string tag, ver;
    is >> tag >> ver;
    if (tag != "qpkam-operator") throw std::runtime_error("load_operator: bad header");
    std::string kw;
    int d = 0;
    is >> kw >> d;
    std::vector<Site> rows(static_cast<size_t>(d));
    is >> kw;
    for (Site& r : rows) is >> r.x >> r.y;
    TruncationBox box;
    is >> kw >> box.site_radius >> box.fourier_radius;
    size_t n = 0;
    is >> kw >> n;
    MomentumOperator M(std::make_shared<MomentumMap>(rows), box);
    for (size_t i = 0; i < n; ++i) {
        Site j;
        is >> j.x >> j.y;
        Fourier ell(d);
        for (int t = 0; t < d; ++t) {
            int v;
            is >> v;
            ell.set(t, v);
        }
        double re, im;
        is >> re >> im;
        M.set(j, ell, Complex{re, im});
    }
    if (!is) throw std::runtime_error("load_operator: truncated stream");
    return M;
}

}  // namespace qpkam
