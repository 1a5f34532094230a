// geometry.hpp — the nonlinear coordinate system on Z^2: the momentum map
// pi : Z^d -> Z^2, generators, and per-site resonance data (v(j), b(j)).
//
// A generator is a primitive integer direction: gcd(v1,v2)=1 with v1>0, or
// v=(0,1). For a site j, v(j) is the lexicographically first generator of
// norm <= |j|^delta minimizing |v.j|, and b(j) = j.v(j). Together (v(j),b(j))
// measure how close j sits to a resonant line, and they index the symbol
// calculus of the rest of the library.

#pragma once

#include <algorithm>
#include <cstdlib>
#include <map>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "util.hpp"

namespace qpkam {

// ------------------------------------------------------------- momentum map

class MomentumMap {
public:
    MomentumMap() = default;

    explicit MomentumMap(std::vector<Site> rows) : rows_(std::move(rows)) {
        if (rows_.empty() || rows_.size() > static_cast<size_t>(Fourier::max_dim))
            throw std::invalid_argument("MomentumMap: need 1..6 rows");
        if (!has_rank_two())
            throw std::invalid_argument("MomentumMap: rows must span Z^2 (rank 2)");
        c_inv_ = largest_stretch();
    }

    int dim() const noexcept { return static_cast<int>(rows_.size()); }
    const std::vector<Site>& rows() const noexcept { return rows_; }

    // pi(l) = sum_i l_i k^(i)
    Site momentum(const Fourier& ell) const {
        if (ell.dim() != dim()) throw std::invalid_argument("momentum: dimension mismatch");
        Site p{0, 0};
        for (int i = 0; i < dim(); ++i) {
            p.x += ell[i] * rows_[i].x;
            p.y += ell[i] * rows_[i].y;
        }
        return p;
    }

    // c^{-1} = sup_{l != 0} |pi(l)|/|l|  (largest singular value of the 2 x d
    // matrix with columns k^(i); the sup over integer l equals the real sup).
    double c_inv() const noexcept { return c_inv_; }
    double c() const noexcept { return 1.0 / c_inv_; }

    bool operator==(const MomentumMap& o) const noexcept { return rows_ == o.rows_; }
    bool operator!=(const MomentumMap& o) const noexcept { return !(*this == o); }

private:
    bool has_rank_two() const noexcept {
        for (size_t i = 0; i < rows_.size(); ++i)
            for (size_t k = i + 1; k < rows_.size(); ++k)
                if (rows_[i].cross(rows_[k]) != 0) return true;
        return false;
    }

    double largest_stretch() const noexcept {
        // Gram matrix A A^T of A = (k^(1) ... k^(d)) as a 2x2 system
        double g11 = 0, g12 = 0, g22 = 0;
        for (const Site& r : rows_) {
            g11 += static_cast<double>(r.x) * r.x;
            g12 += static_cast<double>(r.x) * r.y;
            g22 += static_cast<double>(r.y) * r.y;
        }
        const double tr = g11 + g22;
        const double det = g11 * g22 - g12 * g12;
        const double disc = std::sqrt(std::max(0.0, tr * tr / 4.0 - det));
        return std::sqrt(tr / 2.0 + disc);
    }

    std::vector<Site> rows_;
    double c_inv_{1.0};
};

// --------------------------------------------------------- geometry parameters

struct GeometryParams {
    double delta{0.3};
    double mu{0.4};        // mu = 1 - 2 delta, kept in sync by make()
    double j_threshold{0};  // J_delta

    static GeometryParams make(double delta, std::optional<double> threshold = std::nullopt) {
        if (!(delta > 0.0 && delta < 0.5))
            throw std::invalid_argument("GeometryParams: delta must lie in (0, 1/2)");
        GeometryParams g;
        g.delta = delta;
        g.mu = 1.0 - 2.0 * delta;
        const double min_threshold = std::pow(4.0, 1.0 / delta);
        g.j_threshold = threshold ? *threshold : std::ceil(min_threshold);
        if (g.j_threshold < min_threshold - 1e-9)
            throw std::invalid_argument("GeometryParams: j_threshold must be >= 4^(1/delta)");
        return g;
    }

    double j_min() const noexcept { return std::pow(2.0, 1.0 / (2.0 * delta)); }
};

// ------------------------------------------------------------------ generators

struct Generator {
    Site v{0, 1};

    static bool is_generator(const Site& s) noexcept {
        if (s.is_zero()) return false;
        if (s.x == 0 && s.y == 1) return true;
        return s.x > 0 && std::gcd(std::abs(s.x), std::abs(s.y)) == 1;
    }

    explicit Generator(const Site& s) : v(s) {
        if (!is_generator(s))
            throw std::invalid_argument("Generator: " + s.str() + " is not a generator");
    }
    Generator() = default;

    friend bool operator==(const Generator& a, const Generator& b) noexcept { return a.v == b.v; }
    friend bool operator!=(const Generator& a, const Generator& b) noexcept { return !(a == b); }
    friend bool operator<(const Generator& a, const Generator& b) noexcept { return a.v < b.v; }

    double norm() const noexcept { return v.norm(); }
    std::string str() const { return v.str(); }
};

// All generators with |v| <= radius, lexicographic in (v1, v2).
inline std::vector<Generator> enumerate_generators(double radius) {
    std::vector<Generator> out;
    if (radius < 1.0) return out;
    const int r = static_cast<int>(std::floor(radius));
    const double r2 = radius * radius;
    for (int x = 0; x <= r; ++x) {
        for (int y = -r; y <= r; ++y) {
            const Site s{x, y};
            if (static_cast<double>(s.norm2()) > r2 + 1e-12) continue;
            if (Generator::is_generator(s)) out.push_back(Generator(s));
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

// --------------------------------------------------------------- per-site data

struct SiteData {
    Site j{0, 0};
    Generator v{};   // v(j); (0,1) at j = 0 by convention
    long long b{0};  // b(j) = j . v(j)

    double b_bracket() const noexcept { return std::sqrt(1.0 + static_cast<double>(b) * b); }
};

// v(j), b(j) by exhaustive scan over generators of norm <= |j|^delta.
// At j = 0 no generator qualifies; the convention v=(0,1), b=0 keeps the
// order weights <b(0)> = 1 neutral.
inline SiteData site_data(const GeometryParams& geom, const Site& j) {
    SiteData sd;
    sd.j = j;
    if (j.is_zero()) return sd;
    const double radius = std::pow(j.norm(), geom.delta);
    const std::vector<Generator> cand = enumerate_generators(radius);
    if (cand.empty()) {
        // |j|^delta < 1 cannot happen for j != 0 since |j| >= 1
        return sd;
    }
    long long best = -1;
    for (const Generator& g : cand) {
        const long long dot = std::llabs(j.dot(g.v));
        if (best < 0 || dot < best) {
            best = dot;
            sd.v = g;
        }
    }
    sd.b = j.dot(sd.v.v);
    return sd;
}

// Memoizing wrapper; all norm/symbol machinery goes through this.
class SiteTable {
public:
    explicit SiteTable(GeometryParams geom) : geom_(geom) {}

    const GeometryParams& geom() const noexcept { return geom_; }

    const SiteData& at(const Site& j) const {
        auto it = cache_.find(j);
        if (it != cache_.end()) return it->second;
        return cache_.emplace(j, site_data(geom_, j)).first->second;
    }

    double weight(const Site& j, int n, int m) const {
        const SiteData& sd = at(j);
        double w = 1.0;
        if (n != 0) w *= std::pow(j.bracket(), geom_.mu * n);
        if (m != 0) w *= std::pow(sd.b_bracket(), m);
        return w;
    }

private:
    GeometryParams geom_;
    mutable std::unordered_map<Site, SiteData, SiteHash> cache_;
};

// ------------------------------------------------------------ geometric lemmas

// Instance predicate for the two-generator Cramer bound: if v != w, both of
// norm < R, and max(|x.v|, |x.w|) < A, then |x| < 2AR. Returns whether the
// implication holds for this instance; an exhaustive sweep is the test oracle.
inline bool cramer_bound_holds(const Generator& v, const Generator& w, const Site& x,
                               double A, double R) {
    if (v == w) throw std::invalid_argument("cramer_bound_holds: generators must be distinct");
    if (!(v.norm() < R && w.norm() < R))
        throw std::invalid_argument("cramer_bound_holds: generators must have norm < R");
    const double xv = static_cast<double>(std::llabs(x.dot(v.v)));
    const double xw = static_cast<double>(std::llabs(x.dot(w.v)));
    if (std::max(xv, xw) >= A) return true;  // hypothesis empty
    return x.norm() < 2.0 * A * R;
}

// Report of the uniqueness/stability checks around a near-resonant site.
struct TraviataReport {
    enum class Status { pass, fail, not_applicable };
    Status status{Status::not_applicable};
    std::string detail;

    bool applicable() const noexcept { return status != Status::not_applicable; }
    bool passed() const noexcept { return status == Status::pass; }
};

// Hypotheses: |j| > J_delta and |b(j)| < 2|j|^mu. Checks
//  (i)  every other generator w of norm <= |j|^delta has |w.j| >= 2<j>^mu,
//  (ii) any h with |j-h| < 2 max(|j|,|h|)^delta and v(h) != v(j) forces
//       |v(j)| > |j|^delta / 2.
inline TraviataReport traviata_check(const GeometryParams& geom, const Site& j) {
    TraviataReport rep;
    const double jn = j.norm();
    if (!(jn > geom.j_threshold)) {
        rep.detail = "below threshold J_delta";
        return rep;
    }
    const SiteData sd = site_data(geom, j);
    const double babs = static_cast<double>(std::llabs(sd.b));
    if (!(babs < 2.0 * std::pow(jn, geom.mu))) {
        rep.detail = "b-hypothesis fails: |b(j)| >= 2|j|^mu";
        return rep;
    }

    const double two_jb_mu = 2.0 * std::pow(j.bracket(), geom.mu);

    // (i)
    for (const Generator& w : enumerate_generators(std::pow(jn, geom.delta))) {
        if (w == sd.v) continue;
        const double wj = static_cast<double>(std::llabs(j.dot(w.v)));
        if (wj < two_jb_mu) {
            rep.status = TraviataReport::Status::fail;
            rep.detail = "(i) fails at w=" + w.str() + ", |w.j|=" + dbl_str(wj);
            return rep;
        }
    }

    // (ii): scan radius 2(2|j|)^delta covers every admissible h
    const int scan = static_cast<int>(std::ceil(2.0 * std::pow(2.0 * jn, geom.delta)));
    const double vj_norm = sd.v.norm();
    const double half_jd = 0.5 * std::pow(jn, geom.delta);
    for (int dx = -scan; dx <= scan; ++dx) {
        for (int dy = -scan; dy <= scan; ++dy) {
            if (dx == 0 && dy == 0) continue;
            const Site h = j + Site{dx, dy};
            const double sep = Site{dx, dy}.norm();
            if (sep >= 2.0 * std::pow(std::max(jn, h.norm()), geom.delta)) continue;
            if (site_data(geom, h).v == sd.v) continue;
            if (!(vj_norm > half_jd)) {
                rep.status = TraviataReport::Status::fail;
                rep.detail = "(ii) fails: h=" + h.str() + " has v(h)!=v(j) but |v(j)|<=" +
                             dbl_str(half_jd);
                return rep;
            }
        }
    }

    rep.status = TraviataReport::Status::pass;
    return rep;
}

// -------------------------------------------------------------- parallel test

// If pi != 0 is an integer multiple of generator v, return the signed integer
// k with pi = k v; exact integer arithmetic, no floating point.
inline std::optional<long long> parallel_multiple(const Site& pi, const Generator& v) {
    if (pi.is_zero()) return std::nullopt;
    if (v.v.cross(pi) != 0) return std::nullopt;
    const long long vv = v.v.norm2();
    const long long k = v.v.dot(pi) / vv;
    if (Site{static_cast<int>(k * v.v.x), static_cast<int>(k * v.v.y)} != pi) return std::nullopt;
    if (k == 0) return std::nullopt;
    return k;
}

// The unique generator parallel (as a line) to s != 0.
inline Generator direction_generator(const Site& s) {
    if (s.is_zero()) throw std::invalid_argument("direction_generator: zero vector");
    const int g = std::gcd(std::abs(s.x), std::abs(s.y));
    Site p{s.x / g, s.y / g};
    if (p.x < 0 || (p.x == 0 && p.y < 0)) p = -p;
    return Generator(p);
}

}  // namespace qpkam
