// toeplitz.hpp — line-Toeplitz symbols and quasi-Toeplitz decompositions.
//
// A line-Toeplitz operator has entries depending on the row site j only
// through (v(j), b(j)):  M_j^{j'}(l) = S(l, v(j), b(j)).  A quasi-Toeplitz
// operator of order -m stores one such symbol part plus graded remainders
// M^(i) measured at weights (n, m') ; the represented operator is always
// the entrywise sum  materialize(symbol) + sum of remainders, so the
// decomposition identity holds exactly by construction.
//
// The symbol product preserving the structure is
//   T(l,v,b) = sum_{l1+l2=l} T1(l1,v,b) T2(l2, v, b - v.pi(l1)),
// and the product remainders are assembled from the cross terms, classified
// into order classes; for two order -1 factors the left-remainder-times-
// symbol term is split per chain term by the resonance-region case analysis
// into a (1,1) and a (2,0) part.

#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "operator_core.hpp"

namespace qpkam {

// --------------------------------------------------------------- symbol part

class LineToeplitzSymbol {
public:
    struct Key {
        Fourier ell;
        Generator v;
        long long b{0};
        friend bool operator<(const Key& a, const Key& k) noexcept {
            if (a.ell != k.ell) return a.ell < k.ell;
            if (a.v != k.v) return a.v < k.v;
            return a.b < k.b;
        }
    };
    using ValueMap = std::map<Key, Complex>;

    const ValueMap& values() const noexcept { return values_; }
    bool empty() const noexcept { return values_.empty(); }

    Complex at(const Fourier& ell, const Generator& v, long long b) const {
        auto it = values_.find(Key{ell, v, b});
        return it == values_.end() ? Complex{} : it->second;
    }
    void add(const Fourier& ell, const Generator& v, long long b, Complex x) {
        if (x == Complex{}) return;
        values_[Key{ell, v, b}] += x;
    }
    void set(const Fourier& ell, const Generator& v, long long b, Complex x) {
        if (x == Complex{})
            values_.erase(Key{ell, v, b});
        else
            values_[Key{ell, v, b}] = x;
    }

    LineToeplitzSymbol& operator+=(const LineToeplitzSymbol& o) {
        for (const auto& [k, x] : o.values_) values_[k] += x;
        return *this;
    }
    LineToeplitzSymbol& operator-=(const LineToeplitzSymbol& o) {
        for (const auto& [k, x] : o.values_) values_[k] -= x;
        return *this;
    }
    LineToeplitzSymbol& operator*=(Complex c) {
        for (auto& [k, x] : values_) x *= c;
        return *this;
    }

    void prune(double tiny = 1e-280) {
        for (auto it = values_.begin(); it != values_.end();)
            it = (std::abs(it->second) < tiny) ? values_.erase(it) : std::next(it);
    }

private:
    ValueMap values_;
};

// |S|^T_{a,-m} = sup_{v,b} sum_l e^{a(c|v| + |l|)} |S(l,v,b)| <b>^m
inline double lt_norm(const LineToeplitzSymbol& S, double a, int m, double c) {
    std::map<std::pair<Generator, long long>, double> fiber;
    for (const auto& [k, x] : S.values()) {
        const double bb = std::sqrt(1.0 + static_cast<double>(k.b) * k.b);
        fiber[{k.v, k.b}] += std::exp(a * (c * k.v.norm() + k.ell.norm())) * std::abs(x) *
                             std::pow(bb, m);
    }
    double sup = 0.0;
    for (const auto& [vb, s] : fiber) sup = std::max(sup, s);
    return sup;
}

// Fill M_j^{j-pi(l)}(l) = S(l, v(j), b(j)) over the box.
inline MomentumOperator lt_materialize(const LineToeplitzSymbol& S, const TruncationBox& trunc,
                                       const SiteTable& sites,
                                       std::shared_ptr<const MomentumMap> map) {
    MomentumOperator M(map, trunc);
    if (S.empty()) return M;
    // group symbol support by (v, b) fiber
    std::map<std::pair<Generator, long long>, std::vector<std::pair<Fourier, Complex>>> fibers;
    for (const auto& [k, x] : S.values()) fibers[{k.v, k.b}].emplace_back(k.ell, x);
    for (const Site& j : site_ball(trunc.site_radius)) {
        const SiteData& sd = sites.at(j);
        auto it = fibers.find({sd.v, sd.b});
        if (it == fibers.end()) continue;
        for (const auto& [ell, x] : it->second) M.add(j, ell, x);
    }
    return M;
}

// ------------------------------------------------------------ quasi-Toeplitz

struct NormContext {
    const SiteTable* sites{nullptr};
    double c{1.0};  // the momentum-map constant
    double p{1.0};  // the h^p exponent
};

struct WeightedRemainder {
    OrderWeight w;
    MomentumOperator op;
};

class QuasiToeplitzOperator {
public:
    QuasiToeplitzOperator() = default;
    QuasiToeplitzOperator(int order_m, double width_a, std::shared_ptr<const MomentumMap> map,
                          TruncationBox trunc)
        : order_(order_m), width_(width_a), map_(std::move(map)), trunc_(trunc) {
        if (order_ < 0) throw std::invalid_argument("QuasiToeplitzOperator: order >= 0");
        if (!(width_ > 0)) throw std::invalid_argument("QuasiToeplitzOperator: width > 0");
    }

    int order() const noexcept { return order_; }
    double width() const noexcept { return width_; }
    std::shared_ptr<const MomentumMap> map_ptr() const { return map_; }
    const MomentumMap& map() const { return *map_; }
    const TruncationBox& trunc() const noexcept { return trunc_; }

    LineToeplitzSymbol& symbol() noexcept { return symbol_; }
    const LineToeplitzSymbol& symbol() const noexcept { return symbol_; }
    const std::vector<WeightedRemainder>& remainders() const noexcept { return remainders_; }

    void add_remainder(OrderWeight w, MomentumOperator op) {
        if (op.empty()) return;
        for (WeightedRemainder& r : remainders_) {
            if (r.w == w) {
                r.op += op;
                return;
            }
        }
        remainders_.push_back({w, std::move(op)});
        std::sort(remainders_.begin(), remainders_.end(),
                  [](const WeightedRemainder& a, const WeightedRemainder& b) {
                      if (a.w.n != b.w.n) return a.w.n < b.w.n;
                      return a.w.m < b.w.m;
                  });
    }

    MomentumOperator remainder_sum() const {
        MomentumOperator R(map_, trunc_);
        for (const WeightedRemainder& r : remainders_) R += r.op;
        return R;
    }

    // materialize(symbol) + sum of remainders; the operator this value stands for
    MomentumOperator represented(const SiteTable& sites) const {
        MomentumOperator M = lt_materialize(symbol_, trunc_, sites, map_);
        for (const WeightedRemainder& r : remainders_) M += r.op;
        return M;
    }

    bool structurally_zero() const noexcept {
        if (!symbol_.empty()) return false;
        for (const WeightedRemainder& r : remainders_)
            if (!r.op.empty()) return false;
        return true;
    }

    QuasiToeplitzOperator& operator+=(const QuasiToeplitzOperator& o) {
        require_same_shape(o);
        symbol_ += o.symbol_;
        for (const WeightedRemainder& r : o.remainders_) add_remainder(r.w, r.op);
        return *this;
    }
    QuasiToeplitzOperator& operator-=(const QuasiToeplitzOperator& o) {
        require_same_shape(o);
        symbol_ -= o.symbol_;
        for (WeightedRemainder r : o.remainders_) {
            r.op *= Complex{-1.0, 0.0};
            add_remainder(r.w, std::move(r.op));
        }
        return *this;
    }
    QuasiToeplitzOperator& operator*=(Complex c) {
        symbol_ *= c;
        for (WeightedRemainder& r : remainders_) r.op *= c;
        return *this;
    }
    friend QuasiToeplitzOperator operator+(QuasiToeplitzOperator a, const QuasiToeplitzOperator& b) {
        a += b;
        return a;
    }
    friend QuasiToeplitzOperator operator-(QuasiToeplitzOperator a, const QuasiToeplitzOperator& b) {
        a -= b;
        return a;
    }
    friend QuasiToeplitzOperator operator*(Complex c, QuasiToeplitzOperator a) {
        a *= c;
        return a;
    }

    void set_width(double a) {
        if (!(a > 0)) throw std::invalid_argument("set_width: a > 0");
        width_ = a;
    }
    void set_order(int m) {
        if (m < 0) throw std::invalid_argument("set_order: m >= 0");
        order_ = m;
    }

    void prune(double tiny = 1e-280) {
        symbol_.prune(tiny);
        for (WeightedRemainder& r : remainders_) r.op.prune(tiny);
        remainders_.erase(std::remove_if(remainders_.begin(), remainders_.end(),
                                         [](const WeightedRemainder& r) { return r.op.empty(); }),
                          remainders_.end());
    }

private:
    void require_same_shape(const QuasiToeplitzOperator& o) const {
        if (order_ != o.order_)
            throw std::invalid_argument("QuasiToeplitzOperator: order mismatch");
        if (!map_ || !o.map_ || *map_ != *o.map_)
            throw std::invalid_argument("QuasiToeplitzOperator: map mismatch");
    }

    int order_{0};
    double width_{1.0};
    std::shared_ptr<const MomentumMap> map_;
    TruncationBox trunc_{};
    LineToeplitzSymbol symbol_;
    std::vector<WeightedRemainder> remainders_;
};

// Stored-decomposition norm: symbol T-norm at the declared width plus the
// order norms of the remainders at half width. Upper bound for the paper's
// infimum over decompositions.
inline double qt_norm(const QuasiToeplitzOperator& Q, const NormContext& ctx) {
    double s = lt_norm(Q.symbol(), Q.width(), Q.order(), ctx.c);
    for (const WeightedRemainder& r : Q.remainders())
        s += order_norm(r.op, Q.width() / 2.0, r.w, ctx.p, *ctx.sites).upper;
    return s;
}

// Wrap a plain operator as a quasi-Toeplitz value with the whole content in
// one remainder class (zero symbol part).
inline QuasiToeplitzOperator qt_wrap(MomentumOperator M, OrderWeight w, int order, double width) {
    QuasiToeplitzOperator Q(order, width, M.map_ptr(), M.trunc());
    Q.add_remainder(w, std::move(M));
    return Q;
}

// Band projections act on the l-support of symbol and remainders alike and
// partition the operator exactly.
inline QuasiToeplitzOperator qt_project(const QuasiToeplitzOperator& Q,
                                        const std::function<bool(const Fourier&)>& keep) {
    QuasiToeplitzOperator out(Q.order(), Q.width(), Q.map_ptr(), Q.trunc());
    for (const auto& [k, x] : Q.symbol().values())
        if (keep(k.ell)) out.symbol().set(k.ell, k.v, k.b, x);
    for (const WeightedRemainder& r : Q.remainders()) {
        MomentumOperator part(r.op.map_ptr(), r.op.trunc());
        for (const auto& [k, v] : r.op.entries())
            if (keep(k.ell)) part.set(k.j, k.ell, v);
        out.add_remainder(r.w, std::move(part));
    }
    return out;
}

inline QuasiToeplitzOperator qt_project_low(const QuasiToeplitzOperator& Q, double K) {
    return qt_project(Q, [K](const Fourier& l) { return l.norm() <= K + 1e-12; });
}
inline QuasiToeplitzOperator qt_project_high(const QuasiToeplitzOperator& Q, double K) {
    return qt_project(Q, [K](const Fourier& l) { return l.norm() > K + 1e-12; });
}
// 0 < |l| <= K
inline QuasiToeplitzOperator qt_project_band(const QuasiToeplitzOperator& Q, double K) {
    return qt_project(Q, [K](const Fourier& l) { return !l.is_zero() && l.norm() <= K + 1e-12; });
}
inline QuasiToeplitzOperator qt_time_average(const QuasiToeplitzOperator& Q) {
    return qt_project(Q, [](const Fourier& l) { return l.is_zero(); });
}

// --------------------------------------------------------------- diagonal data

// Reduced diagonal: Omega_j = |j|^2 + a(v(j), b(j)) + r1_j + r2_j.
struct DiagonalData {
    std::map<std::pair<Generator, long long>, double> a_symbol;
    std::map<Site, double> r1, r2;
    double site_radius{0.0};

    double a_at(const Generator& v, long long b) const {
        auto it = a_symbol.find({v, b});
        return it == a_symbol.end() ? 0.0 : it->second;
    }
    double r1_at(const Site& j) const {
        auto it = r1.find(j);
        return it == r1.end() ? 0.0 : it->second;
    }
    double r2_at(const Site& j) const {
        auto it = r2.find(j);
        return it == r2.end() ? 0.0 : it->second;
    }
    double tilde(const Site& j, const SiteTable& sites) const {
        const SiteData& sd = sites.at(j);
        return a_at(sd.v, sd.b) + r1_at(j) + r2_at(j);
    }
    double omega(const Site& j, const SiteTable& sites) const {
        return static_cast<double>(j.norm2()) + tilde(j, sites);
    }
    double max_realized_b(const SiteTable& sites) const {
        double m = 0.0;
        for (const Site& j : site_ball(site_radius))
            m = std::max(m, std::abs(static_cast<double>(sites.at(j).b)));
        for (const auto& [vb, x] : a_symbol)
            m = std::max(m, std::abs(static_cast<double>(vb.second)));
        return m;
    }
};

// The tilde part as a quasi-Toeplitz value (for the smallness checks).
inline QuasiToeplitzOperator diagonal_as_qt(const DiagonalData& D, double width,
                                            std::shared_ptr<const MomentumMap> map,
                                            const TruncationBox& trunc, const SiteTable& sites) {
    QuasiToeplitzOperator Q(2, width, map, trunc);
    const Fourier zero(map->dim());
    for (const auto& [vb, x] : D.a_symbol) Q.symbol().set(zero, vb.first, vb.second, Complex{x, 0});
    MomentumOperator R1(map, trunc), R2(map, trunc);
    for (const auto& [j, x] : D.r1) R1.set(j, zero, Complex{x, 0});
    for (const auto& [j, x] : D.r2) R2.set(j, zero, Complex{x, 0});
    Q.add_remainder({1, 1}, std::move(R1));
    Q.add_remainder({2, 0}, std::move(R2));
    return Q;
}

struct DiagonalDecomposition {
    DiagonalData data;
    double imag_defect{0.0};
};

// Split a time-independent order-2 operator into a(v,b) + r1 + r2: the l=0
// slice of the symbol gives a, the l=0 diagonals of the remainders give the
// r's by their n-exponent. Real parts are taken; the discarded imaginary
// mass is reported.
inline DiagonalDecomposition diagonal_decompose(const QuasiToeplitzOperator& A,
                                                const SiteTable& sites) {
    for (const auto& [k, x] : A.symbol().values())
        if (!k.ell.is_zero())
            throw std::invalid_argument("diagonal_decompose: not time independent (symbol)");
    for (const WeightedRemainder& r : A.remainders())
        for (const auto& [k, v] : r.op.entries())
            if (!k.ell.is_zero())
                throw std::invalid_argument("diagonal_decompose: not time independent (remainder)");

    DiagonalDecomposition out;
    out.data.site_radius = A.trunc().site_radius;
    for (const auto& [k, x] : A.symbol().values()) {
        out.data.a_symbol[{k.v, k.b}] += x.real();
        out.imag_defect = std::max(out.imag_defect, std::abs(x.imag()));
    }
    for (const WeightedRemainder& r : A.remainders()) {
        auto& table = (r.w.n <= 1) ? out.data.r1 : out.data.r2;
        for (const auto& [k, v] : r.op.entries()) {
            table[k.j] += v.real();
            out.imag_defect = std::max(out.imag_defect, std::abs(v.imag()));
        }
    }
    return out;
}

// ------------------------------------------------------------------- products

namespace detail {

// Symbol convolution with the b-shift; output l capped by the box.
inline LineToeplitzSymbol symbol_product(const LineToeplitzSymbol& S1,
                                         const LineToeplitzSymbol& S2, const MomentumMap& map,
                                         const TruncationBox& box) {
    LineToeplitzSymbol out;
    if (S1.empty() || S2.empty()) return out;
    std::map<std::pair<Generator, long long>, std::vector<std::pair<Fourier, Complex>>> fibers2;
    for (const auto& [k, x] : S2.values()) fibers2[{k.v, k.b}].emplace_back(k.ell, x);
    for (const auto& [k1, x1] : S1.values()) {
        const long long shift = k1.v.v.dot(map.momentum(k1.ell));
        auto it = fibers2.find({k1.v, k1.b - shift});
        if (it == fibers2.end()) continue;
        for (const auto& [l2, x2] : it->second) {
            const Fourier l = k1.ell + l2;
            if (!box.fourier_ok(l)) continue;
            out.add(l, k1.v, k1.b, x1 * x2);
        }
    }
    return out;
}

// clip a justified class (n, m) to the canonical classes of an order-m_out value
inline OrderWeight clip_class(int n, int m, int m_out) {
    const int n2 = std::min(n, m_out);
    const int m2 = std::min(m, m_out - n2);
    return OrderWeight{n2, m2};
}

}  // namespace detail

struct QtProductResult {
    QuasiToeplitzOperator op;
    double dropped_mass{0.0};
};

// Product of two quasi-Toeplitz values. Output order: 2 when both factors
// have order 1 (the refined route, with the per-chain-term region split),
// min(m1, m2) otherwise. a_out must not exceed the factor widths.
inline QtProductResult qt_product(const QuasiToeplitzOperator& Q1, const QuasiToeplitzOperator& Q2,
                                  double a_out, const SiteTable& sites) {
    if (*Q1.map_ptr() != *Q2.map_ptr())
        throw std::invalid_argument("qt_product: momentum map mismatch");
    if (a_out > std::min(Q1.width(), Q2.width()) + 1e-15)
        throw std::invalid_argument("qt_product: a_out exceeds factor widths");
    const bool refined = (Q1.order() == 1 && Q2.order() == 1);
    const int m_out = refined ? 2 : std::min(Q1.order(), Q2.order());

    const TruncationBox box{std::min(Q1.trunc().site_radius, Q2.trunc().site_radius),
                            std::min(Q1.trunc().fourier_radius, Q2.trunc().fourier_radius)};
    QtProductResult res{QuasiToeplitzOperator(m_out, a_out, Q1.map_ptr(), box), 0.0};
    const MomentumMap& map = Q1.map();
    const GeometryParams& geom = sites.geom();

    // symbol part
    res.op.symbol() = detail::symbol_product(Q1.symbol(), Q2.symbol(), map, box);

    const MomentumOperator T1 = lt_materialize(Q1.symbol(), box, sites, Q1.map_ptr());
    const MomentumOperator T2 = lt_materialize(Q2.symbol(), box, sites, Q2.map_ptr());

    // symbol-product mismatch T1 T2 - materialize(T): order (m_out, 0)
    {
        ComposeResult t1t2 = compose(T1, T2);
        res.dropped_mass += t1t2.dropped_mass;
        MomentumOperator mm = std::move(t1t2.op);
        mm -= lt_materialize(res.op.symbol(), box, sites, Q1.map_ptr());
        mm.prune();
        res.op.add_remainder(OrderWeight{m_out, 0}, std::move(mm));
    }

    // left remainders times right symbol
    for (const WeightedRemainder& r1 : Q1.remainders()) {
        if (refined && r1.w.n == 1 && r1.w.m == 0) {
            // region split per chain term: the mid site decides the class
            MomentumOperator part11(Q1.map_ptr(), box), part20(Q1.map_ptr(), box);
            std::unordered_map<Site, std::vector<std::pair<Fourier, Complex>>, SiteHash> rows;
            for (const auto& [k, v] : T2.entries()) rows[k.j].emplace_back(k.ell, v);
            const double Jdelta = geom.j_threshold;
            for (const auto& [k, x1] : r1.op.entries()) {
                const Site mid = k.j - map.momentum(k.ell);
                auto it = rows.find(mid);
                if (it == rows.end()) continue;
                const SiteData& smid = sites.at(mid);
                bool weak;  // true -> only the (1,1) estimate applies
                if (mid.bracket() <= Jdelta)
                    weak = false;  // (E)
                else if (k.ell.norm() > map.c() * std::pow(k.j.bracket(), geom.delta))
                    weak = false;  // (A)
                else if (smid.v.norm() > 0.5 * std::pow(mid.bracket(), geom.delta))
                    weak = false;  // (B)
                else if (std::abs(static_cast<double>(smid.b)) > std::pow(mid.bracket(), geom.mu))
                    weak = false;  // (C)
                else
                    weak = true;   // (D)
                MomentumOperator& dst = weak ? part11 : part20;
                for (const auto& [l2, x2] : it->second) {
                    const Fourier l = k.ell + l2;
                    if (!box.fourier_ok(l)) {
                        res.dropped_mass += std::abs(x1) * std::abs(x2);
                        continue;
                    }
                    dst.add(k.j, l, x1 * x2);
                }
            }
            res.op.add_remainder(OrderWeight{1, 1}, std::move(part11));
            res.op.add_remainder(OrderWeight{2, 0}, std::move(part20));
        } else {
            ComposeResult cr = compose(r1.op, T2);
            res.dropped_mass += cr.dropped_mass;
            res.op.add_remainder(detail::clip_class(r1.w.n, r1.w.m, m_out), std::move(cr.op));
        }
    }

    // left symbol times right remainders: row decay comes from T1's order
    for (const WeightedRemainder& r2 : Q2.remainders()) {
        ComposeResult cr = compose(T1, r2.op);
        res.dropped_mass += cr.dropped_mass;
        res.op.add_remainder(detail::clip_class(r2.w.n, Q1.order(), m_out), std::move(cr.op));
    }

    // remainder times remainder: the n-exponents add (up to the output
    // order) at the price of the b-weight
    for (const WeightedRemainder& r1 : Q1.remainders()) {
        for (const WeightedRemainder& r2 : Q2.remainders()) {
            ComposeResult cr = compose(r1.op, r2.op);
            res.dropped_mass += cr.dropped_mass;
            res.op.add_remainder(detail::clip_class(r1.w.n + r2.w.n, 0, m_out),
                                 std::move(cr.op));
        }
    }

    res.op.prune();
    return res;
}

inline QtProductResult qt_commutator(const QuasiToeplitzOperator& A,
                                     const QuasiToeplitzOperator& B, double a_out,
                                     const SiteTable& sites) {
    QtProductResult ab = qt_product(A, B, a_out, sites);
    QtProductResult ba = qt_product(B, A, a_out, sites);
    ab.op -= ba.op;
    ab.dropped_mass += ba.dropped_mass;
    ab.op.prune();
    return ab;
}

// Order-2 value reinterpreted as order 1 (weaker classes, same content).
inline QuasiToeplitzOperator qt_downgrade(const QuasiToeplitzOperator& Q) {
    QuasiToeplitzOperator out(1, Q.width(), Q.map_ptr(), Q.trunc());
    out.symbol() = Q.symbol();
    for (const WeightedRemainder& r : Q.remainders())
        out.add_remainder(detail::clip_class(r.w.n, r.w.m, 1), r.op);
    return out;
}

// ------------------------------------------------------------------ Lie series

struct LieParams {
    int max_terms{12};
    double tail_tol{1e-14};   // relative to the zeroth term
    double cert_C{1.0};       // smallness threshold a^{q0} / (4 C)
    double cert_q0{1.0};
    bool force{false};        // run past a failed certificate, recording it
};

struct LieResult {
    QuasiToeplitzOperator op;
    double tail_bound{0.0};
    double dropped_mass{0.0};
    int terms_used{0};
    bool certified{true};
};

// sum_{k>=0} coeff(k) (ad S)^k Q, with ad S[X] = [X, S]. Terms stop when the
// running term norm falls below tail_tol * |coeff(0) Q|.
inline LieResult lie_series(const QuasiToeplitzOperator& Q, const QuasiToeplitzOperator& S,
                            const std::function<double(int)>& coeff, const LieParams& prm,
                            const NormContext& ctx) {
    LieResult res;
    const double sn = qt_norm(S, ctx);
    const double cert_threshold = std::pow(S.width(), prm.cert_q0) / (4.0 * prm.cert_C);
    res.certified = sn <= cert_threshold;
    if (!res.certified && !prm.force)
        throw std::runtime_error("lie_series: Lie series not certified (|S| = " + dbl_str(sn) +
                                 " > " + dbl_str(cert_threshold) + ")");

    QuasiToeplitzOperator term = Q;
    res.op = Q;
    res.op *= Complex{coeff(0), 0.0};
    const double base = qt_norm(Q, ctx) * std::abs(coeff(0));
    double prev_norm = qt_norm(Q, ctx);
    res.terms_used = 1;
    for (int k = 1; k <= prm.max_terms; ++k) {
        QtProductResult c = qt_commutator(term, S, std::min(term.width(), S.width()), *ctx.sites);
        res.dropped_mass += c.dropped_mass;
        term = std::move(c.op);
        if (term.order() != Q.order()) {
            // refined route may upgrade the order; fold back for accumulation
            if (Q.order() == 1) term = qt_downgrade(term);
        }
        QuasiToeplitzOperator scaled = term;
        scaled *= Complex{coeff(k), 0.0};
        res.op += scaled;
        ++res.terms_used;
        const double tn = qt_norm(term, ctx);
        const double contribution = tn * std::abs(coeff(k));
        if (contribution <= prm.tail_tol * std::max(base, 1e-300)) {
            const double rho = prev_norm > 0 ? std::min(0.9, tn / prev_norm) : 0.0;
            res.tail_bound = contribution * rho / (1.0 - rho);
            return res;
        }
        prev_norm = tn;
    }
    // did not reach the tolerance: report the last contribution as the bound
    res.tail_bound = qt_norm(term, ctx) * std::abs(coeff(prm.max_terms));
    return res;
}

// e^{ad S} Q = sum_k (ad S)^k Q / k!
inline LieResult lie_conjugate(const QuasiToeplitzOperator& Q, const QuasiToeplitzOperator& S,
                               const LieParams& prm, const NormContext& ctx) {
    std::vector<double> fact{1.0};
    for (int k = 1; k <= prm.max_terms; ++k) fact.push_back(fact.back() / k);
    return lie_series(Q, S, [fact](int k) { return fact[static_cast<size_t>(k)]; }, prm, ctx);
}

}  // namespace qpkam
