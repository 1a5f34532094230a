// util.hpp — small value types shared across the library: lattice sites,
// short integer multi-indices, deterministic RNG streams, hashing.

#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <iosfwd>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace qpkam {

using Complex = std::complex<double>;

// Japanese bracket <x> = sqrt(1 + |x|^2)
inline double jbracket(double x) noexcept { return std::sqrt(1.0 + x * x); }

// ---------------------------------------------------------------- Site (Z^2)

struct Site {
    int x{0};
    int y{0};

    friend bool operator==(const Site& a, const Site& b) noexcept {
        return a.x == b.x && a.y == b.y;
    }
    friend bool operator!=(const Site& a, const Site& b) noexcept { return !(a == b); }
    friend bool operator<(const Site& a, const Site& b) noexcept {
        if (a.x != b.x) return a.x < b.x;
        return a.y < b.y;
    }
    friend Site operator+(const Site& a, const Site& b) noexcept { return {a.x + b.x, a.y + b.y}; }
    friend Site operator-(const Site& a, const Site& b) noexcept { return {a.x - b.x, a.y - b.y}; }
    Site operator-() const noexcept { return {-x, -y}; }

    long long dot(const Site& o) const noexcept {
        return static_cast<long long>(x) * o.x + static_cast<long long>(y) * o.y;
    }
    long long cross(const Site& o) const noexcept {
        return static_cast<long long>(x) * o.y - static_cast<long long>(y) * o.x;
    }
    long long norm2() const noexcept { return dot(*this); }
    double norm() const noexcept { return std::sqrt(static_cast<double>(norm2())); }
    double bracket() const noexcept { return std::sqrt(1.0 + static_cast<double>(norm2())); }
    bool is_zero() const noexcept { return x == 0 && y == 0; }

    std::string str() const {
        return "(" + std::to_string(x) + "," + std::to_string(y) + ")";
    }
};

// --------------------------------------------------- Fourier index (Z^d, d<=6)

// Multi-index on the d-torus; fixed inline capacity, no heap.
class Fourier {
public:
    static constexpr int max_dim = 6;

    Fourier() = default;
    explicit Fourier(int d) : d_(check_dim(d)) { c_.fill(0); }
    Fourier(std::initializer_list<int> v) : d_(check_dim(static_cast<int>(v.size()))) {
        c_.fill(0);
        int i = 0;
        for (int x : v) c_[i++] = static_cast<int16_t>(x);
    }
    explicit Fourier(const std::vector<int>& v) : d_(check_dim(static_cast<int>(v.size()))) {
        c_.fill(0);
        for (int i = 0; i < d_; ++i) c_[i] = static_cast<int16_t>(v[i]);
    }

    int dim() const noexcept { return d_; }
    int operator[](int i) const noexcept { return c_[i]; }
    void set(int i, int v) { c_[i] = static_cast<int16_t>(v); }

    friend bool operator==(const Fourier& a, const Fourier& b) noexcept {
        if (a.d_ != b.d_) return false;
        for (int i = 0; i < a.d_; ++i)
            if (a.c_[i] != b.c_[i]) return false;
        return true;
    }
    friend bool operator!=(const Fourier& a, const Fourier& b) noexcept { return !(a == b); }
    friend bool operator<(const Fourier& a, const Fourier& b) noexcept {
        if (a.d_ != b.d_) return a.d_ < b.d_;
        for (int i = 0; i < a.d_; ++i)
            if (a.c_[i] != b.c_[i]) return a.c_[i] < b.c_[i];
        return false;
    }
    friend Fourier operator+(const Fourier& a, const Fourier& b) {
        require_same(a, b);
        Fourier r(a.d_);
        for (int i = 0; i < a.d_; ++i) r.c_[i] = static_cast<int16_t>(a.c_[i] + b.c_[i]);
        return r;
    }
    friend Fourier operator-(const Fourier& a, const Fourier& b) {
        require_same(a, b);
        Fourier r(a.d_);
        for (int i = 0; i < a.d_; ++i) r.c_[i] = static_cast<int16_t>(a.c_[i] - b.c_[i]);
        return r;
    }
    Fourier operator-() const {
        Fourier r(d_);
        for (int i = 0; i < d_; ++i) r.c_[i] = static_cast<int16_t>(-c_[i]);
        return r;
    }

    long long norm2() const noexcept {
        long long s = 0;
        for (int i = 0; i < d_; ++i) s += static_cast<long long>(c_[i]) * c_[i];
        return s;
    }
    double norm() const noexcept { return std::sqrt(static_cast<double>(norm2())); }
    double bracket() const noexcept { return std::sqrt(1.0 + static_cast<double>(norm2())); }
    bool is_zero() const noexcept { return norm2() == 0; }
    int component_sum() const noexcept {
        int s = 0;
        for (int i = 0; i < d_; ++i) s += c_[i];
        return s;
    }

    std::string str() const {
        std::string s = "(";
        for (int i = 0; i < d_; ++i) {
            if (i) s += ",";
            s += std::to_string(c_[i]);
        }
        return s + ")";
    }

private:
    static int check_dim(int d) {
        if (d < 1 || d > max_dim)
            throw std::invalid_argument("Fourier: dimension must be in [1," +
                                        std::to_string(max_dim) + "]");
        return d;
    }
    static void require_same(const Fourier& a, const Fourier& b) {
        if (a.d_ != b.d_) throw std::invalid_argument("Fourier: dimension mismatch");
    }

    std::array<int16_t, max_dim> c_{};
    int d_{2};
};

// Enumerate all multi-indices with |l| <= radius, sorted. Cached callers
// should hold the result; this is a plain scan of the d-cube.
inline std::vector<Fourier> fourier_ball(int d, double radius) {
    std::vector<Fourier> out;
    if (radius < 0) return out;
    const int r = static_cast<int>(std::floor(radius));
    const double r2 = radius * radius;
    Fourier cur(d);
    std::function<void(int, long long)> rec = [&](int i, long long n2) {
        if (i == d) {
            out.push_back(cur);
            return;
        }
        for (int v = -r; v <= r; ++v) {
            const long long nn = n2 + static_cast<long long>(v) * v;
            if (static_cast<double>(nn) <= r2 + 1e-12) {
                cur.set(i, v);
                rec(i + 1, nn);
            }
        }
        cur.set(i, 0);
    };
    rec(0, 0);
    return out;
}

inline std::vector<Site> site_ball(double radius) {
    std::vector<Site> out;
    const int r = static_cast<int>(std::floor(radius));
    const double r2 = radius * radius;
    for (int x = -r; x <= r; ++x)
        for (int y = -r; y <= r; ++y)
            if (static_cast<double>(x) * x + static_cast<double>(y) * y <= r2 + 1e-12)
                out.push_back({x, y});
    return out;
}

// ------------------------------------------------------------------- hashing

struct SiteHash {
    size_t operator()(const Site& s) const noexcept {
        uint64_t h = (static_cast<uint64_t>(static_cast<uint32_t>(s.x)) << 32) |
                     static_cast<uint32_t>(s.y);
        h ^= h >> 33;
        h *= 0xff51afd7ed558ccdULL;
        h ^= h >> 33;
        return static_cast<size_t>(h);
    }
};

// FNV-1a over bytes; used for config hashes embedded in output files.
inline uint64_t fnv1a64(const std::string& s) noexcept {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[i] = digits[v & 0xf];
        v >>= 4;
    }
    return s;
}

// ------------------------------------------------------- deterministic random

// splitmix64 + explicit Box-Muller; std::normal_distribution is not
// reproducible across standard libraries, this is.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() noexcept {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // uniform in [0,1)
    double next_double() noexcept {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // uniform in [lo,hi)
    double uniform(double lo, double hi) noexcept {
        return lo + (hi - lo) * next_double();
    }

    int uniform_int(int lo, int hi) noexcept {  // inclusive range
        return lo + static_cast<int>(next_u64() % static_cast<uint64_t>(hi - lo + 1));
    }

    double gaussian() noexcept {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = next_double();
        } while (u1 <= 0.0);
        const double u2 = next_double();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double th = 2.0 * M_PI * u2;
        spare_ = r * std::sin(th);
        have_spare_ = true;
        return r * std::cos(th);
    }

    Complex complex_gaussian() noexcept { return {gaussian(), gaussian()}; }

    // independent substream for a named purpose
    Rng split(uint64_t purpose) const noexcept {
        return Rng(state_ ^ (0xa0761d6478bd642fULL * (purpose + 1)));
    }

private:
    uint64_t state_;
    double spare_{0.0};
    bool have_spare_{false};
};

// Halton low-discrepancy sequence over [0,1)^d, deterministic given offset.
class Halton {
public:
    explicit Halton(int dim, uint64_t seed = 0)
        : dim_(dim), index_(101 + 37 * (seed % 1000)) {
        if (dim < 1 || dim > 6) throw std::invalid_argument("Halton: dim in [1,6]");
    }

    std::vector<double> next() {
        static const int primes[6] = {2, 3, 5, 7, 11, 13};
        std::vector<double> p(dim_);
        ++index_;
        for (int i = 0; i < dim_; ++i) p[i] = radical_inverse(index_, primes[i]);
        return p;
    }

private:
    static double radical_inverse(uint64_t n, int base) noexcept {
        double inv = 1.0 / base, invk = inv, x = 0.0;
        while (n > 0) {
            x += static_cast<double>(n % base) * invk;
            n /= base;
            invk *= inv;
        }
        return x;
    }
    int dim_;
    uint64_t index_;
};

// ----------------------------------------------------------------- formatting

// Full-precision double for text snapshots; %.17g round-trips exactly.
inline std::string dbl_str(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace qpkam
