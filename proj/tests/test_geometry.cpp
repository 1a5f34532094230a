#include <catch_amalgamated.hpp>

#include <numeric>

#include "qpkam/geometry.hpp"

using namespace qpkam;

namespace {

// independent brute-force generator scan: no reuse of enumerate_generators
std::vector<Site> brute_generators(double radius) {
    std::vector<Site> out;
    const int r = static_cast<int>(std::ceil(radius));
    for (int x = -r; x <= r; ++x)
        for (int y = -r; y <= r; ++y) {
            const Site s{x, y};
            if (s.is_zero() || s.norm() > radius + 1e-12) continue;
            const bool gen = (x == 0 && y == 1) || (x > 0 && std::gcd(std::abs(x), std::abs(y)) == 1);
            if (gen) out.push_back(s);
        }
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace

TEST_CASE("momentum map basics") {
    const MomentumMap id({{1, 0}, {0, 1}});
    CHECK(id.momentum(Fourier{3, -2}) == Site{3, -2});
    CHECK(id.momentum(Fourier{0, 0}) == Site{0, 0});

    const MomentumMap m3({{1, 0}, {0, 1}, {1, 1}});
    CHECK(m3.momentum(Fourier{1, 1, 1}) == Site{2, 2});

    // brute-force matrix multiply as oracle on random indices
    Rng rng(101);
    for (int t = 0; t < 200; ++t) {
        Fourier l(3);
        for (int i = 0; i < 3; ++i) l.set(i, rng.uniform_int(-9, 9));
        Site expect{0, 0};
        const std::vector<Site>& rows = m3.rows();
        for (int i = 0; i < 3; ++i) {
            expect.x += l[i] * rows[static_cast<size_t>(i)].x;
            expect.y += l[i] * rows[static_cast<size_t>(i)].y;
        }
        CHECK(m3.momentum(l) == expect);
    }
}

TEST_CASE("momentum is additive and c-bounded") {
    const MomentumMap m({{2, 1}, {0, 1}, {-1, 3}});
    Rng rng(7);
    for (int t = 0; t < 300; ++t) {
        Fourier a(3), b(3);
        for (int i = 0; i < 3; ++i) {
            a.set(i, rng.uniform_int(-6, 6));
            b.set(i, rng.uniform_int(-6, 6));
        }
        CHECK(m.momentum(a + b) == m.momentum(a) + m.momentum(b));
        if (!a.is_zero())
            CHECK(m.momentum(a).norm() <= m.c_inv() * a.norm() + 1e-9);
    }
    CHECK(m.c() > 0.0);
}

TEST_CASE("momentum map requires rank two") {
    CHECK_THROWS_AS(MomentumMap({{1, 1}, {2, 2}}), std::invalid_argument);
    CHECK_THROWS_AS(MomentumMap({{3, 0}}), std::invalid_argument);
}

TEST_CASE("generator enumeration matches brute force") {
    {
        const auto g = enumerate_generators(1.0);
        REQUIRE(g.size() == 2);
        CHECK(g[0].v == Site{0, 1});
        CHECK(g[1].v == Site{1, 0});
    }
    {
        const auto g = enumerate_generators(1.5);
        REQUIRE(g.size() == 4);
        CHECK(g[0].v == Site{0, 1});
        CHECK(g[1].v == Site{1, -1});
        CHECK(g[2].v == Site{1, 0});
        CHECK(g[3].v == Site{1, 1});
    }
    CHECK(enumerate_generators(0.5).empty());

    for (double r : {1.0, 2.0, 3.7, 5.0, 8.3}) {
        const auto got = enumerate_generators(r);
        const auto expect = brute_generators(r);
        REQUIRE(got.size() == expect.size());
        for (size_t i = 0; i < got.size(); ++i) CHECK(got[i].v == expect[i]);
    }
}

TEST_CASE("site data matches the examples and the brute-force minimum") {
    {
        const SiteData sd = site_data(GeometryParams::make(0.3), Site{1, 0});
        CHECK(sd.v.v == Site{0, 1});
        CHECK(sd.b == 0);
    }
    {
        const SiteData sd = site_data(GeometryParams::make(0.45), Site{3, 5});
        CHECK(sd.v.v == Site{1, -1});
        CHECK(sd.b == -2);
    }
    {
        const SiteData sd = site_data(GeometryParams::make(0.4), Site{0, 0});
        CHECK(sd.v.v == Site{0, 1});
        CHECK(sd.b == 0);
    }

    // brute force: lexicographically first minimizer over the admissible scan
    const GeometryParams geom = GeometryParams::make(0.4);
    for (const Site& j : site_ball(12.0)) {
        if (j.is_zero()) continue;
        const SiteData sd = site_data(geom, j);
        long long best = -1;
        Site arg{0, 0};
        for (const Site& v : brute_generators(std::pow(j.norm(), geom.delta))) {
            const long long d = std::llabs(j.dot(v));
            if (best < 0 || d < best) {
                best = d;
                arg = v;
            }
        }
        REQUIRE(best >= 0);
        CHECK(sd.v.v == arg);
        CHECK(std::llabs(sd.b) == best);
        CHECK(sd.b == j.dot(sd.v.v));
    }
}

TEST_CASE("site data is deterministic and minimal") {
    const GeometryParams geom = GeometryParams::make(0.3);
    SiteTable table(geom);
    for (const Site& j : site_ball(9.0)) {
        const SiteData a = site_data(geom, j);
        const SiteData b = table.at(j);
        CHECK(a.v == b.v);
        CHECK(a.b == b.b);
        if (j.is_zero()) continue;
        for (const Generator& w : enumerate_generators(std::pow(j.norm(), geom.delta)))
            CHECK(std::llabs(j.dot(w.v)) >= std::llabs(a.b));
    }
}

TEST_CASE("geometry params invariants") {
    const GeometryParams g = GeometryParams::make(0.4);
    CHECK(g.mu == Catch::Approx(1.0 - 2.0 * 0.4));
    CHECK(g.j_threshold >= std::pow(4.0, 1.0 / 0.4) - 1e-9);
    CHECK(g.j_threshold == 32.0);
    CHECK_THROWS_AS(GeometryParams::make(0.6), std::invalid_argument);
    CHECK_THROWS_AS(GeometryParams::make(0.4, 10.0), std::invalid_argument);
}

TEST_CASE("cramer bound instances") {
    const Generator e1(Site{1, 0}), e2(Site{0, 1});
    CHECK(cramer_bound_holds(e1, e2, Site{2, 3}, 4.0, 1.5));
    CHECK(cramer_bound_holds(e1, e2, Site{0, 0}, 1.0, 1.5));
    CHECK_THROWS_AS(cramer_bound_holds(e1, e1, Site{1, 1}, 1.0, 2.0), std::invalid_argument);

    // moderate sweep; the acceptance suite runs the full one
    const double R = 3.0;
    const auto gens = enumerate_generators(R - 1e-9);
    for (size_t a = 0; a < gens.size(); ++a)
        for (size_t b = a + 1; b < gens.size(); ++b)
            for (const Site& x : site_ball(25.0))
                for (int A = 1; A <= 6; ++A)
                    CHECK(cramer_bound_holds(gens[a], gens[b], x, A, R));
}

TEST_CASE("traviata gates and a small exhaustive window") {
    const GeometryParams geom = GeometryParams::make(0.4);
    CHECK_FALSE(traviata_check(geom, Site{1, 0}).applicable());  // below threshold
    {
        // |b(j)| >= 2 |j|^mu: pick a j on a resonant ridge with large b
        const Site j{33, 0};  // b(j) = 33 for v=(0,1)? v(j) minimizes; (0,1).j = 0
        const TraviataReport rep = traviata_check(geom, j);
        // (33,0) has b = 0 via v=(0,1); hypothesis holds and the check applies
        CHECK(rep.applicable());
    }
    int applicable = 0;
    for (const Site& j : site_ball(40.0)) {
        if (j.norm() <= geom.j_threshold) continue;
        const TraviataReport rep = traviata_check(geom, j);
        if (!rep.applicable()) continue;
        ++applicable;
        INFO(j.str() << ": " << rep.detail);
        CHECK(rep.passed());
    }
    CHECK(applicable > 0);
}

TEST_CASE("parallel multiple and direction generator") {
    const Generator v(Site{1, -1});
    CHECK(parallel_multiple(Site{3, -3}, v).value() == 3);
    CHECK(parallel_multiple(Site{-2, 2}, v).value() == -2);
    CHECK_FALSE(parallel_multiple(Site{1, 0}, v).has_value());
    CHECK_FALSE(parallel_multiple(Site{0, 0}, v).has_value());
    CHECK(direction_generator(Site{-2, 2}).v == Site{1, -1});
    CHECK(direction_generator(Site{0, -5}).v == Site{0, 1});
    CHECK(direction_generator(Site{4, 6}).v == Site{2, 3});
}
