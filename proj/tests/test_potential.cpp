#include <catch_amalgamated.hpp>

#include <algorithm>
#include <sstream>

#include "qpkam/potential.hpp"

using namespace qpkam;

namespace {
std::shared_ptr<const MomentumMap> id_map() {
    return std::make_shared<MomentumMap>(std::vector<Site>{{1, 0}, {0, 1}});
}
}  // namespace

TEST_CASE("potential norm closed forms") {
    auto map = id_map();
    TravelingWavePotential V(0.7, 1.5, 2);
    CHECK(potential_norm(V) == 0.0);

    const Fourier l0{2, -2};
    V.set_mode(*map, l0, Complex{0.3, -0.1});
    const double expect = std::sqrt(2.0) * std::abs(Complex{0.3, -0.1}) *
                          std::exp(0.7 * l0.norm()) * std::pow(l0.bracket(), 1.5);
    CHECK(potential_norm(V) == Catch::Approx(expect).epsilon(1e-14));
}

TEST_CASE("potential norm matches an independent re-summation") {
    auto map = id_map();
    const TravelingWavePotential V = random_potential(99, 0.37, 7, *map, 0.9, 2.5);
    REQUIRE(V.coeffs().size() >= 20);
    // reverse order, Kahan accumulation
    std::vector<double> terms;
    for (const auto& [l, v] : V.coeffs())
        terms.push_back(std::exp(2.0 * 0.9 * l.norm()) * std::pow(l.bracket(), 5.0) *
                        std::norm(v));
    std::sort(terms.rbegin(), terms.rend());
    double sum = 0.0, comp = 0.0;
    for (double t : terms) {
        const double y = t - comp;
        const double s = sum + y;
        comp = (s - sum) - y;
        sum = s;
    }
    CHECK(potential_norm(V) == Catch::Approx(std::sqrt(sum)).epsilon(1e-12));
}

TEST_CASE("random potential invariants") {
    auto map = id_map();
    SECTION("epsilon zero gives the zero potential") {
        const TravelingWavePotential V = random_potential(1, 0.0, 6, *map);
        CHECK(V.empty());
        CHECK(potential_norm(V) == 0.0);
    }
    SECTION("no admissible support") {
        // radius 1: all |l| <= 1 have component sum != 0
        CHECK_THROWS_AS(random_potential(1, 1e-3, 1, *map), std::runtime_error);
    }
    SECTION("norm hits the target exactly") {
        const TravelingWavePotential V = random_potential(7, 1e-3, 6, *map);
        CHECK(potential_norm(V) == Catch::Approx(1e-3).epsilon(1e-12));
    }
    SECTION("determinism and admissibility") {
        const TravelingWavePotential a = random_potential(42, 2e-4, 5, *map);
        const TravelingWavePotential b = random_potential(42, 2e-4, 5, *map);
        REQUIRE(a.coeffs().size() == b.coeffs().size());
        auto ia = a.coeffs().begin();
        for (const auto& [l, v] : b.coeffs()) {
            CHECK(ia->first == l);
            CHECK(ia->second == v);
            ++ia;
        }
        CHECK(a.reality_defect() == 0.0);
        for (const auto& [l, v] : a.coeffs()) {
            CHECK_FALSE(map->momentum(l).is_zero());
            CHECK(l.component_sum() == 0);
        }
    }
}

TEST_CASE("multiplication operator") {
    auto map = id_map();
    const TruncationBox box{6.0, 8.0};
    SECTION("zero potential") {
        TravelingWavePotential V(1.0, 2.0, 2);
        CHECK(multiplication_operator(V, box, map).empty());
    }
    SECTION("single mode readout") {
        TravelingWavePotential V(1.0, 2.0, 2);
        const Fourier l0{1, -1};
        V.set_mode(*map, l0, Complex{0.25, 0.5});
        const MomentumOperator M = multiplication_operator(V, box, map);
        const Site pi = map->momentum(l0);
        for (const Site& j : site_ball(box.site_radius)) {
            if (!box.site_ok(j - pi)) continue;
            CHECK(M.at(j, l0) == Complex{0.25, 0.5});
            CHECK(M.at(j, -l0) == std::conj(Complex{0.25, 0.5}));
        }
    }
    SECTION("self-adjointness and gauge covariance") {
        const TravelingWavePotential V = random_potential(8, 3e-3, 5, *map);
        const MomentumOperator M = multiplication_operator(V, box, map);
        CHECK(selfadjoint_defect(M) == 0.0);
        CHECK(is_gauge_covariant(M));
    }
    SECTION("commutes with truncation enlargement") {
        const TravelingWavePotential V = random_potential(8, 3e-3, 5, *map);
        const MomentumOperator small = multiplication_operator(V, box, map);
        const MomentumOperator big =
            multiplication_operator(V, TruncationBox{box.site_radius + 3, box.fourier_radius}, map);
        for (const auto& [k, v] : small.entries()) CHECK(big.at(k.j, k.ell) == v);
    }
}

TEST_CASE("covariance identities") {
    auto map = id_map();
    const TruncationBox box{5.0, 7.0};
    SECTION("identity transformation") {
        const TravelingWavePotential V = random_potential(3, 1e-2, 5, *map);
        CHECK(covariance_check(V, {0.4, 1.1}, {0.0, 0.0}, 0.0, box, *map) == 0.0);
    }
    SECTION("zero potential") {
        TravelingWavePotential V(1.0, 2.0, 2);
        CHECK(covariance_check(V, {0.4, 1.1}, {0.7, -0.2}, 0.9, box, *map) == 0.0);
    }
    SECTION("random transformations stay below 1e-12") {
        const TravelingWavePotential V = random_potential(5, 5e-2, 5, *map);
        Rng rng(17);
        for (int t = 0; t < 30; ++t) {
            const std::vector<double> phi{rng.uniform(-3, 3), rng.uniform(-3, 3)};
            const std::array<double, 2> zeta{rng.uniform(-2, 2), rng.uniform(-2, 2)};
            CHECK(covariance_check(V, phi, zeta, rng.uniform(-3, 3), box, *map) <= 1e-12);
        }
    }
}

TEST_CASE("potential file round-trip is bit exact") {
    auto map = id_map();
    const TravelingWavePotential V = random_potential(23, 7.7e-4, 6, *map, 1.3, 2.25);
    const nlohmann::json j = potential_to_json(V);
    const std::string text = j.dump();
    const TravelingWavePotential W = potential_from_json(nlohmann::json::parse(text), *map);
    CHECK(W.width_a() == V.width_a());
    CHECK(W.smoothness_p() == V.smoothness_p());
    REQUIRE(W.coeffs().size() == V.coeffs().size());
    auto iw = W.coeffs().begin();
    for (const auto& [l, v] : V.coeffs()) {
        CHECK(iw->first == l);
        CHECK(iw->second.real() == v.real());
        CHECK(iw->second.imag() == v.imag());
        ++iw;
    }
}
