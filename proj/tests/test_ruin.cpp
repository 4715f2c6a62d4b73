#include "doctest.h"
#include "jsqlab/ruin.hpp"
#include "oracles.hpp"

#include <cmath>
#include <random>

using namespace jsq;

namespace {

RuinSpec walk(double p, int z, int a, double rate = 1.0) {
    RuinSpec s;
    s.p = p;
    s.q = 1.0 - p;
    s.z = z;
    s.a = a;
    s.rate = rate;
    return s;
}

}  // namespace

TEST_CASE("closed forms on small walks") {
    CHECK(ruin_probability(walk(0.6, 1, 2)) == doctest::Approx(0.4).epsilon(1e-14));
    CHECK(ruin_probability(walk(0.5, 1, 4)) == doctest::Approx(0.75).epsilon(1e-14));
    // from z = 1 on 0..2 the game always ends after one turn
    CHECK(duration_pgf(walk(0.3, 1, 2), 0.7) == doctest::Approx(0.7).epsilon(1e-14));
    // fair walk on 0..3 from 1: u = s/2 + (s/2) u by symmetry
    CHECK(duration_pgf(walk(0.5, 1, 3), 0.5) == doctest::Approx(1.0 / 3).epsilon(1e-14));
    CHECK(ct_duration_mgf(walk(0.3, 1, 2, 3.0)) == doctest::Approx(0.75).epsilon(1e-14));
}

TEST_CASE("agreement with dense first-step analysis") {
    for (double p : {0.2, 0.45, 0.5, 0.5000001, 0.55, 0.9})
        for (auto [z, a] : {std::pair{1, 2}, {3, 7}, {10, 11}, {5, 40}})
            for (double s : {0.1, 0.9, 0.999}) {
                auto ref = oracle::gambler(p, z, a, s);
                auto sp = walk(p, z, a);
                CHECK(std::abs(ruin_probability(sp) - ref.ruin) <= 1e-12);
                CHECK(std::abs(duration_pgf(sp, s) - ref.pgf) <= 1e-12);
                auto ab = absorbing_oracle(sp, s);
                CHECK(std::abs(ab.ruin_probability - ref.ruin) <= 1e-12);
                CHECK(std::abs(ab.expected_duration - ref.duration) <= 1e-9 * std::max(1.0, ref.duration));
                CHECK(std::abs(ab.pgf - ref.pgf) <= 1e-12);
            }
    CHECK(std::isnan(absorbing_oracle(walk(0.4, 2, 5)).pgf));
    CHECK_THROWS_AS(absorbing_oracle(walk(0.4, 2, 20000)), std::length_error);
}

TEST_CASE("roots of p s L^2 - L + q s") {
    for (double p : {0.3, 0.5, 0.7})
        for (double s : {0.2, 0.95}) {
            const double q = 1 - p;
            const double r = std::sqrt(1 - 4 * p * q * s * s);
            const double L1 = (1 + r) / (2 * p * s), L2 = (1 - r) / (2 * p * s);
            CHECK(L1 * L2 == doctest::Approx(q / p));
            CHECK(L1 + L2 == doctest::Approx(1 / (p * s)));
            CHECK(p * s * L1 * L1 - L1 + q * s == doctest::Approx(0.0).scale(1.0));
            // pgf rebuilt from the raw roots
            const int z = 3, a = 8;
            const double raw = ((1 - std::pow(L2, a)) * std::pow(L1, z) + (std::pow(L1, a) - 1) * std::pow(L2, z)) /
                               (std::pow(L1, a) - std::pow(L2, a));
            CHECK(duration_pgf(walk(p, z, a), s) == doctest::Approx(raw).epsilon(1e-12));
        }
}

TEST_CASE("invalid walks are rejected") {
    CHECK_THROWS_AS(ruin_probability(walk(0.5, 0, 3)), std::invalid_argument);
    CHECK_THROWS_AS(ruin_probability(walk(0.5, 3, 3)), std::invalid_argument);
    CHECK_THROWS_AS(ruin_probability(walk(1.0, 1, 3)), std::invalid_argument);
    RuinSpec bad = walk(0.5, 1, 3);
    bad.q = 0.4;
    CHECK_THROWS_AS(ruin_probability(bad), std::invalid_argument);
    CHECK_THROWS_AS(duration_pgf(walk(0.5, 1, 3), 1.0), std::domain_error);
}

TEST_CASE("continuous-time walk in the Halfin-Whitt regime") {
    auto sp = halfin_whitt_spec(10000, 1, 1.0, 0, 1);
    CHECK(sp.z == 50);
    CHECK(sp.a == 75);
    CHECK(sp.rate == doctest::Approx(9900.0 + (10000 - 0 - 1 - 50 + 25) - 50));
    CHECK(sp.p + sp.q == doctest::Approx(1.0));
    // the mgf with s near 1 against the tridiagonal solve
    const double s = sp.rate / (sp.rate + 1);
    CHECK(std::abs(ct_duration_mgf(sp) - absorbing_oracle(sp, s).pgf) <= 1e-10);
    CHECK_THROWS_AS(halfin_whitt_spec(4, 1, 1.0, 0, 1), std::domain_error);

    std::vector<int> ladder;
    for (int n = 100; n <= 1000000; n *= 10) ladder.push_back(n);
    for (int b : {1, 2})
        for (double beta : {0.5, 1.0, 2.0})
            for (double frac : {0.0, 0.5, 1.0}) {
                auto scan = halfin_whitt_mgf_scan(b, beta, frac, ladder);
                // q2 = 0 keeps a margin of 1e-3; at the far end of the q2 range the
                // value creeps up to about 0.9994 for beta = 0.5, still below 1
                if (frac == 0.0) {
                    CHECK(scan.below_margin);
                    CHECK(scan.max_mgf < 0.999);
                } else {
                    CHECK(scan.max_mgf < 1.0 - 1e-4);
                }
                REQUIRE(scan.points.size() == ladder.size());
                // the largest rungs are always inside the regime
                CHECK(scan.points.back().defined);
                CHECK(scan.points[scan.points.size() - 2].defined);
                for (const auto& pt : scan.points)
                    if (pt.defined) CHECK(pt.mgf > 0.0);
            }
}

TEST_CASE("duration laws") {
    for (int a = 2; a <= 9; ++a)
        for (int z = 1; z < a; ++z)
            CHECK(absorbing_oracle(walk(0.5, z, a)).expected_duration == doctest::Approx(double(z) * (a - z)));
    // pgf increases in s and tends to one
    auto sp = walk(0.4, 3, 8);
    double prev = 0.0;
    for (double s = 0.05; s < 1.0; s += 0.05) {
        const double v = duration_pgf(sp, s);
        CHECK(v > prev);
        prev = v;
    }
    CHECK(duration_pgf(sp, 1 - 1e-9, 1e-9) == doctest::Approx(1.0).epsilon(1e-6));
    // faster games are discounted less
    prev = 0.0;
    for (double rate : {0.1, 1.0, 10.0, 100.0, 1e4}) {
        const double v = ct_duration_mgf(walk(0.4, 3, 8, rate));
        CHECK(v > prev);
        prev = v;
    }
    CHECK(prev > 0.998);
}

TEST_CASE("continuous-time game by simulation") {
    std::mt19937_64 rng(20261014);
    for (auto [p, z, a, rate] : {std::tuple{0.5, 1, 3, 1.0}, {0.3, 4, 10, 2.5}, {0.7, 2, 6, 0.5}}) {
        auto sp = walk(p, z, a, rate);
        std::bernoulli_distribution up(p);
        std::exponential_distribution<double> clock(rate);
        const int reps = 200000;
        double sum = 0.0, sum2 = 0.0;
        for (int r = 0; r < reps; ++r) {
            int w = z;
            double t = 0.0;
            while (w > 0 && w < a) {
                t += clock(rng);
                w += up(rng) ? 1 : -1;
            }
            const double x = std::exp(-t);
            sum += x;
            sum2 += x * x;
        }
        const double mean = sum / reps;
        const double se = std::sqrt((sum2 / reps - mean * mean) / reps);
        CHECK(std::abs(mean - ct_duration_mgf(sp)) <= 3 * se);
    }
}

TEST_CASE("Halfin-Whitt scan examples") {
    auto s1 = halfin_whitt_mgf_scan(1, 1.0, 0.0, {100, 10000, 1000000});
    REQUIRE(s1.undefined_points == 0);
    CHECK(s1.below_margin);
    CHECK(std::abs(s1.points[2].mgf - s1.points[1].mgf) < std::abs(s1.points[1].mgf - s1.points[0].mgf) + 1e-3);
    double prev = 1.0;
    for (double beta : {0.5, 1.0, 2.0}) {
        const double v = halfin_whitt_mgf_scan(1, beta, 0.0, {10000}).points[0].mgf;
        CHECK(v < prev);
        prev = v;
    }
    auto top = halfin_whitt_mgf_scan(1, 1.0, 1.0, {10000});
    CHECK(top.points[0].defined);
    CHECK(top.points[0].mgf < 1.0);
    auto tiny = halfin_whitt_mgf_scan(1, 1.0, 0.0, {4});
    CHECK(tiny.undefined_points == 1);
    CHECK_FALSE(tiny.points[0].defined);
}
