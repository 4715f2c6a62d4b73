#include "jsqlab/fluid.hpp"

#include <doctest.h>

#include <algorithm>
#include <array>
#include <cmath>

using namespace jsq;

namespace {

// RK4 on the interior drift (-c - y1 + y2, -y2).
FluidPoint rk4_interior(double c, FluidPoint y, double t, int steps) {
    const double h = t / steps;
    auto f = [c](double a, double b) { return std::array<double, 2>{-c - a + b, -b}; };
    for (int i = 0; i < steps; ++i) {
        const auto k1 = f(y.x1, y.x2);
        const auto k2 = f(y.x1 + 0.5 * h * k1[0], y.x2 + 0.5 * h * k1[1]);
        const auto k3 = f(y.x1 + 0.5 * h * k2[0], y.x2 + 0.5 * h * k2[1]);
        const auto k4 = f(y.x1 + h * k3[0], y.x2 + h * k3[1]);
        y.x1 += h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]);
        y.x2 += h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]);
    }
    return y;
}

// The point whose interior path reaches (0, hit) after time s: run the closed form backwards.
FluidPoint before_hit(double c, double hit, double s) {
    return {-hit * s * std::exp(s) + c * std::expm1(s), hit * std::exp(s)};
}

// f^(2) straight from its definition: int_0^T phi(v(t)_2) dt by composite Simpson.
double f2_by_definition(const FluidModel& m, const FluidPoint& x, double T, int panels) {
    const auto ind = m.indicator();
    const double h = T / panels;
    double s = 0.0;
    for (int i = 0; i <= panels; ++i) {
        const double w = (i == 0 || i == panels) ? 1.0 : (i % 2 ? 4.0 : 2.0);
        s += w * ind(fluid_trajectory(m, x, i * h).x2);
    }
    return s * h / 3.0;
}

double halton(int i, int base) {
    double f = 1.0, r = 0.0;
    for (; i > 0; i /= base) {
        f /= base;
        r += f * (i % base);
    }
    return r;
}

}  // namespace

TEST_CASE("smoothed indicator values") {
    const auto ind = SmoothedIndicator::make(2.0, 6.0);
    CHECK(ind(2.0) == 0.0);
    CHECK(ind(6.0) == 1.0);
    CHECK(ind(4.0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(ind(-1.0) == 0.0);
    CHECK(ind(9.0) == 1.0);
    CHECK(phi(0.0, 1.0, 0.25) == doctest::Approx(0.1875).epsilon(1e-15));
    CHECK(phi(0.0, 1.0, 0.75) == doctest::Approx(1.0 - 0.1875).epsilon(1e-15));
    CHECK_THROWS_AS(SmoothedIndicator::make(1.0, 1.0), std::invalid_argument);

    double prev = -1.0;
    for (int i = 0; i <= 4000; ++i) {
        const double x = 1.0 + 6.0 * i / 4000.0;
        const double v = ind(x);
        CHECK(v >= prev);
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        prev = v;
    }
}

TEST_CASE("smoothed indicator is C1 at its junctions") {
    const auto ind = SmoothedIndicator::make(2.0, 6.0);
    const double e = 1e-7;
    for (double k : {2.0, 4.0, 6.0}) {
        CHECK(std::abs(ind(k + e) - ind(k - e)) < 1e-6);
        const double left = (ind(k) - ind(k - e)) / e;
        const double right = (ind(k + e) - ind(k)) / e;
        CHECK(std::abs(left - right) < 1e-6);
        // one-sided limits of the closed-form derivative
        CHECK(std::abs(ind.derivative(k - 1e-12) - ind.derivative(k + 1e-12)) < 1e-10);
    }
    for (double x : {2.3, 3.1, 3.9, 4.9, 5.7}) {
        const double fd = (ind(x + 1e-6) - ind(x - 1e-6)) / 2e-6;
        CHECK(ind.derivative(x) == doctest::Approx(fd).epsilon(1e-7));
    }
    // symmetric ramp integrates to half its width
    double s = 0.0;
    const int N = 20000;
    for (int i = 0; i < N; ++i) s += ind(2.0 + 4.0 * (i + 0.5) / N) * 4.0 / N;
    CHECK(s == doctest::Approx(2.0).epsilon(1e-8));
}

TEST_CASE("fluid point sign constraints") {
    CHECK_THROWS_AS(FluidPoint::make(0.1, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(FluidPoint::make(-0.1, -1.0), std::invalid_argument);
    CHECK_NOTHROW(FluidPoint::make(0.0, 0.0));
    const auto m = FluidModel::make(400, 2.0);
    CHECK(m.kappa1 == doctest::Approx(10.5));
    CHECK(m.kappa2 == doctest::Approx(21.0));
    CHECK(m.speed() == doctest::Approx(0.1));
}

TEST_CASE("interior trajectory matches an ODE integrator") {
    const auto m = FluidModel::make(100, 1.0);
    const double c = m.speed();
    for (const auto& x : {FluidPoint{-0.5, 0.3}, FluidPoint{-0.05, 0.02}, FluidPoint{-1.0, 0.0}}) {
        const auto t0 = fluid_trajectory(m, x, 0.0);
        CHECK(t0.x1 == x.x1);
        CHECK(t0.x2 == x.x2);
        const auto tau = try_tau(m, x);
        const double T = tau ? 0.9 * *tau : 2.0;
        const auto a = fluid_trajectory(m, x, T);
        const auto b = rk4_interior(c, x, T, 20000);
        CHECK(std::abs(a.x1 - b.x1) < 1e-10);
        CHECK(std::abs(a.x2 - b.x2) < 1e-10);
    }
}

TEST_CASE("boundary rule on the x2 axis") {
    const auto m = FluidModel::make(100, 1.0);
    const double c = m.speed();
    const double k = 30.0;
    const FluidPoint x{0.0, k * m.delta};
    for (double t : {0.1, 1.0, 5.0, 20.0}) {
        const auto y = fluid_trajectory(m, x, t);
        CHECK(y.x1 == 0.0);
        CHECK(y.x2 == doctest::Approx(k * m.delta - c * t).epsilon(1e-13));
    }
    // a path that hits the axis continues down it
    const FluidPoint z = before_hit(c, 2.0, 0.7);
    const auto hit = fluid_trajectory(m, z, 0.7);
    CHECK(std::abs(hit.x1) < 1e-12);
    CHECK(hit.x2 == doctest::Approx(2.0).epsilon(1e-12));
    const auto later = fluid_trajectory(m, z, 1.7);
    CHECK(later.x1 == 0.0);
    CHECK(later.x2 == doctest::Approx(2.0 - c).epsilon(1e-12));
    // below x2 = beta delta the drift points inward again
    const auto gone = fluid_trajectory(m, z, 0.7 + (2.0 - c) / c + 1.0);
    CHECK(gone.x1 < 0.0);
    CHECK(gone.x2 == doctest::Approx(c * std::exp(-1.0)).epsilon(1e-12));
}

TEST_CASE("hitting time tau") {
    const auto m = FluidModel::make(400, 2.0);
    const double c = m.speed();
    CHECK(tau_of_x(m, {0.0, 0.7}) == 0.0);
    CHECK_THROWS_AS(tau_of_x(m, {-0.1, 0.5 * c}), NoHitError);
    CHECK_THROWS_AS(tau_of_x(m, {-5.0, 0.2}), NoHitError);

    for (double s : {0.01, 0.3, 1.0, 2.5}) {
        for (double hit : {1.5 * c, 0.6, 1.2}) {
            const auto x = before_hit(c, hit, s);
            const double t = tau_of_x(m, x);
            CHECK(t == doctest::Approx(s).epsilon(1e-11));
            CHECK(std::abs(fluid_trajectory(m, x, t).x1) < 1e-12);
        }
    }
}

TEST_CASE("tau derivative identities and monotonicity") {
    const auto m = FluidModel::make(400, 2.0);
    const double c = m.speed();
    const double e = 1e-7;
    for (double s : {0.2, 0.8, 1.6}) {
        for (double hit : {0.6, 1.2}) {
            const auto x = before_hit(c, hit, s);
            const double t = tau_of_x(m, x);
            const double d1 = (tau_of_x(m, {x.x1 + e, x.x2}) - tau_of_x(m, {x.x1 - e, x.x2})) / (2 * e);
            const double d2 = (tau_of_x(m, {x.x1, x.x2 + e}) - tau_of_x(m, {x.x1, x.x2 - e})) / (2 * e);
            CHECK(std::abs(d2 - t * d1) < 1e-6);
            const double h = x.x2 * std::exp(-t);
            CHECK(d1 == doctest::Approx(-std::exp(-t) / (h - c)).epsilon(1e-6));
            // tau shrinks as x1 or x2 grows
            CHECK(d1 <= 0.0);
            CHECK(d2 <= 0.0);
        }
    }
}

TEST_CASE("gamma test along constructed points") {
    const auto m = FluidModel::make(400, 2.0);
    const double c = m.speed();
    const double l = m.delta * m.kappa1;
    int checked = 0;
    for (int i = 1; i <= 1000; ++i) {
        const double hit = l * (1.0 + 3.0 * halton(i, 2));
        const double s = 3.0 * halton(i, 3);
        const auto x = before_hit(c, hit, s);
        CHECK(above_gamma(m, x, m.kappa1));
        CHECK(x.x2 * std::exp(-tau_of_x(m, x)) >= l * (1.0 - 1e-12));
        ++checked;
    }
    CHECK(checked == 1000);
    // just under Gamma^(kappa1)
    CHECK_FALSE(above_gamma(m, before_hit(c, 0.99 * l, 0.5), m.kappa1));
}

TEST_CASE("region classification") {
    const auto m = FluidModel::make(400, 2.0);
    const double c = m.speed();
    const double l = m.delta * m.kappa1, u = m.delta * m.kappa2;
    CHECK(classify(m, {-0.2, 0.5 * l}) == FluidRegion::S0);
    CHECK(classify(m, {-3.0, 1.5 * l}) == FluidRegion::S1);
    CHECK(classify(m, before_hit(c, 0.5 * (l + u), 1.0)) == FluidRegion::S2);
    CHECK(classify(m, before_hit(c, 1.5 * u, 1.0)) == FluidRegion::S3);
    CHECK(classify(m, before_hit(c, 0.9 * l, 1.0)) == FluidRegion::S1);
    CHECK(std::string(region_name(FluidRegion::S2)) == "S2");
}

TEST_CASE("f2 against its defining integral") {
    const auto m = FluidModel::make(400, 2.0);
    const double c = m.speed();
    const double l = m.delta * m.kappa1, u = m.delta * m.kappa2;
    const std::vector<FluidPoint> pts = {
        {-0.2, 0.5 * l},                       // S0
        {-3.0, 1.5 * l},                       // S1, below u
        {-3.0, 3.0 * u},                       // S1, above u
        before_hit(c, 0.5 * (l + u), 0.4),     // S2, below u
        before_hit(c, 0.8 * u, 1.5),           // S2, above u
        before_hit(c, 2.0 * u, 0.8),           // S3
        {0.0, 1.7 * u},                        // S3 on the axis
    };
    for (const auto& x : pts) {
        const double v = f2_value(m, x);
        const double T = 25.0 + (x.x2 / c) * 1.2;
        const double ref = f2_by_definition(m, x, T, 200000);
        CHECK(v == doctest::Approx(ref).epsilon(1e-6));
    }
    CHECK(f2_value(m, {-0.2, 0.5 * l}) == 0.0);
}

TEST_CASE("V on the axis is affine above kappa2") {
    for (double beta : {0.5, 1.0, 2.0}) {
        const auto m = FluidModel::make(900, beta);
        for (double x2 : {m.kappa2, m.kappa2 + 1.0, 3.0 * m.kappa2}) {
            const double expected = (x2 - m.kappa2) / beta + (m.kappa2 - m.kappa1) / (2.0 * beta);
            CHECK(lyapunov_value(m, 0.0, x2) == doctest::Approx(expected).epsilon(1e-10));
            const double h = 1e-5;
            const double d2 = (lyapunov_value(m, 0.0, x2 + h) - lyapunov_value(m, 0.0, x2 - h)) / (2 * h);
            CHECK(std::abs(d2 - 1.0 / beta) < 1e-4);
        }
    }
}

TEST_CASE("analytic d2 against finite differences") {
    const auto m = FluidModel::make(400, 2.0);
    const double c = m.speed();
    const double l = m.delta * m.kappa1, u = m.delta * m.kappa2;
    for (const auto& x : {FluidPoint{-3.0, 1.5 * l}, before_hit(c, 0.5 * (l + u), 0.4), before_hit(c, 0.8 * u, 1.5),
                          before_hit(c, 2.0 * u, 0.8)}) {
        const double e = 1e-6;
        const double fd = (f2_value(m, {x.x1, x.x2 + e}) - f2_value(m, {x.x1, x.x2 - e})) / (2 * e);
        CHECK(f2_d2(m, x) == doctest::Approx(fd).epsilon(1e-6));
    }
}

TEST_CASE("V is nonnegative and continuous across Gamma^(kappa2)") {
    const auto m = FluidModel::make(400, 2.0);
    const double c = m.speed();
    const double u = m.delta * m.kappa2;
    for (int i = 0; i <= 40; ++i)
        for (int j = 0; j <= 40; ++j) CHECK(lyapunov_value(m, 0.5 * i, 1.0 * j) >= 0.0);
    for (double s : {0.1, 0.5, 1.0, 2.0}) {
        const auto lo = before_hit(c, u * (1.0 - 1e-10), s);
        const auto hi = before_hit(c, u * (1.0 + 1e-10), s);
        CHECK(classify(m, lo) == FluidRegion::S2);
        CHECK(classify(m, hi) == FluidRegion::S3);
        CHECK(std::abs(f2_value(m, lo) - f2_value(m, hi)) < 1e-8);
        CHECK_NOTHROW(f2_value(m, before_hit(c, u, s)));
    }
}

TEST_CASE("V grows at most linearly in x2, uniformly in n") {
    std::vector<double> C;
    for (int n : {100, 400}) {
        const auto m = FluidModel::make(n, 1.0);
        double worst = 0.0;
        for (int i = 0; i <= 30; ++i)
            for (int j = 0; j <= 30; ++j) {
                const double x1 = 0.4 * i, x2 = 4.0 * j;
                worst = std::max(worst, lyapunov_value(m, x1, x2) / (1.0 + x2));
            }
        C.push_back(worst);
    }
    CHECK(C[0] > 0.0);
    CHECK(C[1] == doctest::Approx(C[0]).epsilon(1e-2));
}

TEST_CASE("transport equation above kappa2") {
    const auto m = FluidModel::make(400, 2.0);
    for (double x1 : {0.0, 0.3, 1.0, 4.0, 9.0})
        for (double x2 : {m.kappa2, m.kappa2 + 2.0, 30.0, 45.0}) {
            const auto r = transport_residual(m, x1, x2);
            CHECK(std::abs(r.residual) < 1e-4);
        }
}

TEST_CASE("generator on V against the explicit difference formula") {
    const auto p = ModelParams::make(900, 2, 2.0);
    const auto m = FluidModel::from(p);
    const double d = p.delta;
    auto V = [&](double x1, double x2) { return lyapunov_value(m, x1, x2); };
    for (const JsqState& q : {JsqState{900, 700, 0}, JsqState{850, 650, 300}, JsqState{900, 900, 100},
                              JsqState{900, 900, 900}, JsqState{700, 640, 640}}) {
        const double x1 = d * (p.n - q[0]), x2 = d * q[1];
        const double v = V(x1, x2);
        double g = 0.0;
        if (q[0] < p.n) g += p.arrival_rate * (V(x1 - d, x2) - v);
        if (q[0] == p.n && q[1] < p.n) g += p.arrival_rate * (V(x1, x2 + d) - v);
        g += (q[0] - q[1]) * (V(x1 + d, x2) - v);
        g += (q[1] - q[2]) * (V(x1, x2 - d) - v);
        CHECK(generator_on_lyapunov(p, q) == doctest::Approx(g).epsilon(1e-12));
    }
}

TEST_CASE("drift check regimes and filtering") {
    CHECK_THROWS_AS(lyapunov_drift_check(ModelParams::make(400, 1, 2.0), {}), RegimeError);
    CHECK(drift_sample(ModelParams::make(400, 1, 2.0)).empty());

    const auto p = ModelParams::make(900, 1, 2.0);
    CHECK(drift_threshold(p) == doctest::Approx(21.0 + 1.0 / 30.0));
    const auto sample = drift_sample(p, 12);
    REQUIRE(!sample.empty());
    for (const auto& q : sample) CHECK(q[1] >= 631);

    auto with_low = sample;
    with_low.push_back({900, 100});
    with_low.push_back({630, 630});
    const auto rep = lyapunov_drift_check(p, with_low);
    CHECK(rep.excluded.size() == 2);
    CHECK(rep.rows.size() == sample.size());
    CHECK(rep.all_pass);
    CHECK(rep.min_margin >= 0.0);
    for (const auto& r : rep.rows) CHECK(r.bound_rhs == doctest::Approx(drift_bound(p, r.q) + 0.02));

    CHECK_THROWS_AS(lyapunov_drift_check(p, {{900, 901}}), std::invalid_argument);
    // the bound carries the saturated-arrival credit
    CHECK(drift_bound(p, {900, 900}) == doctest::Approx(-3.0 / 17.0 - p.delta / p.beta * p.arrival_rate));
}

TEST_CASE("drift check with higher buffers") {
    const auto p = ModelParams::make(900, 3, 2.0);
    const auto rep = lyapunov_drift_check(p, drift_sample(p, 6));
    CHECK(rep.all_pass);
    CHECK(rep.excluded.empty());
}
