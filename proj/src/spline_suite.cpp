#include "jsqlab/spline.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace jsq {

namespace {

PropertyCheck make_check(std::string name, double measured, double tolerance) {
    return {std::move(name), measured, tolerance, measured <= tolerance};
}

double falling(double z, int e, int m) {
    if (e < m) return 0.0;
    double c = 1.0;
    for (int i = 0; i < m; ++i) c *= e - i;
    return c * std::pow(z, e - m);
}

}  // namespace

std::vector<PropertyCheck> spline_property_suite(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    std::vector<PropertyCheck> out;

    const double d = 0.1;
    LatticeData L(d, {-1, -1}, {18, 18});
    for (double& v : L.values()) v = U(rng);
    const Interpolant A(L);

    {
        double worst = 0.0;
        for (int a = -1; a <= 12; ++a)
            for (int b = -1; b <= 12; ++b) worst = std::max(worst, std::abs(A.value({d * a, d * b}) - L.at({a, b})));
        out.push_back(make_check("interpolation at grid points", worst, 1e-14));
    }
    {
        double sum_err = 0.0, colloc = 0.0;
        for (int s = 0; s < 10000; ++s) {
            const auto w = weights_1d(s / 10000.0);
            double sum = 0.0;
            for (double v : w[0]) sum += v;
            sum_err = std::max(sum_err, std::abs(sum - 1.0));
        }
        const auto w0 = weights_1d(0.0);
        for (int i = 0; i < 5; ++i) colloc = std::max(colloc, std::abs(w0[0][i] - (i == 0 ? 1.0 : 0.0)));
        out.push_back(make_check("partition of unity", sum_err, 1e-12));
        out.push_back(make_check("endpoint collocation", colloc, 1e-12));
    }
    {
        LatticeData S(d, {-1, -1}, {18, 18});
        for (int a = -1; a < 17; ++a)
            for (int b = -1; b < 17; ++b) S.at({a, b}) = (a + 1 < 17) ? L.at({a + 1, b}) : 0.0;
        const Interpolant B(S);
        double worst = 0.0;
        for (int s = 0; s < 2000; ++s) {
            const double x = 0.8 * (U(rng) + 1.0) / 2.0, y = 0.8 * (U(rng) + 1.0) / 2.0;
            worst = std::max(worst, std::abs(B.value({x, y}) - A.value({x + d, y})));
        }
        // weights in t do not depend on delta
        for (int s = 0; s < 1000; ++s) {
            const double t = s / 1000.0;
            const auto w = weights_1d(t), wd = weights_1d(t, 0.37);
            for (int i = 0; i < 5; ++i) worst = std::max(worst, std::abs(w[0][i] - wd[0][i]));
        }
        out.push_back(make_check("translational invariance", worst, 1e-12));
    }
    {
        double worst = 0.0;
        for (int k = 1; k < 12; ++k)
            for (double y : {0.37, 0.5, 0.81})
                for (int m1 = 0; m1 <= 3; ++m1)
                    for (int m2 = 0; m1 + m2 <= 3; ++m2) {
                        const double left = A.derivative({d * k, y}, {m1, m2}, true);
                        const double right = A.derivative({d * k, y}, {m1, m2});
                        worst = std::max(worst, std::abs(left - right) / std::max(1.0, std::abs(right)));
                    }
        out.push_back(make_check("C3 continuity at knots (relative)", worst, 1e-8));
    }
    {
        LatticeData G(d, {0}, {24});
        for (double& v : G.values()) v = U(rng);
        const Interpolant AG(G);
        double worst = 0.0;
        for (int k = 0; k < 19; ++k) {
            auto f = [&](int j) { return G.at({k + j}); };
            const double D1 = f(1) - f(0), D2 = f(2) - 2 * f(1) + f(0), D3 = f(3) - 3 * f(2) + 3 * f(1) - f(0);
            const double ref = (D1 - D2 / 2 + D3 / 3) / d;
            worst = std::max(worst, std::abs(AG.derivative({d * k}, {1}) - ref) / std::max(1.0, std::abs(ref)));
        }
        out.push_back(make_check("grid derivative identity (relative)", worst, 1e-12));
    }
    {
        double worst = 0.0;
        for (double dd : {0.5, 0.1}) {
            for (int p = 0; p <= 3; ++p)
                for (int r = 0; r <= 3 - p; ++r) {
                    LatticeData P(dd, {-1, -1}, {20, 20});
                    for (int a = -1; a < 19; ++a)
                        for (int b = -1; b < 19; ++b) P.at({a, b}) = std::pow(dd * a, p) * std::pow(dd * b, r);
                    const Interpolant AP(P);
                    for (double x : {0.0, 0.13, 0.5 * dd, 3.7 * dd})
                        for (double y : {0.0, 0.29, 2.5 * dd}) {
                            const double ref = falling(x, p, 0) * falling(y, r, 0);
                            worst = std::max(worst, std::abs(AP.value({x, y}) - ref) / std::max(1.0, std::abs(ref)));
                        }
                }
        }
        out.push_back(make_check("cubic reproduction (relative)", worst, 1e-12));
    }
    {
        LatticeData F(d, {-1, -1}, {18, 18}), H(d, {-1, -1}, {18, 18});
        for (std::size_t i = 0; i < F.values().size(); ++i) {
            F.values()[i] = U(rng);
            H.values()[i] = 2.5 * F.values()[i] - 0.75 * L.values()[i];
        }
        const Interpolant AF(F), AH(H);
        double worst = 0.0;
        for (int s = 0; s < 500; ++s) {
            const double x = 0.8 * (U(rng) + 1.0) / 2.0, y = 0.8 * (U(rng) + 1.0) / 2.0;
            worst = std::max(worst, std::abs(AH.value({x, y}) - (2.5 * AF.value({x, y}) - 0.75 * A.value({x, y}))));
        }
        out.push_back(make_check("linearity", worst, 1e-12));
    }
    {
        // |d^a Af| <= C delta^-|a| max |f|. C is fitted per delta as the largest ratio
        // over 10 random 12 x 12 data sets on a fixed grid of cell positions.
        double spread = 0.0;
        for (int order = 1; order <= 3; ++order) {
            double cmin = INFINITY, cmax = 0.0;
            for (double dd : {0.2, 0.1, 0.05}) {
                double c = 0.0;
                for (int set = 0; set < 10; ++set) {
                    LatticeData E(dd, {0, 0}, {12, 12});
                    for (double& v : E.values()) v = U(rng);
                    const Interpolant AE(E);
                    for (int i = 0; i < 32; ++i)
                        for (int j = 0; j < 8; ++j) {
                            const double x = dd * 6.9 * i / 31.0, y = dd * 6.9 * j / 7.0;
                            c = std::max(c, std::abs(AE.derivative({x, y}, {order, 0})) * std::pow(dd, order));
                        }
                }
                cmin = std::min(cmin, c);
                cmax = std::max(cmax, c);
            }
            spread = std::max(spread, cmax / cmin);
        }
        out.push_back(make_check("derivative envelope ratio across delta", spread, 2.0));
    }
    {
        double worst = 0.0;
        LatticeData Q(d, {0}, {30});
        for (int k = 0; k < 30; ++k) Q.at({k}) = (d * k) * (d * k);
        const Interpolant AQ(Q);
        for (int k = 0; k < 20; ++k) worst = std::max(worst, std::abs(AQ.derivative({d * k}, {1}) - 2 * d * k));
        out.push_back(make_check("derivative of x^2 at nodes", worst, 1e-12));
    }
    return out;
}

}  // namespace jsq
