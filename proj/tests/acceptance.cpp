// Acceptance run: one PASS/FAIL line per criterion. Reference values come
// from the dense oracles in oracles.hpp or from closed forms worked out here.
// Arguments select criteria by number; no arguments runs all of them.

#include "jsqlab/coupling.hpp"
#include "jsqlab/diffusion.hpp"
#include "jsqlab/exact.hpp"
#include "jsqlab/fluid.hpp"
#include "jsqlab/ruin.hpp"
#include "jsqlab/spline.hpp"
#include "jsqlab/stein.hpp"
#include "oracles.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace jsq;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

struct Criterion {
    int id;
    std::string name;
    std::function<Verdict()> run;
};

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

GridFunction coordinate_grid(const Chain& c, int k) {
    GridFunction g{c.space, Eigen::VectorXd(static_cast<Eigen::Index>(c.size()))};
    for (std::size_t i = 0; i < c.size(); ++i) g.values[static_cast<Eigen::Index>(i)] = c.space->state(i)[k];
    return g;
}

DiffusionConfig diffusion_config(double beta, double dt, double total_time, ReflectionScheme scheme) {
    DiffusionConfig d;
    d.beta = beta;
    d.dt = dt;
    d.burn_in = 10.0;
    d.horizon = total_time + d.burn_in;
    d.scheme = scheme;
    d.validate();
    return d;
}

// ---------------------------------------------------------------- 1

Verdict poisson_exactness() {
    double worst = 0.0, worst_oracle = 0.0;
    for (auto [n, b, beta] : {std::tuple{1, 1, 0.5}, {10, 1, 1.0}, {25, 2, 1.0}}) {
        const auto c = Chain::make(ModelParams::make(n, b, beta));
        const auto st = stationary_distribution(c);
        const Eigen::MatrixXd Q = oracle::dense_generator(*c.space);
        // the library pi must be stationary for the independently built generator
        worst_oracle = std::max(worst_oracle, (st.pi.values.transpose() * Q).cwiseAbs().maxCoeff());
        for (const auto& h : shipped_family(c.params)) {
            const auto hv = grid_values(c, h);
            const auto sol = solve_poisson(c, hv, st.pi);
            const double eh = st.pi.values.dot(hv.values);
            const Eigen::VectorXd r = Q * sol.f.values - (Eigen::VectorXd::Constant(Q.rows(), eh) - hv.values);
            worst = std::max(worst, r.cwiseAbs().maxCoeff());
        }
    }
    const auto c = Chain::make(ModelParams::make(1, 1, 0.5));
    const auto st = stationary_distribution(c);
    const auto f = solve_poisson(c, make_test_function("x1", c.params), st.pi).f;
    const double hand = std::max({std::abs(f.at({0, 0}) - 6.0 / 7.0), std::abs(f.at({1, 0})),
                                  std::abs(f.at({1, 1}) + 4.0 / 7.0)});
    return {worst <= 1e-10 && worst_oracle <= 1e-10 && hand <= 1e-12,
            "max residual " + num(worst) + ", pi Q " + num(worst_oracle) + ", 3-state f vs (6/7, 0, -4/7) " +
                num(hand)};
}

// ---------------------------------------------------------------- 2

Verdict integral_representation() {
    double worst = 0.0;
    bool horizons = true;
    int states = 0;
    for (auto [n, b, beta] : {std::tuple{1, 1, 0.5}, {4, 1, 1.0}}) {
        const auto c = Chain::make(ModelParams::make(n, b, beta));
        const auto st = stationary_distribution(c);
        const auto anchor = c.space->state(c.space->anchor_index());
        for (const auto& h : shipped_family(c.params)) {
            const auto hv = grid_values(c, h);
            const auto f = solve_poisson(c, hv, st.pi).f;
            for (std::size_t i = 0; i < c.size(); ++i) {
                const auto q = c.space->state(i);
                const auto chk = integral_poisson_check(c, hv, q, 200.0);
                horizons = horizons && chk.horizon_ok;
                worst = std::max(worst, std::abs(chk.value - (f.at(q) - f.at(anchor))));
                ++states;
            }
        }
    }
    return {worst <= 1e-6 && horizons,
            std::to_string(states) + " (state, h) pairs, max gap " + num(worst) +
                (horizons ? "" : ", horizon too short")};
}

// ---------------------------------------------------------------- 3

Verdict spline_suite() {
    bool all = true;
    std::string failed;
    double worst_frac = 0.0;
    const auto checks = spline_property_suite();
    for (const auto& c : checks) {
        all = all && c.pass;
        if (!c.pass) failed += " [" + c.name + " " + num(c.measured) + "]";
        worst_frac = std::max(worst_frac, c.measured / c.tolerance);
    }
    return {all, std::to_string(checks.size()) + " properties, worst measured/tolerance " + num(worst_frac) +
                     (failed.empty() ? "" : ", failed:" + failed)};
}

// ---------------------------------------------------------------- 4

Verdict ruin_suite() {
    double worst = 0.0;
    int cases = 0;
    for (double p : {0.2, 0.35, 0.5, 0.6, 0.8})
        for (int a = 2; a <= 12; ++a)
            for (int z = 1; z < a; ++z) {
                RuinSpec s;
                s.p = p;
                s.q = 1.0 - p;
                s.z = z;
                s.a = a;
                for (double u : {0.3, 0.7, 0.95}) {
                    const auto o = oracle::gambler(p, z, a, u);
                    worst = std::max({worst, std::abs(ruin_probability(s) - o.ruin), std::abs(duration_pgf(s, u) - o.pgf)});
                    ++cases;
                }
                // continuous time with unit rate: the pgf at 1/2
                worst = std::max(worst, std::abs(ct_duration_mgf(s) - oracle::gambler(p, z, a, 0.5).pgf));
            }
    RuinSpec fair;
    fair.z = 1;
    fair.a = 3;
    // g1 = s/2 + (s/2) g2 and g2 = s/2 + (s/2) g1 give g = (s/2) / (1 - s/2) = 1/3 at s = 1/2
    const double pgf_gap = std::abs(duration_pgf(fair, 0.5) - 1.0 / 3.0);
    const std::vector<int> ladder = {100, 1000, 10000, 100000, 1000000};
    double scan_max = 0.0, full_range = 0.0;
    int undefined = 0;
    for (double beta : {0.5, 1.0, 2.0}) {
        const auto scan = halfin_whitt_mgf_scan(1, beta, 0.0, ladder);
        scan_max = std::max(scan_max, scan.max_mgf);
        undefined += scan.undefined_points;
        full_range = std::max(full_range, halfin_whitt_mgf_scan(1, beta, 1.0, ladder).max_mgf);
    }
    return {worst <= 1e-10 && pgf_gap <= 1e-12 && scan_max < 0.999 && undefined == 0,
            std::to_string(cases) + " grid cases, max gap " + num(worst) + "; pgf gap " + num(pgf_gap) +
                "; mgf scan max " + std::to_string(scan_max) + " (top of the q2 range " + std::to_string(full_range) +
                ")"};
}

// ---------------------------------------------------------------- 5

Verdict hitting_time() {
    double worst = 0.0, zero_rel = 0.0;
    bool exact = true;
    int cases = 0;
    for (int n = 1; n <= 6; ++n)
        for (double beta : {0.5, 1.0, 2.0}) {
            if (beta >= std::sqrt(n)) continue;
            const auto p = ModelParams::make(n, 1, beta);
            for (int q1 = 0; q1 < n; ++q1) {
                worst = std::max(worst, std::abs(hitting_time_formula(p, q1) - oracle::birth_death_hitting(p.arrival_rate, q1)));
                ++cases;
            }
            exact = exact && hitting_time_formula(p, 0) == 1.0 / p.arrival_rate;
            const double nl = n * (1.0 - beta / std::sqrt(n));
            zero_rel = std::max(zero_rel, std::abs(hitting_time_formula(p, 0) * nl - 1.0));
        }
    return {worst <= 1e-10 && exact && zero_rel <= 1e-14,
            std::to_string(cases) + " cases, max gap " + num(worst) + "; q1 = 0 " +
                (exact ? "equals" : "differs from") + " 1/(n lambda), relative " + num(zero_rel)};
}

// ---------------------------------------------------------------- 6

Verdict coupling_exactness() {
    const auto p = ModelParams::make(1, 1, 0.5);
    const auto st = estimate_coupling_time(p, {{{0, 0}, 1}, {{1, 0}, 2}}, 100000, 2024);
    const double z1 = (st.cells[0].mean - 8.0 / 7.0) / st.cells[0].se;
    const double z2 = (st.cells[1].mean - 10.0 / 7.0) / st.cells[1].se;

    // second system starts at q0 + e_theta; exact moments by the dense matrix exponential
    const auto p2 = ModelParams::make(2, 1, 0.5);
    const auto chain = Chain::make(p2);
    const JsqState q0 = {1, 0};
    const int theta0 = 1;
    const double t = 1.0;
    JsqState start = q0;
    ++start[theta0 - 1];
    const Eigen::MatrixXd Q = oracle::dense_generator(*chain.space);
    const auto i0 = static_cast<Eigen::Index>(chain.space->index(start));
    const auto h = make_test_function("x1+x2", p2);
    const auto mc = marginal_law_check(chain, q0, theta0, t, 40000, 3, &h);
    double worst_z = 0.0;
    for (int k = 0; k < p2.dim(); ++k) {
        const double exact = oracle::dense_transient(Q, coordinate_grid(chain, k).values, i0, t);
        const auto& cc = mc.coordinates[static_cast<std::size_t>(k)];
        worst_z = std::max(worst_z, std::abs(cc.mean - exact) / cc.se);
    }
    const double h_exact = oracle::dense_transient(Q, grid_values(chain, h).values, i0, t);
    worst_z = std::max(worst_z, std::abs(mc.h_moment->mean - h_exact) / mc.h_moment->se);
    return {std::abs(z1) <= 3 && std::abs(z2) <= 3 && worst_z <= 3,
            "E tau_C " + std::to_string(st.cells[0].mean) + " (" + num(z1) + " SE from 8/7), " +
                std::to_string(st.cells[1].mean) + " (" + num(z2) + " SE from 10/7); marginal law worst " +
                num(worst_z) + " SE"};
}

// ---------------------------------------------------------------- 7

Verdict coupling_envelope() {
    std::vector<double> ratios;
    for (int n : {100, 400}) {
        const auto p = ModelParams::make(n, 1, 1.0);
        ratios.push_back(estimate_coupling_time(p, default_coupling_grid(p), 2000, 77).max_ratio);
    }
    const double change = std::max(ratios[0], ratios[1]) / std::min(ratios[0], ratios[1]);
    return {change < 2.0, "max E tau_C/(1 + delta q2): " + num(ratios[0]) + " at n = 100, " + num(ratios[1]) +
                              " at n = 400, change factor " + num(change)};
}

// ---------------------------------------------------------------- 8

Verdict diffusion_identities() {
    const auto d = diffusion_config(1.0, 1e-3, 1e5, ReflectionScheme::Projection);
    const std::vector<std::pair<std::string, SmoothFunction>> fs = {
        {"y1", [](double x, double) { return Local2{x, 1, 0, 0}; }},
        {"y2^2", [](double, double y) { return Local2{y * y, 0, 2 * y, 0}; }},
        {"y1^2", [](double x, double) { return Local2{x * x, 2 * x, 0, 2}; }},
    };
    bool all = true;
    std::string detail;
    for (const auto& [name, f] : fs) {
        const auto r = rate_conservation_check(f, d);
        all = all && std::abs(r.gap_in_se) <= 3.0;
        detail += (detail.empty() ? "" : ", ") + name + " " + num(r.gap_in_se) + " SE";
    }
    return {all, "gaps " + detail + " (T = 1e5, dt = 1e-3)"};
}

// ---------------------------------------------------------------- 9

Verdict stein_identity() {
    const auto p = ModelParams::make(100, 1, 1.0);
    const auto d = diffusion_config(1.0, 1e-3, 1e5, ReflectionScheme::Projection);
    bool all = true;
    std::string detail;
    for (const char* name : {"x1+x2", "1-exp"}) {
        const auto ctx = make_stein_context(p, make_test_function(name, p));
        const auto r = stein_identity_check(*ctx, d, 1, 5);
        all = all && std::abs(r.gap_in_se) <= 3.0;
        detail += (detail.empty() ? "" : ", ") + std::string(name) + " " + num(r.gap_in_se) + " SE";
    }
    return {all, "gaps " + detail};
}

// ---------------------------------------------------------------- 10

Verdict rate_reproduction() {
    const auto d = diffusion_config(1.0, 5e-3, 2e6, ReflectionScheme::Bridge);
    RateOptions opt;
    opt.every = 20;
    opt.epsilon = false;
    const auto r = convergence_rate_experiment({25, 100, 400}, 1, 1.0, shipped_family_names(), d, opt);
    const std::set<std::string> excluded(r.excluded.begin(), r.excluded.end());
    int cells = 0, unresolved = 0;
    for (const auto& c : r.cells) {
        if (excluded.count(c.h_name)) continue;
        ++cells;
        unresolved += !c.se_ok;
    }
    std::string ex;
    for (const auto& e : r.excluded) ex += " " + e;
    const bool in_band = r.slope_defined && r.pooled_slope >= -0.75 && r.pooled_slope <= -0.30;
    return {in_band && unresolved == 0,
            "pooled slope " + num(r.pooled_slope) + ", " + std::to_string(cells - unresolved) + "/" +
                std::to_string(cells) + " cells with se < gap/3" + (ex.empty() ? "" : ", excluded (zero gap):" + ex)};
}

// ---------------------------------------------------------------- 11

Verdict moment_surrogate() {
    std::vector<double> sums;
    double worst_gap = 0.0, worst_sum = 0.0, worst_literal = 0.0;
    for (int n : {25, 100, 400}) {
        const auto c = Chain::make(ModelParams::make(n, 1, 1.0));
        const auto st = stationary_distribution(c);
        const auto sol = solve_poisson(c, make_test_function("sum", c.params), st.pi);
        const auto m = moment_identity_check(c, st.pi, sol.f);
        double direct = 0.0;
        for (std::size_t i = 0; i < c.size(); ++i) {
            const auto q = c.space->state(i);
            direct += st.pi[i] * c.params.delta * ((n - q[0]) + q[1]);
        }
        worst_sum = std::max(worst_sum, std::abs(direct - m.sum_ex));
        worst_gap = std::max(worst_gap, m.gap);
        worst_literal = std::max(worst_literal, m.literal_gap);
        sums.push_back(direct);
    }
    const auto [lo, hi] = std::minmax_element(sums.begin(), sums.end());
    const double variation = *hi / *lo - 1.0;
    return {variation < 0.5 && worst_gap <= 1e-10 && worst_sum <= 1e-10,
            "sum E X_i = " + num(sums[0]) + ", " + num(sums[1]) + ", " + num(sums[2]) + " (variation " +
                num(100 * variation) + "%); identity gap " + num(worst_gap) + " (sign pattern as printed: " +
                num(worst_literal) + ")"};
}

// ---------------------------------------------------------------- 12

Verdict lyapunov_drift() {
    const auto p = ModelParams::make(400, 1, 2.0);
    const auto m = FluidModel::from(p);
    double pde = 0.0;
    for (double x1 : {0.0, 0.5, 1.0, 2.0, 4.0, 8.0})
        for (double x2 : {m.kappa2, m.kappa2 + 1.0, 1.5 * m.kappa2, 2.0 * m.kappa2})
            pde = std::max(pde, std::abs(transport_residual(m, x1, x2).residual));
    const bool pde_ok = pde <= 1e-4;

    std::string at400;
    bool drift_ok = false;
    try {
        const auto rep = lyapunov_drift_check(p, drift_sample(p));
        drift_ok = rep.all_pass && !rep.rows.empty();
        at400 = std::to_string(rep.rows.size()) + " states, min margin " + num(rep.min_margin);
    } catch (const RegimeError& e) {
        at400 = std::string("not checkable: ") + e.what();
    }
    const auto p900 = ModelParams::make(900, 1, 2.0);
    const auto r900 = lyapunov_drift_check(p900, drift_sample(p900));
    return {drift_ok && pde_ok, "PDE residual " + num(pde) + "; n = 400: " + at400 + "; n = 900 supplement: " +
                                    std::to_string(r900.rows.size()) + " states, " +
                                    (r900.all_pass ? "all pass" : "some fail") + ", min margin " +
                                    num(r900.min_margin)};
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<Criterion> all = {
        {1, "Poisson exactness", poisson_exactness},
        {2, "integral representation", integral_representation},
        {3, "spline suite", spline_suite},
        {4, "ruin suite", ruin_suite},
        {5, "hitting-time formula", hitting_time},
        {6, "coupling exactness", coupling_exactness},
        {7, "coupling-time envelope", coupling_envelope},
        {8, "diffusion identities", diffusion_identities},
        {9, "Stein identity", stein_identity},
        {10, "rate reproduction", rate_reproduction},
        {11, "moment-bound surrogate", moment_surrogate},
        {12, "Lyapunov drift", lyapunov_drift},
    };
    std::set<int> selected;
    for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

    int failed = 0;
    for (const auto& c : all) {
        if (!selected.empty() && !selected.count(c.id)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Verdict v;
        try {
            v = c.run();
        } catch (const std::exception& e) {
            v = {false, std::string("error: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        failed += !v.pass;
        std::printf("%s criterion %2d %s (%.1f s): %s\n", v.pass ? "PASS" : "FAIL", c.id, c.name.c_str(), secs,
                    v.detail.c_str());
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
