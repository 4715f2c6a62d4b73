#include "jsqlab/stein.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>
#include <string>

namespace jsq {

std::vector<int> floor_index(const std::vector<double>& x, double delta) {
    if (!(delta > 0.0)) throw std::invalid_argument("floor_index: delta must be positive");
    std::vector<int> k(x.size());
    for (std::size_t j = 0; j < x.size(); ++j) {
        const double r = x[j] / delta;
        const double nearest = std::round(r);
        k[j] = std::abs(r - nearest) <= 1e-10 * std::max(1.0, std::abs(r)) ? static_cast<int>(nearest)
                                                                            : static_cast<int>(std::floor(r));
    }
    return k;
}

RegionB RegionB::make(const ModelParams& p) {
    if (p.n <= 16) throw RegimeError("region B needs n > 16, got n = " + std::to_string(p.n));
    return RegionB{p.delta * (p.n / 2.0 - 8.0)};
}

bool in_region_B(const ModelParams& p, const ScaledState& x) {
    const auto B = RegionB::make(p);
    if (x.size() < 2) throw std::invalid_argument("in_region_B: need at least two coordinates");
    for (std::size_t j = 2; j < x.size(); ++j)
        if (x[j] != 0.0) return false;
    return B.contains(x[0], x[1]);
}

namespace {

// Paths of Y can leave the image of S for small n, so the box always reaches x = 16.
int lattice_extent(const ModelParams& p) {
    const int top = std::max(p.n + 1, static_cast<int>(std::ceil(16.0 / p.delta)));
    return top + 6;
}

}  // namespace

HatExtension::HatExtension(const ModelParams& p, std::function<double(const JsqState&)> f) : p_(p), f_(std::move(f)) {}

HatExtension::HatExtension(const GridFunction& f)
    : p_(f.space->params()), f_([&f](const JsqState& q) { return f.at(q); }) {}

double HatExtension::base(int k1, int k2) const {
    if (k1 < 0 || k2 < 0) throw std::invalid_argument("hat extension: base lattice values need k >= 0");
    if (k1 > p_.n || k2 > p_.n - k1) return 0.0;  // off the state space
    JsqState q(static_cast<std::size_t>(p_.dim()), 0);
    q[0] = p_.n - k1;
    q[1] = k2;
    return f_(q);
}

double HatExtension::operator()(int k1, int k2) const {
    if (k1 < -1 || k2 < -1 || (k1 == -1 && k2 == -1))
        throw std::invalid_argument("hat extension: at most one coordinate may be -1");
    if (k1 == -1) return base(0, k2 + 1);
    if (k2 == -1) return 2.0 * base(k1, 0) - base(k1, 1);
    return base(k1, k2);
}

LatticeData HatExtension::lattice() const {
    const int ext = lattice_extent(p_);
    LatticeData L(p_.delta, {-1, -1}, {ext, ext});
    for (int k1 = -1; k1 < ext - 1; ++k1)
        for (int k2 = -1; k2 < ext - 1; ++k2) {
            double v;
            if (k1 == -1 && k2 == -1)
                v = 2.0 * (*this)(-1, 0) - (*this)(-1, 1);
            else
                v = (*this)(k1, k2);
            L.at({k1, k2}) = v;
        }
    return L;
}

std::vector<double> hat_extension_values(const GridFunction& f, const std::vector<ScaledState>& probes) {
    HatExtension H(f);
    const double d = H.params().delta;
    std::vector<double> out;
    out.reserve(probes.size());
    for (const auto& x : probes) {
        if (x.size() < 2) throw std::invalid_argument("hat probe needs two coordinates");
        for (std::size_t j = 2; j < x.size(); ++j)
            if (x[j] != 0.0) throw std::invalid_argument("hat probe must lie in the x3 = 0 plane");
        auto k = floor_index({x[0], x[1]}, d);
        const bool on_grid = std::abs(x[0] - d * k[0]) <= 1e-10 && std::abs(x[1] - d * k[1]) <= 1e-10;
        const int minus = (k[0] == -1) + (k[1] == -1);
        if (!on_grid || minus != 1 || k[0] < -1 || k[1] < -1)
            throw std::invalid_argument("hat probe needs exactly one coordinate equal to -delta");
        out.push_back(H(k[0], k[1]));
    }
    return out;
}

LatticeData test_function_lattice(const ModelParams& p, const TestFunction& h) {
    const int ext = lattice_extent(p);
    LatticeData L(p.delta, {-1, -1}, {ext, ext});
    ScaledState x(static_cast<std::size_t>(p.dim()), 0.0);
    auto H = [&](int k1, int k2) {
        x[0] = p.delta * k1;
        x[1] = p.delta * k2;
        return h(x);
    };
    for (int k1 = -1; k1 < ext - 1; ++k1)
        for (int k2 = -1; k2 < ext - 1; ++k2) {
            double v;
            if (k1 == -1 && k2 == -1)
                v = 2.0 * H(0, 1) - H(0, 2);
            else if (k1 == -1)
                v = H(0, k2 + 1);
            else if (k2 == -1)
                v = 2.0 * H(k1, 0) - H(k1, 1);
            else
                v = H(k1, k2);
            L.at({k1, k2}) = v;
        }
    return L;
}

SteinContext::SteinContext(Chain c, TestFunction h_, double eh_, GridFunction pi_, GridFunction fh_, LatticeData fl,
                           LatticeData hl)
    : chain(std::move(c)),
      h(std::move(h_)),
      eh(eh_),
      pi(std::move(pi_)),
      fh(std::move(fh_)),
      region(RegionB::make(chain.params)),
      f_lattice(std::move(fl)),
      h_lattice(std::move(hl)),
      Af(f_lattice, true),
      Ah(h_lattice) {}

std::unique_ptr<SteinContext> make_stein_context(Chain chain, const GridFunction& pi, const TestFunction& h) {
    RegionB::make(chain.params);
    auto sol = solve_poisson(chain, h, pi);
    LatticeData fl = HatExtension(sol.f).lattice();
    LatticeData hl = test_function_lattice(chain.params, h);
    return std::make_unique<SteinContext>(std::move(chain), h, sol.eh, pi, sol.f, std::move(fl), std::move(hl));
}

std::unique_ptr<SteinContext> make_stein_context(const ModelParams& p, const TestFunction& h) {
    RegionB::make(p);
    auto chain = Chain::make(p);
    auto st = stationary_distribution(chain);
    return make_stein_context(std::move(chain), st.pi, h);
}

EpsilonTerms epsilon_terms(const SteinContext& ctx, double x1, double x2) {
    EpsilonTerms e;
    Jet2 J;
    try {
        J = ctx.Af.jet(x1, x2);
        e.Ah = ctx.Ah.value2(x1, x2);
    } catch (const StencilError& err) {
        throw StencilError(std::string(err.what()) + " at x = (" + std::to_string(x1) + ", " + std::to_string(x2) + ")");
    }
    e.generator = apply_gy(Local2{J.v, J.d1, J.d2, J.d11}, x1, x2, ctx.chain.params.beta);
    e.in_B = ctx.region.contains(x1, x2);
    const double r = ctx.eh - e.Ah - e.generator;
    const double g = J.d1 + J.d2;
    if (e.in_B) {
        e.e1 = r;
        e.e3 = g;
    } else {
        e.e2 = r;
        e.e4 = g;
    }
    return e;
}

double epsilon1_bound(const SteinContext& ctx, double x1, double x2) {
    const auto& p = ctx.chain.params;
    const double d = p.delta;
    const auto k = floor_index({x1, x2}, d);
    HatExtension H(ctx.fh);
    auto f = [&](int a, int b) { return H(k[0] + a, k[1] + b); };
    double m111 = 0, mbd = 0, m22 = 0, m2 = 0;
    for (int i1 = 0; i1 <= 4; ++i1)
        for (int i2 = 0; i2 <= 4; ++i2) {
            auto F = [&](int a, int b) { return f(i1 + a, i2 + b); };
            const double d111 = F(3, 0) - 3 * F(2, 0) + 3 * F(1, 0) - F(0, 0);
            const double d11 = F(2, 0) - 2 * F(1, 0) + F(0, 0);
            const double d12 = F(1, 1) - F(1, 0) - F(0, 1) + F(0, 0);
            const double d22 = F(0, 2) - 2 * F(0, 1) + F(0, 0);
            const double d1p2 = F(1, 0) + F(0, 1) - 2 * F(0, 0);
            m111 = std::max(m111, std::abs(d111));
            m22 = std::max(m22, std::abs(d22));
            m2 = std::max({m2, std::abs(d11), std::abs(d12), std::abs(d22)});
            if (i1 == 0) mbd = std::max(mbd, std::abs(d11 - d1p2));
        }
    return m111 / (d * d) + (x1 <= d ? mbd / (d * d) : 0.0) + x2 * m22 / d + m2;
}

namespace {

Estimate combine(const PathAccumulator& acc, const std::vector<std::tuple<std::size_t, double, double>>& terms) {
    const std::size_t nb = acc.stats.at(std::get<0>(terms.front())).integrand_mean.size();
    double sum = 0, sum2 = 0;
    for (std::size_t b = 0; b < nb; ++b) {
        double v = 0;
        for (auto [i, wi, wb] : terms) v += wi * acc.stats[i].integrand_mean[b] + wb * acc.stats[i].boundary_rate[b];
        sum += v;
        sum2 += v * v;
    }
    const double mean = sum / static_cast<double>(nb);
    const double var = std::max(0.0, (sum2 - static_cast<double>(nb) * mean * mean) / static_cast<double>(nb - 1));
    return {mean, std::sqrt(var / static_cast<double>(nb))};
}

double se_ratio(const Estimate& e) {
    if (e.se > 0.0) return std::abs(e.value) / e.se;
    return e.value == 0.0 ? 0.0 : INFINITY;
}

Functional eps_functional(const SteinContext& ctx, bool inside, long every) {
    Functional F;
    F.name = inside ? "eps-B" : "eps-Bc";
    F.every = every;
    F.integrand = [&ctx, inside](std::span<const double> y) {
        if (ctx.region.contains(y[0], y[1]) != inside) return 0.0;
        const auto e = epsilon_terms(ctx, y[0], y[1]);
        return inside ? e.e1 : e.e2;
    };
    F.boundary = [&ctx, inside](std::span<const double> y) {
        if (ctx.region.contains(y[0], y[1]) != inside) return 0.0;
        const auto J = ctx.Af.jet(y[0], y[1]);
        return J.d1 + J.d2;
    };
    return F;
}

}  // namespace

SteinIdentity stein_identity_check(const SteinContext& ctx, const DiffusionConfig& cfg, int reps, long every) {
    if (cfg.beta != ctx.chain.params.beta) throw std::invalid_argument("diffusion beta differs from the chain's");
    std::vector<Functional> fs;
    fs.push_back(Functional{"lhs", [&ctx](std::span<const double> y) { return ctx.eh - ctx.Ah.value2(y[0], y[1]); },
                            {}, every});
    fs.push_back(eps_functional(ctx, true, every));
    fs.push_back(eps_functional(ctx, false, every));
    Functional sg;
    sg.name = "scheme";
    sg.scheme_generator = [&ctx](std::span<const double> y) { return ctx.Af.value2(y[0], y[1]); };
    fs.push_back(sg);
    auto acc = simulate_replications(cfg, fs, reps);

    SteinIdentity s;
    s.lhs = combine(acc, {{0, 1, 0}});
    s.eps1 = combine(acc, {{1, 1, 0}});
    s.eps2 = combine(acc, {{2, 1, 0}});
    s.boundary = combine(acc, {{1, 0, 1}, {2, 0, 1}});
    s.raw_rhs = combine(acc, {{1, 1, -1}, {2, 1, -1}});
    s.raw_gap = combine(acc, {{0, 1, 0}, {1, -1, 1}, {2, -1, 1}});
    s.raw_gap_in_se = se_ratio(s.raw_gap);
    // eps1 + eps2 with the scheme generator is (Eh - Ah) - G_dt Af
    s.rhs = combine(acc, {{0, 1, 0}, {3, -1, 0}, {1, 0, -1}, {2, 0, -1}});
    s.gap = combine(acc, {{3, 1, 0}, {1, 0, 1}, {2, 0, 1}});
    s.gap_in_se = se_ratio(s.gap);
    return s;
}

std::vector<std::array<double, 2>> quasi_random_points(std::size_t count, std::size_t skip) {
    const double g = 1.32471795724474602596;  // plastic number
    const double a1 = 1.0 / g, a2 = 1.0 / (g * g);
    std::vector<std::array<double, 2>> out(count);
    for (std::size_t i = 0; i < count; ++i) {
        const double k = static_cast<double>(i + skip + 1);
        out[i] = {std::fmod(0.5 + a1 * k, 1.0), std::fmod(0.5 + a2 * k, 1.0)};
    }
    return out;
}

namespace {

// least-squares slope through groups sharing one slope, separate intercepts
double pooled_fit(const std::vector<const RateCell*>& cells, std::map<const RateCell*, double>* contrib) {
    std::map<std::string, std::vector<const RateCell*>> groups;
    for (auto* c : cells) groups[c->h_name].push_back(c);
    double sxy = 0, sxx = 0;
    std::vector<std::pair<const RateCell*, double>> terms;
    for (auto& [name, g] : groups) {
        if (g.size() < 2) continue;
        double mx = 0, my = 0;
        for (auto* c : g) {
            mx += std::log(c->n);
            my += std::log(c->gap);
        }
        mx /= static_cast<double>(g.size());
        my /= static_cast<double>(g.size());
        for (auto* c : g) {
            const double dx = std::log(c->n) - mx, dy = std::log(c->gap) - my;
            sxy += dx * dy;
            sxx += dx * dx;
            terms.emplace_back(c, dx * dy);
        }
    }
    if (sxx <= 0.0) return NAN;
    if (contrib)
        for (auto [c, t] : terms) (*contrib)[c] = t / sxx;
    return sxy / sxx;
}

}  // namespace

RateFitResult convergence_rate_experiment(const std::vector<int>& ladder, int b, double beta,
                                          const std::vector<std::string>& family, const DiffusionConfig& config,
                                          const RateOptions& opt) {
    if (ladder.empty() || family.empty()) throw std::invalid_argument("rate experiment needs n values and test functions");
    if (config.beta != beta) throw std::invalid_argument("diffusion beta differs from the experiment's");

    struct Slot {
        int n;
        std::string name;
        double eh;
        std::unique_ptr<LatticeData> hl;
        std::unique_ptr<Interpolant> Ah;
        std::unique_ptr<SteinContext> ctx;
        std::size_t f_ah = 0, f_e1 = 0, f_e2 = 0;
    };
    std::vector<Slot> slots;
    std::vector<Functional> fs;
    for (int n : ladder) {
        const auto p = ModelParams::make(n, b, beta);
        auto chain = Chain::make(p);
        auto st = stationary_distribution(chain);
        const bool eps = opt.epsilon && n > 16;
        for (const auto& name : family) {
            Slot s;
            s.n = n;
            s.name = name;
            const auto h = make_test_function(name, p);
            s.eh = expect(st.pi, h);
            s.hl = std::make_unique<LatticeData>(test_function_lattice(p, h));
            s.Ah = std::make_unique<Interpolant>(*s.hl);
            if (eps) s.ctx = make_stein_context(chain, st.pi, h);
            slots.push_back(std::move(s));
        }
    }
    for (auto& s : slots) {
        const Interpolant* A = s.Ah.get();
        s.f_ah = fs.size();
        fs.push_back(Functional{"Ah", [A](std::span<const double> y) { return A->value2(y[0], y[1]); }, {}, opt.every});
        if (s.ctx) {
            s.f_e1 = fs.size();
            fs.push_back(eps_functional(*s.ctx, true, opt.every));
            s.f_e2 = fs.size();
            fs.push_back(eps_functional(*s.ctx, false, opt.every));
        }
    }
    auto acc = simulate_replications(config, fs, opt.replications);

    RateFitResult res;
    for (auto& s : slots) {
        RateCell c;
        c.n = s.n;
        c.h_name = s.name;
        c.exact = s.eh;
        c.diffusion = batch_estimate(acc, s.f_ah);
        c.gap = std::abs(c.exact - c.diffusion.value);
        c.se = c.diffusion.se;
        c.se_ok = c.se < c.gap / 3.0;
        if (s.ctx) {
            c.eps1_mean = batch_estimate(acc, s.f_e1).value;
            c.eps2_mean = batch_estimate(acc, s.f_e2).value;
            c.boundary_term = combine(acc, {{s.f_e1, 0, 1}, {s.f_e2, 0, 1}}).value;
        }
        res.cells.push_back(c);
    }

    std::set<int> distinct(ladder.begin(), ladder.end());
    res.slope_defined = distinct.size() >= 3;
    for (const auto& name : family) {
        RateSlope rs;
        rs.h_name = name;
        std::vector<const RateCell*> mine;
        for (const auto& c : res.cells)
            if (c.h_name == name) {
                mine.push_back(&c);
                rs.resolved = rs.resolved || c.se_ok;
            }
        if (res.slope_defined) {
            rs.slope = pooled_fit(mine, nullptr);
            double mx = 0, my = 0;
            for (auto* c : mine) {
                mx += std::log(c->n);
                my += std::log(c->gap);
            }
            rs.intercept = (my - rs.slope * mx) / static_cast<double>(mine.size());
        }
        if (!rs.resolved) res.excluded.push_back(name);
        res.per_h.push_back(rs);
    }
    std::vector<const RateCell*> pool, pool_tail;
    const int smallest = *distinct.begin();
    for (auto& c : res.cells) {
        c.in_pool = std::find(res.excluded.begin(), res.excluded.end(), c.h_name) == res.excluded.end();
        if (!c.in_pool) continue;
        pool.push_back(&c);
        if (c.n != smallest) pool_tail.push_back(&c);
    }
    if (res.slope_defined) {
        std::map<const RateCell*, double> contrib;
        res.pooled_slope = pooled_fit(pool, &contrib);
        for (auto& c : res.cells)
            if (contrib.count(&c)) c.slope_contribution = contrib[&c];
        res.pooled_slope_without_smallest = pooled_fit(pool_tail, nullptr);
    }
    return res;
}

}  // namespace jsq
