#include "jsqlab/exact.hpp"

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>

namespace jsq {

// ---------------------------------------------------------------- test functions

const std::vector<std::string>& shipped_family_names() {
    static const std::vector<std::string> names = {"x1", "x2", "x1+x2", "abs_sum", "1-exp", "sat_prod"};
    return names;
}

TestFunction make_test_function(const std::string& name, const ModelParams& p) {
    TestFunction h;
    h.name = name;
    h.class_constant = 1.0;
    if (name == "zero") {
        h.eval = [](const ScaledState&) { return 0.0; };
        h.class_constant = 0.0;
    } else if (name == "x1") {
        h.eval = [](const ScaledState& x) { return x[0]; };
    } else if (name == "x2") {
        h.eval = [](const ScaledState& x) { return x[1]; };
    } else if (name == "x1+x2") {
        h.eval = [](const ScaledState& x) { return x[0] + x[1]; };
    } else if (name == "sum") {
        h.eval = [](const ScaledState& x) {
            double s = 0.0;
            for (double v : x) s += v;
            return s;
        };
        h.class_constant = 1.0;
    } else if (name == "abs_sum") {
        const double beta = p.beta;
        h.eval = [beta](const ScaledState& x) {
            double s = 0.0;
            for (double v : x) s += v;
            return std::abs(s - beta) - beta;
        };
        // Lipschitz, but the kink makes second differences as large as 2 delta.
        h.class_constant = std::max(1.0, 2.0 / p.delta);
    } else if (name == "1-exp") {
        h.eval = [](const ScaledState& x) { return 1.0 - std::exp(-x[0] - x[1]); };
    } else if (name == "sat_prod") {
        h.eval = [](const ScaledState& x) { return (1.0 - std::exp(-x[0])) * (1.0 - std::exp(-x[1])); };
    } else {
        throw std::invalid_argument("unknown test function '" + name + "'");
    }
    return h;
}

std::vector<TestFunction> shipped_family(const ModelParams& p) {
    std::vector<TestFunction> out;
    for (const auto& n : shipped_family_names()) out.push_back(make_test_function(n, p));
    return out;
}

GridFunction grid_values(const Chain& c, const TestFunction& h) {
    GridFunction g{c.space, Eigen::VectorXd(static_cast<Eigen::Index>(c.size()))};
    for (std::size_t i = 0; i < c.size(); ++i)
        g.values[static_cast<Eigen::Index>(i)] = h(scale_state(c.params, c.space->state(i)));
    return g;
}

double expect(const GridFunction& pi, const GridFunction& h) { return pi.values.dot(h.values); }

double expect(const GridFunction& pi, const TestFunction& h) {
    double s = 0.0;
    const auto& sp = *pi.space;
    for (std::size_t i = 0; i < sp.size(); ++i) s += pi[i] * h(scale_state(sp.params(), sp.state(i)));
    return s;
}

// ---------------------------------------------------------------- stationary law

namespace {

double balance_residual(const SparseGenerator& g, const Eigen::VectorXd& pi) {
    Eigen::VectorXd r = g.transpose() * pi;
    return r.cwiseAbs().maxCoeff();
}

Eigen::VectorXd direct_stationary(const Chain& c) {
    using ColMat = Eigen::SparseMatrix<double>;
    const auto N = static_cast<Eigen::Index>(c.size());
    const auto a = static_cast<Eigen::Index>(c.space->anchor_index());
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(static_cast<std::size_t>(c.gen.nonZeros()) + c.size());
    for (Eigen::Index i = 0; i < c.gen.outerSize(); ++i)
        for (SparseGenerator::InnerIterator it(c.gen, i); it; ++it)
            if (it.col() != a) trips.emplace_back(it.col(), it.row(), it.value());
    for (Eigen::Index j = 0; j < N; ++j) trips.emplace_back(a, j, 1.0);
    ColMat A(N, N);
    A.setFromTriplets(trips.begin(), trips.end());
    A.makeCompressed();
    Eigen::SparseLU<ColMat> lu;
    lu.compute(A);
    if (lu.info() != Eigen::Success) throw ConvergenceError("sparse LU failed on the balance equations");
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(N);
    rhs[a] = 1.0;
    Eigen::VectorXd pi = lu.solve(rhs);
    for (int it = 0; it < 2; ++it) {
        Eigen::VectorXd r = rhs - A * pi;
        pi += lu.solve(r);
    }
    return pi;
}

}  // namespace

StationaryResult stationary_distribution(const Chain& c, const StationaryOptions& opt) {
    const auto N = static_cast<Eigen::Index>(c.size());
    // Column access to G through the transpose.
    const SparseGenerator gt = c.gen.transpose();
    Eigen::VectorXd pi = Eigen::VectorXd::Constant(N, 1.0 / static_cast<double>(N));
    Eigen::VectorXd diag = c.gen.diagonal();

    StationaryResult res;
    res.method = "gauss-seidel";
    double resid = balance_residual(c.gen, pi);
    int sweep = 0;
    for (; sweep < opt.max_sweeps && resid > opt.tol; ++sweep) {
        for (Eigen::Index j = 0; j < N; ++j) {
            double s = 0.0;
            for (SparseGenerator::InnerIterator it(gt, j); it; ++it)
                if (it.col() != j) s += pi[it.col()] * it.value();
            pi[j] = s / (-diag[j]);
        }
        pi /= pi.sum();
        if (sweep % 10 == 9) resid = balance_residual(c.gen, pi);
    }
    resid = balance_residual(c.gen, pi);
    res.iterations = sweep;
    if (!(resid <= opt.tol)) {
        pi = direct_stationary(c);
        pi = pi.cwiseMax(0.0);
        pi /= pi.sum();
        resid = balance_residual(c.gen, pi);
        res.method = "direct";
    }
    if (!(resid <= std::max(opt.tol, 1e-12)))
        throw ConvergenceError("stationary solve stalled: residual " + std::to_string(resid) + " after " +
                               std::to_string(sweep) + " sweeps and a direct solve");
    res.pi = GridFunction{c.space, pi};
    res.residual = resid;
    return res;
}

// ---------------------------------------------------------------- Poisson equation

double poisson_residual(const Chain& c, const GridFunction& f, const GridFunction& h, double eh) {
    Eigen::VectorXd r = c.gen * f.values;
    r.array() -= eh - h.values.array();
    return r.cwiseAbs().maxCoeff();
}

PoissonResult solve_poisson(const Chain& c, const GridFunction& h, const GridFunction& pi) {
    using ColMat = Eigen::SparseMatrix<double>;
    const auto N = static_cast<Eigen::Index>(c.size());
    const auto a = static_cast<Eigen::Index>(c.space->anchor_index());
    PoissonResult res;
    res.eh = expect(pi, h);
    res.f = GridFunction{c.space, Eigen::VectorXd::Zero(N)};
    if (N == 1) {
        res.method = "trivial";
        return res;
    }
    // Bordered system: the anchor slot of the unknown vector carries E h,
    // so every row of G f - E h = -h is enforced and the solve does not
    // depend on the accuracy of pi.
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(static_cast<std::size_t>(c.gen.nonZeros() + N));
    for (Eigen::Index i = 0; i < c.gen.outerSize(); ++i) {
        for (SparseGenerator::InnerIterator it(c.gen, i); it; ++it)
            if (it.col() != a) trips.emplace_back(i, it.col(), it.value());
        trips.emplace_back(i, a, -1.0);
    }
    ColMat A(N, N);
    A.setFromTriplets(trips.begin(), trips.end());
    A.makeCompressed();
    Eigen::VectorXd rhs = -h.values;

    auto accept = [&](const Eigen::VectorXd& u) {
        res.f.values = u;
        res.f.values[a] = 0.0;
        res.residual = poisson_residual(c, res.f, h, res.eh);
    };
    const double target = 1e-11 * std::max(1.0, h.values.cwiseAbs().maxCoeff());

    Eigen::BiCGSTAB<ColMat, Eigen::DiagonalPreconditioner<double>> it;
    it.setTolerance(1e-15);
    it.setMaxIterations(4 * static_cast<int>(std::min<Eigen::Index>(N, 5000)));
    it.compute(A);
    Eigen::VectorXd u = it.solve(rhs);
    res.method = "bicgstab";
    bool ok = u.allFinite();
    if (ok) {
        accept(u);
        ok = res.residual <= target;
    }
    if (!ok) {
        Eigen::SparseLU<ColMat> lu;
        lu.compute(A);
        if (lu.info() != Eigen::Success) throw ConvergenceError("bordered Poisson system is singular");
        u = lu.solve(rhs);
        for (int k = 0; k < 2; ++k) u += lu.solve(rhs - A * u);
        accept(u);
        res.method = "direct";
    }
    return res;
}

PoissonResult solve_poisson(const Chain& c, const TestFunction& h, const GridFunction& pi) {
    return solve_poisson(c, grid_values(c, h), pi);
}

// ---------------------------------------------------------------- differences

namespace {

JsqState apply_shift(const JsqState& q, const std::vector<int>& shift) {
    JsqState t = q;
    t[0] -= shift[0];
    for (std::size_t i = 1; i < t.size() && i < shift.size(); ++i) t[i] += shift[i];
    return t;
}

template <class F>
void for_each_corner(const std::vector<int>& a, F&& fn) {
    std::vector<int> k(a.size(), 0);
    while (true) {
        fn(k);
        std::size_t i = 0;
        while (i < a.size() && k[i] == a[i]) k[i++] = 0;
        if (i == a.size()) return;
        ++k[i];
    }
}

double binom_small(int n, int k) {
    double r = 1.0;
    for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
    return r;
}

}  // namespace

double shifted_value(const GridFunction& f, const JsqState& q, const std::vector<int>& shift,
                     ExtensionPolicy policy) {
    const JsqState t = apply_shift(q, shift);
    const auto idx = f.space->find(t);
    if (idx < 0) {
        if (policy == ExtensionPolicy::Strict) throw DomainError("difference stencil leaves the state space");
        return 0.0;
    }
    return f.values[idx];
}

double finite_difference(const GridFunction& f, const std::vector<int>& a, const JsqState& q,
                         ExtensionPolicy policy) {
    double s = 0.0;
    for_each_corner(a, [&](const std::vector<int>& k) {
        double coef = 1.0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            coef *= binom_small(a[i], k[i]);
            if ((a[i] - k[i]) % 2) coef = -coef;
        }
        s += coef * shifted_value(f, q, k, policy);
    });
    return s;
}

bool stencil_inside(const StateSpace& s, const std::vector<int>& a, const JsqState& q) {
    bool inside = true;
    for_each_corner(a, [&](const std::vector<int>& k) {
        if (inside && s.find(apply_shift(q, k)) < 0) inside = false;
    });
    return inside;
}

const char* factor_kind_name(FactorKind k) {
    switch (k) {
        case FactorKind::Value: return "f";
        case FactorKind::D1: return "D1";
        case FactorKind::D2: return "D2";
        case FactorKind::D11: return "D11";
        case FactorKind::D12: return "D12";
        case FactorKind::D22: return "D22";
        case FactorKind::D111: return "D111";
        case FactorKind::D1plusD2: return "D1+D2@x1=0";
        case FactorKind::D11minusD1plusD2: return "D11-(D1+D2)@x1=0";
    }
    return "?";
}

FactorReport stein_factor_report(const Chain& c, const GridFunction& f) {
    const auto& p = c.params;
    const auto& sp = *c.space;
    const int d = p.dim();
    FactorReport rep;
    rep.max_normalized.assign(9, 0.0);
    auto order = [d](int a1, int a2) {
        std::vector<int> a(d, 0);
        a[0] = a1;
        a[1] = a2;
        return a;
    };
    auto push = [&](const JsqState& q, FactorKind k, int a1, int a2, double v, double env) {
        const double nv = env > 0.0 ? v / env : 0.0;
        rep.rows.push_back({q, k, a1, a2, v, env, nv});
        auto& m = rep.max_normalized[static_cast<int>(k)];
        m = std::max(m, std::abs(nv));
    };
    struct Plain {
        FactorKind kind;
        int a1, a2;
    };
    const Plain plain[] = {{FactorKind::D1, 1, 0},  {FactorKind::D2, 0, 1},  {FactorKind::D11, 2, 0},
                           {FactorKind::D12, 1, 1}, {FactorKind::D22, 0, 2}, {FactorKind::D111, 3, 0}};
    for (std::size_t i = 0; i < sp.size(); ++i) {
        const JsqState q = sp.state(i);
        if (d > 2 && q[2] != 0) continue;
        const ScaledState x = scale_state(p, q);
        const double w = 1.0 + x[1];
        const double env0 = (x[0] + x[1]) * w / p.delta;
        if (env0 > 0.0) push(q, FactorKind::Value, 0, 0, f[i], env0);
        for (const auto& pl : plain) {
            const auto a = order(pl.a1, pl.a2);
            if (!stencil_inside(sp, a, q)) continue;
            const int k = pl.a1 + pl.a2;
            push(q, pl.kind, pl.a1, pl.a2, finite_difference(f, a, q), std::pow(p.delta * w, k));
        }
        if (q[0] == p.n && stencil_inside(sp, order(1, 0), q) && stencil_inside(sp, order(0, 1), q)) {
            const double s12 = finite_difference(f, order(1, 0), q) + finite_difference(f, order(0, 1), q);
            // Composite factors carry their envelope order in order_a1 and -1 in order_a2.
            push(q, FactorKind::D1plusD2, 2, -1, s12, std::pow(p.delta * w, 2));
            if (stencil_inside(sp, order(2, 0), q))
                push(q, FactorKind::D11minusD1plusD2, 3, -1, finite_difference(f, order(2, 0), q) - s12,
                     std::pow(p.delta * w, 3));
        }
    }
    return rep;
}

// ---------------------------------------------------------------- uniformization

namespace {

double uniformization_rate(const Chain& c) {
    return std::max(1e-300, -c.gen.diagonal().minCoeff());
}

// Poisson(mu) probabilities 0..K, with K chosen so the tail is below tol.
std::vector<double> poisson_weights(double mu, double tol) {
    std::vector<double> w;
    if (mu <= 0.0) return {1.0};
    const auto kmax = static_cast<std::size_t>(mu + 12.0 * std::sqrt(mu) + 60.0);
    w.reserve(kmax + 1);
    double cdf = 0.0;
    const double lmu = std::log(mu);
    for (std::size_t k = 0; k <= kmax; ++k) {
        const double lp = -mu + static_cast<double>(k) * lmu - std::lgamma(static_cast<double>(k) + 1.0);
        const double pk = std::exp(lp);
        w.push_back(pk);
        cdf += pk;
        if (static_cast<double>(k) > mu && 1.0 - cdf < tol) break;
    }
    return w;
}

}  // namespace

double transient_expectation(const Chain& c, const GridFunction& h, const JsqState& q0, double t, double tol) {
    const auto i0 = static_cast<Eigen::Index>(c.space->index(q0));
    if (t <= 0.0) return h.values[i0];
    const double L = uniformization_rate(c);
    const double scale = std::max(1.0, h.values.cwiseAbs().maxCoeff());
    const auto w = poisson_weights(L * t, 0.1 * tol / scale);
    Eigen::VectorXd v = h.values;
    double s = 0.0;
    for (std::size_t k = 0; k < w.size(); ++k) {
        s += w[k] * v[i0];
        v += (c.gen * v) / L;
    }
    return s;
}

IntegralCheck integral_poisson_check(const Chain& c, const GridFunction& h, const JsqState& q0, double T) {
    IntegralCheck out;
    const auto i0 = static_cast<Eigen::Index>(c.space->index(q0));
    const auto ia = static_cast<Eigen::Index>(c.space->anchor_index());
    if (i0 == ia || T <= 0.0) return out;
    const double L = uniformization_rate(c);
    const double mu = L * T;
    const auto kmax = static_cast<std::size_t>(mu + 12.0 * std::sqrt(mu) + 60.0);
    // int_0^T P(N_t = k) dt = P(N_T > k) / L for a rate-L Poisson clock.
    Eigen::VectorXd v = h.values;
    double cdf = 0.0, integral = 0.0, at_T = 0.0, at_half = 0.0, cdf_half = 0.0;
    const double lmu = std::log(mu), lmu2 = std::log(0.5 * mu);
    for (std::size_t k = 0; k <= kmax; ++k) {
        const double dk = v[i0] - v[ia];
        const double lk = std::lgamma(static_cast<double>(k) + 1.0);
        const double pk = std::exp(-mu + static_cast<double>(k) * lmu - lk);
        const double ph = std::exp(-0.5 * mu + static_cast<double>(k) * lmu2 - lk);
        cdf += pk;
        cdf_half += ph;
        integral += dk * std::max(0.0, 1.0 - cdf) / L;
        at_T += pk * dk;
        at_half += ph * dk;
        if (static_cast<double>(k) > mu && 1.0 - cdf < 1e-17) break;
        v += (c.gen * v) / L;
    }
    out.value = integral;
    const double e1 = std::abs(at_T), e0 = std::abs(at_half);
    if (e1 > 0.0 && e0 > e1) {
        const double rate = std::log(e0 / e1) / (0.5 * T);
        out.tail_estimate = e1 / rate;
    } else {
        out.tail_estimate = e1 * T;
    }
    out.horizon_ok = std::abs(at_T) <= 1e-10;
    return out;
}

// ---------------------------------------------------------------- hitting time and moments

double hitting_time_formula(const ModelParams& p, int q1) {
    if (q1 < 0 || q1 > p.n - 1) throw std::invalid_argument("hitting time needs 0 <= q1 <= n-1");
    const double nl = p.arrival_rate;
    double s = 1.0;
    for (int k = 1; k <= q1; ++k) s = 1.0 + (static_cast<double>(k) / nl) * s;
    return s / nl;
}

MomentIdentity moment_identity_check(const Chain& c, const GridFunction& pi, const GridFunction& f) {
    const auto& p = c.params;
    MomentIdentity m;
    for (std::size_t i = 0; i < c.size(); ++i) {
        const ScaledState x = scale_state(p, c.space->state(i));
        double s = 0.0;
        for (double v : x) s += v;
        m.sum_ex += pi[i] * s;
    }
    const double nl = p.arrival_rate;
    const int fl = static_cast<int>(std::floor(nl + 1e-9));
    if (fl < 1 || fl >= p.n) throw std::invalid_argument("moment identity needs 1 <= floor(n lambda) < n");
    const double fr = std::max(0.0, nl - fl);
    m.x_inf = JsqState(p.dim(), 0);
    m.x_inf[0] = fl;
    JsqState below = m.x_inf;
    below[0] = fl + 1;  // x(inf) - delta e1
    std::vector<int> a2(p.dim(), 0), a1(p.dim(), 0);
    a2[0] = 2;
    a1[0] = 1;
    const double d11 = finite_difference(f, a2, below, ExtensionPolicy::Strict);
    const double d1 = finite_difference(f, a1, m.x_inf, ExtensionPolicy::Strict);
    m.rhs = nl * d11 - fr * d1 + p.beta + p.delta * fr;
    m.gap = std::abs(m.sum_ex - m.rhs);
    m.literal_rhs = nl * d11 + fr * d1 - p.beta - p.delta * fr;
    m.literal_gap = std::abs(m.sum_ex - m.literal_rhs);
    return m;
}

}  // namespace jsq
