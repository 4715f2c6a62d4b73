#include "jsqlab/fluid.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/tools/roots.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>

namespace jsq {

namespace {

constexpr double kQuadTol = 1e-13;
constexpr double kBoundaryTol = 1e-12;
constexpr double kBranchAgreement = 1e-8;

/// int_a^b g over pieces split at `breaks`, each piece by adaptive Gauss-Kronrod.
template <class G>
double integrate_pieces(G g, double a, double b, std::vector<double> breaks) {
    if (!(b > a)) return 0.0;
    breaks.push_back(a);
    breaks.push_back(b);
    std::sort(breaks.begin(), breaks.end());
    double total = 0.0;
    double lo = a;
    for (double x : breaks) {
        if (x <= lo) continue;
        if (x > b) break;
        total += boost::math::quadrature::gauss_kronrod<double, 31>::integrate(g, lo, x, 15, kQuadTol);
        lo = x;
    }
    return total;
}

/// int_a^b phi(y2 e^{-t}) dt.
double path_integral(const SmoothedIndicator& ind, double y2, double a, double b) {
    std::vector<double> breaks;
    for (double k : {ind.l, ind.mid(), ind.u})
        if (k > 0.0 && y2 > 0.0) breaks.push_back(std::log(y2 / k));
    return integrate_pieces([&](double t) { return ind(y2 * std::exp(-t)); }, a, b, breaks);
}

/// int_a^b phi(s) ds.
double flat_integral(const SmoothedIndicator& ind, double a, double b) {
    return integrate_pieces([&](double s) { return ind(s); }, a, b, {ind.l, ind.mid(), ind.u});
}

struct Branch {
    FluidRegion region;
    double tau = 0.0;  // only S2 and S3
    double hit = 0.0;  // y2 e^{-tau}
};

double branch_value(const FluidModel& m, const FluidPoint& y, const Branch& br) {
    const SmoothedIndicator ind = m.indicator();
    const double c = m.speed();
    const double l = ind.l, u = ind.u;
    switch (br.region) {
        case FluidRegion::S0:
            return 0.0;
        case FluidRegion::S1:
            if (y.x2 <= u) return path_integral(ind, y.x2, 0.0, std::log(y.x2 / l));
            return std::log(y.x2 / u) + path_integral(ind, u, 0.0, std::log(u / l));
        case FluidRegion::S2: {
            const double axis = flat_integral(ind, l, br.hit) / c;
            if (y.x2 <= u) return path_integral(ind, y.x2, 0.0, br.tau) + axis;
            const double t_u = std::log(y.x2 / u);
            return t_u + path_integral(ind, y.x2, t_u, br.tau) + axis;
        }
        case FluidRegion::S3:
            return br.tau + (br.hit - u) / c + flat_integral(ind, l, u) / c;
    }
    return 0.0;
}

double branch_d2(const FluidModel& m, const FluidPoint& y, const Branch& br) {
    const SmoothedIndicator ind = m.indicator();
    const double c = m.speed();
    switch (br.region) {
        case FluidRegion::S0:
            return 0.0;
        case FluidRegion::S1:
            return ind(y.x2) / y.x2;
        case FluidRegion::S2: {
            const double ph = ind(br.hit);
            return (ind(y.x2) - ph) / y.x2 + ph * std::exp(-br.tau) * (br.tau + 1.0) / c;
        }
        case FluidRegion::S3:
            return std::exp(-br.tau) * (br.tau + 1.0) / c;
    }
    return 0.0;
}

Branch locate(const FluidModel& m, const FluidPoint& y) {
    const double l = m.delta * m.kappa1, u = m.delta * m.kappa2;
    if (y.x2 <= l) return {FluidRegion::S0};
    const auto tau = try_tau(m, y);
    if (!tau) return {FluidRegion::S1};
    const double hit = y.x2 * std::exp(-*tau);
    if (hit < l) return {FluidRegion::S1, *tau, hit};
    if (hit <= u) return {FluidRegion::S2, *tau, hit};
    return {FluidRegion::S3, *tau, hit};
}

/// The region on the other side when the hit point is within rounding of a boundary curve.
std::optional<FluidRegion> neighbour(const FluidModel& m, const Branch& br) {
    if (br.region == FluidRegion::S0) return std::nullopt;
    const double l = m.delta * m.kappa1, u = m.delta * m.kappa2;
    const double tol = kBoundaryTol * std::max(1.0, u);
    if (br.region == FluidRegion::S1 && br.hit > 0.0 && std::abs(br.hit - l) <= tol) return FluidRegion::S2;
    if (br.region == FluidRegion::S2 && std::abs(br.hit - l) <= tol) return FluidRegion::S1;
    if (br.region == FluidRegion::S2 && std::abs(br.hit - u) <= tol) return FluidRegion::S3;
    if (br.region == FluidRegion::S3 && std::abs(br.hit - u) <= tol) return FluidRegion::S2;
    return std::nullopt;
}

}  // namespace

SmoothedIndicator SmoothedIndicator::make(double l, double u) {
    if (!(l < u)) throw std::invalid_argument("smoothed indicator needs l < u");
    return {l, u};
}

double SmoothedIndicator::operator()(double x) const {
    const double m = mid();
    if (x <= l) return 0.0;
    if (x >= u) return 1.0;
    const double w = u - l;
    if (x <= m) {
        const double d = x - l, a = m - l;
        return d * d * (-d / (a * a * w) + 2.0 / (a * w));
    }
    const double d = x - u, a = m - u;
    return 1.0 - d * d * (d / (a * a * w) - 2.0 / (a * w));
}

double SmoothedIndicator::derivative(double x) const {
    const double m = mid();
    if (x <= l || x >= u) return 0.0;
    const double w = u - l;
    if (x <= m) {
        const double d = x - l, a = m - l;
        return -3.0 * d * d / (a * a * w) + 4.0 * d / (a * w);
    }
    const double d = x - u, a = m - u;
    return -(3.0 * d * d / (a * a * w) - 4.0 * d / (a * w));
}

double phi(double l, double u, double x) { return SmoothedIndicator::make(l, u)(x); }

FluidPoint FluidPoint::make(double x1, double x2) {
    if (!(x1 <= 0.0) || !(x2 >= 0.0))
        throw std::invalid_argument("fluid point outside {x1 <= 0, x2 >= 0}: (" + std::to_string(x1) + ", " +
                                    std::to_string(x2) + ")");
    return {x1, x2};
}

FluidModel FluidModel::make(int n, double beta) {
    if (n < 1) throw std::invalid_argument("fluid model needs n >= 1");
    if (!(beta > 0.0)) throw std::invalid_argument("fluid model needs beta > 0");
    FluidModel m;
    m.beta = beta;
    m.delta = 1.0 / std::sqrt(static_cast<double>(n));
    m.kappa1 = 17.0 / beta + beta;
    m.kappa2 = 2.0 * m.kappa1;
    return m;
}

std::optional<double> try_tau(const FluidModel& m, const FluidPoint& x) {
    if (x.x1 == 0.0) return 0.0;
    const double c = m.speed();
    if (x.x2 <= c) return std::nullopt;
    // F(t) = x1 + x2 t - c (e^t - 1) rises on [0, t_star] from x1 < 0.
    const double t_star = std::log(x.x2 / c);
    auto F = [&](double t) { return x.x1 + x.x2 * t - c * std::expm1(t); };
    const double top = F(t_star);
    if (top < 0.0) return std::nullopt;
    if (top == 0.0) return t_star;
    const double guess = std::clamp(-x.x1 / (x.x2 - c), 0.0, t_star);
    std::uintmax_t iters = 200;
    const double root = boost::math::tools::newton_raphson_iterate(
        [&](double t) { return std::make_pair(F(t), x.x2 - c * std::exp(t)); }, guess, 0.0, t_star,
        std::numeric_limits<double>::digits - 3, iters);
    return root;
}

double tau_of_x(const FluidModel& m, const FluidPoint& x) {
    const auto t = try_tau(m, x);
    if (!t)
        throw NoHitError("fluid path from (" + std::to_string(x.x1) + ", " + std::to_string(x.x2) +
                         ") never reaches the x2 axis");
    return *t;
}

bool above_gamma(const FluidModel& m, const FluidPoint& x, double kappa) {
    const auto t = try_tau(m, x);
    return t && x.x2 * std::exp(-*t) >= m.delta * kappa;
}

FluidPoint fluid_trajectory(const FluidModel& m, const FluidPoint& x, double t) {
    const double c = m.speed();
    auto interior = [c](const FluidPoint& a, double s) {
        const double e = std::exp(-s);
        return FluidPoint{std::min(0.0, (a.x1 + a.x2 * s) * e + c * std::expm1(-s)), a.x2 * e};
    };
    if (t <= 0.0) return x;
    const bool on_axis = x.x1 == 0.0 && x.x2 > c;
    std::optional<double> tau = on_axis ? std::optional<double>(0.0) : std::nullopt;
    if (!on_axis && x.x1 < 0.0) tau = try_tau(m, x);
    if (!tau || t <= *tau) return interior(x, t);
    const double hit = x.x2 * std::exp(-*tau);
    const double slide = (hit - c) / c;  // time on the axis until x2 = c
    const double s = t - *tau;
    if (s <= slide) return {0.0, hit - c * s};
    return interior({0.0, c}, s - slide);
}

const char* region_name(FluidRegion r) {
    switch (r) {
        case FluidRegion::S0: return "S0";
        case FluidRegion::S1: return "S1";
        case FluidRegion::S2: return "S2";
        case FluidRegion::S3: return "S3";
    }
    return "?";
}

FluidRegion classify(const FluidModel& m, const FluidPoint& x) { return locate(m, x).region; }

double f2_value(const FluidModel& m, const FluidPoint& x) {
    const Branch br = locate(m, x);
    const double v = branch_value(m, x, br);
    if (const auto other = neighbour(m, br)) {
        const double w = branch_value(m, x, {*other, br.tau, br.hit});
        if (std::abs(v - w) > kBranchAgreement * std::max(1.0, std::abs(v)))
            throw ClassificationError(std::string("branches ") + region_name(br.region) + " and " +
                                      region_name(*other) + " disagree at a boundary point");
    }
    return v;
}

double f2_d2(const FluidModel& m, const FluidPoint& x) { return branch_d2(m, x, locate(m, x)); }

double lyapunov_value(const FluidModel& m, double x1, double x2) {
    return f2_value(m, FluidPoint::make(-m.delta * x1, m.delta * x2));
}

double lyapunov_value(const ModelParams& p, const JsqState& q) {
    const double d = p.delta;
    return lyapunov_value(FluidModel::from(p), d * (p.n - q[0]), d * q[1]);
}

double generator_on_lyapunov(const ModelParams& p, const JsqState& q) {
    const double v = lyapunov_value(p, q);
    double g = 0.0;
    for (const auto& tr : transition_rates(p, q)) {
        if (tr.target[0] == q[0] && tr.target[1] == q[1]) continue;  // V sees only q1, q2
        g += tr.rate * (lyapunov_value(p, tr.target) - v);
    }
    return g;
}

double drift_bound(const ModelParams& p, const JsqState& q) {
    const double q3 = p.b > 1 ? q[2] : 0.0;
    const double full = (q[0] == p.n && q[1] == p.n) ? p.arrival_rate : 0.0;
    return -3.0 / 17.0 + p.delta / p.beta * (q3 - full);
}

double drift_threshold(const ModelParams& p) { return FluidModel::from(p).kappa2 + p.delta; }

DriftReport lyapunov_drift_check(const ModelParams& p, const std::vector<JsqState>& sample, double cushion) {
    const FluidModel m = FluidModel::from(p);
    const double root_n = std::sqrt(static_cast<double>(p.n));
    if (root_n < m.kappa2)
        throw RegimeError("drift check needs sqrt(n) >= kappa2 = " + std::to_string(m.kappa2) + ", got sqrt(n) = " +
                          std::to_string(root_n) + "; no state has x2 >= " + std::to_string(drift_threshold(p)));
    DriftReport rep;
    rep.cushion = cushion;
    rep.threshold = drift_threshold(p);
    rep.min_margin = INFINITY;
    for (const auto& q : sample) {
        if (!is_valid_state(p, q)) throw std::invalid_argument("drift check: invalid state in sample");
        const double x2 = p.delta * q[1];
        if (x2 < rep.threshold - 1e-12) {
            rep.excluded.push_back(q);
            continue;
        }
        DriftRow row;
        row.q = q;
        row.x2 = x2;
        row.gxv = generator_on_lyapunov(p, q);
        row.bound_rhs = drift_bound(p, q) + cushion;
        row.margin = row.bound_rhs - row.gxv;
        row.pass = row.margin >= 0.0;
        rep.min_margin = std::min(rep.min_margin, row.margin);
        rep.rows.push_back(std::move(row));
    }
    rep.all_pass = !rep.rows.empty() &&
                   std::all_of(rep.rows.begin(), rep.rows.end(), [](const DriftRow& r) { return r.pass; });
    return rep;
}

std::vector<JsqState> drift_sample(const ModelParams& p, int per_axis) {
    if (per_axis < 2) throw std::invalid_argument("drift sample needs per_axis >= 2");
    const int lo = static_cast<int>(std::ceil(drift_threshold(p) * std::sqrt(static_cast<double>(p.n)) - 1e-9));
    std::vector<JsqState> out;
    if (lo > p.n) return out;
    auto ladder = [per_axis](int a, int b) {
        std::vector<int> v;
        for (int i = 0; i < per_axis; ++i) v.push_back(a + static_cast<int>(std::llround((b - a) * (i / (per_axis - 1.0)))));
        v.erase(std::unique(v.begin(), v.end()), v.end());
        return v;
    };
    for (int q2 : ladder(lo, p.n)) {
        for (int q1 : ladder(q2, p.n)) {
            std::vector<int> q3s = {0};
            if (p.b > 1) q3s = {0, q2 / 2, q2};
            q3s.erase(std::unique(q3s.begin(), q3s.end()), q3s.end());
            for (int q3 : q3s) {
                JsqState q(p.dim(), 0);
                q[0] = q1;
                q[1] = q2;
                if (p.b > 1) q[2] = q3;
                out.push_back(std::move(q));
            }
        }
    }
    return out;
}

PdeResidual transport_residual(const FluidModel& m, double x1, double x2, double h) {
    if (!(x1 >= 0.0) || !(x2 > h)) throw std::invalid_argument("transport residual needs x1 >= 0 and x2 > h");
    auto V = [&](double a, double b) { return lyapunov_value(m, a, b); };
    PdeResidual r;
    if (x1 >= h)
        r.d1 = (V(x1 + h, x2) - V(x1 - h, x2)) / (2.0 * h);
    else
        r.d1 = (-3.0 * V(x1, x2) + 4.0 * V(x1 + h, x2) - V(x1 + 2.0 * h, x2)) / (2.0 * h);
    r.d2 = (V(x1, x2 + h) - V(x1, x2 - h)) / (2.0 * h);
    r.residual = (m.beta - x1 - x2) * r.d1 - x2 * r.d2 + 1.0;
    return r;
}

}  // namespace jsq
