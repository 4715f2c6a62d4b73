#include "jsqlab/coupling.hpp"

#include "jsqlab/ruin.hpp"

#include <Eigen/SparseLU>

#include <algorithm>
#include <array>
#include <random>
#include <stdexcept>

namespace jsq {

namespace {

std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream, std::uint32_t tag) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32), tag};
    return std::mt19937_64(seq);
}

JsqState plus_e(JsqState q, int level) {
    q[static_cast<std::size_t>(level - 1)] += 1;
    return q;
}

bool valid_pair(const ModelParams& p, const JsqState& q, int theta) {
    if (theta < 1 || theta > p.dim() || !is_valid_state(p, q)) return false;
    return is_valid_state(p, plus_e(q, theta));
}

void require_pair(const ModelParams& p, const JsqState& q, int theta) {
    if (static_cast<int>(q.size()) != p.dim() || !valid_pair(p, q, theta))
        throw std::invalid_argument("invalid coupled pair: q + e^(theta) is not a state");
}

int first_open_level(const ModelParams& p, const JsqState& q) {
    for (int l = 0; l < p.dim(); ++l)
        if (q[static_cast<std::size_t>(l)] < p.n) return l;
    return -1;
}

int servers_at_level(const JsqState& q, int j) {  // servers holding exactly j + 1 customers
    const auto u = static_cast<std::size_t>(j);
    return q[u] - (u + 1 < q.size() ? q[u + 1] : 0);
}

/// One transition of the plain chain; returns the holding time.
double plain_step(const ModelParams& p, JsqState& q, std::mt19937_64& rng) {
    const double lam = p.n * p.lambda;
    const int open = first_open_level(p, q);
    const double arrival = open >= 0 ? lam : 0.0;
    const double R = arrival + q[0];
    std::exponential_distribution<double> hold(R);
    const double dt = hold(rng);
    double u = std::uniform_real_distribution<double>(0.0, R)(rng);
    if (u < arrival) {
        q[static_cast<std::size_t>(open)] += 1;
        return dt;
    }
    u -= arrival;
    for (int j = 0; j < p.dim(); ++j) {
        const int d = servers_at_level(q, j);
        if (u < d || j + 1 == p.dim()) {
            q[static_cast<std::size_t>(j)] -= 1;
            return dt;
        }
        u -= d;
    }
    return dt;
}

}  // namespace

PairResult simulate_coupled_pair(const ModelParams& p, const JsqState& q0, int theta0, std::uint64_t seed,
                                 std::uint64_t replication, const PairOptions& opt) {
    require_pair(p, q0, theta0);
    auto rng = make_rng(seed, replication, 0xc0u);
    const double lam = p.n * p.lambda;
    const int B = p.dim();
    JsqState q = q0;
    int th = theta0;
    double t = 0.0;
    PairResult r;
    r.max_theta = th;
    bool observed = false;

    auto finish = [&] {
        r.stop_time = t;
        r.final_q = q;
    };
    if (opt.stop_at_full && q[0] == p.n) {
        r.stopped_full = true;
        finish();
        return r;
    }
    while (true) {
        if (r.events >= opt.max_events) throw std::runtime_error("coupled pair: event budget exhausted");
        const double R = lam + q[0] + 1 - (th >= 2 ? 1 : 0);
        const double dt = std::exponential_distribution<double>(R)(rng);
        if (opt.observe_time && !observed && t + dt > *opt.observe_time) {
            r.observed_1 = q;
            r.observed_2 = plus_e(q, th);
            observed = true;
        }
        t += dt;
        double u = std::uniform_real_distribution<double>(0.0, R)(rng);
        ++r.events;
        if (u < 1.0) {
            // the tagged server completes in both systems
            if (th == 1) {
                r.coupled = true;
            } else {
                q[static_cast<std::size_t>(th - 2)] -= 1;
                --th;
                ++r.theta_down;
            }
        } else if ((u -= 1.0) < lam) {
            const int l = first_open_level(p, q);
            if (l == th - 1 && q[static_cast<std::size_t>(l)] == p.n - 1) {
                q[static_cast<std::size_t>(l)] += 1;
                if (th == B) {
                    r.coupled = true;
                    r.by_blocking = true;
                } else {
                    ++th;
                    ++r.theta_up;
                    r.max_theta = std::max(r.max_theta, th);
                }
            } else {
                q[static_cast<std::size_t>(l)] += 1;
            }
        } else {
            u -= lam;
            for (int j = 0; j < B; ++j) {
                const int d = servers_at_level(q, j) - (j + 1 == th - 1 ? 1 : 0);
                if (u < d || j + 1 == B) {
                    q[static_cast<std::size_t>(j)] -= 1;
                    break;
                }
                u -= d;
            }
        }
        if (opt.record_trace) r.trace.push_back({t, q, r.coupled ? 0 : th});
        if (opt.check_invariants) {
            if (!is_valid_state(p, q) || (!r.coupled && !valid_pair(p, q, th)))
                throw std::logic_error("coupled pair left the Theta sets before coupling");
        }
        if (r.coupled) {
            r.tau_C = t;
            break;
        }
        if (opt.stop_at_full && q[0] == p.n) {
            r.stopped_full = true;
            finish();
            return r;
        }
    }
    // after coupling both systems follow one chain
    if (opt.observe_time && !observed) {
        while (true) {
            const JsqState held = q;
            const double dt = plain_step(p, q, rng);
            if (t + dt > *opt.observe_time) {
                r.observed_1 = r.observed_2 = held;
                break;
            }
            t += dt;
        }
    }
    finish();
    return r;
}

double coupling_time_exact(const Chain& chain, const JsqState& q0, int theta0) {
    const auto& p = chain.params;
    require_pair(p, q0, theta0);
    const auto& S = *chain.space;
    const int B = p.dim();
    const double lam = p.n * p.lambda;
    const auto N = S.size();
    std::vector<long> id(N * static_cast<std::size_t>(B), -1);
    long m = 0;
    for (std::size_t i = 0; i < N; ++i) {
        const auto q = S.state(i);
        for (int th = 1; th <= B; ++th)
            if (valid_pair(p, q, th)) id[i * static_cast<std::size_t>(B) + static_cast<std::size_t>(th - 1)] = m++;
    }
    auto joint = [&](const JsqState& q, int th) {
        return id[S.index(q) * static_cast<std::size_t>(B) + static_cast<std::size_t>(th - 1)];
    };
    std::vector<Eigen::Triplet<double>> trip;
    Eigen::VectorXd rhs = Eigen::VectorXd::Ones(m);
    for (std::size_t i = 0; i < N; ++i) {
        const auto q = S.state(i);
        for (int th = 1; th <= B; ++th) {
            const long row = id[i * static_cast<std::size_t>(B) + static_cast<std::size_t>(th - 1)];
            if (row < 0) continue;
            double total = 1.0;
            if (th > 1) {
                auto q2 = q;
                q2[static_cast<std::size_t>(th - 2)] -= 1;
                trip.emplace_back(row, joint(q2, th - 1), -1.0);
            }
            total += lam;
            const int l = first_open_level(p, q);
            auto qa = q;
            qa[static_cast<std::size_t>(l)] += 1;
            if (l == th - 1 && q[static_cast<std::size_t>(l)] == p.n - 1) {
                if (th < B) trip.emplace_back(row, joint(qa, th + 1), -lam);
            } else {
                trip.emplace_back(row, joint(qa, th), -lam);
            }
            for (int j = 0; j < B; ++j) {
                const int d = servers_at_level(q, j) - (j + 1 == th - 1 ? 1 : 0);
                if (d <= 0) continue;
                auto qd = q;
                qd[static_cast<std::size_t>(j)] -= 1;
                trip.emplace_back(row, joint(qd, th), -static_cast<double>(d));
                total += d;
            }
            trip.emplace_back(row, row, total);
        }
    }
    Eigen::SparseMatrix<double> A(m, m);
    A.setFromTriplets(trip.begin(), trip.end());
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
    lu.compute(A);
    if (lu.info() != Eigen::Success) throw std::runtime_error("coupling time solve failed");
    Eigen::VectorXd T = lu.solve(rhs);
    return T[joint(q0, theta0)];
}

MarginalCheck marginal_law_check(const Chain& chain, const JsqState& q0, int theta0, double t, int reps,
                                 std::uint64_t seed, const TestFunction* h) {
    const auto& p = chain.params;
    require_pair(p, q0, theta0);
    if (t < 0.0) throw std::invalid_argument("marginal_law_check: t must be nonnegative");
    if (reps < 2) throw std::invalid_argument("marginal_law_check: need at least two replications");
    const int B = p.dim();
    std::vector<double> s(static_cast<std::size_t>(B), 0.0), s2(static_cast<std::size_t>(B), 0.0);
    double hs = 0, hs2 = 0;
    PairOptions opt;
    opt.observe_time = t;
    for (int r = 0; r < reps; ++r) {
        auto res = simulate_coupled_pair(p, q0, theta0, seed, static_cast<std::uint64_t>(r), opt);
        const auto& q2 = res.observed_2.empty() ? res.final_q : res.observed_2;
        for (int j = 0; j < B; ++j) {
            const double v = q2[static_cast<std::size_t>(j)];
            s[static_cast<std::size_t>(j)] += v;
            s2[static_cast<std::size_t>(j)] += v * v;
        }
        if (h) {
            const double v = (*h)(scale_state(p, q2));
            hs += v;
            hs2 += v * v;
        }
    }
    auto summarize = [&](double sum, double sum2, double exact) {
        CoordinateComparison c;
        c.mean = sum / reps;
        const double var = std::max(0.0, (sum2 - reps * c.mean * c.mean) / (reps - 1));
        c.se = std::sqrt(var / reps);
        c.exact = exact;
        const double gap = c.mean - exact;
        c.gap_in_se = c.se > 0 ? gap / c.se : (std::abs(gap) < 1e-12 ? 0.0 : INFINITY);
        return c;
    };
    MarginalCheck mc;
    mc.t = t;
    mc.replications = reps;
    const auto start = plus_e(q0, theta0);
    const auto& S = *chain.space;
    for (int j = 0; j < B; ++j) {
        GridFunction g{chain.space, Eigen::VectorXd(static_cast<Eigen::Index>(S.size()))};
        for (std::size_t i = 0; i < S.size(); ++i) g.values[static_cast<Eigen::Index>(i)] = S.state(i)[static_cast<std::size_t>(j)];
        mc.coordinates.push_back(summarize(s[static_cast<std::size_t>(j)], s2[static_cast<std::size_t>(j)],
                                           transient_expectation(chain, g, start, t)));
    }
    if (h) mc.h_moment = summarize(hs, hs2, transient_expectation(chain, grid_values(chain, *h), start, t));
    return mc;
}

CouplingStats estimate_coupling_time(const ModelParams& p, const std::vector<std::pair<JsqState, int>>& grid, int reps,
                                     std::uint64_t seed) {
    if (reps < 2) throw std::invalid_argument("estimate_coupling_time: need at least two replications");
    CouplingStats st;
    st.seed = seed;
    for (std::size_t c = 0; c < grid.size(); ++c) {
        const auto& [q, th] = grid[c];
        double s = 0, s2 = 0;
        for (int r = 0; r < reps; ++r) {
            const double tau =
                simulate_coupled_pair(p, q, th, seed, (static_cast<std::uint64_t>(c) << 32) | static_cast<std::uint64_t>(r))
                    .tau_C;
            s += tau;
            s2 += tau * tau;
        }
        CouplingCell cell;
        cell.q = q;
        cell.theta = th;
        cell.replications = reps;
        cell.mean = s / reps;
        cell.variance = std::max(0.0, (s2 - reps * cell.mean * cell.mean) / (reps - 1));
        cell.se = std::sqrt(cell.variance / reps);
        cell.envelope_ratio = cell.mean / (1.0 + p.delta * q[1]);
        st.max_ratio = std::max(st.max_ratio, cell.envelope_ratio);
        st.cells.push_back(cell);
    }
    return st;
}

std::vector<std::pair<JsqState, int>> default_coupling_grid(const ModelParams& p) {
    const int r = static_cast<int>(std::floor(std::sqrt(static_cast<double>(p.n))));
    const int lo = p.n - static_cast<int>(std::floor(p.beta * std::sqrt(static_cast<double>(p.n))));
    std::vector<std::pair<JsqState, int>> out;
    for (int q1 : {std::max(lo, 0), p.n})
        for (int q2 : {0, r, 2 * r})
            for (int th : {1, p.dim()}) {
                JsqState q(static_cast<std::size_t>(p.dim()), 0);
                q[0] = q1;
                q[1] = q2;
                if (valid_pair(p, q, th) &&
                    std::find(out.begin(), out.end(), std::make_pair(q, th)) == out.end())
                    out.emplace_back(q, th);
            }
    return out;
}

double cycle_p1_bound(const ModelParams& p, double gamma) {
    const double rn = std::sqrt(static_cast<double>(p.n));
    const int z = static_cast<int>(std::floor(rn * p.beta / 2.0));
    const int theta1 = p.n - z;
    const int theta2 = static_cast<int>(std::floor(gamma * rn));
    const double down = theta1 - 3.0 * theta2;
    if (down <= 0.0 || z < 1) return NAN;
    const double up = p.n * p.lambda;
    RuinSpec s;
    s.p = up / (up + down);
    s.q = down / (up + down);
    s.z = z;
    s.a = z + theta2;
    s.rate = up + down;
    return ruin_probability(s);
}

CyclePhaseResult cycle_phase_estimates(const ModelParams& p, int reps, std::uint64_t seed,
                                       std::optional<double> gamma_override) {
    if (reps < 2) throw std::invalid_argument("cycle_phase_estimates: need at least two replications");
    CyclePhaseResult res;
    res.gamma = gamma_override ? *gamma_override : cycle_gamma(p.beta);
    const double rn = std::sqrt(static_cast<double>(p.n));
    const int z = static_cast<int>(std::floor(rn * p.beta / 2.0));
    res.theta1 = p.n - z;
    res.theta2 = static_cast<int>(std::floor(res.gamma * rn));
    if (res.theta1 - 3 * res.theta2 <= 0) {
        res.reason = "theta1 - 3 theta2 = " + std::to_string(res.theta1 - 3 * res.theta2) + " is not positive";
        return res;
    }
    if (z < 1) {
        res.reason = "floor(sqrt(n) beta / 2) is zero";
        return res;
    }
    res.applicable = true;
    res.p1_bound = cycle_p1_bound(p, res.gamma);
    const int B = p.dim();
    auto with_upper = [&](int q1, int q2, int upper) {
        JsqState q(static_cast<std::size_t>(B), 0);
        q[0] = q1;
        q[1] = q2;
        for (int j = 2; j < B; ++j) q[static_cast<std::size_t>(j)] = upper;
        return q;
    };
    std::vector<int> uppers = B > 2 ? std::vector<int>{0, 1} : std::vector<int>{0};

    res.p1 = INFINITY;
    res.min_time = -INFINITY;
    std::uint64_t stream = 0;
    for (int q1 : {res.theta1 + 1, p.n}) {
        for (int up : uppers) {
            const auto q = with_upper(q1, res.theta2, up ? res.theta2 : 0);
            if (!is_valid_state(p, q)) continue;
            double hits = 0, ts = 0, ts2 = 0;
            for (int r = 0; r < reps; ++r) {
                auto rng = make_rng(seed, (stream << 32) | static_cast<std::uint64_t>(r), 0xc1u);
                JsqState x = q;
                double t = 0.0;
                while (x[0] > res.theta1 && x[1] < 2 * res.theta2) t += plain_step(p, x, rng);
                if (x[0] <= res.theta1) hits += 1;
                ts += t;
                ts2 += t * t;
            }
            ++stream;
            const double pr = hits / reps;
            const double mt = ts / reps;
            const double mt_se = std::sqrt(std::max(0.0, (ts2 - reps * mt * mt) / (reps - 1)) / reps);
            const double pr_se = std::sqrt(std::max(pr * (1 - pr), 1.0 / reps) / reps);
            res.rows.push_back({"p1", q, 0, pr, pr_se});
            res.rows.push_back({"min_time", q, 0, mt, mt_se});
            if (pr < res.p1) {
                res.p1 = pr;
                res.p1_se = pr_se;
            }
            if (mt > res.min_time) {
                res.min_time = mt;
                res.min_time_se = mt_se;
            }
        }
    }

    res.p2 = INFINITY;
    PairOptions opt;
    opt.stop_at_full = true;
    for (int q2 : {0, std::min(2 * res.theta2, res.theta1)})
        for (int up : uppers)
            for (int th : {1, B}) {
                const auto q = with_upper(res.theta1, q2, up ? q2 : 0);
                if (!valid_pair(p, q, th)) continue;
                double wins = 0;
                for (int r = 0; r < reps; ++r) {
                    auto pr = simulate_coupled_pair(p, q, th, seed ^ 0x9e3779b97f4a7c15ull,
                                                    (stream << 32) | static_cast<std::uint64_t>(r), opt);
                    if (pr.coupled) wins += 1;
                }
                ++stream;
                const double v = wins / reps;
                const double se = std::sqrt(std::max(v * (1 - v), 1.0 / reps) / reps);
                res.rows.push_back({"p2", q, th, v, se});
                if (v < res.p2) {
                    res.p2 = v;
                    res.p2_se = se;
                }
            }
    return res;
}

const char* second_difference_name(SecondDifference v) {
    switch (v) {
        case SecondDifference::D11: return "d11";
        case SecondDifference::D21: return "d21";
        case SecondDifference::D22: return "d22";
        case SecondDifference::Diagonal: return "diagonal";
    }
    return "?";
}

SecondDifference parse_second_difference(const std::string& name) {
    for (auto v : {SecondDifference::D11, SecondDifference::D21, SecondDifference::D22, SecondDifference::Diagonal})
        if (name == second_difference_name(v)) return v;
    throw std::invalid_argument("unknown second-difference variant '" + name + "'");
}

namespace {

struct FourLayout {
    std::vector<std::vector<int>> occ;  // per system, per server
    std::vector<double> sign;
    int rich = 0;
    int star = 0, diamond = 0;
    int level_system = -1;  // stop when this system has q1 = n; -1 for none
};

JsqState aggregate(const std::vector<int>& occ, int dim) {
    JsqState q(static_cast<std::size_t>(dim), 0);
    for (int o : occ)
        for (int i = 0; i < o; ++i) q[static_cast<std::size_t>(i)] += 1;
    return q;
}

FourLayout make_layout(const ModelParams& p, SecondDifference v, const JsqState& q) {
    if (static_cast<int>(q.size()) != p.dim() || !is_valid_state(p, q))
        throw DomainError("four-system coupling: base point is not a state");
    std::vector<int> base(static_cast<std::size_t>(p.n), 0);
    for (int k = 0; k < p.n; ++k)
        for (int i = 0; i < p.dim(); ++i)
            if (k < q[static_cast<std::size_t>(i)]) base[static_cast<std::size_t>(k)] += 1;
    const int q1 = q[0], q2 = p.dim() > 1 ? q[1] : 0;
    FourLayout L;
    auto need = [&](bool ok) {
        if (!ok) throw DomainError(std::string("four-system coupling: stencil of ") + second_difference_name(v) +
                                   " leaves the state space");
    };
    auto sz = [](int k) { return static_cast<std::size_t>(k); };
    switch (v) {
        case SecondDifference::D11: {
            need(q2 <= q1 - 2);
            L.star = q1 - 1;
            L.diamond = q1 - 2;
            auto P2 = base, P3 = base, P4 = base;
            P2[sz(L.diamond)] = 0;
            P3[sz(L.star)] = 0;
            P4[sz(L.diamond)] = 0;
            P4[sz(L.star)] = 0;
            L.occ = {base, P2, P3, P4};
            L.sign = {1, -1, -1, 1};
            L.rich = 0;
            L.level_system = 0;
            break;
        }
        case SecondDifference::D21: {
            need(q2 <= q1 - 2);
            L.star = q1 - 1;
            L.diamond = q2;
            auto P2 = base, P3 = base;
            P2[sz(L.diamond)] += 1;
            P3[sz(L.star)] = 0;
            auto P4 = P3;
            P4[sz(L.diamond)] += 1;
            L.occ = {base, P2, P3, P4};
            L.sign = {1, -1, -1, 1};
            L.rich = 1;
            L.level_system = 2;
            break;
        }
        case SecondDifference::D22: {
            need(q2 + 2 <= q1);
            L.star = q2;
            L.diamond = q2 + 1;
            auto P2 = base, P3 = base;
            P2[sz(L.star)] += 1;
            P3[sz(L.diamond)] += 1;
            auto P4 = P2;
            P4[sz(L.diamond)] += 1;
            L.occ = {base, P2, P3, P4};
            L.sign = {1, -1, -1, 1};
            L.rich = 3;
            L.level_system = 0;
            break;
        }
        case SecondDifference::Diagonal: {
            need(q2 + 1 <= q1 - 1);
            L.star = q1 - 1;
            L.diamond = q2;
            auto P2 = base;
            P2[sz(L.star)] = 0;
            P2[sz(L.diamond)] += 1;
            L.occ = {base, P2};
            L.sign = {1, -1};
            L.rich = 0;
            L.level_system = -1;
            break;
        }
    }
    for (auto& o : L.occ) need(is_valid_state(p, aggregate(o, p.dim())) &&
                               *std::max_element(o.begin(), o.end()) <= p.dim());
    return L;
}

}  // namespace

FourSystemEstimate four_system_second_difference(const Chain& chain, const GridFunction& f, const TestFunction& h,
                                                 SecondDifference variant, const JsqState& q, int reps,
                                                 std::uint64_t seed) {
    const auto& p = chain.params;
    if (reps < 2) throw std::invalid_argument("four_system_second_difference: need at least two replications");
    const FourLayout L0 = make_layout(p, variant, q);
    const int m = static_cast<int>(L0.occ.size());
    const int B = p.dim();
    const double lam = p.n * p.lambda;
    const double R = lam + p.n;

    FourSystemEstimate out;
    out.replications = reps;
    for (int j = 0; j < m; ++j) out.exact += L0.sign[static_cast<std::size_t>(j)] * f.at(aggregate(L0.occ[static_cast<std::size_t>(j)], B));

    double s = 0, s2 = 0, tsum = 0;
    for (int r = 0; r < reps; ++r) {
        auto rng = make_rng(seed, static_cast<std::uint64_t>(r), 0xc4u);
        auto occ = L0.occ;
        std::vector<JsqState> agg(static_cast<std::size_t>(m));
        for (int j = 0; j < m; ++j) agg[static_cast<std::size_t>(j)] = aggregate(occ[static_cast<std::size_t>(j)], B);
        auto integrand = [&] {
            double v = 0.0;
            for (int j = 0; j < m; ++j) v += L0.sign[static_cast<std::size_t>(j)] * h(scale_state(p, agg[static_cast<std::size_t>(j)]));
            return v;
        };
        auto level_hit = [&] {
            return L0.level_system >= 0 && agg[static_cast<std::size_t>(L0.level_system)][0] == p.n;
        };
        double I = integrand(), integral = 0.0, t = 0.0;
        bool by_level = level_hit(), by_server = false;
        while (!by_level && !by_server) {
            const double dt = std::exponential_distribution<double>(R)(rng);
            integral += I * dt;
            t += dt;
            const double u = std::uniform_real_distribution<double>(0.0, R)(rng);
            if (u < lam) {
                const auto& rich = occ[static_cast<std::size_t>(L0.rich)];
                for (int j = 0; j < m; ++j) {
                    auto& o = occ[static_cast<std::size_t>(j)];
                    int best = -1;
                    for (int k = 0; k < p.n; ++k) {
                        const auto uk = static_cast<std::size_t>(k);
                        if (o[uk] >= B) continue;
                        if (best < 0) {
                            best = k;
                            continue;
                        }
                        const auto ub = static_cast<std::size_t>(best);
                        if (o[uk] < o[ub] || (o[uk] == o[ub] && rich[uk] < rich[ub])) best = k;
                    }
                    if (best < 0) continue;  // blocked
                    auto& cell = o[static_cast<std::size_t>(best)];
                    cell += 1;
                    agg[static_cast<std::size_t>(j)][static_cast<std::size_t>(cell - 1)] += 1;
                }
            } else {
                const int k = std::min(p.n - 1, static_cast<int>((u - lam)));
                for (int j = 0; j < m; ++j) {
                    auto& cell = occ[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)];
                    if (cell == 0) continue;
                    agg[static_cast<std::size_t>(j)][static_cast<std::size_t>(cell - 1)] -= 1;
                    cell -= 1;
                }
                by_server = k == L0.star || k == L0.diamond;
            }
            I = integrand();
            by_level = by_level || level_hit();
        }
        double v = integral;
        for (int j = 0; j < m; ++j) v += L0.sign[static_cast<std::size_t>(j)] * f.at(agg[static_cast<std::size_t>(j)]);
        s += v;
        s2 += v * v;
        tsum += t;
        if (by_server)
            ++out.stopped_by_servers;
        else
            ++out.stopped_by_level;
    }
    out.estimate = s / reps;
    out.se = std::sqrt(std::max(0.0, (s2 - reps * out.estimate * out.estimate) / (reps - 1)) / reps);
    out.mean_stop_time = tsum / reps;
    const double gap = out.estimate - out.exact;
    out.gap_in_se = out.se > 0 ? gap / out.se : (std::abs(gap) < 1e-12 ? 0.0 : INFINITY);
    return out;
}

}  // namespace jsq
