#include "jsqlab/model.hpp"

#include <algorithm>
#include <cmath>

namespace jsq {

ModelParams ModelParams::make(int n, int b, double beta) {
    if (n < 1) throw std::invalid_argument("n must be >= 1");
    if (b < 1) throw std::invalid_argument("b must be >= 1");
    if (!(beta > 0.0)) throw std::invalid_argument("beta must be positive");
    const double rn = std::sqrt(static_cast<double>(n));
    if (!(beta < rn))
        throw std::invalid_argument("beta must be below sqrt(n) so that lambda lies in (0,1)");
    ModelParams p;
    p.n = n;
    p.b = b;
    p.beta = beta;
    p.lambda = 1.0 - beta / rn;
    p.delta = 1.0 / rn;
    p.arrival_rate = static_cast<double>(n) - beta * rn;
    return p;
}

bool is_valid_state(const ModelParams& p, const JsqState& q) {
    if (static_cast<int>(q.size()) != p.dim()) return false;
    int prev = p.n;
    for (int v : q) {
        if (v < 0 || v > prev) return false;
        prev = v;
    }
    return true;
}

ScaledState scale_state(const ModelParams& p, const JsqState& q) {
    ScaledState x(q.size());
    x[0] = p.delta * (p.n - q[0]);
    for (std::size_t i = 1; i < q.size(); ++i) x[i] = p.delta * q[i];
    return x;
}

JsqState unscale_state(const ModelParams& p, const ScaledState& x) {
    JsqState q(x.size());
    q[0] = p.n - static_cast<int>(std::lround(x[0] / p.delta));
    for (std::size_t i = 1; i < x.size(); ++i) q[i] = static_cast<int>(std::lround(x[i] / p.delta));
    return q;
}

JsqState anchor_state(const ModelParams& p) {
    JsqState q(p.dim(), 0);
    q[0] = p.n;
    return q;
}

namespace {

// Binomial coefficient in extended precision; huge values come back as inf.
double binom(int a, int k) {
    if (k < 0 || k > a) return 0.0;
    k = std::min(k, a - k);
    long double r = 1.0L;
    for (int i = 1; i <= k; ++i) r = r * (a - k + i) / i;
    return static_cast<double>(std::round(r));
}

void enumerate(int pos, int maxv, int dim, JsqState& cur, std::vector<int>& out) {
    if (pos == dim) {
        out.insert(out.end(), cur.begin(), cur.end());
        return;
    }
    for (int v = 0; v <= maxv; ++v) {
        cur[pos] = v;
        enumerate(pos + 1, v, dim, cur, out);
    }
}

}  // namespace

std::size_t StateSpace::cardinality(int n, int b) {
    double c = binom(n + b + 1, b + 1);
    if (!std::isfinite(c) || c > 1e15) throw CapacityError("state space cardinality overflows");
    return static_cast<std::size_t>(c);
}

StateSpace::StateSpace(const ModelParams& p, std::size_t capacity)
    : params_(p), dim_(p.dim()), size_(cardinality(p.n, p.b)) {
    if (size_ > capacity)
        throw CapacityError("state space has " + std::to_string(size_) +
                            " states, above the capacity guard " + std::to_string(capacity));
    flat_.reserve(size_ * dim_);
    JsqState cur(dim_, 0);
    enumerate(0, p.n, dim_, cur, flat_);
    anchor_ = index(anchor_state(p));
}

JsqState StateSpace::state(std::size_t idx) const {
    return JsqState(flat_.begin() + idx * dim_, flat_.begin() + (idx + 1) * dim_);
}

std::size_t StateSpace::index(const JsqState& q) const {
    // Sequences that agree before position i and hold v < q_i there have
    // C(v + dim-1-i, dim-1-i) tails; summing over v gives C(q_i + dim-1-i, dim-i).
    std::size_t r = 0;
    for (int i = 0; i < dim_; ++i) {
        if (q[i] > 0) r += static_cast<std::size_t>(binom(q[i] + dim_ - 1 - i, dim_ - i));
    }
    return r;
}

std::int64_t StateSpace::find(const JsqState& q) const {
    if (!is_valid_state(params_, q)) return -1;
    return static_cast<std::int64_t>(index(q));
}

std::vector<Transition> transition_rates(const ModelParams& p, const JsqState& q) {
    std::vector<Transition> out;
    const int d = p.dim();
    // Arrival joins the first level that is not full.
    int j = 0;
    while (j < d && q[j] == p.n) ++j;
    if (j < d) {
        JsqState t = q;
        ++t[j];
        out.push_back({std::move(t), p.arrival_rate});
    }
    // Service at servers holding exactly i+1 customers.
    for (int i = 0; i < d; ++i) {
        const int next = (i + 1 < d) ? q[i + 1] : 0;
        const int rate = q[i] - next;
        if (rate > 0) {
            JsqState t = q;
            --t[i];
            out.push_back({std::move(t), static_cast<double>(rate)});
        }
    }
    return out;
}

SparseGenerator build_generator(const StateSpace& space) {
    const auto& p = space.params();
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(space.size() * (p.dim() + 2));
    for (std::size_t i = 0; i < space.size(); ++i) {
        const JsqState q = space.state(i);
        double total = 0.0;
        for (const auto& tr : transition_rates(p, q)) {
            trips.emplace_back(static_cast<int>(i), static_cast<int>(space.index(tr.target)), tr.rate);
            total += tr.rate;
        }
        trips.emplace_back(static_cast<int>(i), static_cast<int>(i), -total);
    }
    SparseGenerator g(static_cast<Eigen::Index>(space.size()), static_cast<Eigen::Index>(space.size()));
    g.setFromTriplets(trips.begin(), trips.end());
    g.makeCompressed();
    return g;
}

Chain Chain::make(const ModelParams& p, std::size_t capacity) {
    Chain c;
    c.params = p;
    c.space = std::make_shared<const StateSpace>(p, capacity);
    c.gen = build_generator(*c.space);
    return c;
}

}  // namespace jsq
