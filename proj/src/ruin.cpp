#include "jsqlab/ruin.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace jsq {

void RuinSpec::validate() const {
    if (!(p > 0.0 && p < 1.0 && q > 0.0 && q < 1.0)) throw std::invalid_argument("ruin: p and q must lie in (0,1)");
    if (std::abs(p + q - 1.0) > 1e-12) throw std::invalid_argument("ruin: p + q must equal 1");
    if (!(z > 0 && z < a)) throw std::invalid_argument("ruin: need 0 < z < a");
    if (!(rate > 0.0)) throw std::invalid_argument("ruin: rate must be positive");
}

double ruin_probability(const RuinSpec& s) {
    s.validate();
    const double L = std::log(s.q) - std::log(s.p);  // log(q/p)
    if (std::abs(L) < 1e-300) return 1.0 - static_cast<double>(s.z) / s.a;
    // ruin = 1 - (r^z - 1)/(r^a - 1), r = q/p
    if (L > 0.0) {
        const double num = -std::expm1(-s.z * L);
        const double den = -std::expm1(-s.a * L);
        return 1.0 - std::exp((s.z - s.a) * L) * num / den;
    }
    return 1.0 - std::expm1(s.z * L) / std::expm1(s.a * L);
}

double duration_pgf(const RuinSpec& spec, double s) { return duration_pgf(spec, s, 1.0 - s); }

double duration_pgf(const RuinSpec& spec, double s, double one_minus_s) {
    spec.validate();
    if (!(s > 0.0 && s < 1.0) || !(one_minus_s > 0.0)) throw std::domain_error("pgf argument must lie in (0,1)");
    const double p = spec.p, q = spec.q;
    const double pq = p - q;
    // 1 - 4pq s^2 = (p-q)^2 + 4pq (1-s)(1+s), free of cancellation
    const double disc = pq * pq + 4.0 * p * q * one_minus_s * (1.0 + s);
    const double R = std::sqrt(disc);
    // lambda1 = (1+R)/(2ps), lambda2 = (q/p)/lambda1
    const double l1 = std::log1p(R) - std::log(2.0 * p) - std::log1p(-one_minus_s);
    const double l2 = (std::log(q) - std::log(p)) - l1;
    const double z = spec.z, a = spec.a;
    // u_z = [(1 - L2^a) L1^z + (L1^a - 1) L2^z] / (L1^a - L2^a), divided through by L1^a
    const double den = -std::expm1(a * (l2 - l1));
    const double num = -std::expm1(a * l2) * std::exp((z - a) * l1) - std::expm1(-a * l1) * std::exp(z * l2);
    return num / den;
}

double ct_duration_mgf(const RuinSpec& spec) {
    spec.validate();
    const double s = spec.rate / (spec.rate + 1.0);
    return duration_pgf(spec, s, 1.0 / (spec.rate + 1.0));
}

AbsorbingResult absorbing_oracle(const RuinSpec& spec, std::optional<double> s) {
    spec.validate();
    if (spec.a > 10000) throw std::length_error("absorbing oracle limited to a <= 10^4");
    const int m = spec.a - 1;
    // Thomas algorithm for -q u_{k-1} + d u_k - p u_{k+1} = r_k on k = 1..a-1
    auto solve = [&](double diag, double lo, double up, std::vector<double> r) {
        std::vector<double> c(m, 0.0);
        double beta = diag;
        r[0] /= beta;
        c[0] = up / beta;
        for (int k = 1; k < m; ++k) {
            beta = diag - lo * c[k - 1];
            c[k] = up / beta;
            r[k] = (r[k] - lo * r[k - 1]) / beta;
        }
        for (int k = m - 2; k >= 0; --k) r[k] -= c[k] * r[k + 1];
        return r;
    };
    AbsorbingResult out;
    std::vector<double> rr(m, 0.0), rd(m, 1.0);
    rr[0] = spec.q;
    out.ruin_probability = solve(1.0, -spec.q, -spec.p, rr)[spec.z - 1];
    out.expected_duration = solve(1.0, -spec.q, -spec.p, rd)[spec.z - 1];
    out.pgf = std::numeric_limits<double>::quiet_NaN();
    if (s) {
        const double sv = *s;
        std::vector<double> rp(m, 0.0);
        rp[0] += spec.q * sv;
        rp[m - 1] += spec.p * sv;
        out.pgf = solve(1.0, -spec.q * sv, -spec.p * sv, rp)[spec.z - 1];
    }
    return out;
}

double cycle_gamma(double beta) { return 2.0 * (17.0 / beta + beta + 1.0); }

RuinSpec halfin_whitt_spec(int n, int b, double beta, int q2, int i) {
    const double rn = std::sqrt(static_cast<double>(n));
    const double nl = n - beta * rn;
    const int z = static_cast<int>(std::floor(rn * beta / 2.0));
    const int step = z / (b + 1);
    const double qb = static_cast<double>(n - q2 - 1 - z) + std::floor(static_cast<double>(z) * i / (b + 1));
    const double down = qb - z;
    if (z < 1 || step < 1 || !(down > 0.0))
        throw std::domain_error("Halfin-Whitt ruin walk undefined at n = " + std::to_string(n) +
                                " (need z >= b+1 and positive down rate)");
    RuinSpec s;
    s.rate = nl + down;
    s.p = nl / s.rate;
    s.q = down / s.rate;
    s.z = z;
    s.a = z + step;
    return s;
}

MgfScan halfin_whitt_mgf_scan(int b, double beta, double q2_fraction, const std::vector<int>& n_ladder,
                              double margin) {
    if (q2_fraction < 0.0 || q2_fraction > 1.0) throw std::invalid_argument("q2 fraction must lie in [0,1]");
    MgfScan scan;
    scan.below_margin = true;
    for (int n : n_ladder) {
        const int t2 = static_cast<int>(std::floor(cycle_gamma(beta) * std::sqrt(static_cast<double>(n))));
        MgfScanPoint pt;
        pt.n = n;
        pt.q2 = static_cast<int>(std::floor(q2_fraction * 2 * t2));
        try {
            for (int i = 1; i <= b + 1; ++i) {
                const double v = ct_duration_mgf(halfin_whitt_spec(n, b, beta, pt.q2, i));
                if (v > pt.mgf) {
                    pt.mgf = v;
                    pt.worst_i = i;
                }
            }
        } catch (const std::domain_error&) {
            pt.defined = false;
            pt.mgf = std::numeric_limits<double>::quiet_NaN();
            ++scan.undefined_points;
            scan.points.push_back(pt);
            continue;
        }
        scan.max_mgf = std::max(scan.max_mgf, pt.mgf);
        if (!(pt.mgf < 1.0 - margin)) scan.below_margin = false;
        scan.points.push_back(pt);
    }
    return scan;
}

}  // namespace jsq
