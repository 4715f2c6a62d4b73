#include "jsqlab/spline.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <numeric>
#include <string>

namespace jsq {

namespace {

// Columns: coefficients in t^0..t^7 of the Hermite basis polynomial for
// constraint r (r < 4: r-th derivative at 0, r >= 4: (r-4)-th derivative at 1).
struct HermiteBasis {
    std::array<std::array<double, 8>, 8> c{};
    HermiteBasis() {
        Eigen::Matrix<double, 8, 8> M = Eigen::Matrix<double, 8, 8>::Zero();
        for (int m = 0; m < 4; ++m) {
            double fact = 1;
            for (int i = 2; i <= m; ++i) fact *= i;
            M(m, m) = fact;
            for (int p = m; p < 8; ++p) {
                double fall = 1;
                for (int i = 0; i < m; ++i) fall *= p - i;
                M(4 + m, p) = fall;
            }
        }
        Eigen::Matrix<double, 8, 8> inv = M.fullPivLu().inverse();
        // the exact coefficients are integers over 6; snapping removes LU noise
        for (int r = 0; r < 8; ++r)
            for (int p = 0; p < 8; ++p) c[r][p] = std::round(6.0 * inv(p, r)) / 6.0;
    }
};

const HermiteBasis& basis() {
    static const HermiteBasis b;
    return b;
}

// m-th t-derivative of the polynomial with coefficients c at t
double poly_deriv(const std::array<double, 8>& c, int m, double t) {
    double s = 0.0;
    for (int p = 7; p >= m; --p) {
        double fall = 1;
        for (int i = 0; i < m; ++i) fall *= p - i;
        s = s * t + c[p] * fall;
    }
    return s;
}

SplineWeights weights_unchecked(double t, double delta) {
    const auto& B = basis();
    const auto& S = node_stencils();
    SplineWeights out;
    for (int m = 0; m < 4; ++m) {
        const double scale = std::pow(delta, -m);
        auto& row = out.w[static_cast<std::size_t>(m)];
        row.fill(0.0);
        for (int j = 0; j < 4; ++j) {
            const double h0 = poly_deriv(B.c[j], m, t);
            const double h1 = poly_deriv(B.c[4 + j], m, t);
            for (int i = 0; i < 4; ++i) {
                row[i] += h0 * S[j][i];
                row[i + 1] += h1 * S[j][i];
            }
        }
        for (double& v : row) v *= scale;
    }
    return out;
}

std::array<double, 5> value_weights(double t) {
    const auto& B = basis();
    const auto& S = node_stencils();
    std::array<double, 5> row{};
    for (int j = 0; j < 4; ++j) {
        const double h0 = poly_deriv(B.c[j], 0, t);
        const double h1 = poly_deriv(B.c[4 + j], 0, t);
        for (int i = 0; i < 4; ++i) {
            row[i] += h0 * S[j][i];
            row[i + 1] += h1 * S[j][i];
        }
    }
    return row;
}

// cell index and local coordinate, snapping x within rounding of a knot
void locate(double x, double delta, int& k, double& t) {
    const double r = x / delta;
    const double nearest = std::round(r);
    if (std::abs(r - nearest) <= 1e-10 * std::max(1.0, std::abs(r))) {
        k = static_cast<int>(nearest);
        t = 0.0;
    } else {
        k = static_cast<int>(std::floor(r));
        t = r - k;
    }
}

}  // namespace

const std::array<std::array<double, 4>, 4>& node_stencils() {
    // value, (D - D^2/2 + D^3/3), (D^2 - D^3), D^3 as point weights on k..k+3
    static const std::array<std::array<double, 4>, 4> s{{{1.0, 0.0, 0.0, 0.0},
                                                         {-11.0 / 6.0, 3.0, -1.5, 1.0 / 3.0},
                                                         {2.0, -5.0, 4.0, -1.0},
                                                         {-1.0, 3.0, -3.0, 1.0}}};
    return s;
}

SplineWeights weights_1d(double t, double delta) {
    if (!(t >= 0.0 && t < 1.0)) throw std::domain_error("spline weights need t in [0,1)");
    if (!(delta > 0.0)) throw std::domain_error("spline weights need delta > 0");
    return weights_unchecked(t, delta);
}

LatticeData::LatticeData(double delta, std::vector<int> lo, std::vector<int> extent)
    : delta_(delta), lo_(std::move(lo)), extent_(std::move(extent)) {
    if (lo_.size() != extent_.size() || lo_.empty()) throw std::invalid_argument("lattice: dimension mismatch");
    if (!(delta_ > 0.0)) throw std::invalid_argument("lattice: delta must be positive");
    stride_.assign(lo_.size(), 1);
    std::size_t total = 1;
    for (int j = dim() - 1; j >= 0; --j) {
        if (extent_[j] <= 0) throw std::invalid_argument("lattice: empty extent");
        stride_[j] = total;
        total *= static_cast<std::size_t>(extent_[j]);
    }
    v_.assign(total, 0.0);
}

bool LatticeData::contains(const std::vector<int>& k) const {
    if (k.size() != lo_.size()) return false;
    for (std::size_t j = 0; j < k.size(); ++j)
        if (k[j] < lo_[j] || k[j] >= lo_[j] + extent_[j]) return false;
    return true;
}

std::size_t LatticeData::flat(const std::vector<int>& k) const {
    if (!contains(k)) throw StencilError("lattice point outside the stored box");
    std::size_t f = 0;
    for (std::size_t j = 0; j < k.size(); ++j) f += static_cast<std::size_t>(k[j] - lo_[j]) * stride_[j];
    return f;
}

double& LatticeData::at(const std::vector<int>& k) { return v_[flat(k)]; }
double LatticeData::at(const std::vector<int>& k) const { return v_[flat(k)]; }

void Interpolant::cell(int axis, double x, int& k, double& t) const {
    locate(x, data_->delta(), k, t);
    const int lo = data_->lo()[static_cast<std::size_t>(axis)];
    if (extrapolate_below_ && k < lo) {
        t += k - lo;
        k = lo;
    }
    if (k < lo || k + 4 >= lo + data_->extent()[static_cast<std::size_t>(axis)])
        throw StencilError("interpolant stencil leaves the lattice on axis " + std::to_string(axis));
}

double Interpolant::value(const std::vector<double>& x) const {
    return derivative(x, std::vector<int>(x.size(), 0));
}

double Interpolant::derivative(const std::vector<double>& x, const std::vector<int>& a, bool from_left) const {
    const auto& D = *data_;
    const int d = D.dim();
    if (static_cast<int>(x.size()) != d || static_cast<int>(a.size()) != d)
        throw std::invalid_argument("interpolant: dimension mismatch");
    if (std::accumulate(a.begin(), a.end(), 0) > 3) throw std::invalid_argument("interpolant: order above 3");
    std::vector<int> k(d);
    std::vector<SplineWeights> w;
    w.reserve(d);
    for (int j = 0; j < d; ++j) {
        if (a[j] < 0) throw std::invalid_argument("interpolant: negative order");
        double t;
        if (from_left) {
            locate(x[j], D.delta(), k[j], t);
            if (t == 0.0) {
                --k[j];
                t = 1.0;
            }
            if (k[j] < D.lo()[j] || k[j] + 4 >= D.lo()[j] + D.extent()[j])
                throw StencilError("interpolant stencil leaves the lattice on axis " + std::to_string(j));
        } else {
            cell(j, x[j], k[j], t);
        }
        w.push_back(weights_unchecked(t, D.delta()));
    }
    // walk the 5^d stencil
    std::vector<int> off(d, 0), pt(d);
    double s = 0.0;
    while (true) {
        double wt = 1.0;
        for (int j = 0; j < d; ++j) {
            wt *= w[j][a[j]][off[j]];
            pt[j] = k[j] + off[j];
        }
        if (wt != 0.0) s += wt * D.at(pt);
        int j = d - 1;
        while (j >= 0 && ++off[j] == 5) off[j--] = 0;
        if (j < 0) break;
    }
    return s;
}

Jet2 Interpolant::jet(double x1, double x2) const {
    const auto& D = *data_;
    if (D.dim() != 2) throw std::invalid_argument("jet needs a two-dimensional lattice");
    int k1, k2;
    double t1, t2;
    cell(0, x1, k1, t1);
    cell(1, x2, k2, t2);
    const auto& lo = D.lo();
    const auto& ex = D.extent();
    const auto w1 = weights_unchecked(t1, D.delta());
    const auto w2 = weights_unchecked(t2, D.delta());
    // contract axis 2 first: r[m][i] = sum_j w2[m][j] f(k1+i, k2+j)
    double r[4][5] = {};
    const auto& v = D.values();
    const std::size_t stride = static_cast<std::size_t>(ex[1]);
    for (int i = 0; i < 5; ++i) {
        const std::size_t base = static_cast<std::size_t>(k1 + i - lo[0]) * stride + static_cast<std::size_t>(k2 - lo[1]);
        for (int m = 0; m < 4; ++m) {
            double s = 0.0;
            for (int j = 0; j < 5; ++j) s += w2[m][j] * v[base + j];
            r[m][i] = s;
        }
    }
    auto c = [&](int m1, int m2) {
        double s = 0.0;
        for (int i = 0; i < 5; ++i) s += w1[m1][i] * r[m2][i];
        return s;
    };
    Jet2 J;
    J.v = c(0, 0);
    J.d1 = c(1, 0);
    J.d2 = c(0, 1);
    J.d11 = c(2, 0);
    J.d12 = c(1, 1);
    J.d22 = c(0, 2);
    J.d111 = c(3, 0);
    J.d112 = c(2, 1);
    J.d122 = c(1, 2);
    J.d222 = c(0, 3);
    return J;
}

double Interpolant::value2(double x1, double x2) const {
    const auto& D = *data_;
    if (D.dim() != 2) throw std::invalid_argument("value2 needs a two-dimensional lattice");
    int k1, k2;
    double t1, t2;
    cell(0, x1, k1, t1);
    cell(1, x2, k2, t2);
    const auto w1 = value_weights(t1), w2 = value_weights(t2);
    const auto& v = D.values();
    const std::size_t stride = static_cast<std::size_t>(D.extent()[1]);
    double s = 0.0;
    for (int i = 0; i < 5; ++i) {
        const std::size_t base =
            static_cast<std::size_t>(k1 + i - D.lo()[0]) * stride + static_cast<std::size_t>(k2 - D.lo()[1]);
        double r = 0.0;
        for (int j = 0; j < 5; ++j) r += w2[j] * v[base + j];
        s += w1[i] * r;
    }
    return s;
}

}  // namespace jsq
