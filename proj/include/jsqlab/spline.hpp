#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace jsq {

/// Raised when an evaluation needs a grid value that is not stored.
class StencilError : public std::out_of_range {
public:
    using std::out_of_range::out_of_range;
};

/// Five point weights on one cell and their derivatives, order 0..3.
/// w[m][i] is the m-th derivative of alpha_i, in x when a delta was given.
struct SplineWeights {
    std::array<std::array<double, 5>, 4> w{};
    const std::array<double, 5>& operator[](int order) const { return w[static_cast<std::size_t>(order)]; }
};

/// Weights at local coordinate t in [0,1). With delta > 0 the derivatives are
/// taken in x = delta (k + t); with the default they are t-derivatives.
SplineWeights weights_1d(double t, double delta = 1.0);

/// Point weights of the node data (value, d1, d2, d3) in units of delta^-m.
/// Row m, column j is the weight of f(delta (k + j)) in delta^m d_m(k).
const std::array<std::array<double, 4>, 4>& node_stencils();

/// Values on the box lo + {0..extent-1}^d of the lattice delta Z^d, row-major
/// (last coordinate fastest).
class LatticeData {
public:
    LatticeData(double delta, std::vector<int> lo, std::vector<int> extent);

    int dim() const { return static_cast<int>(lo_.size()); }
    double delta() const { return delta_; }
    const std::vector<int>& lo() const { return lo_; }
    const std::vector<int>& extent() const { return extent_; }

    bool contains(const std::vector<int>& k) const;
    double& at(const std::vector<int>& k);
    double at(const std::vector<int>& k) const;
    std::size_t flat(const std::vector<int>& k) const;
    std::vector<double>& values() { return v_; }
    const std::vector<double>& values() const { return v_; }

private:
    double delta_;
    std::vector<int> lo_, extent_;
    std::vector<std::size_t> stride_;
    std::vector<double> v_;
};

/// Value and all partial derivatives of total order <= 3 at one point, d = 2.
struct Jet2 {
    double v = 0, d1 = 0, d2 = 0, d11 = 0, d12 = 0, d22 = 0, d111 = 0, d112 = 0, d122 = 0, d222 = 0;
};

/// Tensor-product interpolant on the lattice. The cell of x is k = floor(x / delta)
/// per axis and the stencil is k .. k+4. With extrapolate_below, points left of
/// the first cell use that cell's polynomial at t < 0.
class Interpolant {
public:
    explicit Interpolant(const LatticeData& data, bool extrapolate_below = false)
        : data_(&data), extrapolate_below_(extrapolate_below) {}

    double value(const std::vector<double>& x) const;
    /// Partial derivative with multi-index a, |a| <= 3. With from_left, coordinates
    /// on a knot use the polynomial of the cell to their left (one-sided limit).
    double derivative(const std::vector<double>& x, const std::vector<int>& a, bool from_left = false) const;
    /// Two-dimensional fast paths.
    Jet2 jet(double x1, double x2) const;
    double value2(double x1, double x2) const;

    const LatticeData& data() const { return *data_; }

private:
    void cell(int axis, double x, int& k, double& t) const;

    const LatticeData* data_;
    // below the lowest cell, continue that cell's polynomial instead of throwing
    bool extrapolate_below_;
};

/// One line of a property suite: the worst measured defect against its tolerance.
struct PropertyCheck {
    std::string name;
    double measured = 0.0;
    double tolerance = 0.0;
    bool pass = false;
};

/// Interface properties of the interpolant on random and polynomial grid data:
/// interpolation, partition of unity, collocation, translational invariance,
/// C3 continuity at knots, the grid derivative identity, cubic reproduction,
/// linearity and a derivative envelope stable in delta.
std::vector<PropertyCheck> spline_property_suite(std::uint64_t seed = 7);

}  // namespace jsq
