#pragma once

#include "jsqlab/model.hpp"

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace jsq {

/// C^1 piecewise cubic ramp from 0 below l to 1 above u, symmetric about (l + u)/2.
struct SmoothedIndicator {
    double l = 0.0, u = 1.0;

    /// Throws std::invalid_argument unless l < u.
    static SmoothedIndicator make(double l, double u);

    double operator()(double x) const;
    double derivative(double x) const;
    double mid() const { return 0.5 * (l + u); }
};

double phi(double l, double u, double x);

/// A point of Omega = {x1 <= 0, x2 >= 0}: x1 = (q1 - n)/n, x2 = q2/n.
struct FluidPoint {
    double x1 = 0.0, x2 = 0.0;

    /// Throws std::invalid_argument outside Omega.
    static FluidPoint make(double x1, double x2);
};

/// The constants behind f^(2) for one (n, beta):
/// kappa1 = 17/beta + beta, kappa2 = 2 kappa1, indicator on (delta kappa1, delta kappa2).
struct FluidModel {
    double beta = 1.0;
    double delta = 1.0;
    double kappa1 = 18.0, kappa2 = 36.0;

    static FluidModel make(int n, double beta);
    static FluidModel from(const ModelParams& p) { return make(p.n, p.beta); }

    double speed() const { return beta * delta; }  // beta delta: drift offset and speed on the axis
    SmoothedIndicator indicator() const { return SmoothedIndicator::make(delta * kappa1, delta * kappa2); }
};

/// The fluid path from x. Interior: x2 e^{-t}, (x1 + x2 t) e^{-t} - beta delta (1 - e^{-t}).
/// After reaching the x2 axis the path slides down it at speed beta delta and
/// leaves it again at x2 = beta delta, where the interior drift turns inward.
FluidPoint fluid_trajectory(const FluidModel& m, const FluidPoint& x, double t);

class NoHitError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

class ClassificationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// First time the interior path from x reaches {x1 = 0}; 0 on the axis.
/// Bracketed safeguarded Newton on x1(t) = 0. Throws NoHitError if the path never gets there.
double tau_of_x(const FluidModel& m, const FluidPoint& x);
std::optional<double> try_tau(const FluidModel& m, const FluidPoint& x);

/// x >= Gamma^(kappa): the path hits the axis at height at least delta kappa.
bool above_gamma(const FluidModel& m, const FluidPoint& x, double kappa);

enum class FluidRegion { S0, S1, S2, S3 };

const char* region_name(FluidRegion r);

/// S0: x2 <= delta kappa1. S1: below Gamma^(kappa1). S2: between Gamma^(kappa1) and Gamma^(kappa2). S3: above Gamma^(kappa2).
FluidRegion classify(const FluidModel& m, const FluidPoint& x);

/// int_0^infty phi(v^x(t)_2) dt by the closed form of its region. Throws
/// ClassificationError when x sits on a region boundary and the two branches disagree.
double f2_value(const FluidModel& m, const FluidPoint& x);

/// d f^(2) / d x2 from the closed form of its region.
double f2_d2(const FluidModel& m, const FluidPoint& x);

/// V(x) = f^(2)(-delta x1, delta x2) for a diffusion-scaled point.
double lyapunov_value(const FluidModel& m, double x1, double x2);
double lyapunov_value(const ModelParams& p, const JsqState& q);

/// G_X V(x^q) from the exact transition rates.
double generator_on_lyapunov(const ModelParams& p, const JsqState& q);

/// -3/17 + (delta/beta)(q3 1(b > 1) - n lambda 1(q1 = q2 = n)).
double drift_bound(const ModelParams& p, const JsqState& q);

/// Smallest x2 the drift inequality covers: kappa2 + delta.
double drift_threshold(const ModelParams& p);

struct DriftRow {
    JsqState q;
    double x2 = 0.0;
    double gxv = 0.0;
    double bound_rhs = 0.0;  // drift bound plus cushion
    double margin = 0.0;     // bound_rhs - gxv, nonnegative when the state passes
    bool pass = false;
};

struct DriftReport {
    double cushion = 0.02;
    double threshold = 0.0;
    std::vector<DriftRow> rows;
    std::vector<JsqState> excluded;  // below the x2 threshold
    double min_margin = 0.0;
    bool all_pass = false;
};

/// Throws RegimeError when sqrt(n) < kappa2 (no state reaches the threshold),
/// std::invalid_argument for an invalid state.
DriftReport lyapunov_drift_check(const ModelParams& p, const std::vector<JsqState>& sample, double cushion = 0.02);

/// States with q2 at or above the threshold on a grid of at most about `per_axis`^2 points;
/// q1 = n and q1 = q2 are always included, q3 in {0, q2/2, q2} when b > 1.
std::vector<JsqState> drift_sample(const ModelParams& p, int per_axis = 25);

struct PdeResidual {
    double d1 = 0.0, d2 = 0.0;  // central differences of V
    double residual = 0.0;      // (beta - x1 - x2) d1 - x2 d2 + 1
};

/// Transport equation of V at a diffusion-scaled point, finite-difference step h.
PdeResidual transport_residual(const FluidModel& m, double x1, double x2, double h = 1e-5);

}  // namespace jsq
