#pragma once

#include "jsqlab/diffusion.hpp"
#include "jsqlab/exact.hpp"
#include "jsqlab/spline.hpp"

#include <array>
#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace jsq {

/// Componentwise floor(x_j / delta), snapping to a knot within rounding.
std::vector<int> floor_index(const std::vector<double>& x, double delta);

/// {x3 = ... = 0, x1 + x2 <= delta (n/2 - 8)}; defined for n > 16.
struct RegionB {
    double threshold = 0.0;

    static RegionB make(const ModelParams& p);
    bool contains(double x1, double x2) const { return x1 + x2 <= threshold; }
};

bool in_region_B(const ModelParams& p, const ScaledState& x);

/// f on the plane x3 = ... = 0 in lattice coordinates k = (n - q1, q2), with
/// f = 0 off the state space and one coordinate allowed to be -1:
/// f(-1, k2) = f(0, k2 + 1) and f(k1, -1) = 2 f(k1, 0) - f(k1, 1).
class HatExtension {
public:
    HatExtension(const ModelParams& p, std::function<double(const JsqState&)> f);
    explicit HatExtension(const GridFunction& f);

    /// Value at lattice point (k1, k2); at most one of them may be -1.
    double operator()(int k1, int k2) const;
    /// Plain lattice value: f on S, 0 elsewhere, no -1 allowed.
    double base(int k1, int k2) const;

    /// Lattice on {-1..K+4}^2 with K = max(n + 1, ceil(16 / delta)), the (-1,-1) corner filled by applying the x2 rule
    /// to the x1-extended row (never used by the pipeline).
    LatticeData lattice() const;

    const ModelParams& params() const { return p_; }

private:
    ModelParams p_;
    std::function<double(const JsqState&)> f_;
};

/// Values of the hat extension at scaled probes with exactly one coordinate -delta.
std::vector<double> hat_extension_values(const GridFunction& f, const std::vector<ScaledState>& probes);

/// Everything evaluated along diffusion paths for one (n, h).
struct SteinContext {
    Chain chain;
    TestFunction h;
    double eh = 0.0;
    GridFunction pi;
    GridFunction fh;
    RegionB region;
    LatticeData f_lattice;
    LatticeData h_lattice;
    Interpolant Af;  // extrapolates below x1 = -delta for scheme nodes
    Interpolant Ah;

    SteinContext(Chain c, TestFunction h, double eh, GridFunction pi, GridFunction fh, LatticeData f_lattice,
                 LatticeData h_lattice);
    SteinContext(const SteinContext&) = delete;
    SteinContext& operator=(const SteinContext&) = delete;
};

/// Solves for pi and f_h and builds both interpolants. Needs n > 16 for B.
std::unique_ptr<SteinContext> make_stein_context(const ModelParams& p, const TestFunction& h);
/// Same with a stationary law already at hand.
std::unique_ptr<SteinContext> make_stein_context(Chain chain, const GridFunction& pi, const TestFunction& h);

/// Ah on the same box as the f lattice: h evaluated at delta k, with the hat rule at index -1.
LatticeData test_function_lattice(const ModelParams& p, const TestFunction& h);

struct EpsilonTerms {
    double e1 = 0, e2 = 0, e3 = 0, e4 = 0;
    bool in_B = false;
    double generator = 0.0;  // G_Y Af_h(x)
    double Ah = 0.0;
};

EpsilonTerms epsilon_terms(const SteinContext& ctx, double x1, double x2);

/// The bound on |eps_1| at x in B with unit constant, assembled from the
/// differences of f_h on the stencil of x:
/// delta^-2 max|D1^3 f| + delta^-2 1(x1 <= delta) max_{i1 = 0}|(D1^2 - (D1 + D2)) f|
/// + delta^-1 x2 max|D2^2 f| + max_{a1+a2=2} |D1^a1 D2^a2 f|.
double epsilon1_bound(const SteinContext& ctx, double x1, double x2);

struct SteinIdentity {
    Estimate lhs;       // E h(X) - E Ah(Y)
    Estimate rhs;       // E eps1 + E eps2 - boundary, with G_Y applied by the scheme generator
    Estimate gap;       // lhs - rhs (joint batch means)
    double gap_in_se = 0.0;
    Estimate raw_rhs;   // same with G_Y at the left endpoint of each step
    Estimate raw_gap;
    double raw_gap_in_se = 0.0;
    Estimate eps1, eps2;
    Estimate boundary;  // E of (eps3 + eps4) dU per unit time, i.e. the mean over unit windows
};

SteinIdentity stein_identity_check(const SteinContext& ctx, const DiffusionConfig& config, int replications = 1,
                                   long integrand_every = 1);

struct RateCell {
    int n = 0;
    std::string h_name;
    double exact = 0.0;       // E h(X)
    Estimate diffusion;       // E Ah(Y)
    double gap = 0.0;         // |exact - diffusion|
    double se = 0.0;
    bool se_ok = false;       // se < gap / 3
    bool in_pool = false;
    double eps1_mean = NAN, eps2_mean = NAN, boundary_term = NAN;
    double slope_contribution = NAN;
};

struct RateSlope {
    std::string h_name;
    double slope = NAN, intercept = NAN;
    bool resolved = false;  // some n has se < gap / 3
};

struct RateFitResult {
    std::vector<RateCell> cells;
    std::vector<RateSlope> per_h;
    double pooled_slope = NAN;              // common slope, separate intercepts
    double pooled_slope_without_smallest = NAN;
    bool slope_defined = false;
    std::vector<std::string> excluded;      // functions unresolved at every n
};

struct RateOptions {
    long every = 20;        // subsampling stride for Ah along the path
    bool epsilon = true;    // also average eps terms (needs Poisson solves)
    int replications = 1;
};

/// Exact E h(X) per n against E Ah(Y) from one common diffusion path; the
/// slope of log gap on log n per h and pooled over the resolved functions.
RateFitResult convergence_rate_experiment(const std::vector<int>& n_ladder, int b, double beta,
                                          const std::vector<std::string>& family, const DiffusionConfig& config,
                                          const RateOptions& options = {});

/// R2 low-discrepancy points in [0,1)^2.
std::vector<std::array<double, 2>> quasi_random_points(std::size_t count, std::size_t skip = 0);

}  // namespace jsq
