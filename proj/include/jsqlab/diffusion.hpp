#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace jsq {

/// How the reflection at {y1 = 0} is discretized.
enum class ReflectionScheme {
    /// Push the Euler proposal back to 0 and credit the push to y2 as well.
    Projection,
    /// Sample the minimum of the Brownian bridge over the step and push by its
    /// negative part. Removes the O(sqrt(dt)) boundary bias of projection.
    Bridge,
};

struct DiffusionConfig {
    double beta = 1.0;
    double dt = 1e-3;
    double horizon = 1e4;  // simulated time per replication, burn-in included
    double burn_in = 10.0;
    std::uint64_t seed = 1;
    bool noise = true;
    ReflectionScheme scheme = ReflectionScheme::Projection;
    int dim = 2;                    // b + 1; coordinates past the second stay 0
    double y1_start = -1.0;         // negative means beta
    double y2_start = 0.0;
    int batches = 20;               // per replication, for batch-means errors
    std::string dump_path;          // CSV of (t, Y1, Y2, dU) when non-empty
    long dump_every = 1000;

    /// Throws std::invalid_argument unless dt > 0, burn-in < horizon and the rest is sane.
    void validate() const;
    long total_steps() const;
    long burn_steps() const;
};

/// Time-average integrand plus an integral against the reflection dU.
/// `integrand` is evaluated at the start of each step (every `every` steps,
/// weighted accordingly); `boundary` is evaluated on steps with dU > 0 at the
/// midpoint of the push segment and multiplied by dU.
/// When `scheme_generator` is set it replaces the integrand by the one-step
/// generator of the scheme applied to that function: (E[g(Y') | Y] - g(Y)) / dt,
/// Y' the unreflected proposal, the Gaussian part by 5-point Gauss-Hermite.
struct Functional {
    std::string name;
    std::function<double(std::span<const double>)> integrand;
    std::function<double(std::span<const double>)> boundary;
    long every = 1;
    std::function<double(std::span<const double>)> scheme_generator;
};

/// Per-functional batch sums.
struct FunctionalStats {
    std::vector<double> integrand_mean;  // per batch, time average of the integrand
    std::vector<double> boundary_rate;   // per batch, (boundary integral) / (batch time)
};

struct PathAccumulator {
    long steps = 0;          // after burn-in
    double time = 0.0;       // after burn-in
    double total_dU = 0.0;   // after burn-in
    long reflection_steps = 0;
    long negative_states = 0;                 // recorded states with Y1 < 0 or Y2 < 0
    long pushes_with_nonnegative_proposal = 0;  // only possible under the bridge scheme
    int replications = 0;
    std::vector<double> final_state;
    std::vector<FunctionalStats> stats;  // one per functional

    /// Adds the batches of another accumulator (same functionals).
    void merge(const PathAccumulator& other);
};

PathAccumulator simulate_reflected(const DiffusionConfig& config, const std::vector<Functional>& functionals = {},
                                   int replication = 0);

/// Runs replications 0..reps-1 (threads where available) and merges them.
PathAccumulator simulate_replications(const DiffusionConfig& config, const std::vector<Functional>& functionals,
                                      int replications);

struct Estimate {
    double value = 0.0;
    double se = 0.0;
};

/// Mean and batch-means standard error of  integrand_weight * integrand + boundary_weight * boundary.
Estimate batch_estimate(const PathAccumulator& acc, std::size_t functional, double integrand_weight = 1.0,
                        double boundary_weight = 0.0);

Estimate stationary_expect(const std::function<double(std::span<const double>)>& h, const DiffusionConfig& config,
                           int replications = 1);

/// The local data G_Y needs, plus the boundary direction d1 + d2.
struct Local2 {
    double v = 0, d1 = 0, d2 = 0, d11 = 0;
};

using SmoothFunction = std::function<Local2(double, double)>;

/// (beta - x1 - x2) d1 - x2 d2 + d11.
double apply_gy(const Local2& f, double x1, double x2, double beta);
double apply_gy(const SmoothFunction& f, double x1, double x2, double beta);

struct RateConservation {
    Estimate generator_term;         // E G_Y f(Y), left endpoint of each step
    Estimate scheme_generator_term;  // E of the scheme's one-step generator of f
    Estimate boundary_term;          // E of the reflection integral per unit time
    Estimate gap;                    // scheme generator + boundary, zero in stationarity
    double gap_in_se = 0.0;
    Estimate raw_gap;                // G_Y f + boundary; carries the O(dt) bias of the scheme
    double raw_gap_in_se = 0.0;
};

/// Both terms from the same paths. `boundary_grad` is d1 f + d2 f; when empty
/// it is taken from f. The gap uses the scheme generator, which integrates
/// G_Y f over each step by its conditional expectation; the left-endpoint
/// version is reported as raw_gap.
RateConservation rate_conservation_check(const SmoothFunction& f, const DiffusionConfig& config, int replications = 1,
                                         std::function<double(double, double)> boundary_grad = {});

/// Functionals Y1^j and Y2^j, j = 1..max_order, in that order.
std::vector<Functional> moment_functionals(int max_order);

}  // namespace jsq
