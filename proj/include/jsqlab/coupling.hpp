#pragma once

#include "jsqlab/exact.hpp"

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace jsq {

/// One event of a coupled pair, recorded after the transition.
struct PairEvent {
    double t = 0.0;
    JsqState q;     // system 1
    int theta = 0;  // 0 once coupled
};

struct PairOptions {
    /// Record both systems at this time (they are the same after coupling).
    std::optional<double> observe_time;
    /// Stop when system 1 first has every server busy (q1 = n).
    bool stop_at_full = false;
    bool record_trace = false;
    /// Re-check the pair after every event; throws std::logic_error on a violation.
    bool check_invariants = false;
    long max_events = 1'000'000'000;
};

struct PairResult {
    double tau_C = INFINITY;  // coupling time, infinite if the run stopped first
    bool coupled = false;
    bool by_blocking = false;  // arrival blocked in system 2 from Theta_{b+1}
    bool stopped_full = false;
    double stop_time = 0.0;
    long events = 0;
    int max_theta = 0;
    long theta_up = 0, theta_down = 0;
    JsqState final_q;
    JsqState observed_1, observed_2;
    std::vector<PairEvent> trace;
};

/// System 2 is system 1 plus one customer at a server holding theta - 1
/// customers in system 1, i.e. q~ = q + e^(theta). The joint chain:
/// that server completes at rate 1 and moves theta down (coupling from 1);
/// an arrival finding it the only shortest queue of system 1 moves theta up
/// (coupling by blocking from b+1); every other transition is common.
/// Throws std::invalid_argument for an invalid initial pair.
PairResult simulate_coupled_pair(const ModelParams& p, const JsqState& q0, int theta0, std::uint64_t seed,
                                 std::uint64_t replication = 0, const PairOptions& options = {});

/// E tau_C from every joint state by a sparse absorbing solve; returns the value at (q0, theta0).
double coupling_time_exact(const Chain& chain, const JsqState& q0, int theta0);

struct CoordinateComparison {
    double mean = 0.0, se = 0.0, exact = 0.0, gap_in_se = 0.0;
};

struct MarginalCheck {
    double t = 0.0;
    int replications = 0;
    std::vector<CoordinateComparison> coordinates;  // Q~_1 .. Q~_{b+1}
    std::optional<CoordinateComparison> h_moment;
};

/// Empirical law of system 2 at time t against the plain chain started at q0 + e^(theta0).
MarginalCheck marginal_law_check(const Chain& chain, const JsqState& q0, int theta0, double t, int replications,
                                 std::uint64_t seed, const TestFunction* h = nullptr);

struct CouplingCell {
    JsqState q;
    int theta = 0;
    int replications = 0;
    double mean = 0.0, variance = 0.0, se = 0.0;
    double envelope_ratio = 0.0;  // mean / (1 + delta q2)
};

struct CouplingStats {
    std::vector<CouplingCell> cells;
    double max_ratio = 0.0;
    std::uint64_t seed = 0;
};

CouplingStats estimate_coupling_time(const ModelParams& p, const std::vector<std::pair<JsqState, int>>& grid,
                                     int replications, std::uint64_t seed);

/// q1 in {n - floor(beta sqrt n), n}, q2 in {0, floor(sqrt n), 2 floor(sqrt n)}, theta in {1, b+1},
/// upper coordinates 0; invalid pairs dropped.
std::vector<std::pair<JsqState, int>> default_coupling_grid(const ModelParams& p);

struct PhaseRow {
    std::string quantity;  // "p1", "min_time" or "p2"
    JsqState q;
    int theta = 0;  // only for p2
    double value = 0.0, se = 0.0;
};

struct CyclePhaseResult {
    bool applicable = false;
    std::string reason;
    double gamma = 0.0;
    int theta1 = 0, theta2 = 0;
    double p1 = NAN, p1_se = NAN;              // min over starting states
    double p1_bound = NAN;                     // random-walk lower bound
    double min_time = NAN, min_time_se = NAN;  // max over starting states
    double p2 = NAN, p2_se = NAN;
    std::vector<PhaseRow> rows;
};

/// theta1 = n - floor(sqrt(n) beta / 2), theta2 = floor(gamma sqrt n) with
/// gamma = 2 (17/beta + beta + 1) unless overridden. Not applicable unless
/// theta1 - 3 theta2 > 0.
CyclePhaseResult cycle_phase_estimates(const ModelParams& p, int replications, std::uint64_t seed,
                                       std::optional<double> gamma_override = std::nullopt);

/// The closed-form lower bound on p1: ruin of the walk with up rate n lam and
/// down rate theta1 - 3 theta2, started floor(sqrt(n) beta / 2) above 0 with
/// floor(gamma sqrt n) more to the upper barrier.
double cycle_p1_bound(const ModelParams& p, double gamma);

enum class SecondDifference { D11, D21, D22, Diagonal };

const char* second_difference_name(SecondDifference v);
SecondDifference parse_second_difference(const std::string& name);

struct FourSystemEstimate {
    double estimate = 0.0, se = 0.0;
    double exact = 0.0;  // the same combination of f_h at the initial states
    double gap_in_se = 0.0;
    int replications = 0;
    double mean_stop_time = 0.0;
    long stopped_by_servers = 0, stopped_by_level = 0;
};

/// The four initial systems of the variant at q with signs c_j, coupled through
/// shared arrivals and shared per-server clocks. Arrivals join the shortest
/// queue, ties broken by the occupancy of the same server in the richest system
/// and then by index. Stops at the first clock ring of either extra customer's
/// server or when the variant's level event fires, and returns
/// int_0^tau sum_j c_j h(Q_j) dt + sum_j c_j f(Q_j(tau)) averaged over replications.
/// The diagonal variant uses two systems, f(0, x2) - f(delta, x2 + delta).
/// Throws DomainError when the stencil leaves the state space.
FourSystemEstimate four_system_second_difference(const Chain& chain, const GridFunction& f, const TestFunction& h,
                                                 SecondDifference variant, const JsqState& q, int replications,
                                                 std::uint64_t seed);

}  // namespace jsq
