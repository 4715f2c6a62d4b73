#pragma once

#include "jsqlab/model.hpp"

#include <Eigen/Dense>

#include <functional>
#include <string>
#include <vector>

namespace jsq {

/// A real value per enumerated state.
struct GridFunction {
    std::shared_ptr<const StateSpace> space;
    Eigen::VectorXd values;

    double operator[](std::size_t i) const { return values[static_cast<Eigen::Index>(i)]; }
    double at(const JsqState& q) const { return values[static_cast<Eigen::Index>(space->index(q))]; }
};

/// A named test function h on the scaled orthant with h(0) = 0.
struct TestFunction {
    std::string name;
    std::function<double(const ScaledState&)> eval;
    /// Claimed constant c with |Delta^a h| <= c delta^|a| for |a| <= 2.
    double class_constant = 1.0;

    double operator()(const ScaledState& x) const { return eval(x); }
};

/// Names of the shipped family, in reporting order.
const std::vector<std::string>& shipped_family_names();
/// Builds a shipped test function; beta enters |sum x - beta| - beta.
TestFunction make_test_function(const std::string& name, const ModelParams& p);
std::vector<TestFunction> shipped_family(const ModelParams& p);

GridFunction grid_values(const Chain& c, const TestFunction& h);

class ConvergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct StationaryResult {
    GridFunction pi;
    double residual = 0.0;  // sup norm of pi * G
    int iterations = 0;
    std::string method;     // "gauss-seidel" or "direct"
};

struct StationaryOptions {
    double tol = 1e-12;
    int max_sweeps = 4000;
};

/// Gauss-Seidel on the balance equations, falling back to a sparse direct
/// solve with one equation replaced by the normalization.
StationaryResult stationary_distribution(const Chain& c, const StationaryOptions& opt = {});

double expect(const GridFunction& pi, const TestFunction& h);
double expect(const GridFunction& pi, const GridFunction& h);

struct PoissonResult {
    GridFunction f;
    double eh = 0.0;        // E h(X)
    double residual = 0.0;  // sup |G f - (Eh - h)|
    std::string method;
};

/// Solves G f = Eh - h with f = 0 at the anchor state x = 0.
PoissonResult solve_poisson(const Chain& c, const GridFunction& h, const GridFunction& pi);
PoissonResult solve_poisson(const Chain& c, const TestFunction& h, const GridFunction& pi);

/// sup_q |G f(q) - (eh - h(q))|
double poisson_residual(const Chain& c, const GridFunction& f, const GridFunction& h, double eh);

enum class ExtensionPolicy { Zero, Strict };

class DomainError : public std::out_of_range {
public:
    using std::out_of_range::out_of_range;
};

/// f at the scaled point x^q + delta*shift, expressed in q coordinates.
/// Outside the state space the zero policy returns 0, strict throws.
double shifted_value(const GridFunction& f, const JsqState& q, const std::vector<int>& shift,
                     ExtensionPolicy policy = ExtensionPolicy::Zero);

/// Iterated forward difference Delta^a f(x^q); a[i] is the order in coordinate i.
double finite_difference(const GridFunction& f, const std::vector<int>& a, const JsqState& q,
                         ExtensionPolicy policy = ExtensionPolicy::Zero);

/// True when every stencil point of Delta^a at q lies in the state space.
bool stencil_inside(const StateSpace& s, const std::vector<int>& a, const JsqState& q);

enum class FactorKind { Value, D1, D2, D11, D12, D22, D111, D1plusD2, D11minusD1plusD2 };

const char* factor_kind_name(FactorKind k);

struct FactorRow {
    JsqState q;
    FactorKind kind;
    int order_a1;
    int order_a2;
    double value;
    double envelope;
    double normalized;
};

struct FactorReport {
    std::vector<FactorRow> rows;
    /// max |normalized| per kind, indexed by FactorKind.
    std::vector<double> max_normalized;
    double max_of(FactorKind k) const { return max_normalized[static_cast<int>(k)]; }
};

/// Stein factors on every state with x_3 = 0 and a stencil inside the space,
/// each divided by its envelope delta^k (1+x_2)^k; f itself uses
/// (x_1+x_2)(1+x_2)/delta.
FactorReport stein_factor_report(const Chain& c, const GridFunction& f);

/// E_{q0} h(X(t)) by uniformization with truncation error below tol.
double transient_expectation(const Chain& c, const GridFunction& h, const JsqState& q0, double t,
                             double tol = 1e-10);

struct IntegralCheck {
    double value = 0.0;
    double tail_estimate = 0.0;  // |integrand| at T divided by the observed decay rate
    bool horizon_ok = true;
};

/// int_0^T (E_{q0} h(X(t)) - E_0 h(X(t))) dt by integrated uniformization.
IntegralCheck integral_poisson_check(const Chain& c, const GridFunction& h, const JsqState& q0, double T);

/// Expected time for q_1 to climb from q1 to q1+1 with an empty buffer,
/// S_{q1} / (n lambda) with S_0 = 1, S_k = 1 + (k / (n lambda)) S_{k-1}.
double hitting_time_formula(const ModelParams& p, int q1);

struct MomentIdentity {
    double sum_ex = 0.0;       // sum_i E X_i from pi
    double rhs = 0.0;          // generator identity at x(inf)
    double gap = 0.0;          // |sum_ex - rhs|
    double literal_rhs = 0.0;  // the sign pattern n lam D11 f + fr D1 f - beta - delta fr
    double literal_gap = 0.0;
    JsqState x_inf;            // q = (floor(n lambda), 0, ..., 0)
};

/// Checks sum_i E X_i = n lam D11 f(x(inf) - delta e1) - fr D1 f(x(inf)) + beta + delta fr
/// with fr = n lam - floor(n lam); f must solve the Poisson equation for h = sum x_i.
MomentIdentity moment_identity_check(const Chain& c, const GridFunction& pi, const GridFunction& f);

}  // namespace jsq
