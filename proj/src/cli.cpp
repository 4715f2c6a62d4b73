#include "jsqlab/cli.hpp"

#include "jsqlab/coupling.hpp"
#include "jsqlab/diffusion.hpp"
#include "jsqlab/exact.hpp"
#include "jsqlab/fluid.hpp"
#include "jsqlab/ruin.hpp"
#include "jsqlab/spline.hpp"
#include "jsqlab/stein.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <openssl/evp.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#ifndef JSQLAB_VERSION
#define JSQLAB_VERSION "0.0.0"
#endif

namespace jsq::cli {

namespace {

namespace fs = std::filesystem;

enum Exit { kOk = 0, kRuntime = 1, kUsage = 2, kCheckFailed = 3, kRegime = 4 };

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    return s.substr(a, s.find_last_not_of(" \t\r\n") - a + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

template <class T>
T parse_number(const std::string& text, const std::string& key, const std::string& where) {
    const std::string s = trim(text);
    T v{};
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc() || ptr != s.data() + s.size())
        throw ConfigError(where + "invalid value '" + text + "' for " + key);
    return v;
}

bool parse_bool(const std::string& text, const std::string& key, const std::string& where) {
    std::string s = trim(text);
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    if (s == "1" || s == "true" || s == "yes" || s == "on") return true;
    if (s == "0" || s == "false" || s == "no" || s == "off") return false;
    throw ConfigError(where + "invalid boolean '" + text + "' for " + key);
}

std::vector<int> parse_int_list(const std::string& text, const std::string& key, const std::string& where) {
    std::vector<int> out;
    for (const auto& item : split_list(text)) out.push_back(parse_number<int>(item, key, where));
    if (out.empty()) throw ConfigError(where + "empty list for " + key);
    return out;
}

/// canonical key -> bare alias
const std::vector<std::pair<std::string, std::string>>& key_table() {
    static const std::vector<std::pair<std::string, std::string>> t = {
        {"model.n", "n"},
        {"model.b", "b"},
        {"model.beta", "beta"},
        {"model.h", "h"},
        {"simulation.reps", "reps"},
        {"simulation.dt", "dt"},
        {"simulation.T", "T"},
        {"simulation.burn_in", "burn_in"},
        {"simulation.seed", "seed"},
        {"simulation.scheme", "scheme"},
        {"simulation.every", "every"},
        {"simulation.epsilon", "epsilon"},
        {"ruin.p", "p"},
        {"ruin.q", "q"},
        {"ruin.z", "z"},
        {"ruin.a", "a"},
        {"ruin.s", "s"},
        {"coupling.state", "state"},
        {"coupling.theta", "theta"},
        {"coupling.gamma", "gamma"},
        {"lyapunov.per_axis", "per_axis"},
        {"lyapunov.cushion", "cushion"},
        {"output.dir", "dir"},
    };
    return t;
}

std::string canonical_key(const std::string& key, const std::string& where) {
    for (const auto& [full, bare] : key_table())
        if (key == full || key == bare) return full;
    throw ConfigError(where + "unknown key '" + key + "'");
}

std::string fmt(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}
std::string fmt(int v) { return std::to_string(v); }
std::string fmt(long v) { return std::to_string(v); }
std::string fmt(std::size_t v) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "1" : "0"; }
std::string fmt(const std::string& v) {
    if (v.find_first_of(",\"\n") == std::string::npos) return v;
    std::string q = "\"";
    for (char c : v) q += (c == '"') ? std::string("\"\"") : std::string(1, c);
    return q + "\"";
}
std::string fmt(const char* v) { return fmt(std::string(v)); }

/// One CSV table with a header row.
class Csv {
public:
    explicit Csv(std::vector<std::string> header) : width_(header.size()) { add(header); }

    void add(const std::vector<std::string>& cells) {
        if (cells.size() != width_) throw std::logic_error("csv row width differs from header");
        for (std::size_t i = 0; i < cells.size(); ++i) text_ += (i ? "," : "") + cells[i];
        text_ += "\n";
    }
    const std::string& text() const { return text_; }

private:
    std::size_t width_;
    std::string text_;
};

std::vector<std::string> state_header(int dim, const std::string& prefix = "q") {
    std::vector<std::string> h;
    for (int i = 1; i <= dim; ++i) h.push_back(prefix + std::to_string(i));
    return h;
}

std::vector<std::string> cat(std::vector<std::string> a, const std::vector<std::string>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

std::vector<std::string> state_cells(const JsqState& q) {
    std::vector<std::string> c;
    for (int v : q) c.push_back(fmt(v));
    return c;
}

/// Files produced by one command, written together with the manifest.
struct Outputs {
    std::vector<std::pair<std::string, std::string>> files;
    void add(const std::string& name, const Csv& csv) { files.emplace_back(name, csv.text()); }
};

ModelParams model(const ExperimentConfig& c) { return ModelParams::make(c.n, c.b, c.beta); }

DiffusionConfig diffusion(const ExperimentConfig& c) {
    DiffusionConfig d;
    d.beta = c.beta;
    d.dt = c.dt;
    d.horizon = c.horizon;
    d.burn_in = c.burn_in;
    d.seed = c.seed;
    d.scheme = c.scheme == "bridge" ? ReflectionScheme::Bridge : ReflectionScheme::Projection;
    d.validate();
    return d;
}

// ---------------------------------------------------------------- commands

int cmd_solve(const ExperimentConfig& c, Outputs& o, std::ostream& out) {
    const auto chain = Chain::make(model(c));
    const auto st = stationary_distribution(chain);
    const int dim = chain.params.dim();
    Csv pi(cat(cat(state_header(dim), state_header(dim, "x")), {"pi"}));
    for (std::size_t i = 0; i < chain.size(); ++i) {
        const auto q = chain.space->state(i);
        const auto x = scale_state(chain.params, q);
        std::vector<std::string> row = state_cells(q);
        for (double v : x) row.push_back(fmt(v));
        row.push_back(fmt(st.pi[i]));
        pi.add(row);
    }
    Csv sum({"quantity", "value"});
    sum.add({"states", fmt(chain.size())});
    sum.add({"method", fmt(st.method)});
    sum.add({"iterations", fmt(st.iterations)});
    sum.add({"residual", fmt(st.residual)});
    for (const auto& name : c.functions)
        sum.add({"E[" + name + "]", fmt(expect(st.pi, make_test_function(name, chain.params)))});
    o.add("solve_pi.csv", pi);
    o.add("solve_summary.csv", sum);
    out << "states " << chain.size() << ", residual " << st.residual << " (" << st.method << ")\n";
    return kOk;
}

int cmd_poisson(const ExperimentConfig& c, Outputs& o, std::ostream& out) {
    const auto chain = Chain::make(model(c));
    const auto st = stationary_distribution(chain);
    const int dim = chain.params.dim();
    Csv f(cat(cat({"h"}, state_header(dim)), {"f"}));
    Csv sum({"h", "Eh", "residual", "method"});
    for (const auto& name : c.functions) {
        const auto h = make_test_function(name, chain.params);
        const auto r = solve_poisson(chain, h, st.pi);
        for (std::size_t i = 0; i < chain.size(); ++i)
            f.add(cat(cat({fmt(name)}, state_cells(chain.space->state(i))), {fmt(r.f[i])}));
        sum.add({fmt(name), fmt(r.eh), fmt(r.residual), fmt(r.method)});
        out << name << ": E h = " << r.eh << ", residual " << r.residual << "\n";
    }
    o.add("poisson_f.csv", f);
    o.add("poisson_summary.csv", sum);
    return kOk;
}

int cmd_factors(const ExperimentConfig& c, Outputs& o, std::ostream& out) {
    const auto chain = Chain::make(model(c));
    const auto st = stationary_distribution(chain);
    const int dim = chain.params.dim();
    const std::vector<FactorKind> kinds = {FactorKind::Value, FactorKind::D1,   FactorKind::D2,
                                           FactorKind::D11,   FactorKind::D12,  FactorKind::D22,
                                           FactorKind::D111,  FactorKind::D1plusD2, FactorKind::D11minusD1plusD2};
    Csv rows(cat(cat({"h"}, state_header(dim)),
                 {"kind", "order_a1", "order_a2", "value", "envelope", "normalized"}));
    Csv sum({"h", "kind", "max_normalized"});
    for (const auto& name : c.functions) {
        const auto r = solve_poisson(chain, make_test_function(name, chain.params), st.pi);
        const auto rep = stein_factor_report(chain, r.f);
        for (const auto& row : rep.rows)
            rows.add(cat(cat({fmt(name)}, state_cells(row.q)),
                         {fmt(factor_kind_name(row.kind)), fmt(row.order_a1), fmt(row.order_a2), fmt(row.value),
                          fmt(row.envelope), fmt(row.normalized)}));
        for (auto k : kinds) sum.add({fmt(name), fmt(factor_kind_name(k)), fmt(rep.max_of(k))});
        out << name << ": max normalized D11 " << rep.max_of(FactorKind::D11) << "\n";
    }
    o.add("factors.csv", rows);
    o.add("factors_summary.csv", sum);
    return kOk;
}

int cmd_couple(const ExperimentConfig& c, Outputs& o, std::ostream& out) {
    const auto p = model(c);
    std::vector<std::pair<JsqState, int>> grid;
    if (c.state.empty())
        grid = default_coupling_grid(p);
    else
        grid = {{c.state, c.theta}};
    const auto stats = estimate_coupling_time(p, grid, c.reps, c.seed);
    // exact values only where the joint chain is small
    std::optional<Chain> chain;
    if (StateSpace::cardinality(p.n, p.b) <= 20000) chain = Chain::make(p);
    Csv t(cat(state_header(p.dim()), {"theta", "reps", "mean", "variance", "se", "envelope_ratio", "exact"}));
    for (const auto& cell : stats.cells) {
        const double exact = chain ? coupling_time_exact(*chain, cell.q, cell.theta) : NAN;
        t.add(cat(state_cells(cell.q), {fmt(cell.theta), fmt(cell.replications), fmt(cell.mean), fmt(cell.variance),
                                        fmt(cell.se), fmt(cell.envelope_ratio), fmt(exact)}));
    }
    Csv sum({"quantity", "value"});
    sum.add({"cells", fmt(stats.cells.size())});
    sum.add({"max_envelope_ratio", fmt(stats.max_ratio)});
    sum.add({"seed", fmt(static_cast<long>(stats.seed))});
    o.add("couple.csv", t);
    o.add("couple_summary.csv", sum);
    out << stats.cells.size() << " cells, max E tau_C / (1 + delta q2) = " << stats.max_ratio << "\n";
    return kOk;
}

int cmd_cycles(const ExperimentConfig& c, Outputs& o, std::ostream& out) {
    const auto p = model(c);
    const auto r = cycle_phase_estimates(p, c.reps, c.seed, c.gamma);
    Csv rows(cat(cat({"quantity"}, state_header(p.dim())), {"theta", "value", "se"}));
    for (const auto& row : r.rows)
        rows.add(cat(cat({fmt(row.quantity)}, state_cells(row.q)), {fmt(row.theta), fmt(row.value), fmt(row.se)}));
    Csv sum({"quantity", "value"});
    sum.add({"applicable", fmt(r.applicable)});
    sum.add({"reason", fmt(r.reason)});
    sum.add({"gamma", fmt(r.gamma)});
    sum.add({"theta1", fmt(r.theta1)});
    sum.add({"theta2", fmt(r.theta2)});
    sum.add({"p1", fmt(r.p1)});
    sum.add({"p1_se", fmt(r.p1_se)});
    sum.add({"p1_bound", fmt(r.p1_bound)});
    sum.add({"min_time", fmt(r.min_time)});
    sum.add({"min_time_se", fmt(r.min_time_se)});
    sum.add({"p2", fmt(r.p2)});
    sum.add({"p2_se", fmt(r.p2_se)});
    o.add("cycles.csv", rows);
    o.add("cycles_summary.csv", sum);
    if (!r.applicable)
        out << "not applicable: " << r.reason << "\n";
    else
        out << "p1 " << r.p1 << " (bound " << r.p1_bound << "), min_time " << r.min_time << ", p2 " << r.p2 << "\n";
    return kOk;
}

int cmd_ruin(const ExperimentConfig& c, Outputs& o, std::ostream& out) {
    RuinSpec s;
    s.p = c.ruin_p;
    s.q = c.ruin_q;
    s.z = c.ruin_z;
    s.a = c.ruin_a;
    try {
        s.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    const auto oracle = absorbing_oracle(s, c.ruin_s);
    Csv t({"quantity", "closed_form", "oracle"});
    const double pr = ruin_probability(s);
    t.add({"ruin_probability", fmt(pr), fmt(oracle.ruin_probability)});
    t.add({"duration_pgf", fmt(duration_pgf(s, c.ruin_s)), fmt(oracle.pgf)});
    t.add({"expected_duration", "nan", fmt(oracle.expected_duration)});
    t.add({"ct_duration_mgf", fmt(ct_duration_mgf(s)), "nan"});
    o.add("ruin.csv", t);
    out << "ruin probability " << pr << "\n";
    return kOk;
}

struct NamedSmooth {
    std::string name;
    SmoothFunction f;
};

int cmd_diffuse(const ExperimentConfig& c, Outputs& o, std::ostream& out) {
    const auto d = diffusion(c);
    const std::vector<NamedSmooth> fs = {
        {"y1", [](double x, double) { return Local2{x, 1, 0, 0}; }},
        {"y2^2", [](double, double y) { return Local2{y * y, 0, 2 * y, 0}; }},
        {"y1^2", [](double x, double) { return Local2{x * x, 2 * x, 0, 2}; }},
    };
    Csv t({"f", "generator", "generator_se", "scheme_generator", "scheme_generator_se", "boundary", "boundary_se", "gap",
           "gap_se", "gap_in_se", "raw_gap", "raw_gap_in_se"});
    bool ok = true;
    for (const auto& f : fs) {
        const auto r = rate_conservation_check(f.f, d, c.reps);
        t.add({fmt(f.name), fmt(r.generator_term.value), fmt(r.generator_term.se), fmt(r.scheme_generator_term.value),
               fmt(r.scheme_generator_term.se), fmt(r.boundary_term.value), fmt(r.boundary_term.se), fmt(r.gap.value),
               fmt(r.gap.se), fmt(r.gap_in_se), fmt(r.raw_gap.value), fmt(r.raw_gap_in_se)});
        out << f.name << ": gap " << r.gap.value << " (" << r.gap_in_se << " SE)\n";
        ok = ok && std::abs(r.gap_in_se) <= 3.0;
    }
    o.add("diffuse.csv", t);
    return ok ? kOk : kCheckFailed;
}

int cmd_spline(const ExperimentConfig& c, Outputs& o, std::ostream& out) {
    const auto suite = spline_property_suite(c.seed);
    Csv t({"property", "measured", "tolerance", "pass"});
    bool ok = true;
    for (const auto& s : suite) {
        t.add({fmt(s.name), fmt(s.measured), fmt(s.tolerance), fmt(s.pass)});
        out << (s.pass ? "PASS " : "FAIL ") << s.name << " (" << s.measured << " <= " << s.tolerance << ")\n";
        ok = ok && s.pass;
    }
    o.add("spline_check.csv", t);
    return ok ? kOk : kCheckFailed;
}

int cmd_epsilon(const ExperimentConfig& c, Outputs& o, std::ostream& out) {
    const auto p = model(c);
    const auto d = diffusion(c);
    Csv t({"h", "lhs", "lhs_se", "rhs", "rhs_se", "gap", "gap_se", "gap_in_se", "eps1", "eps1_se", "eps2", "eps2_se",
           "boundary", "boundary_se", "raw_gap", "raw_gap_in_se"});
    bool ok = true;
    const auto chain_pi = [&] {
        auto chain = Chain::make(p);
        auto pi = stationary_distribution(chain).pi;
        return std::make_pair(std::move(chain), std::move(pi));
    }();
    for (const auto& name : c.functions) {
        const auto ctx = make_stein_context(chain_pi.first, chain_pi.second, make_test_function(name, p));
        const auto r = stein_identity_check(*ctx, d, c.reps, c.every);
        t.add({fmt(name), fmt(r.lhs.value), fmt(r.lhs.se), fmt(r.rhs.value), fmt(r.rhs.se), fmt(r.gap.value),
               fmt(r.gap.se), fmt(r.gap_in_se), fmt(r.eps1.value), fmt(r.eps1.se), fmt(r.eps2.value), fmt(r.eps2.se),
               fmt(r.boundary.value), fmt(r.boundary.se), fmt(r.raw_gap.value), fmt(r.raw_gap_in_se)});
        out << name << ": lhs " << r.lhs.value << ", rhs " << r.rhs.value << ", gap " << r.gap_in_se << " SE\n";
        ok = ok && std::abs(r.gap_in_se) <= 3.0;
    }
    o.add("epsilon.csv", t);
    return ok ? kOk : kCheckFailed;
}

int cmd_rate(const ExperimentConfig& c, Outputs& o, std::ostream& out) {
    RateOptions opt;
    opt.every = c.every;
    opt.epsilon = c.epsilon;
    opt.replications = c.reps;
    const auto r = convergence_rate_experiment(c.ladder, c.b, c.beta, c.functions, diffusion(c), opt);
    Csv cells({"n", "h", "exact", "diffusion", "diffusion_se", "gap", "se", "se_ok", "in_pool", "eps1", "eps2",
               "boundary", "slope_contribution"});
    for (const auto& x : r.cells)
        cells.add({fmt(x.n), fmt(x.h_name), fmt(x.exact), fmt(x.diffusion.value), fmt(x.diffusion.se), fmt(x.gap),
                   fmt(x.se), fmt(x.se_ok), fmt(x.in_pool), fmt(x.eps1_mean), fmt(x.eps2_mean), fmt(x.boundary_term),
                   fmt(x.slope_contribution)});
    Csv slopes({"h", "slope", "intercept", "resolved"});
    for (const auto& s : r.per_h) slopes.add({fmt(s.h_name), fmt(s.slope), fmt(s.intercept), fmt(s.resolved)});
    slopes.add({"pooled", fmt(r.pooled_slope), "nan", fmt(r.slope_defined)});
    slopes.add({"pooled_without_smallest_n", fmt(r.pooled_slope_without_smallest), "nan", fmt(r.slope_defined)});
    o.add("rate_cells.csv", cells);
    o.add("rate_slopes.csv", slopes);
    for (const auto& s : r.per_h) out << s.h_name << ": slope " << s.slope << (s.resolved ? "" : " (unresolved)") << "\n";
    out << "pooled slope " << r.pooled_slope << (r.slope_defined ? "" : " (undefined: fewer than 3 n)") << "\n";
    if (!r.excluded.empty()) {
        out << "excluded:";
        for (const auto& e : r.excluded) out << " " << e;
        out << "\n";
    }
    return r.slope_defined ? kOk : kCheckFailed;
}

int cmd_lyapunov(const ExperimentConfig& c, Outputs& o, std::ostream& out) {
    const auto p = model(c);
    const auto m = FluidModel::from(p);
    // the transport equation is a property of V alone and holds for any n
    Csv pde({"x1", "x2", "d1", "d2", "residual"});
    double worst = 0.0;
    for (double x1 : {0.0, 0.5, 1.0, 2.0, 4.0, 8.0})
        for (double x2 : {m.kappa2, m.kappa2 + 1.0, 1.5 * m.kappa2, 2.0 * m.kappa2}) {
            const auto r = transport_residual(m, x1, x2);
            pde.add({fmt(x1), fmt(x2), fmt(r.d1), fmt(r.d2), fmt(r.residual)});
            worst = std::max(worst, std::abs(r.residual));
        }
    o.add("lyapunov_pde.csv", pde);
    out << "transport equation: max |residual| " << worst << "\n";
    const auto rep = lyapunov_drift_check(p, drift_sample(p, c.per_axis), c.cushion);
    Csv t({"q1", "q2", "GXV", "bound_rhs", "margin"});
    for (const auto& r : rep.rows) t.add({fmt(r.q[0]), fmt(r.q[1]), fmt(r.gxv), fmt(r.bound_rhs), fmt(r.margin)});
    o.add("lyapunov.csv", t);
    out << rep.rows.size() << " states, min margin " << rep.min_margin << ", " << rep.excluded.size()
        << " excluded\n";
    return (rep.all_pass && worst <= 1e-4) ? kOk : kCheckFailed;
}

using Handler = int (*)(const ExperimentConfig&, Outputs&, std::ostream&);

Handler handler(const std::string& command) {
    static const std::map<std::string, Handler> table = {
        {"solve", cmd_solve},     {"poisson", cmd_poisson}, {"factors", cmd_factors},
        {"couple", cmd_couple},   {"cycles", cmd_cycles},   {"ruin", cmd_ruin},
        {"diffuse", cmd_diffuse}, {"spline-check", cmd_spline}, {"epsilon", cmd_epsilon},
        {"rate", cmd_rate},       {"lyapunov", cmd_lyapunov},
    };
    return table.at(command);
}

std::string command_help(const std::string& name) {
    static const std::map<std::string, std::string> t = {
        {"solve", "stationary law and E h(X) of the exact chain"},
        {"poisson", "Poisson solutions f_h and their residuals"},
        {"factors", "Stein factors of f_h against their envelopes"},
        {"couple", "coupling-time estimates on a grid of starting pairs"},
        {"cycles", "coupling-cycle phase probabilities"},
        {"ruin", "gambler's ruin closed forms against the absorbing-chain solve"},
        {"diffuse", "reflected diffusion and its rate-conservation check"},
        {"spline-check", "property suite of the lattice interpolator"},
        {"epsilon", "Stein identity along a diffusion path"},
        {"rate", "exact-versus-diffusion gaps over a ladder of n and their log-log slope"},
        {"lyapunov", "transport PDE and drift check of the fluid Lyapunov function"},
    };
    return t.at(name);
}

std::string key_help(const std::string& key) {
    static const std::map<std::string, std::string> t = {
        {"n", "servers; a comma list for rate"},
        {"b", "buffer size"},
        {"beta", "Halfin-Whitt parameter, below sqrt(n)"},
        {"seed", "random seed"},
        {"dir", "output directory"},
        {"h", "comma list of test functions"},
        {"reps", "replications"},
        {"state", "starting q as a comma list"},
        {"theta", "starting phase"},
        {"gamma", "cycle threshold; default from beta"},
        {"p", "up probability"},
        {"q", "down probability"},
        {"z", "starting wealth"},
        {"a", "absorbing upper level"},
        {"s", "pgf argument in (0,1)"},
        {"dt", "time step"},
        {"T", "simulated time per replication, burn-in included"},
        {"burn_in", "discarded initial time"},
        {"scheme", "reflection scheme: projection or bridge"},
        {"every", "stride for expensive integrands"},
        {"epsilon", "also average the epsilon terms (0 or 1)"},
        {"per_axis", "drift sample points per axis"},
        {"cushion", "drift margin"},
    };
    const auto it = t.find(key);
    return it == t.end() ? std::string() : it->second;
}

/// Flags per command besides the common ones (config, n, b, beta, seed, out).
const std::map<std::string, std::vector<std::string>>& command_keys() {
    static const std::map<std::string, std::vector<std::string>> t = {
        {"solve", {"h"}},
        {"poisson", {"h"}},
        {"factors", {"h"}},
        {"couple", {"reps", "state", "theta"}},
        {"cycles", {"reps", "gamma"}},
        {"ruin", {"p", "q", "z", "a", "s"}},
        {"diffuse", {"dt", "T", "burn_in", "scheme", "reps"}},
        {"spline-check", {}},
        {"epsilon", {"h", "dt", "T", "burn_in", "scheme", "reps", "every"}},
        {"rate", {"h", "dt", "T", "burn_in", "scheme", "reps", "every", "epsilon"}},
        {"lyapunov", {"per_axis", "cushion"}},
    };
    return t;
}

std::string flag_of(const std::string& bare) {
    if (bare == "h") return "--functions";  // -h is help
    if (bare == "dir") return "--out";
    std::string f = bare;
    std::replace(f.begin(), f.end(), '_', '-');
    return "--" + f;
}

nlohmann::ordered_json config_json(const ExperimentConfig& c) {
    nlohmann::ordered_json j;
    j["command"] = c.command;
    j["n"] = c.n;
    j["ladder"] = c.ladder;
    j["b"] = c.b;
    j["beta"] = c.beta;
    j["functions"] = c.functions;
    j["reps"] = c.reps;
    j["dt"] = c.dt;
    j["T"] = c.horizon;
    j["burn_in"] = c.burn_in;
    j["seed"] = c.seed;
    j["scheme"] = c.scheme;
    j["every"] = c.every;
    j["epsilon"] = c.epsilon;
    j["ruin"] = {{"p", c.ruin_p}, {"q", c.ruin_q}, {"z", c.ruin_z}, {"a", c.ruin_a}, {"s", c.ruin_s}};
    j["coupling"] = {{"state", c.state}, {"theta", c.theta}};
    if (c.gamma) j["coupling"]["gamma"] = *c.gamma;
    j["lyapunov"] = {{"per_axis", c.per_axis}, {"cushion", c.cushion}};
    j["output_dir"] = c.output_dir;
    j["explicit_settings"] = c.settings;
    return j;
}

void write_outputs(const ExperimentConfig& c, const Outputs& o, int status) {
    const fs::path dir(c.output_dir);
    fs::create_directories(dir);
    nlohmann::ordered_json files = nlohmann::ordered_json::array();
    for (const auto& [name, content] : o.files) {
        std::ofstream f(dir / name, std::ios::binary);
        f << content;
        if (!f) throw std::runtime_error("cannot write " + (dir / name).string());
        files.push_back({{"file", name}, {"bytes", content.size()}, {"sha256", sha256_hex(content)}});
    }
    nlohmann::ordered_json m;
    m["tool"] = "jsqlab";
    m["version"] = JSQLAB_VERSION;
    m["command"] = c.command;
    m["exit_status"] = status;
    m["seed"] = c.seed;
    m["config"] = config_json(c);
    m["warnings"] = c.warnings;
    m["versions"] = {{"jsqlab", JSQLAB_VERSION},
                     {"compiler", __VERSION__},
                     {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                   std::to_string(EIGEN_MINOR_VERSION)},
                     {"cli11", CLI11_VERSION},
                     {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                           std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                           std::to_string(NLOHMANN_JSON_VERSION_PATCH)}};
    m["outputs"] = files;
    std::ofstream f(dir / "manifest.json", std::ios::binary);
    f << m.dump(2) << "\n";
    if (!f) throw std::runtime_error("cannot write manifest in " + dir.string());
}

}  // namespace

const std::vector<std::string>& command_names() {
    static const std::vector<std::string> names = {"solve",   "poisson",      "factors", "couple", "cycles",  "ruin",
                                                   "diffuse", "spline-check", "epsilon", "rate",   "lyapunov"};
    return names;
}

std::string default_output_dir() {
    const char* env = std::getenv(kOutputDirEnv);
    return (env && *env) ? std::string(env) : std::string("jsqlab_out");
}

ExperimentConfig default_config(const std::string& command) {
    const auto& names = command_names();
    if (std::find(names.begin(), names.end(), command) == names.end())
        throw ConfigError("unknown command '" + command + "'");
    ExperimentConfig c;
    c.command = command;
    c.output_dir = default_output_dir();
    if (command == "couple") c.reps = 2000;
    if (command == "cycles") c.reps = 200;
    if (command == "rate") c.ladder = {25, 100, 400};
    if (command == "epsilon")
        c.functions = {"x1+x2", "1-exp"};
    else
        c.functions = shipped_family_names();
    c.n = c.ladder.front();
    return c;
}

void apply_setting(ExperimentConfig& c, const std::string& key_in, const std::string& value, const std::string& where) {
    const std::string key = canonical_key(trim(key_in), where);
    if (key == "model.n") {
        c.ladder = parse_int_list(value, key, where);
        c.n = c.ladder.front();
    } else if (key == "model.b") {
        c.b = parse_number<int>(value, key, where);
    } else if (key == "model.beta") {
        c.beta = parse_number<double>(value, key, where);
    } else if (key == "model.h") {
        auto list = split_list(value);
        if (list.size() == 1 && list[0] == "all") list = shipped_family_names();
        if (list.empty()) throw ConfigError(where + "empty test function list");
        c.functions = list;
    } else if (key == "simulation.reps") {
        c.reps = parse_number<int>(value, key, where);
    } else if (key == "simulation.dt") {
        c.dt = parse_number<double>(value, key, where);
    } else if (key == "simulation.T") {
        c.horizon = parse_number<double>(value, key, where);
    } else if (key == "simulation.burn_in") {
        c.burn_in = parse_number<double>(value, key, where);
    } else if (key == "simulation.seed") {
        c.seed = parse_number<std::uint64_t>(value, key, where);
    } else if (key == "simulation.scheme") {
        c.scheme = trim(value);
    } else if (key == "simulation.every") {
        c.every = parse_number<long>(value, key, where);
    } else if (key == "simulation.epsilon") {
        c.epsilon = parse_bool(value, key, where);
    } else if (key == "ruin.p") {
        c.ruin_p = parse_number<double>(value, key, where);
    } else if (key == "ruin.q") {
        c.ruin_q = parse_number<double>(value, key, where);
    } else if (key == "ruin.z") {
        c.ruin_z = parse_number<int>(value, key, where);
    } else if (key == "ruin.a") {
        c.ruin_a = parse_number<int>(value, key, where);
    } else if (key == "ruin.s") {
        c.ruin_s = parse_number<double>(value, key, where);
    } else if (key == "coupling.state") {
        c.state = parse_int_list(value, key, where);
    } else if (key == "coupling.theta") {
        c.theta = parse_number<int>(value, key, where);
    } else if (key == "coupling.gamma") {
        c.gamma = parse_number<double>(value, key, where);
    } else if (key == "lyapunov.per_axis") {
        c.per_axis = parse_number<int>(value, key, where);
    } else if (key == "lyapunov.cushion") {
        c.cushion = parse_number<double>(value, key, where);
    } else if (key == "output.dir") {
        c.output_dir = trim(value);
    }
    c.settings[key] = trim(value);
}

void parse_config_text(ExperimentConfig& c, const std::string& text, const std::string& source) {
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string where = source + ":" + std::to_string(lineno) + ": ";
        const auto hash = line.find_first_of("#;");
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError(where + "unterminated section header");
            section = trim(line.substr(1, line.size() - 2));
            if (section.empty()) throw ConfigError(where + "empty section name");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
        const std::string key = trim(line.substr(0, eq));
        if (key.empty()) throw ConfigError(where + "missing key");
        apply_setting(c, section.empty() ? key : section + "." + key, line.substr(eq + 1), where);
    }
}

ExperimentConfig load_config(const std::string& path, const std::string& command) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    ExperimentConfig c = default_config(command);
    parse_config_text(c, ss.str(), path);
    validate(c);
    return c;
}

void validate(ExperimentConfig& c) {
    c.warnings.clear();
    if (c.ladder.empty()) throw ConfigError("n must be given");
    if (c.command != "rate" && c.ladder.size() > 1)
        throw ConfigError("command '" + c.command + "' takes a single n; lists are for 'rate'");
    if (c.b < 1) throw ConfigError("b must be at least 1, got " + std::to_string(c.b));
    if (!(c.beta > 0.0)) throw ConfigError("beta must be positive");
    std::set<int> seen;
    for (int n : c.ladder) {
        if (n < 1) throw ConfigError("n must be at least 1, got " + std::to_string(n));
        if (!seen.insert(n).second) throw ConfigError("n = " + std::to_string(n) + " appears twice");
        if (c.beta >= std::sqrt(static_cast<double>(n)))
            throw ConfigError("beta = " + fmt(c.beta) + " must be below sqrt(n) = " + fmt(std::sqrt(double(n))) +
                              " for n = " + std::to_string(n));
    }
    if (c.command == "rate" && c.ladder.size() < 3)
        c.warnings.push_back("slope fit degenerate: the ladder has " + std::to_string(c.ladder.size()) +
                             " n values, at least 3 are needed");
    const auto& family = shipped_family_names();
    for (const auto& f : c.functions)
        if (std::find(family.begin(), family.end(), f) == family.end())
            throw ConfigError("unknown test function '" + f + "'");
    if (c.reps < 1) throw ConfigError("reps must be at least 1");
    if (!(c.dt > 0.0)) throw ConfigError("dt must be positive");
    if (!(c.burn_in >= 0.0)) throw ConfigError("burn_in must be nonnegative");
    if (!(c.horizon > c.burn_in)) throw ConfigError("T must exceed burn_in");
    if (c.scheme != "projection" && c.scheme != "bridge")
        throw ConfigError("scheme must be 'projection' or 'bridge', got '" + c.scheme + "'");
    if (c.every < 1) throw ConfigError("every must be at least 1");
    if (!(c.ruin_s > 0.0 && c.ruin_s < 1.0)) throw ConfigError("s must lie in (0, 1)");
    if (!c.state.empty() && static_cast<int>(c.state.size()) != c.b + 1)
        throw ConfigError("state needs b + 1 = " + std::to_string(c.b + 1) + " entries");
    if (c.theta < 1 || c.theta > c.b + 1) throw ConfigError("theta must lie in 1..b+1");
    if (c.gamma && !(*c.gamma > 0.0)) throw ConfigError("gamma must be positive");
    if (c.per_axis < 2) throw ConfigError("per_axis must be at least 2");
    if (!(c.cushion >= 0.0)) throw ConfigError("cushion must be nonnegative");
    if (c.output_dir.empty()) throw ConfigError("output directory must not be empty");
}

std::string sha256_hex(const std::string& data) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("sha256 failed");
    static const char* hex = "0123456789abcdef";
    std::string s;
    for (unsigned int i = 0; i < len; ++i) {
        s += hex[md[i] >> 4];
        s += hex[md[i] & 15];
    }
    return s;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Numerical lab for join-the-shortest-queue in the Halfin-Whitt regime"};
    app.require_subcommand(1);
    std::map<std::string, std::map<std::string, std::string>> values;  // command -> bare key -> text
    std::map<std::string, std::string> config_paths;
    std::map<std::string, CLI::Option*> options;
    for (const auto& [name, extra] : command_keys()) {
        auto* sub = app.add_subcommand(name, command_help(name));
        sub->add_option("--config", config_paths[name], "key = value file with [sections]; flags override it");
        std::vector<std::string> keys = {"n", "b", "beta", "seed", "dir"};
        keys.insert(keys.end(), extra.begin(), extra.end());
        for (const auto& k : keys) {
            options[name + "/" + k] = sub->add_option(flag_of(k), values[name][k], key_help(k));
        }
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << "\n" << "run with --help for the list of commands and flags\n";
        return kUsage;
    }
    const std::string command = app.get_subcommands().front()->get_name();

    ExperimentConfig cfg;
    try {
        cfg = default_config(command);
        if (!config_paths[command].empty()) {
            std::ifstream f(config_paths[command]);
            if (!f) throw ConfigError("cannot open config file '" + config_paths[command] + "'");
            std::stringstream ss;
            ss << f.rdbuf();
            parse_config_text(cfg, ss.str(), config_paths[command]);
        }
        for (auto& [k, v] : values[command]) {
            auto* opt = options[command + "/" + k];
            if (opt->count() > 0) apply_setting(cfg, k, v, flag_of(k) + ": ");
        }
        validate(cfg);
    } catch (const ConfigError& e) {
        err << "configuration error: " << e.what() << "\n";
        return kUsage;
    }
    for (const auto& w : cfg.warnings) err << "warning: " << w << "\n";

    Outputs outputs;
    int status = kOk;
    try {
        status = handler(command)(cfg, outputs, out);
    } catch (const ConfigError& e) {
        err << "configuration error: " << e.what() << "\n";
        return kUsage;
    } catch (const RegimeError& e) {
        err << "outside the regime: " << e.what() << "\n";
        status = kRegime;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kRuntime;
    }
    try {
        write_outputs(cfg, outputs, status);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kRuntime;
    }
    out << "wrote " << outputs.files.size() << " file(s) and manifest.json to " << cfg.output_dir << "\n";
    if (status == kCheckFailed) err << "a check of '" << command << "' failed; see the CSV output\n";
    return status;
}

int run(int argc, const char* const* argv) { return run(argc, argv, std::cout, std::cerr); }

}  // namespace jsq::cli
