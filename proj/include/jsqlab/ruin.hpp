#pragma once

#include <optional>
#include <vector>

namespace jsq {

/// Gambler's ruin on {0..a} started at z with up-step probability p.
/// `rate` is the event rate of the continuous-time version.
struct RuinSpec {
    double p = 0.5;
    double q = 0.5;
    int z = 1;
    int a = 2;
    double rate = 1.0;

    /// Throws std::invalid_argument when p, q or the wealths are inconsistent.
    void validate() const;
};

double ruin_probability(const RuinSpec& s);

/// E s^D for the number of turns D, s in (0,1).
double duration_pgf(const RuinSpec& spec, double s);
/// Same, with 1 - s passed separately so s close to 1 loses no digits.
double duration_pgf(const RuinSpec& spec, double s, double one_minus_s);

/// E exp(-sum_{i<=D} E_i) with E_i iid Exp(rate), i.e. the pgf at rate/(rate+1).
double ct_duration_mgf(const RuinSpec& spec);

struct AbsorbingResult {
    double ruin_probability = 0.0;
    double expected_duration = 0.0;
    double pgf = 0.0;  // NaN when no s was given
};

/// First-step analysis on 1..a-1 by a tridiagonal solve; a <= 10^4.
AbsorbingResult absorbing_oracle(const RuinSpec& spec, std::optional<double> s = std::nullopt);

/// The random walk behind the coupling-attempt bound at (n, b, beta):
/// z = floor(sqrt(n) beta / 2), a = z + floor(z / (b+1)),
/// q_B = n - q2 - 1 - z + floor(z i / (b+1)), rate = n lam + q_B - z.
RuinSpec halfin_whitt_spec(int n, int b, double beta, int q2, int i);

struct MgfScanPoint {
    int n = 0;
    int q2 = 0;
    int worst_i = 0;
    double mgf = 0.0;  // max over i in 1..b+1
    bool defined = true;  // false when the walk has no room at this n
};

struct MgfScan {
    std::vector<MgfScanPoint> points;
    double max_mgf = 0.0;
    bool below_margin = false;
    int undefined_points = 0;
};

/// For each n, q2 = floor(q2_fraction * 2 floor(gamma sqrt(n))) and the mgf
/// maximized over i; below_margin when every defined value is < 1 - margin.
/// Points where the walk is undefined are kept with defined = false.
MgfScan halfin_whitt_mgf_scan(int b, double beta, double q2_fraction, const std::vector<int>& n_ladder,
                              double margin = 1e-3);

/// gamma = 2 (17/beta + beta + 1).
double cycle_gamma(double beta);

}  // namespace jsq
