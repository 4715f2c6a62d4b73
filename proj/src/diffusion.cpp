#include "jsqlab/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>
#include <thread>

namespace jsq {

void DiffusionConfig::validate() const {
    if (!(dt > 0.0)) throw std::invalid_argument("diffusion: dt must be positive");
    if (!(burn_in >= 0.0 && burn_in < horizon)) throw std::invalid_argument("diffusion: need 0 <= burn-in < horizon");
    if (dim < 2) throw std::invalid_argument("diffusion: dim must be at least 2");
    if (batches < 2) throw std::invalid_argument("diffusion: need at least two batches");
    if (y2_start < 0.0) throw std::invalid_argument("diffusion: start outside the orthant");
    if (total_steps() - burn_steps() < batches) throw std::invalid_argument("diffusion: horizon too short for batches");
    if (dump_every < 1) throw std::invalid_argument("diffusion: dump_every must be positive");
}

long DiffusionConfig::total_steps() const { return static_cast<long>(std::llround(horizon / dt)); }
long DiffusionConfig::burn_steps() const { return static_cast<long>(std::llround(burn_in / dt)); }

void PathAccumulator::merge(const PathAccumulator& o) {
    if (stats.empty()) stats.resize(o.stats.size());
    if (stats.size() != o.stats.size()) throw std::invalid_argument("merge: functional count differs");
    steps += o.steps;
    time += o.time;
    total_dU += o.total_dU;
    reflection_steps += o.reflection_steps;
    negative_states += o.negative_states;
    pushes_with_nonnegative_proposal += o.pushes_with_nonnegative_proposal;
    replications += o.replications;
    final_state = o.final_state;
    for (std::size_t i = 0; i < stats.size(); ++i) {
        auto& a = stats[i];
        const auto& b = o.stats[i];
        a.integrand_mean.insert(a.integrand_mean.end(), b.integrand_mean.begin(), b.integrand_mean.end());
        a.boundary_rate.insert(a.boundary_rate.end(), b.boundary_rate.begin(), b.boundary_rate.end());
    }
}

PathAccumulator simulate_reflected(const DiffusionConfig& cfg, const std::vector<Functional>& fs, int replication) {
    cfg.validate();
    for (const auto& f : fs)
        if (f.every < 1) throw std::invalid_argument("functional subsampling stride must be positive");

    // one independent stream per (seed, replication)
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                      static_cast<std::uint32_t>(replication), 0x6a5dU};
    std::mt19937_64 rng(seq);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    const double dt = cfg.dt, beta = cfg.beta;
    const double sd = std::sqrt(2.0 * dt);
    const long total = cfg.total_steps(), burn = cfg.burn_steps(), measured = total - burn;
    const int B = cfg.batches;

    std::vector<double> y(static_cast<std::size_t>(cfg.dim), 0.0), mid(y.size(), 0.0);
    y[0] = cfg.y1_start < 0.0 ? beta : cfg.y1_start;
    y[1] = cfg.y2_start;

    PathAccumulator acc;
    acc.replications = 1;
    acc.stats.resize(fs.size());
    for (auto& s : acc.stats) {
        s.integrand_mean.assign(static_cast<std::size_t>(B), 0.0);
        s.boundary_rate.assign(static_cast<std::size_t>(B), 0.0);
    }
    std::vector<double> isum(fs.size(), 0.0), bsum(fs.size(), 0.0);
    std::vector<long> icount(fs.size(), 0);

    std::ofstream dump;
    if (!cfg.dump_path.empty() && replication == 0) {
        dump.open(cfg.dump_path);
        if (!dump) throw std::runtime_error("cannot open path dump " + cfg.dump_path);
        dump << "t,Y1,Y2,dU\n";
    }

    int batch = 0;
    long batch_end = burn + measured / B, batch_start = burn;
    auto close_batch = [&] {
        const double btime = static_cast<double>(batch_end - batch_start) * dt;
        for (std::size_t i = 0; i < fs.size(); ++i) {
            auto& s = acc.stats[i];
            s.integrand_mean[static_cast<std::size_t>(batch)] = icount[i] ? isum[i] / static_cast<double>(icount[i]) : 0.0;
            s.boundary_rate[static_cast<std::size_t>(batch)] = bsum[i] / btime;
            isum[i] = bsum[i] = 0.0;
            icount[i] = 0;
        }
        ++batch;
        batch_start = batch_end;
        batch_end = (batch == B - 1) ? total : burn + measured * (batch + 1) / B;
    };

    // probabilists' Gauss-Hermite, exact for polynomials of degree <= 9
    const double s10 = std::sqrt(10.0);
    const double gh_x[5] = {-std::sqrt(5.0 + s10), -std::sqrt(5.0 - s10), 0.0, std::sqrt(5.0 - s10), std::sqrt(5.0 + s10)};
    const double gh_w[5] = {(7.0 - 2.0 * s10) / 60.0, (7.0 + 2.0 * s10) / 60.0, 8.0 / 15.0, (7.0 + 2.0 * s10) / 60.0,
                            (7.0 - 2.0 * s10) / 60.0};
    std::vector<double> node(y.size(), 0.0);

    for (long k = 0; k < total; ++k) {
        const bool record = k >= burn;
        const double a = y[0];
        const double mean1 = a + (beta - y[0] - y[1]) * dt;
        const double y2p = y[1] - y[1] * dt;
        if (record) {
            const long local = k - burn;
            for (std::size_t i = 0; i < fs.size(); ++i) {
                if (local % fs[i].every != 0) continue;
                if (fs[i].scheme_generator) {
                    const auto& g = fs[i].scheme_generator;
                    node[1] = y2p;
                    double e = 0.0;
                    if (cfg.noise) {
                        for (int j = 0; j < 5; ++j) {
                            node[0] = mean1 + sd * gh_x[j];
                            e += gh_w[j] * g(node);
                        }
                    } else {
                        node[0] = mean1;
                        e = g(node);
                    }
                    isum[i] += (e - g(y)) / dt;
                    ++icount[i];
                } else if (fs[i].integrand) {
                    isum[i] += fs[i].integrand(y);
                    ++icount[i];
                }
            }
        }
        const double c = mean1 + (cfg.noise ? sd * normal(rng) : 0.0);
        double dU = 0.0;
        if (cfg.scheme == ReflectionScheme::Projection || !cfg.noise) {
            dU = std::max(0.0, -c);
        } else {
            // minimum of the bridge from a to c with variance 2 dt
            const double v = 1.0 - unif(rng);  // in (0, 1]
            const double m = 0.5 * (a + c - std::sqrt((a - c) * (a - c) - 4.0 * dt * std::log(v)));
            dU = std::max(0.0, -m);
        }
        if (record && dU > 0.0) {
            ++acc.reflection_steps;
            if (c >= 0.0) ++acc.pushes_with_nonnegative_proposal;
            acc.total_dU += dU;
            mid[0] = c + 0.5 * dU;
            mid[1] = y2p + 0.5 * dU;
            for (std::size_t i = 0; i < fs.size(); ++i)
                if (fs[i].boundary) bsum[i] += fs[i].boundary(mid) * dU;
        }
        y[0] = c + dU;
        y[1] = y2p + dU;
        if (record) {
            if (y[0] < 0.0 || y[1] < 0.0) ++acc.negative_states;
            if (dump.is_open() && (k - burn) % cfg.dump_every == 0)
                dump << (k + 1) * dt << ',' << y[0] << ',' << y[1] << ',' << dU << '\n';
            if (k + 1 == batch_end) close_batch();
        }
    }
    acc.steps = measured;
    acc.time = static_cast<double>(measured) * dt;
    acc.final_state = y;
    return acc;
}

PathAccumulator simulate_replications(const DiffusionConfig& cfg, const std::vector<Functional>& fs, int reps) {
    if (reps < 1) throw std::invalid_argument("need at least one replication");
    std::vector<PathAccumulator> parts(static_cast<std::size_t>(reps));
    const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    if (hw == 1 || reps == 1) {
        for (int r = 0; r < reps; ++r) parts[static_cast<std::size_t>(r)] = simulate_reflected(cfg, fs, r);
    } else {
        std::vector<std::thread> pool;
        std::vector<std::exception_ptr> errs(hw);
        for (unsigned w = 0; w < hw; ++w)
            pool.emplace_back([&, w] {
                try {
                    for (int r = static_cast<int>(w); r < reps; r += static_cast<int>(hw))
                        parts[static_cast<std::size_t>(r)] = simulate_reflected(cfg, fs, r);
                } catch (...) {
                    errs[w] = std::current_exception();
                }
            });
        for (auto& t : pool) t.join();
        for (auto& e : errs)
            if (e) std::rethrow_exception(e);
    }
    PathAccumulator out;
    for (const auto& p : parts) out.merge(p);
    return out;
}

Estimate batch_estimate(const PathAccumulator& acc, std::size_t i, double wi, double wb) {
    if (i >= acc.stats.size()) throw std::out_of_range("no such functional");
    const auto& s = acc.stats[i];
    const std::size_t nb = s.integrand_mean.size();
    if (nb < 2) throw std::invalid_argument("need at least two batches");
    double sum = 0.0, sum2 = 0.0;
    for (std::size_t k = 0; k < nb; ++k) {
        const double v = wi * s.integrand_mean[k] + wb * s.boundary_rate[k];
        sum += v;
        sum2 += v * v;
    }
    const double mean = sum / static_cast<double>(nb);
    const double var = std::max(0.0, (sum2 - static_cast<double>(nb) * mean * mean) / static_cast<double>(nb - 1));
    return {mean, std::sqrt(var / static_cast<double>(nb))};
}

Estimate stationary_expect(const std::function<double(std::span<const double>)>& h, const DiffusionConfig& cfg,
                           int reps) {
    auto acc = simulate_replications(cfg, {Functional{"h", h, {}, 1}}, reps);
    return batch_estimate(acc, 0);
}

double apply_gy(const Local2& f, double x1, double x2, double beta) {
    return (beta - x1 - x2) * f.d1 - x2 * f.d2 + f.d11;
}

double apply_gy(const SmoothFunction& f, double x1, double x2, double beta) { return apply_gy(f(x1, x2), x1, x2, beta); }

RateConservation rate_conservation_check(const SmoothFunction& f, const DiffusionConfig& cfg, int reps,
                                         std::function<double(double, double)> boundary_grad) {
    const double beta = cfg.beta;
    Functional fn;
    fn.name = "rate";
    fn.integrand = [f, beta](std::span<const double> y) { return apply_gy(f, y[0], y[1], beta); };
    if (boundary_grad)
        fn.boundary = [boundary_grad](std::span<const double> y) { return boundary_grad(y[0], y[1]); };
    else
        fn.boundary = [f](std::span<const double> y) {
            const auto l = f(y[0], y[1]);
            return l.d1 + l.d2;
        };
    Functional sg;
    sg.name = "rate-scheme";
    sg.scheme_generator = [f](std::span<const double> y) { return f(y[0], y[1]).v; };
    sg.boundary = fn.boundary;
    auto acc = simulate_replications(cfg, {fn, sg}, reps);
    auto z = [](const Estimate& e) { return e.se > 0.0 ? std::abs(e.value) / e.se : (e.value == 0.0 ? 0.0 : INFINITY); };
    RateConservation rc;
    rc.generator_term = batch_estimate(acc, 0, 1.0, 0.0);
    rc.scheme_generator_term = batch_estimate(acc, 1, 1.0, 0.0);
    rc.boundary_term = batch_estimate(acc, 0, 0.0, 1.0);
    rc.gap = batch_estimate(acc, 1, 1.0, 1.0);
    rc.gap_in_se = z(rc.gap);
    rc.raw_gap = batch_estimate(acc, 0, 1.0, 1.0);
    rc.raw_gap_in_se = z(rc.raw_gap);
    return rc;
}

std::vector<Functional> moment_functionals(int max_order) {
    std::vector<Functional> out;
    for (int axis = 0; axis < 2; ++axis)
        for (int j = 1; j <= max_order; ++j)
            out.push_back(Functional{"Y" + std::to_string(axis + 1) + "^" + std::to_string(j),
                                     [axis, j](std::span<const double> y) { return std::pow(y[axis], j); },
                                     {},
                                     1});
    return out;
}

}  // namespace jsq
