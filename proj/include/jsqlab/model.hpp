#pragma once

#include <Eigen/SparseCore>

#include <cstddef>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace jsq {

/// Parameters of the JSQ system in the Halfin-Whitt regime.
///
/// lambda = 1 - beta/sqrt(n) is the per-server load and delta = 1/sqrt(n)
/// the diffusion scaling unit. Both are derived once here so every module
/// sees the same floating point values.
struct ModelParams {
    int n = 1;
    int b = 1;
    double beta = 0.5;
    double lambda = 0.5;
    double delta = 1.0;
    double arrival_rate = 0.5;  // n * lambda

    static ModelParams make(int n, int b, double beta);
    int dim() const { return b + 1; }
};

/// Occupancy vector q, q_i = number of servers with at least i customers.
using JsqState = std::vector<int>;
/// Diffusion-scaled image of a JsqState.
using ScaledState = std::vector<double>;

/// Raised for parameters outside the regime where a construction is defined.
class RegimeError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

class CapacityError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

bool is_valid_state(const ModelParams& p, const JsqState& q);
ScaledState scale_state(const ModelParams& p, const JsqState& q);
JsqState unscale_state(const ModelParams& p, const ScaledState& x);

/// The anchor q = (n, 0, ..., 0), i.e. x = 0.
JsqState anchor_state(const ModelParams& p);

/// Lexicographically ordered enumeration of all nonincreasing
/// (b+1)-tuples bounded by n, with O(b) ranking.
class StateSpace {
public:
    static constexpr std::size_t kDefaultCapacity = 5'000'000;

    StateSpace(const ModelParams& p, std::size_t capacity = kDefaultCapacity);

    const ModelParams& params() const { return params_; }
    std::size_t size() const { return size_; }
    int dim() const { return dim_; }

    /// Number of valid states; throws CapacityError above the guard.
    static std::size_t cardinality(int n, int b);

    JsqState state(std::size_t idx) const;
    const int* raw(std::size_t idx) const { return &flat_[idx * dim_]; }
    /// Dense index of q; q must be valid.
    std::size_t index(const JsqState& q) const;
    /// Index or -1 when q is outside the space.
    std::int64_t find(const JsqState& q) const;

    std::size_t anchor_index() const { return anchor_; }

private:
    ModelParams params_;
    int dim_;
    std::size_t size_;
    std::vector<int> flat_;
    std::size_t anchor_;
};

struct Transition {
    JsqState target;
    double rate;
};

/// Outgoing transitions of q with nonzero rate.
std::vector<Transition> transition_rates(const ModelParams& p, const JsqState& q);

/// Row-major sparse rate matrix; rows sum to zero.
using SparseGenerator = Eigen::SparseMatrix<double, Eigen::RowMajor>;

SparseGenerator build_generator(const StateSpace& space);

/// Everything the exact analysis needs about one (n, b, beta) instance.
struct Chain {
    ModelParams params;
    std::shared_ptr<const StateSpace> space;
    SparseGenerator gen;

    static Chain make(const ModelParams& p, std::size_t capacity = StateSpace::kDefaultCapacity);
    std::size_t size() const { return space->size(); }
};

}  // namespace jsq
