#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "rwvrp/instance.hpp"

namespace rwvrp {

/// Tolerance for single-leg resource and time-window comparisons.
inline constexpr double kFeasTol = 1e-9;

/// Single-vehicle construction state. Depot returns delimit routes; each route
/// starts with empty load, full resource and time zero.
struct RolloutState {
    std::size_t current = 0;
    std::vector<bool> visited;  // indexed by customer node (slot 0 unused)
    std::size_t num_visited = 0;
    int load_used = 0;
    double resource = 0.0;
    double time = 0.0;
    /// Optional-node visits since the last depot departure.
    int optional_in_route = 0;
    std::size_t step_count = 0;
    std::vector<std::size_t> action_log;
};

/// selectable[j] is the negation of the masking function: true means j may be chosen.
struct FeasibilityMask {
    std::vector<bool> selectable;
    bool any() const;
    std::size_t count() const;
};

struct Solution {
    std::vector<std::size_t> actions;  // starts and ends at the depot
    double cost = 0.0;

    std::vector<std::vector<std::size_t>> routes() const;
};

struct InfeasibleAction : std::logic_error {
    using std::logic_error::logic_error;
};

/// Read-only view of one instance plus the data the masks need repeatedly.
class RoutingEnv {
public:
    RoutingEnv(const Instance& inst, const DistanceMatrix& dist);

    const Instance& instance() const { return inst_; }
    const DistanceMatrix& dist() const { return dist_; }
    std::size_t num_nodes() const { return dist_.size(); }

    RolloutState init_state() const;
    FeasibilityMask feasible_mask(const RolloutState& s) const;
    void feasible_mask(const RolloutState& s, FeasibilityMask& out) const;
    /// Throws InfeasibleAction when node is masked.
    RolloutState step(const RolloutState& s, std::size_t node) const;
    void step_inplace(RolloutState& s, std::size_t node) const;
    bool is_done(const RolloutState& s) const;
    /// Distance from customer j to the closest node of {depot} ∪ stations.
    double nearest_facility(std::size_t j) const { return nearest_facility_[j]; }

private:
    void apply(RolloutState& s, std::size_t node) const;

    const Instance& inst_;
    const DistanceMatrix& dist_;
    std::vector<double> nearest_facility_;
};

RolloutState init_state(const Instance& inst);
FeasibilityMask feasible_mask(const RolloutState& s, const Instance& inst, const DistanceMatrix& dist);
RolloutState step(const RolloutState& s, std::size_t node, const Instance& inst, const DistanceMatrix& dist);

struct Violation {
    std::string family;  // visit-exactly-once, capacity, resource, time-window, depot, flow
    std::size_t index;   // position in the action sequence (or node id for missing visits)
    std::string detail;
};

struct ValidationReport {
    std::vector<Violation> violations;
    bool ok() const { return violations.empty(); }
    std::string to_string() const;
};

ValidationReport validate_solution(const Instance& inst, const Solution& sol);
ValidationReport validate_solution(const Instance& inst, const DistanceMatrix& dist, const Solution& sol);

/// Throws std::invalid_argument if the sequence is empty or does not start and end at the depot.
double solution_cost(const Instance& inst, const Solution& sol, const DistanceMatrix& dist);

nlohmann::json solution_to_json(const Solution& sol, const Instance& inst);
Solution solution_from_json(const nlohmann::json& j);

} // namespace rwvrp
