#include "rwvrp/oracle.hpp"

#include <limits>
#include <stdexcept>

namespace rwvrp {

namespace {

struct Search {
    const RoutingEnv& env;
    const DistanceMatrix& dist;
    const OracleLimits& lim;
    double best = std::numeric_limits<double>::infinity();
    std::vector<std::size_t> best_actions;
    std::uint64_t expanded = 0;

    void dfs(const RolloutState& s, double cost) {
        ++expanded;
        if (env.is_done(s)) {
            if (cost < best) {
                best = cost;
                best_actions = s.action_log;
            }
            return;
        }
        const FeasibilityMask m = env.feasible_mask(s);
        const Instance& inst = env.instance();
        for (std::size_t j = 0; j < m.selectable.size(); ++j) {
            if (!m.selectable[j]) continue;
            if (inst.is_optional(j) && s.optional_in_route >= lim.max_optional_per_route) continue;
            const double next = cost + dist(s.current, j);
            if (lim.prune && next >= best) continue;
            dfs(env.step(s, j), next);
        }
    }
};

} // namespace

OracleResult brute_force(const Instance& inst, const OracleLimits& limits) {
    return brute_force(inst, build_distance_matrix(inst), limits);
}

OracleResult brute_force(const Instance& inst, const DistanceMatrix& dist, const OracleLimits& limits) {
    if (inst.num_customers() > limits.max_customers)
        throw std::invalid_argument("brute_force: " + std::to_string(inst.num_customers()) + " customers exceeds the limit of " +
                                    std::to_string(limits.max_customers));
    if (inst.num_optional() > limits.max_optional)
        throw std::invalid_argument("brute_force: too many optional nodes (" + std::to_string(inst.num_optional()) + ")");
    if (limits.max_optional_per_route < 0) throw std::invalid_argument("brute_force: negative optional-visit limit");
    const RoutingEnv env(inst, dist);
    Search s{env, dist, limits, std::numeric_limits<double>::infinity(), {}, 0};
    s.dfs(env.init_state(), 0.0);
    if (s.best_actions.empty()) throw std::runtime_error("brute_force: no feasible solution in the search space");
    OracleResult r;
    r.optimal_cost = s.best;
    r.optimal_solution = {s.best_actions, s.best};
    r.nodes_expanded = s.expanded;
    r.proven = true;
    return r;
}

double gap(double cost, double reference) {
    if (!(reference > 0.0)) throw std::invalid_argument("gap: reference must be positive");
    return 100.0 * (cost - reference) / reference;
}

} // namespace rwvrp
