#pragma once

#include <cstdint>

#include "rwvrp/routing_env.hpp"

namespace rwvrp {

struct OracleLimits {
    std::size_t max_customers = 9;
    std::size_t max_optional = 3;
    /// Optional-node visits allowed between two depot visits.
    int max_optional_per_route = 2;
    /// Branch-and-bound on partial cost; false enumerates every leaf.
    bool prune = true;
};

struct OracleResult {
    double optimal_cost = 0.0;
    Solution optimal_solution;
    std::uint64_t nodes_expanded = 0;
    bool proven = false;
};

/// Exact optimum over mask-legal action sequences. Throws std::invalid_argument
/// when the instance exceeds the size limits; std::runtime_error if no
/// complete sequence exists.
OracleResult brute_force(const Instance& inst, const OracleLimits& limits = {});
OracleResult brute_force(const Instance& inst, const DistanceMatrix& dist, const OracleLimits& limits = {});

/// 100·(cost − reference)/reference.
double gap(double cost, double reference);

} // namespace rwvrp
