#pragma once

#include <cstdint>
#include <vector>

#include "rwvrp/model.hpp"

namespace rwvrp {

enum class DecodeMode { Greedy, Sample };

struct DecodePolicy {
    DecodeMode mode = DecodeMode::Greedy;
    std::size_t pomo_size = 1;
    bool augment = false;
    std::uint64_t seed = 0;
    /// Fusion temperature at inference (noise is zero).
    double tau = 0.2;
};

struct Trajectory {
    std::vector<std::size_t> actions;
    double cost = 0.0;
    std::size_t start = 0;
    std::size_t augmentation = 0;
};

/// A lockstep batch of trajectories over one instance.
struct TrajectoryBatch {
    std::vector<Trajectory> trajectories;
    /// Summed log-probabilities of the chosen actions, [P x 1]; the forced
    /// first customer is not counted.
    ad::Var log_prob;
};

/// First customers usable as POMO starts: 1..pomo_size, skipping any the
/// initial mask forbids.
std::vector<std::size_t> pomo_starts(const RoutingEnv& env, std::size_t pomo_size);

/// Runs one trajectory per start. `view` is what the model sees (e.g. an
/// augmented copy); masks and costs always use `inst` and `dist`.
TrajectoryBatch run_trajectories(const Instance& inst, const DistanceMatrix& dist, const Instance& view, const Model& m,
                                 const ForwardOptions& fo, const std::vector<std::size_t>& starts, DecodeMode mode,
                                 std::uint64_t seed, std::uint64_t stream_base = 0);

/// Log-probability of fixed action sequences (each starting 0, start, ...).
ad::Var sequence_log_prob(const Instance& inst, const DistanceMatrix& dist, const Model& m, const ForwardOptions& fo,
                          const std::vector<std::vector<std::size_t>>& actions);

struct RolloutResult {
    Solution best;
    std::vector<Trajectory> trajectories;
};

RolloutResult rollout(const Instance& inst, const Model& m, const DecodePolicy& policy);
RolloutResult rollout(const Instance& inst, const DistanceMatrix& dist, const Model& m, const DecodePolicy& policy);

/// The eight symmetries of the unit square, identity first.
std::vector<Instance> augment8(const Instance& inst);
Point dihedral(Point p, int k);

} // namespace rwvrp
