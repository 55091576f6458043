#pragma once

#include <cstdint>
#include <vector>

#include <json.hpp>

#include "rwvrp/instance.hpp"
#include "rwvrp/tensor.hpp"

namespace rwvrp {

/// Customer positions relative to the depot. Index k refers to customer node k+1.
struct PolarCoords {
    std::vector<double> r;
    std::vector<double> theta;      // [0, 2π)
    std::vector<double> r_bar;      // min-max normalized radius
    std::vector<double> theta_bar;  // theta / 2π
};

PolarCoords to_polar(const std::vector<Point>& customers, Point depot);
/// alpha·θ̄ + (1 − alpha)·r̄ per customer.
std::vector<double> partition_score(const PolarCoords& polar, double alpha);
std::vector<double> alpha_schedule(int rounds);
/// Rotates left by ⌊M/2⌋.
std::vector<std::size_t> smooth_shift(std::vector<std::size_t> sorted, std::size_t cluster_size);

/// Partition of customer nodes into fixed-size clusters for every round.
struct ClusterIndex {
    std::size_t num_customers = 0;
    std::size_t cluster_size = 0;
    /// rounds[r][c] holds exactly cluster_size node indices; padding slots hold 0 (the depot).
    std::vector<std::vector<std::vector<std::size_t>>> rounds;
    std::vector<std::vector<std::vector<bool>>> padding;
    std::vector<double> alpha_values;
    std::vector<bool> smoothed;

    std::size_t num_rounds() const { return rounds.size(); }
    std::size_t clusters_per_round() const { return rounds.empty() ? 0 : rounds[0].size(); }
    std::size_t padding_slots() const;
};

ClusterIndex build_cluster_index(const std::vector<Point>& customers, Point depot, std::size_t cluster_size, int rounds,
                                 bool smoothing);

/// rounds · ⌈n/M⌉ · M², from the index shape.
std::uint64_t attention_pair_count(const ClusterIndex& index);
/// Σ over clusters of (slot count)², by iterating the index.
std::uint64_t measured_pair_count(const ClusterIndex& index);
/// Pairs actually scored: each cluster's real members plus the shared depot.
std::uint64_t augmented_pair_count(const ClusterIndex& index);

nlohmann::json cluster_index_to_json(const ClusterIndex& index);

struct AttentionParams {
    ad::Var wq, wk, wv;  // d x d, no bias
    ad::Var wo, bo;      // d x d, 1 x d
    std::size_t heads = 1;
};

/// H has one row per node (depot first, then customers). Attention runs inside
/// each cluster together with the depot; per-round outputs are averaged.
ad::Var clustered_attention(const ad::Var& h, const ClusterIndex& index, const AttentionParams& p);
/// Full attention over all rows of H.
ad::Var dense_attention(const ad::Var& h, const AttentionParams& p);

} // namespace rwvrp
