#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "rwvrp/decoding.hpp"

namespace rwvrp {

/// Shared-baseline REINFORCE: mean over trajectories of (cost_k − mean cost)·log_prob_k.
/// log_prob is [P x 1]; throws for P < 2.
ad::Var pomo_loss(const std::vector<double>& costs, const ad::Var& log_prob);

struct TrainConfig {
    Variant variant = Variant::VRP;
    std::size_t n = 20;
    int epochs = 50;
    std::size_t instances_per_epoch = 1000;
    std::size_t batch_size = 8;
    std::size_t pomo_size = 8;
    double learning_rate = 1e-4;
    double grad_clip = 1.0;
    std::uint64_t seed = 1;
    std::size_t validation_size = 64;
    std::uint64_t validation_seed = 0x7a11da7e;
    std::size_t threads = 1;
    GenConfig gen;
    ModelConfig model = ModelConfig::toy(Variant::VRP);
};

struct EpochMetrics {
    int epoch = 0;
    double sampled_cost = 0.0;
    double greedy_val_cost = 0.0;
    double tau = 1.0;
};

struct TrainResult {
    Model model;
    /// Row 0 is the untrained model (sampled_cost 0); rows 1..epochs follow each epoch.
    std::vector<EpochMetrics> metrics;
};

std::vector<Instance> validation_set(const TrainConfig& cfg);
/// Mean best-of-starts greedy cost (no augmentation).
double greedy_validation_cost(const Model& m, const std::vector<Instance>& set, std::size_t pomo_size, double tau,
                              std::size_t threads = 1);

using EpochCallback = std::function<void(const EpochMetrics&)>;
TrainResult train(const TrainConfig& cfg, const EpochCallback& on_epoch = {});

std::string metrics_csv(const std::vector<EpochMetrics>& rows);

} // namespace rwvrp
