#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "rwvrp/cpa.hpp"
#include "rwvrp/instance.hpp"
#include "rwvrp/routing_env.hpp"
#include "rwvrp/tensor.hpp"

namespace rwvrp {

struct ModelConfig {
    Variant variant = Variant::VRP;
    std::size_t d = 16;
    std::size_t heads = 2;
    std::size_t layers = 2;
    std::size_t ff = 64;
    std::size_t edge_dim = 8;
    /// Neighbours per node for the edge module; 0 keeps every pair.
    std::size_t knn = 0;
    std::size_t cluster_size = 10;
    int rounds = 2;
    bool smoothing = true;
    std::size_t heatmap_hidden = 32;
    double logit_clip = 10.0;

    static ModelConfig toy(Variant v);
    static ModelConfig large(Variant v);
    /// Throws std::invalid_argument on inconsistent dimensions.
    void validate() const;
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Per-node input width for customers of a variant.
std::size_t customer_feature_dim(Variant v);
/// Context entries appended to the decoder query after the current embedding.
std::size_t context_dim(Variant v);

class Model {
public:
    Model(const ModelConfig& cfg, std::uint64_t seed);
    Model(const ModelConfig& cfg, ParamSet params);

    const ModelConfig& config() const { return cfg_; }
    ParamSet& params() { return params_; }
    const ParamSet& params() const { return params_; }
    const ad::Var& p(const std::string& name) const { return params_.get(name); }
    Model clone() const { return Model(cfg_, params_.clone()); }

private:
    ModelConfig cfg_;
    ParamSet params_;
};

/// Declares every parameter with its shape (values zero).
ParamSet declare_params(const ModelConfig& cfg);

struct ParamGroup {
    std::string module;
    std::size_t count;
};
/// Counts grouped as input, encoder, optional, edge, heatmap, decoder.
std::vector<ParamGroup> param_breakdown(const Model& m);
std::size_t param_total(const Model& m);
/// Share of the edge-aware module (edge embedding + heatmap MLP) in the total.
double edge_share(const Model& m);

/// Directed kNN edges among depot and customers.
struct EdgeSet {
    std::size_t num_nodes = 0;  // depot + customers
    std::vector<std::size_t> src, dst;
    std::vector<double> features;  // row-major, one row of edge_dim per edge
    std::size_t feature_dim = 0;
    std::size_t size() const { return src.size(); }
};

EdgeSet build_edge_set(const Instance& inst, const DistanceMatrix& dist, std::size_t knn, std::size_t feature_dim);

struct ForwardOptions {
    double tau = 1.0;
    /// Gumbel noise for the optional-node fusion, n x f row-major; empty = zeros.
    std::vector<double> gumbel_noise;
    bool use_heatmap = true;
    /// Replace clustered attention by full attention (reference path).
    bool dense_attention = false;
};

ad::Var node_features(const Instance& inst);
/// Depot + customer embeddings after the encoder stack, [(n+1) x d].
ad::Var encode(const Instance& inst, const Model& m, const ForwardOptions& opt = {});
ad::Var encode(const Instance& inst, const Model& m, const ClusterIndex& index, const ForwardOptions& opt);
/// Optional-node embeddings after one self-attention block, [f x d].
ad::Var encode_optional(const Instance& inst, const Model& m);
/// Fusion weights over optional nodes for every customer, [n x f] (no grad).
std::vector<double> fusion_weights(const ad::Var& h_nodes, const ad::Var& h_opt, const Model& m, double tau,
                                   const std::vector<double>& noise);
/// Adds gated Gumbel-softmax mixtures of H_o to the customer rows.
ad::Var fuse(const ad::Var& h_nodes, const ad::Var& h_opt, const Model& m, double tau, const std::vector<double>& noise);
ad::Var edge_embed(const ad::Var& h_nodes, const EdgeSet& edges, const Model& m);
/// Dense N x N matrix (N counts all nodes); zero outside the stored edges.
ad::Var heatmap(const ad::Var& h_edges, const EdgeSet& edges, const Model& m, std::size_t total_nodes);

/// Everything the decoder needs for one instance, computed once.
struct Encoded {
    ad::Var nodes;    // concat(H_n', H_o), one row per node index
    ad::Var keys;     // glimpse keys
    ad::Var values;   // glimpse values
    ad::Var heat;     // N x N, or null when disabled
    std::size_t num_customers = 0;
    std::size_t total_nodes = 0;
};

Encoded encode_instance(const Instance& inst, const DistanceMatrix& dist, const Model& m, const ForwardOptions& opt = {});

/// Query context: remaining capacity fraction then the normalized resource / time.
std::vector<double> query_context(const RolloutState& s, const Instance& inst);
/// The heatmap term of optional-node columns: -2 · resource / R_max.
double optional_heat_term(const RolloutState& s, const Instance& inst);

/// Log-probabilities for a batch of states, [P x N]; mask is P x N (1 = selectable).
ad::Var decode_logp(const Encoded& enc, const Instance& inst, const Model& m, const std::vector<const RolloutState*>& states,
                    const std::vector<std::uint8_t>& mask);
/// Probability vector over all nodes for a single state.
std::vector<double> decode_step(const RolloutState& s, const Encoded& enc, const Instance& inst, const Model& m,
                                const FeasibilityMask& mask);

/// Temperature in effect at a given epoch.
double tau_schedule(int epoch);

void save_checkpoint(const Model& m, const std::string& path);
Model load_checkpoint(const std::string& path);
std::string checkpoint_text(const Model& m);
Model checkpoint_from_text(const std::string& text);
/// FNV-1a over parameter names, shapes and value bits.
std::uint64_t params_hash(const ParamSet& p);

} // namespace rwvrp
