#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rwvrp/decoding.hpp"
#include "rwvrp/oracle.hpp"

namespace rwvrp {

enum class ReferenceKind { None, Oracle, File };
enum class BenchMethod { Model, Oracle };

struct BenchConfig {
    std::string dataset_dir;
    BenchMethod method = BenchMethod::Model;
    std::string checkpoint;  // required for BenchMethod::Model
    DecodePolicy policy;
    ReferenceKind reference = ReferenceKind::None;
    /// JSON object mapping instance id to reference objective.
    std::string reference_file;
    OracleLimits oracle_limits;
    std::size_t threads = 1;
};

struct BenchRow {
    std::string instance_id;
    Variant variant = Variant::VRP;
    std::size_t n = 0;
    std::string method;
    double objective = 0.0;
    std::optional<double> gap;
    double seconds = 0.0;
};

struct BenchReport {
    std::vector<BenchRow> rows;
    double mean_objective = 0.0;
    std::optional<double> mean_gap;
    double total_seconds = 0.0;
    std::string version;
    std::string config_hash;
    std::uint64_t seed = 0;
};

/// Instance files (*.json, *.vrp) of a directory in filename order.
std::vector<std::string> dataset_files(const std::string& dir);
/// Throws std::runtime_error naming the instance when a solution fails validation.
BenchReport bench(const BenchConfig& cfg);

/// Deterministic table (no timings): one row per instance plus a "mean" row.
std::string report_csv(const BenchReport& r);
std::string timing_csv(const BenchReport& r);
nlohmann::json report_json(const BenchReport& r);

struct CpaProfileRow {
    std::size_t n = 0;
    std::uint64_t dense_pairs = 0;
    std::uint64_t cpa_pairs = 0;
    double ratio = 0.0;  // min(1, cpa / dense)
    double reduction_percent = 0.0;
    std::uint64_t dense_augmented_pairs = 0;  // (n+1)²
    std::uint64_t augmented_pairs = 0;        // real members + depot per cluster
    double reduction_augmented_percent = 0.0;
};

std::vector<CpaProfileRow> cpa_profile(const std::vector<std::size_t>& sizes, std::size_t cluster_size, int rounds,
                                       bool smoothing, std::uint64_t seed = 0);
std::string cpa_profile_csv(const std::vector<CpaProfileRow>& rows);

inline constexpr const char* kVersion = "0.1.0";

} // namespace rwvrp
