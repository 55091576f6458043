#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace rwvrp {

enum class Variant { VRP, VRPTW, EVRPCS, VRPRS, AVRP };

std::string_view to_string(Variant v);
Variant variant_from_string(std::string_view s);
bool has_optional_nodes(Variant v);
bool has_resource(Variant v);

struct Point {
    double x = 0.0;
    double y = 0.0;
    bool operator==(const Point&) const = default;
};

struct TimeWindow {
    double early = 0.0;
    double late = 0.0;
    bool operator==(const TimeWindow&) const = default;
};

/// A routing instance. Node indexing used everywhere in the library:
///   0            depot
///   1 .. n       customers
///   n+1 .. n+f   optional nodes (charging stations / replenishment stops)
struct Instance {
    Variant variant = Variant::VRP;
    Point depot;
    std::vector<Point> customers;
    std::vector<int> demands;
    int capacity = 0;
    std::vector<Point> optional_nodes;
    double resource_max = 0.0;
    /// VRPTW only: one window and service time per depot/customer node (index 0 = depot).
    std::vector<TimeWindow> time_windows;
    std::vector<double> service_times;
    double horizon = 0.0;
    /// AVRP only: row-major (n+1+f)^2 travel costs.
    std::optional<std::vector<double>> asym_matrix;
    std::uint64_t seed = 0;
    /// Coordinates were multiplied by this factor on import (1 for generated data).
    double scale = 1.0;
    std::string name;

    std::size_t num_customers() const { return customers.size(); }
    std::size_t num_optional() const { return optional_nodes.size(); }
    std::size_t num_nodes() const { return 1 + customers.size() + optional_nodes.size(); }
    /// Coordinates of any node index.
    Point coord(std::size_t node) const;
    bool is_customer(std::size_t node) const { return node >= 1 && node <= customers.size(); }
    bool is_optional(std::size_t node) const { return node > customers.size() && node < num_nodes(); }

    bool operator==(const Instance&) const = default;
};

/// Throws std::invalid_argument describing the first broken invariant.
void check_instance(const Instance& inst);

struct GenConfig {
    /// Unset selects the size-dependent default (50 / 100 / 200).
    std::optional<int> capacity;
    int charging_stations = 4;
    double battery_range = 2.0;
    int replenishment_stops = 5;
    double driving_range = 4.0;
    double horizon = 4.6;
    double window_min = 0.15;
    double window_max = 0.2;
    double service_min = 0.15;
    double service_max = 0.2;
    int min_demand = 1;
    int max_demand = 10;
};

int default_capacity(std::size_t n);
/// Asymmetry pair count: 50 / 200 / 400 at n = 100 / 500 / 1000.
int default_avrp_beta(std::size_t n);

Instance generate(Variant variant, std::size_t n, const GenConfig& config, std::uint64_t seed);
Instance generate_avrp(const Instance& base, int beta, double gamma, std::uint64_t seed);

class DistanceMatrix {
public:
    DistanceMatrix() = default;
    DistanceMatrix(std::size_t n_total, std::vector<double> values, bool symmetric);

    double operator()(std::size_t i, std::size_t j) const { return values_[i * n_ + j]; }
    std::size_t size() const { return n_; }
    bool symmetric() const { return symmetric_; }
    const std::vector<double>& values() const { return values_; }

private:
    std::size_t n_ = 0;
    std::vector<double> values_;
    bool symmetric_ = true;
};

DistanceMatrix build_distance_matrix(const Instance& inst);
double euclidean(Point a, Point b);

// Native JSON format.
nlohmann::json to_json(const Instance& inst);
Instance instance_from_json(const nlohmann::json& j);
std::string serialize(const Instance& inst);
Instance parse_native(std::string_view text);
Instance load_instance(const std::string& path);
void save_instance(const Instance& inst, const std::string& path);

// CVRPLib reader.
struct ParseError : std::runtime_error {
    ParseError(const std::string& what, std::size_t line);
    std::size_t line;
};
Instance parse_cvrplib(std::string_view text);

} // namespace rwvrp
