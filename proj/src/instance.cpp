#include "rwvrp/instance.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "rwvrp/rng.hpp"

namespace rwvrp {

namespace {

enum Stream : std::uint64_t {
    kBaseStream = 1,
    kStationStream = 2,
    kStopStream = 3,
    kWindowStream = 4,
    kAsymStream = 5,
};

Point random_point(Rng& rng) {
    Point p;
    p.x = rng.uniform();
    p.y = rng.uniform();
    return p;
}

bool in_unit_square(Point p) { return p.x >= 0.0 && p.x <= 1.0 && p.y >= 0.0 && p.y <= 1.0; }

[[noreturn]] void invalid(const std::string& msg) { throw std::invalid_argument(msg); }

} // namespace

std::string_view to_string(Variant v) {
    switch (v) {
    case Variant::VRP: return "VRP";
    case Variant::VRPTW: return "VRPTW";
    case Variant::EVRPCS: return "EVRPCS";
    case Variant::VRPRS: return "VRPRS";
    case Variant::AVRP: return "AVRP";
    }
    return "?";
}

Variant variant_from_string(std::string_view s) {
    std::string up(s);
    std::transform(up.begin(), up.end(), up.begin(), [](unsigned char c) { return std::toupper(c); });
    if (up == "VRP" || up == "CVRP") return Variant::VRP;
    if (up == "VRPTW") return Variant::VRPTW;
    if (up == "EVRPCS") return Variant::EVRPCS;
    if (up == "VRPRS") return Variant::VRPRS;
    if (up == "AVRP") return Variant::AVRP;
    invalid("unknown variant '" + std::string(s) + "'");
}

bool has_optional_nodes(Variant v) { return v == Variant::EVRPCS || v == Variant::VRPRS; }
bool has_resource(Variant v) { return v == Variant::EVRPCS || v == Variant::VRPRS; }

Point Instance::coord(std::size_t node) const {
    if (node == 0) return depot;
    if (node <= customers.size()) return customers[node - 1];
    const std::size_t k = node - customers.size() - 1;
    if (k >= optional_nodes.size()) throw std::out_of_range("node index out of range");
    return optional_nodes[k];
}

double euclidean(Point a, Point b) { return std::hypot(a.x - b.x, a.y - b.y); }

void check_instance(const Instance& inst) {
    const std::size_t n = inst.num_customers();
    if (n == 0) invalid("instance has no customers");
    if (inst.demands.size() != n) invalid("demands/customers size mismatch");
    if (inst.capacity <= 0) invalid("capacity must be positive");
    if (!in_unit_square(inst.depot)) invalid("depot outside [0,1]^2");
    for (std::size_t i = 0; i < n; ++i) {
        if (!in_unit_square(inst.customers[i])) invalid("customer " + std::to_string(i + 1) + " outside [0,1]^2");
        if (inst.demands[i] < 1) invalid("customer " + std::to_string(i + 1) + " has nonpositive demand");
        if (inst.demands[i] > inst.capacity) invalid("customer " + std::to_string(i + 1) + " demand exceeds capacity");
    }
    for (const Point& p : inst.optional_nodes)
        if (!in_unit_square(p)) invalid("optional node outside [0,1]^2");
    if (has_optional_nodes(inst.variant)) {
        if (!(inst.resource_max > 0.0)) invalid("resource_max must be positive for " + std::string(to_string(inst.variant)));
    } else if (!inst.optional_nodes.empty()) {
        invalid("optional nodes present for a variant without them");
    }
    if (inst.variant == Variant::VRPTW) {
        if (inst.time_windows.size() != n + 1 || inst.service_times.size() != n + 1)
            invalid("VRPTW requires one window and service time per depot/customer node");
        if (!(inst.horizon > 0.0)) invalid("VRPTW horizon must be positive");
        for (std::size_t i = 0; i <= n; ++i) {
            const TimeWindow tw = inst.time_windows[i];
            if (tw.early > tw.late) invalid("time window with early > late at node " + std::to_string(i));
            if (tw.early < 0.0 || tw.late > inst.horizon) invalid("time window outside [0,T] at node " + std::to_string(i));
            if (inst.service_times[i] < 0.0) invalid("negative service time at node " + std::to_string(i));
        }
    } else if (!inst.time_windows.empty() || !inst.service_times.empty()) {
        invalid("time windows present for a variant without them");
    }
    if (inst.variant == Variant::AVRP) {
        if (!inst.asym_matrix) invalid("AVRP instance without asym_matrix");
        const std::size_t nt = inst.num_nodes();
        const auto& m = *inst.asym_matrix;
        if (m.size() != nt * nt) invalid("asym_matrix has wrong size");
        for (std::size_t i = 0; i < nt; ++i) {
            if (m[i * nt + i] != 0.0) invalid("asym_matrix diagonal must be zero");
            for (std::size_t j = 0; j < nt; ++j)
                if (!(m[i * nt + j] >= 0.0)) invalid("asym_matrix entries must be nonnegative");
        }
    } else if (inst.asym_matrix) {
        invalid("asym_matrix present for a symmetric variant");
    }
}

int default_capacity(std::size_t n) {
    if (n <= 100) return 50;
    if (n <= 500) return 100;
    return 200;
}

int default_avrp_beta(std::size_t n) {
    if (n <= 100) return std::max(1, static_cast<int>(n / 2));
    return static_cast<int>(std::lround(0.4 * static_cast<double>(n)));
}

namespace {

void generate_time_windows(Instance& inst, const GenConfig& cfg) {
    const double T = cfg.horizon;
    auto in_open_horizon = [T](double lo, double hi) { return lo > 0.0 && hi < T && lo <= hi; };
    if (!(T > 0.0)) invalid("VRPTW horizon must be positive");
    if (!in_open_horizon(cfg.window_min, cfg.window_max)) invalid("VRPTW window length range must lie inside (0, T)");
    if (!in_open_horizon(cfg.service_min, cfg.service_max)) invalid("VRPTW service time range must lie inside (0, T)");

    Rng rng(inst.seed, kWindowStream);
    const std::size_t n = inst.num_customers();
    inst.horizon = T;
    inst.time_windows.assign(n + 1, {});
    inst.service_times.assign(n + 1, 0.0);
    inst.time_windows[0] = {0.0, T};
    for (std::size_t i = 1; i <= n; ++i) {
        const double service = rng.uniform(cfg.service_min, cfg.service_max);
        const double width = rng.uniform(cfg.window_min, cfg.window_max);
        const double travel = euclidean(inst.depot, inst.customers[i - 1]);
        // Window start is reachable directly from the depot, and serving at the
        // window start still leaves time to return before the horizon.
        const double lo = travel;
        const double hi = T - travel - service - width;
        if (hi < lo) invalid("VRPTW horizon too short for customer " + std::to_string(i));
        const double early = rng.uniform(lo, hi);
        inst.service_times[i] = service;
        inst.time_windows[i] = {early, early + width};
    }
}

bool all_customers_reachable_from_depot(const Instance& inst) {
    const double range = inst.resource_max;
    for (const Point& c : inst.customers) {
        double nearest = euclidean(c, inst.depot);
        for (const Point& s : inst.optional_nodes) nearest = std::min(nearest, euclidean(c, s));
        if (euclidean(inst.depot, c) + nearest > range) return false;
    }
    return true;
}

} // namespace

Instance generate(Variant variant, std::size_t n, const GenConfig& config, std::uint64_t seed) {
    if (n == 0) invalid("generate: n must be at least 1");
    if (config.capacity && *config.capacity <= 0) invalid("generate: capacity must be positive");
    if (config.min_demand < 1 || config.max_demand < config.min_demand) invalid("generate: bad demand range");
    Instance inst;
    inst.variant = variant == Variant::AVRP ? Variant::VRP : variant;
    inst.seed = seed;
    inst.capacity = config.capacity.value_or(default_capacity(n));
    if (config.max_demand > inst.capacity) invalid("generate: max demand exceeds capacity");

    Rng base(seed, kBaseStream);
    inst.depot = random_point(base);
    inst.customers.resize(n);
    for (auto& c : inst.customers) c = random_point(base);
    inst.demands.resize(n);
    for (auto& q : inst.demands) q = base.uniform_int(config.min_demand, config.max_demand);

    switch (variant) {
    case Variant::VRP:
    case Variant::AVRP:
        break;
    case Variant::VRPTW:
        generate_time_windows(inst, config);
        break;
    case Variant::EVRPCS: {
        if (config.charging_stations < 1) invalid("generate: EVRPCS needs at least one charging station");
        if (!(config.battery_range > 0.0)) invalid("generate: battery range must be positive");
        inst.resource_max = config.battery_range;
        Rng rng(seed, kStationStream);
        // Station placement is redrawn until every customer passes the step-0
        // mask; customer data stays identical to the other variants.
        constexpr int kMaxAttempts = 100000;
        int attempt = 0;
        do {
            if (++attempt > kMaxAttempts) invalid("generate: could not place charging stations covering all customers");
            inst.optional_nodes.assign(static_cast<std::size_t>(config.charging_stations), {});
            for (auto& s : inst.optional_nodes) s = random_point(rng);
        } while (!all_customers_reachable_from_depot(inst));
        break;
    }
    case Variant::VRPRS: {
        if (config.replenishment_stops < 1) invalid("generate: VRPRS needs at least one replenishment stop");
        if (!(config.driving_range > 0.0)) invalid("generate: driving range must be positive");
        inst.resource_max = config.driving_range;
        Rng rng(seed, kStopStream);
        inst.optional_nodes.assign(static_cast<std::size_t>(config.replenishment_stops), {});
        for (auto& s : inst.optional_nodes) s = random_point(rng);
        if (!all_customers_reachable_from_depot(inst)) invalid("generate: driving range too short for this instance");
        break;
    }
    }
    if (variant == Variant::AVRP) return generate_avrp(inst, default_avrp_beta(n), 0.2, seed);
    return inst;
}

Instance generate_avrp(const Instance& base, int beta, double gamma, std::uint64_t seed) {
    if (base.variant != Variant::VRP) invalid("generate_avrp: base instance must be VRP");
    const std::size_t n = base.num_customers();
    if (beta < 1) invalid("generate_avrp: beta must be at least 1");
    if (static_cast<std::size_t>(beta) > n) invalid("generate_avrp: beta exceeds customer count");
    if (n < 2) invalid("generate_avrp: need at least two customers");
    if (!(gamma > 0.0)) invalid("generate_avrp: gamma must be positive");

    Instance inst = base;
    inst.variant = Variant::AVRP;
    const std::size_t nt = inst.num_nodes();
    std::vector<double> m(nt * nt, 0.0);
    for (std::size_t i = 0; i < nt; ++i)
        for (std::size_t j = 0; j < nt; ++j)
            if (i != j) m[i * nt + j] = euclidean(inst.coord(i), inst.coord(j));

    Rng rng(seed, kAsymStream);
    const auto b = static_cast<std::size_t>(beta);
    auto sample_without_replacement = [&](std::vector<std::size_t>& pool) {
        for (std::size_t k = 0; k < b; ++k) {
            const std::size_t r = k + static_cast<std::size_t>(rng.below(pool.size() - k));
            std::swap(pool[k], pool[r]);
        }
    };
    std::vector<std::size_t> origins(n), dests(n);
    std::iota(origins.begin(), origins.end(), 1);
    std::iota(dests.begin(), dests.end(), 1);
    sample_without_replacement(origins);
    sample_without_replacement(dests);

    for (std::size_t k = 0; k < b; ++k) {
        if (dests[k] != origins[k]) continue;
        if (b < n) {
            // Redraw from the destinations not yet used (positions b..n-1).
            std::size_t r;
            do {
                r = b + static_cast<std::size_t>(rng.below(n - b));
            } while (dests[r] == origins[k]);
            std::swap(dests[k], dests[r]);
        } else {
            // Every customer is already a destination: trade with another pair.
            for (std::size_t o = 0; o < b; ++o) {
                if (o != k && dests[o] != origins[k] && dests[k] != origins[o]) {
                    std::swap(dests[k], dests[o]);
                    break;
                }
            }
        }
    }
    // Origins are distinct, so ordered pairs are too; but (i,j) and (j,i) may both
    // be drawn, which would perturb a reverse entry. Redraw such destinations.
    auto reversed = [&](std::size_t k, std::size_t d) {
        for (std::size_t o = 0; o < k; ++o)
            if (origins[o] == d && dests[o] == origins[k]) return true;
        return false;
    };
    for (std::size_t k = 0; k < b; ++k) {
        for (std::size_t tries = 0; reversed(k, dests[k]) && tries < 64 * n; ++tries) {
            const std::size_t d = 1 + static_cast<std::size_t>(rng.below(n));
            if (d != origins[k]) dests[k] = d;
        }
    }
    for (std::size_t k = 0; k < b; ++k) {
        const double factor = 1.0 + gamma * rng.uniform_open_closed();
        m[origins[k] * nt + dests[k]] *= factor;
    }
    inst.asym_matrix = std::move(m);
    inst.seed = seed;
    return inst;
}

DistanceMatrix::DistanceMatrix(std::size_t n_total, std::vector<double> values, bool symmetric)
    : n_(n_total), values_(std::move(values)), symmetric_(symmetric) {
    if (values_.size() != n_ * n_) throw std::invalid_argument("DistanceMatrix: wrong value count");
}

DistanceMatrix build_distance_matrix(const Instance& inst) {
    const std::size_t nt = inst.num_nodes();
    if (inst.asym_matrix) {
        const auto& m = *inst.asym_matrix;
        bool sym = true;
        for (std::size_t i = 0; i < nt && sym; ++i)
            for (std::size_t j = i + 1; j < nt; ++j)
                if (m[i * nt + j] != m[j * nt + i]) {
                    sym = false;
                    break;
                }
        return DistanceMatrix(nt, m, sym);
    }
    std::vector<double> v(nt * nt, 0.0);
    for (std::size_t i = 0; i < nt; ++i)
        for (std::size_t j = i + 1; j < nt; ++j) {
            const double d = euclidean(inst.coord(i), inst.coord(j));
            v[i * nt + j] = d;
            v[j * nt + i] = d;
        }
    return DistanceMatrix(nt, std::move(v), true);
}

// ---------------------------------------------------------------------------
// Native JSON format

namespace {
nlohmann::json point_json(Point p) { return nlohmann::json::array({p.x, p.y}); }
Point point_from(const nlohmann::json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }
} // namespace

nlohmann::json to_json(const Instance& inst) {
    using nlohmann::json;
    json j;
    j["format_version"] = 1;
    j["name"] = inst.name;
    j["variant"] = std::string(to_string(inst.variant));
    j["seed"] = inst.seed;
    j["scale"] = inst.scale;
    j["depot"] = point_json(inst.depot);
    json cs = json::array();
    for (const Point& p : inst.customers) cs.push_back(point_json(p));
    j["customers"] = cs;
    j["demands"] = inst.demands;
    j["capacity"] = inst.capacity;
    json os = json::array();
    for (const Point& p : inst.optional_nodes) os.push_back(point_json(p));
    j["optional_nodes"] = os;
    j["resource_max"] = inst.resource_max;
    json tws = json::array();
    for (const TimeWindow& tw : inst.time_windows) tws.push_back(json::array({tw.early, tw.late}));
    j["time_windows"] = tws;
    j["service_times"] = inst.service_times;
    j["horizon"] = inst.horizon;
    if (inst.asym_matrix) {
        const std::size_t nt = inst.num_nodes();
        json rows = json::array();
        for (std::size_t i = 0; i < nt; ++i)
            rows.push_back(std::vector<double>(inst.asym_matrix->begin() + static_cast<std::ptrdiff_t>(i * nt),
                                               inst.asym_matrix->begin() + static_cast<std::ptrdiff_t>((i + 1) * nt)));
        j["asym_matrix"] = rows;
    } else {
        j["asym_matrix"] = nullptr;
    }
    return j;
}

Instance instance_from_json(const nlohmann::json& j) {
    if (j.at("format_version").get<int>() != 1) throw std::invalid_argument("unsupported instance format_version");
    Instance inst;
    inst.name = j.value("name", std::string());
    inst.variant = variant_from_string(j.at("variant").get<std::string>());
    inst.seed = j.at("seed").get<std::uint64_t>();
    inst.scale = j.value("scale", 1.0);
    inst.depot = point_from(j.at("depot"));
    for (const auto& p : j.at("customers")) inst.customers.push_back(point_from(p));
    inst.demands = j.at("demands").get<std::vector<int>>();
    inst.capacity = j.at("capacity").get<int>();
    for (const auto& p : j.at("optional_nodes")) inst.optional_nodes.push_back(point_from(p));
    inst.resource_max = j.at("resource_max").get<double>();
    for (const auto& tw : j.at("time_windows")) inst.time_windows.push_back({tw.at(0).get<double>(), tw.at(1).get<double>()});
    inst.service_times = j.at("service_times").get<std::vector<double>>();
    inst.horizon = j.at("horizon").get<double>();
    if (!j.at("asym_matrix").is_null()) {
        std::vector<double> m;
        for (const auto& row : j.at("asym_matrix"))
            for (const auto& v : row) m.push_back(v.get<double>());
        inst.asym_matrix = std::move(m);
    }
    check_instance(inst);
    return inst;
}

std::string serialize(const Instance& inst) { return to_json(inst).dump(1) + "\n"; }

Instance parse_native(std::string_view text) { return instance_from_json(nlohmann::json::parse(text)); }

Instance load_instance(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open instance file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string text = ss.str();
    // Anything that is not a JSON document is treated as a CVRPLib record.
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && text[first] == '{') return parse_native(text);
    return parse_cvrplib(text);
}

void save_instance(const Instance& inst, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write instance file " + path);
    out << serialize(inst);
}

} // namespace rwvrp
