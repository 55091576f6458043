#include "rwvrp/routing_env.hpp"

#include <algorithm>
#include <sstream>

namespace rwvrp {

bool FeasibilityMask::any() const { return std::find(selectable.begin(), selectable.end(), true) != selectable.end(); }

std::size_t FeasibilityMask::count() const {
    return static_cast<std::size_t>(std::count(selectable.begin(), selectable.end(), true));
}

std::vector<std::vector<std::size_t>> Solution::routes() const {
    std::vector<std::vector<std::size_t>> out;
    std::vector<std::size_t> cur;
    for (std::size_t k = 1; k < actions.size(); ++k) {
        if (actions[k] == 0) {
            if (!cur.empty()) out.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(actions[k]);
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

RoutingEnv::RoutingEnv(const Instance& inst, const DistanceMatrix& dist) : inst_(inst), dist_(dist) {
    if (dist.size() != inst.num_nodes()) throw std::invalid_argument("RoutingEnv: distance matrix does not match instance");
    const std::size_t n = inst.num_customers();
    nearest_facility_.assign(inst.num_nodes(), 0.0);
    for (std::size_t j = 1; j <= n; ++j) {
        double best = dist(j, 0);
        if (inst.variant == Variant::EVRPCS)
            for (std::size_t c = n + 1; c < inst.num_nodes(); ++c) best = std::min(best, dist(j, c));
        nearest_facility_[j] = best;
    }
}

RolloutState RoutingEnv::init_state() const {
    RolloutState s;
    s.current = 0;
    s.visited.assign(inst_.num_customers() + 1, false);
    s.resource = has_resource(inst_.variant) ? inst_.resource_max : 0.0;
    s.action_log.push_back(0);
    return s;
}

bool RoutingEnv::is_done(const RolloutState& s) const {
    return s.current == 0 && s.num_visited == inst_.num_customers();
}

FeasibilityMask RoutingEnv::feasible_mask(const RolloutState& s) const {
    FeasibilityMask m;
    feasible_mask(s, m);
    return m;
}

void RoutingEnv::feasible_mask(const RolloutState& s, FeasibilityMask& out) const {
    const std::size_t nt = num_nodes();
    const std::size_t n = inst_.num_customers();
    if (s.current >= nt) throw std::out_of_range("feasible_mask: current node out of range");
    out.selectable.assign(nt, false);
    if (is_done(s)) return;

    const std::size_t cur = s.current;
    const Variant v = inst_.variant;
    const double service_cur = v == Variant::VRPTW ? inst_.service_times[cur] : 0.0;

    for (std::size_t j = 1; j <= n; ++j) {
        if (s.visited[j]) continue;
        if (s.load_used + inst_.demands[j - 1] > inst_.capacity) continue;
        const double leg = dist_(cur, j);
        switch (v) {
        case Variant::EVRPCS:
            if (!(s.resource >= leg + nearest_facility_[j])) continue;
            break;
        case Variant::VRPRS:
            if (!(s.resource >= leg + dist_(j, 0))) continue;
            break;
        case Variant::VRPTW: {
            const double start = std::max(s.time + service_cur + leg, inst_.time_windows[j].early);
            if (start > inst_.time_windows[j].late + kFeasTol) continue;
            if (start + inst_.service_times[j] + dist_(j, 0) > inst_.time_windows[0].late + kFeasTol) continue;
            break;
        }
        case Variant::VRP:
        case Variant::AVRP:
            break;
        }
        out.selectable[j] = true;
    }

    if (cur != 0) {
        bool ok = true;
        if (has_resource(v)) ok = s.resource + kFeasTol >= dist_(cur, 0);
        if (v == Variant::VRPTW) ok = s.time + service_cur + dist_(cur, 0) <= inst_.time_windows[0].late + kFeasTol;
        out.selectable[0] = ok;
    }

    // Optional-node visits only ever follow a customer; from the depot or
    // another optional node they cannot change the vehicle state.
    if (has_optional_nodes(v) && inst_.is_customer(cur)) {
        for (std::size_t c = n + 1; c < nt; ++c) {
            const double leg = dist_(cur, c);
            if (v == Variant::EVRPCS)
                out.selectable[c] = s.resource + kFeasTol >= leg;
            else
                out.selectable[c] = s.resource >= leg + dist_(c, 0);
        }
    }
}

void RoutingEnv::apply(RolloutState& s, std::size_t node) const {
    const Variant v = inst_.variant;
    const double leg = dist_(s.current, node);
    if (has_resource(v)) s.resource = std::max(0.0, s.resource - leg);
    if (node == 0) {
        s.load_used = 0;
        s.time = 0.0;
        s.optional_in_route = 0;
        if (has_resource(v)) s.resource = inst_.resource_max;
    } else if (inst_.is_customer(node)) {
        s.visited[node] = true;
        ++s.num_visited;
        s.load_used += inst_.demands[node - 1];
        if (v == Variant::VRPTW)
            s.time = std::max(s.time + inst_.service_times[s.current] + leg, inst_.time_windows[node].early);
    } else {
        ++s.optional_in_route;
        if (v == Variant::EVRPCS) s.resource = inst_.resource_max;
        if (v == Variant::VRPRS) s.load_used = 0;
    }
    s.current = node;
    ++s.step_count;
    s.action_log.push_back(node);
}

void RoutingEnv::step_inplace(RolloutState& s, std::size_t node) const {
    if (node >= num_nodes()) throw InfeasibleAction("step: node " + std::to_string(node) + " out of range");
    const FeasibilityMask m = feasible_mask(s);
    if (!m.selectable[node])
        throw InfeasibleAction("step: node " + std::to_string(node) + " is masked at step " + std::to_string(s.step_count));
    apply(s, node);
}

RolloutState RoutingEnv::step(const RolloutState& s, std::size_t node) const {
    RolloutState next = s;
    step_inplace(next, node);
    return next;
}

RolloutState init_state(const Instance& inst) {
    const DistanceMatrix d = build_distance_matrix(inst);
    return RoutingEnv(inst, d).init_state();
}

FeasibilityMask feasible_mask(const RolloutState& s, const Instance& inst, const DistanceMatrix& dist) {
    return RoutingEnv(inst, dist).feasible_mask(s);
}

RolloutState step(const RolloutState& s, std::size_t node, const Instance& inst, const DistanceMatrix& dist) {
    return RoutingEnv(inst, dist).step(s, node);
}

// ---------------------------------------------------------------------------

std::string ValidationReport::to_string() const {
    std::ostringstream os;
    for (const auto& v : violations) os << v.family << " @" << v.index << ": " << v.detail << "\n";
    return os.str();
}

ValidationReport validate_solution(const Instance& inst, const Solution& sol) {
    return validate_solution(inst, build_distance_matrix(inst), sol);
}

ValidationReport validate_solution(const Instance& inst, const DistanceMatrix& dist, const Solution& sol) {
    ValidationReport rep;
    auto add = [&](std::string fam, std::size_t idx, std::string detail) {
        rep.violations.push_back({std::move(fam), idx, std::move(detail)});
    };
    const auto& a = sol.actions;
    const std::size_t nt = inst.num_nodes();
    const std::size_t n = inst.num_customers();
    const Variant v = inst.variant;
    if (a.empty()) {
        add("depot", 0, "empty action sequence");
        return rep;
    }
    if (a.front() != 0) add("depot", 0, "sequence does not start at the depot");
    if (a.back() != 0) add("depot", a.size() - 1, "sequence does not end at the depot");

    std::vector<int> visits(n + 1, 0);
    int load = 0;
    double resource = inst.resource_max;
    double time = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        const std::size_t node = a[k];
        if (node >= nt) {
            add("flow", k, "node " + std::to_string(node) + " out of range");
            continue;
        }
        if (inst.is_optional(node) && !has_optional_nodes(v)) add("flow", k, "optional node in a variant without optional nodes");
        if (k == 0) continue;
        const std::size_t prev = a[k - 1];
        if (prev >= nt) continue;
        if (prev == node) {
            add("flow", k, "zero-length leg " + std::to_string(prev) + "->" + std::to_string(node));
            continue;
        }
        const double leg = dist(prev, node);
        if (has_resource(v)) {
            resource -= leg;
            if (resource < -kFeasTol)
                add("resource", k, "resource " + std::to_string(resource) + " after leg " + std::to_string(prev) + "->" + std::to_string(node));
            resource = std::max(0.0, resource);
        }
        if (v == Variant::VRPTW) {
            const double arrival = time + inst.service_times[prev] + leg;
            if (node == 0) {
                if (arrival > inst.time_windows[0].late + kFeasTol) add("time-window", k, "depot reached after its closing time");
            } else if (inst.is_customer(node)) {
                time = std::max(arrival, inst.time_windows[node].early);
                if (time > inst.time_windows[node].late + kFeasTol)
                    add("time-window", k, "service at node " + std::to_string(node) + " starts after its window closes");
            }
        }
        if (node == 0) {
            load = 0;
            time = 0.0;
            resource = inst.resource_max;
        } else if (inst.is_customer(node)) {
            if (++visits[node] > 1) add("visit-exactly-once", k, "customer " + std::to_string(node) + " visited again");
            load += inst.demands[node - 1];
            if (load > inst.capacity) add("capacity", k, "load " + std::to_string(load) + " exceeds capacity");
        } else {
            if (v == Variant::EVRPCS) resource = inst.resource_max;
            if (v == Variant::VRPRS) load = 0;
        }
    }
    for (std::size_t j = 1; j <= n; ++j)
        if (visits[j] == 0) add("visit-exactly-once", j, "customer " + std::to_string(j) + " never visited");
    return rep;
}

double solution_cost(const Instance& inst, const Solution& sol, const DistanceMatrix& dist) {
    const auto& a = sol.actions;
    if (a.empty() || a.front() != 0 || a.back() != 0)
        throw std::invalid_argument("solution_cost: action sequence must start and end at the depot");
    double total = 0.0;
    for (std::size_t k = 1; k < a.size(); ++k) {
        if (a[k] >= inst.num_nodes() || a[k - 1] >= inst.num_nodes())
            throw std::invalid_argument("solution_cost: node index out of range");
        total += dist(a[k - 1], a[k]);
    }
    return total;
}

nlohmann::json solution_to_json(const Solution& sol, const Instance& inst) {
    nlohmann::json j;
    j["actions"] = sol.actions;
    j["cost"] = sol.cost;
    j["variant"] = std::string(to_string(inst.variant));
    j["instance_seed"] = inst.seed;
    return j;
}

Solution solution_from_json(const nlohmann::json& j) {
    Solution s;
    s.actions = j.at("actions").get<std::vector<std::size_t>>();
    s.cost = j.value("cost", 0.0);
    return s;
}

} // namespace rwvrp
