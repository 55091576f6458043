#include "rwvrp/decoding.hpp"

#include <cmath>
#include <stdexcept>

#include "rwvrp/rng.hpp"

namespace rwvrp {

std::vector<std::size_t> pomo_starts(const RoutingEnv& env, std::size_t pomo_size) {
    const std::size_t n = env.instance().num_customers();
    if (pomo_size == 0) throw std::invalid_argument("pomo_size must be at least 1");
    if (pomo_size > n) throw std::invalid_argument("pomo_size exceeds the number of customers");
    const FeasibilityMask m0 = env.feasible_mask(env.init_state());
    std::vector<std::size_t> starts;
    for (std::size_t j = 1; j <= pomo_size; ++j)
        if (m0.selectable[j]) starts.push_back(j);
    return starts;
}

namespace {

TrajectoryBatch run_impl(const Instance& inst, const DistanceMatrix& dist, const Instance& view, const Model& m,
                         const ForwardOptions& fo, const std::vector<std::size_t>& starts, DecodeMode mode,
                         std::uint64_t seed, std::uint64_t stream_base,
                         const std::vector<std::vector<std::size_t>>* forced) {
    const RoutingEnv env(inst, dist);
    const std::size_t P = starts.size();
    const std::size_t N = inst.num_nodes();
    if (P == 0) throw std::invalid_argument("run_trajectories: no start customers");
    const Encoded enc = encode_instance(view, dist, m, fo);

    std::vector<RolloutState> states(P, env.init_state());
    for (std::size_t k = 0; k < P; ++k) env.step_inplace(states[k], starts[k]);
    std::vector<Rng> rngs;
    for (std::size_t k = 0; k < P; ++k) rngs.emplace_back(seed, stream_base + k);

    std::vector<const RolloutState*> ptrs(P);
    for (std::size_t k = 0; k < P; ++k) ptrs[k] = &states[k];
    std::vector<std::uint8_t> mask(P * N);
    std::vector<std::size_t> chosen(P);
    std::vector<double> weight(P);
    FeasibilityMask fm;
    ad::Var total;
    std::size_t step = 1;
    for (;;) {
        bool any_active = false;
        for (std::size_t k = 0; k < P; ++k) {
            std::uint8_t* row = mask.data() + k * N;
            if (env.is_done(states[k])) {
                std::fill(row, row + N, 0);
                row[0] = 1;  // finished rows idle at the depot with zero weight
                weight[k] = 0.0;
                continue;
            }
            env.feasible_mask(states[k], fm);
            if (!fm.any()) throw std::logic_error("empty feasibility mask in a reachable state");
            for (std::size_t j = 0; j < N; ++j) row[j] = fm.selectable[j] ? 1 : 0;
            weight[k] = 1.0;
            any_active = true;
        }
        if (!any_active) break;
        const ad::Var lp = decode_logp(enc, inst, m, ptrs, mask);
        ++step;
        for (std::size_t k = 0; k < P; ++k) {
            const std::uint8_t* row = mask.data() + k * N;
            const double* l = lp->val.data() + k * N;
            if (weight[k] == 0.0) {
                chosen[k] = 0;
                continue;
            }
            std::size_t pick = N;
            if (forced) {
                const auto& seq = (*forced)[k];
                if (step >= seq.size()) throw std::invalid_argument("forced sequence ended before completion");
                pick = seq[step];
                if (pick >= N || !row[pick]) throw InfeasibleAction("forced action is masked");
            } else if (mode == DecodeMode::Greedy) {
                for (std::size_t j = 0; j < N; ++j)
                    if (row[j] && (pick == N || l[j] > l[pick])) pick = j;
            } else {
                const double u = rngs[k].uniform();
                double acc = 0.0;
                for (std::size_t j = 0; j < N; ++j) {
                    if (!row[j]) continue;
                    pick = j;
                    acc += std::exp(l[j]);
                    if (u < acc) break;
                }
            }
            chosen[k] = pick;
        }
        const ad::Var picked = ad::pick(lp, chosen, weight);
        total = total ? ad::add(total, picked) : picked;
        for (std::size_t k = 0; k < P; ++k)
            if (weight[k] != 0.0) env.step_inplace(states[k], chosen[k]);
    }
    if (!total) total = ad::zeros(P, 1);

    TrajectoryBatch out;
    out.log_prob = total;
    for (std::size_t k = 0; k < P; ++k) {
        Trajectory t;
        t.actions = states[k].action_log;
        t.start = starts[k];
        Solution s{t.actions, 0.0};
        t.cost = solution_cost(inst, s, dist);
        out.trajectories.push_back(std::move(t));
    }
    return out;
}

} // namespace

TrajectoryBatch run_trajectories(const Instance& inst, const DistanceMatrix& dist, const Instance& view, const Model& m,
                                 const ForwardOptions& fo, const std::vector<std::size_t>& starts, DecodeMode mode,
                                 std::uint64_t seed, std::uint64_t stream_base) {
    return run_impl(inst, dist, view, m, fo, starts, mode, seed, stream_base, nullptr);
}

ad::Var sequence_log_prob(const Instance& inst, const DistanceMatrix& dist, const Model& m, const ForwardOptions& fo,
                          const std::vector<std::vector<std::size_t>>& actions) {
    std::vector<std::size_t> starts;
    for (const auto& a : actions) {
        if (a.size() < 2 || a[0] != 0) throw std::invalid_argument("sequence_log_prob: sequences must start at the depot");
        starts.push_back(a[1]);
    }
    return run_impl(inst, dist, inst, m, fo, starts, DecodeMode::Greedy, 0, 0, &actions).log_prob;
}

Point dihedral(Point p, int k) {
    const double x = p.x, y = p.y;
    switch (k) {
    case 0: return {x, y};
    case 1: return {y, x};
    case 2: return {1 - x, y};
    case 3: return {x, 1 - y};
    case 4: return {1 - x, 1 - y};
    case 5: return {y, 1 - x};
    case 6: return {1 - y, x};
    case 7: return {1 - y, 1 - x};
    default: throw std::out_of_range("dihedral: index must lie in [0, 8)");
    }
}

std::vector<Instance> augment8(const Instance& inst) {
    if (inst.variant == Variant::AVRP) throw std::invalid_argument("augment8: AVRP costs do not follow coordinate transforms");
    std::vector<Instance> out;
    for (int k = 0; k < 8; ++k) {
        Instance t = inst;
        t.depot = dihedral(inst.depot, k);
        for (auto& c : t.customers) c = dihedral(c, k);
        for (auto& o : t.optional_nodes) o = dihedral(o, k);
        out.push_back(std::move(t));
    }
    return out;
}

RolloutResult rollout(const Instance& inst, const Model& m, const DecodePolicy& policy) {
    return rollout(inst, build_distance_matrix(inst), m, policy);
}

RolloutResult rollout(const Instance& inst, const DistanceMatrix& dist, const Model& m, const DecodePolicy& policy) {
    ad::NoGrad ng;
    const RoutingEnv env(inst, dist);
    const std::vector<std::size_t> starts = pomo_starts(env, policy.pomo_size);
    if (starts.empty()) throw std::logic_error("rollout: no feasible start customer");
    const bool aug = policy.augment && inst.variant != Variant::AVRP;
    const std::vector<Instance> views = aug ? augment8(inst) : std::vector<Instance>{inst};
    ForwardOptions fo;
    fo.tau = policy.tau;

    RolloutResult res;
    for (std::size_t a = 0; a < views.size(); ++a) {
        TrajectoryBatch b = run_trajectories(inst, dist, views[a], m, fo, starts, policy.mode, policy.seed, a * starts.size());
        for (auto& t : b.trajectories) {
            t.augmentation = a;
            res.trajectories.push_back(std::move(t));
        }
    }
    std::size_t best = 0;
    for (std::size_t k = 1; k < res.trajectories.size(); ++k)
        if (res.trajectories[k].cost < res.trajectories[best].cost) best = k;
    res.best = {res.trajectories[best].actions, res.trajectories[best].cost};
    const ValidationReport rep = validate_solution(inst, dist, res.best);
    if (!rep.ok()) throw std::logic_error("rollout produced an infeasible solution:\n" + rep.to_string());
    return res;
}

} // namespace rwvrp
