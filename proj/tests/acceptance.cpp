// Acceptance checks: one PASS/FAIL line per criterion, nonzero exit on any failure.
// Optional arguments select criteria by number, e.g. `acceptance 2 7`.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "rwvrp/bench.hpp"
#include "rwvrp/decoding.hpp"
#include "rwvrp/oracle.hpp"
#include "rwvrp/parallel.hpp"
#include "rwvrp/rng.hpp"
#include "rwvrp/training.hpp"

using namespace rwvrp;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, double a) {
    char b[128];
    std::snprintf(b, sizeof b, f, a);
    return b;
}

// ---------------------------------------------------------------- 1
Outcome dense_equivalence() {
    double worst = 0.0;
    for (std::uint64_t s = 0; s < 50; ++s) {
        const Instance inst = generate(Variant::VRP, 20, {}, 500 + s);
        ModelConfig cfg = ModelConfig::toy(Variant::VRP);
        cfg.cluster_size = 21;
        cfg.rounds = 1;
        cfg.smoothing = false;
        const Model m(cfg, 700 + s);
        ForwardOptions dense;
        dense.dense_attention = true;
        const ad::Var a = encode(inst, m), b = encode(inst, m, dense);
        double diff = 0.0, scale = 0.0;
        for (std::size_t i = 0; i < a->size(); ++i) {
            diff = std::max(diff, std::abs(a->val[i] - b->val[i]));
            scale = std::max(scale, std::abs(b->val[i]));
        }
        worst = std::max(worst, diff / scale);
    }
    return {worst <= 1e-6, "max relative deviation " + fmt("%.3e", worst) + " over 50 VRP20 instances"};
}

// ---------------------------------------------------------------- 2
Outcome pair_count_law() {
    std::size_t cases = 0, bad = 0;
    for (std::size_t n : {50, 100, 500, 1000})
        for (std::size_t M : {10, 20, 50, 100})
            for (int R : {1, 2, 4})
                for (bool smooth : {false, true}) {
                    const Instance inst = generate(Variant::VRP, n, {}, n * 7 + M);
                    const ClusterIndex idx = build_cluster_index(inst.customers, inst.depot, M, R, smooth);
                    const std::uint64_t rounds = static_cast<std::uint64_t>(R) * (smooth ? 2 : 1);
                    const std::uint64_t clusters = (n + M - 1) / M;
                    const std::uint64_t law = rounds * clusters * M * M;
                    ++cases;
                    if (idx.num_rounds() != rounds || measured_pair_count(idx) != law || attention_pair_count(idx) != law) ++bad;
                }
    return {bad == 0, std::to_string(cases - bad) + "/" + std::to_string(cases) + " configurations match rounds*ceil(n/M)*M^2"};
}

// ---------------------------------------------------------------- 3
Outcome feasibility() {
    std::ostringstream detail;
    bool ok = true;
    for (Variant v : {Variant::VRPTW, Variant::EVRPCS, Variant::VRPRS}) {
        std::size_t violations = 0, rollouts = 0;
        for (std::uint64_t s = 0; s < 1000; ++s) {
            const Instance inst = generate(v, 30, {}, 9000 + s);
            const DistanceMatrix d = build_distance_matrix(inst);
            const RoutingEnv env(inst, d);
            Rng rng(s, static_cast<std::uint64_t>(v) + 31);
            for (int r = 0; r < 10; ++r, ++rollouts) {
                RolloutState st = env.init_state();
                std::vector<std::size_t> opts;
                bool stuck = false;
                while (!env.is_done(st)) {
                    const FeasibilityMask m = env.feasible_mask(st);
                    opts.clear();
                    for (std::size_t j = 0; j < m.selectable.size(); ++j)
                        if (m.selectable[j]) opts.push_back(j);
                    if (opts.empty() || st.action_log.size() > 10 * inst.num_nodes()) {
                        stuck = true;
                        break;
                    }
                    env.step_inplace(st, opts[rng.below(opts.size())]);
                }
                if (stuck || !validate_solution(inst, d, {st.action_log, 0.0}).ok()) ++violations;
            }
        }
        detail << to_string(v) << ' ' << violations << '/' << rollouts << "  ";
        ok = ok && violations == 0;
    }
    return {ok, "violating rollouts: " + detail.str()};
}

// ---------------------------------------------------------------- 4
Outcome gradient() {
    const Instance inst = generate(Variant::VRP, 10, {}, 77);
    const DistanceMatrix d = build_distance_matrix(inst);
    Model m(ModelConfig::toy(Variant::VRP), 78);
    ForwardOptions fo;
    const auto batch = run_trajectories(inst, d, inst, m, fo, {1, 2, 3, 4, 5, 6, 7, 8}, DecodeMode::Sample, 79);
    std::vector<std::vector<std::size_t>> seqs;
    std::vector<double> costs;
    for (const auto& t : batch.trajectories) {
        seqs.push_back(t.actions);
        costs.push_back(t.cost);
    }
    auto fn = [&] { return pomo_loss(costs, sequence_log_prob(inst, d, m, fo, seqs)); };
    const double err = ad::finite_diff_check(fn, m.params().tensors(), 1e-6, 200, 80);
    return {err <= 1e-4, "max relative error " + fmt("%.3e", err) + " over 200 coordinates"};
}

// ---------------------------------------------------------------- 5
// Independent reference for variants without optional nodes: every customer
// order, cut optimally into routes that a direct simulation accepts.
double giant_tour_optimum(const Instance& inst, const DistanceMatrix& d) {
    const std::size_t n = inst.num_customers();
    auto route_cost = [&](const std::vector<std::size_t>& perm, std::size_t a, std::size_t b) {
        int load = 0;
        double t = 0.0, len = 0.0;
        std::size_t prev = 0;
        for (std::size_t k = a; k < b; ++k) {
            const std::size_t c = perm[k];
            load += inst.demands[c - 1];
            if (load > inst.capacity) return std::numeric_limits<double>::infinity();
            len += d(prev, c);
            if (inst.variant == Variant::VRPTW) {
                const double s_prev = prev == 0 ? inst.service_times[0] : inst.service_times[prev];
                t = std::max(t + s_prev + d(prev, c), inst.time_windows[c].early);
                if (t > inst.time_windows[c].late + kFeasTol) return std::numeric_limits<double>::infinity();
            }
            prev = c;
        }
        if (inst.variant == Variant::VRPTW && t + inst.service_times[prev] + d(prev, 0) > inst.time_windows[0].late + kFeasTol)
            return std::numeric_limits<double>::infinity();
        return len + d(prev, 0);
    };
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 1);
    double best = std::numeric_limits<double>::infinity();
    do {
        std::vector<double> f(n + 1, std::numeric_limits<double>::infinity());
        f[0] = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j <= n; ++j) f[j] = std::min(f[j], f[i] + route_cost(perm, i, j));
        best = std::min(best, f[n]);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

// Independent reference for optional-node variants: exhaustive search over
// customer orders with, between stops, nothing / a depot return / one optional
// node / an optional node then the depot, at most `per_route` optional visits
// per route. Legs are checked by a direct resource simulation.
struct TokenSearch {
    const Instance& inst;
    const DistanceMatrix& d;
    int per_route;
    double best = std::numeric_limits<double>::infinity();
    std::vector<std::size_t> best_seq;
    std::vector<std::size_t> seq{0};
    std::vector<bool> used;

    struct St {
        std::size_t cur = 0;
        int load = 0;
        double res = 0.0;
        int opt = 0;
        double cost = 0.0;
        std::size_t visited = 0;
    };

    bool move(St& s, std::size_t to) const {
        const double leg = d(s.cur, to);
        if (leg <= 0.0 && s.cur != to) return false;
        s.res -= leg;
        if (s.res < -kFeasTol) return false;
        s.cost += leg;
        s.cur = to;
        if (to == 0) {
            s.load = 0;
            s.res = inst.resource_max;
            s.opt = 0;
        } else if (inst.is_optional(to)) {
            ++s.opt;
            if (inst.variant == Variant::EVRPCS) s.res = inst.resource_max;
            else s.load = 0;
        } else {
            s.load += inst.demands[to - 1];
            if (s.load > inst.capacity) return false;
            ++s.visited;
        }
        return true;
    }

    void go(const St& s) {
        const std::size_t n = inst.num_customers();
        if (s.visited == n) {
            // close the tour: depot, or one optional node then depot
            St a = s;
            if (move(a, 0)) record(a, {0});
            if (s.opt < per_route)
                for (std::size_t o = n + 1; o < inst.num_nodes(); ++o) {
                    St b = s;
                    if (move(b, o) && move(b, 0)) record(b, {o, 0});
                }
            return;
        }
        for (std::size_t c = 1; c <= n; ++c) {
            if (used[c]) continue;
            used[c] = true;
            for (int kind = 0; kind < 4; ++kind) {
                // 0: direct, 1: via depot, 2: via optional, 3: via optional then depot
                if (kind > 0 && s.cur == 0) break;
                const std::size_t first_o = kind >= 2 ? n + 1 : 0;
                const std::size_t last_o = kind >= 2 ? inst.num_nodes() : 1;
                for (std::size_t o = first_o; o < last_o; ++o) {
                    St t = s;
                    std::vector<std::size_t> path;
                    bool ok = true;
                    if (kind >= 2) {
                        ok = t.opt < per_route && move(t, o);
                        path.push_back(o);
                    }
                    if (ok && (kind == 1 || kind == 3)) {
                        ok = move(t, 0);
                        path.push_back(0);
                    }
                    if (ok) ok = move(t, c);
                    path.push_back(c);
                    if (!ok) continue;
                    seq.insert(seq.end(), path.begin(), path.end());
                    go(t);
                    seq.resize(seq.size() - path.size());
                }
            }
            used[c] = false;
        }
    }

    void record(const St& s, std::vector<std::size_t> tail) {
        if (s.cost < best) {
            best = s.cost;
            best_seq = seq;
            best_seq.insert(best_seq.end(), tail.begin(), tail.end());
        }
    }
};

Outcome oracle_agreement() {
    std::ostringstream detail;
    bool ok = true;
    OracleLimits open;
    open.prune = false;
    for (Variant v : {Variant::VRP, Variant::VRPTW, Variant::AVRP, Variant::EVRPCS, Variant::VRPRS}) {
        const bool opt = has_optional_nodes(v);
        GenConfig g;
        g.charging_stations = 2;
        g.replenishment_stops = 2;
        std::size_t agree = 0, clean = 0, independent = 0, count = 200;
        for (std::uint64_t s = 0; s < count; ++s) {
            const std::size_t n = opt ? 4 + s % 2 : 5 + s % 3;  // 4..5 or 5..7
            const Instance inst = generate(v, n, g, 40000 + s);
            const DistanceMatrix d = build_distance_matrix(inst);
            const OracleResult a = brute_force(inst, d), b = brute_force(inst, d, open);
            if (a.optimal_cost == b.optimal_cost) ++agree;
            if (validate_solution(inst, d, a.optimal_solution).ok() && validate_solution(inst, d, b.optimal_solution).ok()) ++clean;
            double ref;
            if (opt) {
                TokenSearch ts{inst, d, open.max_optional_per_route};
                ts.used.assign(n + 1, false);
                TokenSearch::St st;
                st.res = inst.resource_max;
                ts.go(st);
                ref = ts.best;
                if (!validate_solution(inst, d, {ts.best_seq, 0.0}).ok()) ref = -1.0;
            } else {
                ref = giant_tour_optimum(inst, d);
            }
            if (std::abs(ref - a.optimal_cost) <= 1e-9 * std::max(1.0, ref)) ++independent;
        }
        detail << to_string(v) << ' ' << agree << '/' << clean << '/' << independent << "  ";
        ok = ok && agree == count && clean == count && independent == count;
    }
    return {ok, "pruned=unpruned / validator-clean / independent enumeration, of 200 each: " + detail.str()};
}

// ---------------------------------------------------------------- 6
Outcome training_improvement() {
    TrainConfig cfg;  // VRP20 toy defaults: 50 epochs x 1000 instances, pomo 8
    cfg.threads = default_threads();
    const TrainResult r = train(cfg);
    const double first = r.metrics.front().greedy_val_cost, last = r.metrics.back().greedy_val_cost;

    TrainConfig none = cfg;
    none.epochs = 0;
    const Model untrained = train(none).model;
    double g0 = 0.0, g1 = 0.0;
    const int count = 50;
    for (int i = 0; i < count; ++i) {
        const Instance inst = generate(Variant::VRP, 7, {}, 123000 + static_cast<std::uint64_t>(i));
        const double opt = brute_force(inst).optimal_cost;
        DecodePolicy pol;
        pol.pomo_size = 7;
        g1 += gap(rollout(inst, r.model, pol).best.cost, opt);
        g0 += gap(rollout(inst, untrained, pol).best.cost, opt);
    }
    g0 /= count;
    g1 /= count;
    const bool ok = last <= 0.9 * first && g1 <= 25.0;
    return {ok, "greedy validation " + fmt("%.4f", first) + " -> " + fmt("%.4f", last) + " (ratio " + fmt("%.3f", last / first) +
                    "), n=7 oracle gap untrained " + fmt("%.2f%%", g0) + " trained " + fmt("%.2f%%", g1)};
}

// ---------------------------------------------------------------- 7
Outcome architecture() {
    bool ok = true;
    std::ostringstream detail;
    for (Variant v : {Variant::VRP, Variant::VRPTW, Variant::EVRPCS, Variant::VRPRS, Variant::AVRP}) {
        const Model m(ModelConfig::large(v), 0);
        const std::size_t total = param_total(m);
        const double share = edge_share(m);
        ok = ok && total >= 1200000 && total <= 1500000 && share >= 0.05 && share <= 0.10;
        detail << to_string(v) << ' ' << total << " (" << fmt("%.2f%%", 100 * share) << ")  ";
    }
    return {ok, "large-preset totals and edge share: " + detail.str()};
}

// ---------------------------------------------------------------- 8
Outcome avrp_generator() {
    const Instance base = generate(Variant::VRP, 100, {}, 3);
    const Instance inst = generate_avrp(base, 50, 0.2, 3);
    const std::vector<double>& m = *inst.asym_matrix;
    const std::size_t nt = inst.num_nodes();
    std::size_t perturbed = 0, out_of_band = 0, other = 0;
    for (std::size_t i = 0; i < nt; ++i)
        for (std::size_t j = 0; j < nt; ++j) {
            if (i == j) continue;
            const double e = euclidean(inst.coord(i), inst.coord(j));
            const double ratio = m[i * nt + j] / e;
            if (m[i * nt + j] == e) continue;
            if (ratio > 1.0 && ratio <= 1.2) ++perturbed;
            else if (ratio > 1.0) ++out_of_band;
            else ++other;
        }
    // reverse entries of perturbed pairs stay Euclidean, on further seeds too
    std::size_t reverse_touched = 0;
    for (std::uint64_t s = 0; s < 20; ++s) {
        const Instance a = generate_avrp(generate(Variant::VRP, 100, {}, s), 50, 0.2, s);
        const std::vector<double>& am = *a.asym_matrix;
        std::size_t count = 0;
        for (std::size_t i = 0; i < nt; ++i)
            for (std::size_t j = 0; j < nt; ++j) {
                if (i == j || am[i * nt + j] == euclidean(a.coord(i), a.coord(j))) continue;
                ++count;
                if (am[j * nt + i] != euclidean(a.coord(j), a.coord(i))) ++reverse_touched;
            }
        if (count != 50) ++reverse_touched;
    }
    const bool ok = perturbed == 50 && out_of_band == 0 && other == 0 && reverse_touched == 0;
    return {ok, std::to_string(perturbed) + " entries in (1, 1.2], " + std::to_string(out_of_band + other) +
                    " others changed, " + std::to_string(reverse_touched) + " perturbed reverse entries over 20 more seeds"};
}

// ---------------------------------------------------------------- 9
Outcome heatmap_identities() {
    double lo = 0.0, hi = 0.0;
    bool in_range = true;
    for (Variant v : {Variant::VRP, Variant::VRPTW, Variant::EVRPCS, Variant::VRPRS, Variant::AVRP})
        for (std::uint64_t s = 0; s < 10; ++s) {
            const Instance inst = generate(v, 20, {}, 600 + s);
            const DistanceMatrix d = build_distance_matrix(inst);
            Model m(ModelConfig::toy(v), 610 + s);
            for (auto& x : m.params().get("heat.W3")->val) x *= 1.0 + 10.0 * static_cast<double>(s);
            const Encoded enc = encode_instance(inst, d, m);
            for (double x : enc.heat->val) {
                lo = std::min(lo, x);
                hi = std::max(hi, x);
                in_range = in_range && x >= -1.0 && x <= 1.0;
            }
        }

    bool same = true;
    for (Variant v : {Variant::VRP, Variant::VRPTW, Variant::AVRP})
        for (std::uint64_t s = 0; s < 10; ++s) {
            const Instance inst = generate(v, 20, {}, 620 + s);
            const DistanceMatrix d = build_distance_matrix(inst);
            Model m(ModelConfig::toy(v), 630 + s);
            for (const char* name : {"heat.W3", "heat.b3"}) {
                auto& w = m.params().get(name)->val;
                std::fill(w.begin(), w.end(), 0.0);
            }
            ForwardOptions on, off;
            off.use_heatmap = false;
            std::vector<std::size_t> starts(20);
            std::iota(starts.begin(), starts.end(), 1);
            for (DecodeMode mode : {DecodeMode::Greedy, DecodeMode::Sample}) {
                const auto a = run_trajectories(inst, d, inst, m, on, starts, mode, s);
                const auto b = run_trajectories(inst, d, inst, m, off, starts, mode, s);
                for (std::size_t k = 0; k < starts.size(); ++k)
                    same = same && a.trajectories[k].actions == b.trajectories[k].actions && a.log_prob->val[k] == b.log_prob->val[k];
            }
        }

    // The optional-node columns are shifted by -2 r / R_max relative to customers.
    double worst = 0.0;
    for (Variant v : {Variant::EVRPCS, Variant::VRPRS}) {
        const Instance inst = generate(v, 10, {}, 640);
        const DistanceMatrix d = build_distance_matrix(inst);
        Model m(ModelConfig::toy(v), 641);
        for (const char* name : {"heat.W3", "heat.b3"}) {
            auto& w = m.params().get(name)->val;
            std::fill(w.begin(), w.end(), 0.0);
        }
        ForwardOptions off;
        off.use_heatmap = false;
        const Encoded with = encode_instance(inst, d, m), without = encode_instance(inst, d, m, off);
        const RoutingEnv env(inst, d);
        RolloutState st = env.init_state();
        env.step_inplace(st, 1);
        for (double r : {0.0, 0.5 * inst.resource_max, inst.resource_max}) {
            st.resource = r;
            const std::size_t o = inst.num_customers() + 1;
            const FeasibilityMask all{std::vector<bool>(inst.num_nodes(), true)};
            FeasibilityMask mask = all;
            mask.selectable[st.current] = false;
            const auto p = decode_step(st, with, inst, m, mask), q = decode_step(st, without, inst, m, mask);
            const double shift = std::log(p[o] / p[2]) - std::log(q[o] / q[2]);
            worst = std::max({worst, std::abs(shift - (-2.0 * r / inst.resource_max)),
                              std::abs(optional_heat_term(st, inst) - (-2.0 * r / inst.resource_max))});
        }
    }
    const bool ok = in_range && same && worst <= 1e-9;
    return {ok, "heatmap range [" + fmt("%.4f", lo) + ", " + fmt("%.4f", hi) + "], zeroed heatmap decodes " +
                    (same ? "identically" : "DIFFERENTLY") + ", optional-term error " + fmt("%.2e", worst)};
}

// ---------------------------------------------------------------- 10
std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

bool run_pipeline(const fs::path& dir) {
    const std::string cli = RWVRP_CLI_PATH;
    fs::remove_all(dir);
    fs::create_directories(dir);
    const std::string d = dir.string();
    const std::vector<std::string> cmds = {
        cli + " gen --variant VRP --n 7 --count 5 --seed 11 --out " + d + "/data",
        cli + " train --variant VRP --n 10 --epochs 1 --instances 64 --pomo 8 --validation-size 8 --seed 3 --out " + d +
            "/model.ckpt --metrics " + d + "/metrics.csv",
        cli + " solve --instance " + d + "/data/VRP_n7_s11.json --checkpoint " + d + "/model.ckpt --pomo 7 --augment --out " + d +
            "/solution.json",
        cli + " bench --dataset " + d + "/data --checkpoint " + d + "/model.ckpt --pomo 7 --augment --reference oracle --out-csv " +
            d + "/report.csv --out-json " + d + "/report.json --timing-csv " + d + "/timing.csv",
    };
    for (const auto& c : cmds)
        if (std::system((c + " > /dev/null 2>&1").c_str()) != 0) return false;
    return true;
}

Outcome determinism() {
    const fs::path root = fs::temp_directory_path() / ("rwvrp_acceptance_" + std::to_string(::getpid()));
    const fs::path a = root / "a", b = root / "b";
    if (!run_pipeline(a) || !run_pipeline(b)) {
        fs::remove_all(root);
        return {false, "a pipeline command failed"};
    }
    std::size_t compared = 0, differing = 0;
    for (const auto& e : fs::recursive_directory_iterator(a)) {
        if (!e.is_regular_file() || e.path().filename() == "timing.csv") continue;
        const fs::path other = b / fs::relative(e.path(), a);
        ++compared;
        if (!fs::exists(other) || slurp(e.path()) != slurp(other)) ++differing;
    }
    fs::remove_all(root);
    return {compared >= 9 && differing == 0,
            std::to_string(compared) + " output files compared across two runs, " + std::to_string(differing) + " differ"};
}

struct Criterion {
    int id;
    const char* name;
    double limit_seconds;
    std::function<Outcome()> run;
};

} // namespace

int main(int argc, char** argv) {
    const std::vector<Criterion> all = {
        {1, "dense equivalence", 60, dense_equivalence},
        {2, "pair-count law", 60, pair_count_law},
        {3, "feasibility by construction", 600, feasibility},
        {4, "gradient correctness", 300, gradient},
        {5, "oracle agreement", 600, oracle_agreement},
        {6, "training improvement", 1800, training_improvement},
        {7, "architecture accounting", 1, architecture},
        {8, "AVRP generator", 1, avrp_generator},
        {9, "heatmap/fusion identities", 60, heatmap_identities},
        {10, "determinism", 300, determinism},
    };
    std::set<int> pick;
    for (int i = 1; i < argc; ++i) pick.insert(std::atoi(argv[i]));

    int failed = 0;
    for (const auto& c : all) {
        if (!pick.empty() && !pick.count(c.id)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool in_time = secs <= c.limit_seconds;
        const bool pass = o.pass && in_time;
        if (!pass) ++failed;
        std::printf("%s criterion %d (%s): %s [%.2f s%s]\n", pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), secs,
                    in_time ? "" : ", over the time limit");
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
