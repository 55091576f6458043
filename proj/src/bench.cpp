#include "rwvrp/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "rwvrp/parallel.hpp"

namespace rwvrp {

namespace fs = std::filesystem;

std::vector<std::string> dataset_files(const std::string& dir) {
    if (!fs::is_directory(dir)) throw std::runtime_error("dataset directory not found: " + dir);
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        const auto ext = e.path().extension().string();
        if (ext == ".json" || ext == ".vrp") files.push_back(e.path().string());
    }
    std::sort(files.begin(), files.end());
    return files;
}

namespace {

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

std::string fnv_hex(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

} // namespace

BenchReport bench(const BenchConfig& cfg) {
    const auto files = dataset_files(cfg.dataset_dir);
    if (files.empty()) throw std::runtime_error("no instances in " + cfg.dataset_dir);
    std::vector<Instance> insts;
    for (const auto& f : files) insts.push_back(load_instance(f));
    for (const auto& i : insts)
        if (i.variant != insts[0].variant) throw std::runtime_error("bench: dataset mixes variants");

    std::optional<Model> model;
    std::string fingerprint = std::string("method=") + (cfg.method == BenchMethod::Model ? "model" : "oracle");
    if (cfg.method == BenchMethod::Model) {
        if (cfg.checkpoint.empty()) throw std::invalid_argument("bench: model method needs a checkpoint");
        model.emplace(load_checkpoint(cfg.checkpoint));
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(params_hash(model->params())));
        fingerprint += std::string(";params=") + buf;
    }
    fingerprint += ";pomo=" + std::to_string(cfg.policy.pomo_size) + ";augment=" + std::to_string(cfg.policy.augment) +
                   ";mode=" + (cfg.policy.mode == DecodeMode::Greedy ? "greedy" : "sample") +
                   ";seed=" + std::to_string(cfg.policy.seed);

    nlohmann::json ref_costs;
    if (cfg.reference == ReferenceKind::File) {
        std::ifstream in(cfg.reference_file);
        if (!in) throw std::runtime_error("cannot read reference file " + cfg.reference_file);
        ref_costs = nlohmann::json::parse(in);
    }

    std::vector<BenchRow> rows(insts.size());
    parallel_for(insts.size(), cfg.threads, [&](std::size_t i, std::size_t) {
        const Instance& inst = insts[i];
        const DistanceMatrix dist = build_distance_matrix(inst);
        BenchRow& row = rows[i];
        row.instance_id = fs::path(files[i]).stem().string();
        row.variant = inst.variant;
        row.n = inst.num_customers();
        row.method = cfg.method == BenchMethod::Model ? "model" : "oracle";
        const auto t0 = std::chrono::steady_clock::now();
        Solution sol;
        if (cfg.method == BenchMethod::Model) {
            DecodePolicy pol = cfg.policy;
            pol.pomo_size = std::min(pol.pomo_size, inst.num_customers());
            sol = rollout(inst, dist, *model, pol).best;
        } else {
            sol = brute_force(inst, dist, cfg.oracle_limits).optimal_solution;
        }
        row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const ValidationReport rep = validate_solution(inst, dist, sol);
        if (!rep.ok()) throw std::runtime_error("bench: infeasible solution for instance " + row.instance_id + "\n" + rep.to_string());
        row.objective = solution_cost(inst, sol, dist);
        if (cfg.reference == ReferenceKind::Oracle) {
            const double ref = cfg.method == BenchMethod::Oracle ? row.objective
                                                                  : brute_force(inst, dist, cfg.oracle_limits).optimal_cost;
            row.gap = gap(row.objective, ref);
        } else if (cfg.reference == ReferenceKind::File) {
            if (!ref_costs.contains(row.instance_id))
                throw std::runtime_error("bench: no reference objective for instance " + row.instance_id);
            row.gap = gap(row.objective, ref_costs[row.instance_id].get<double>());
        }
    });

    BenchReport r;
    r.rows = std::move(rows);
    double sum = 0.0, gsum = 0.0;
    for (const auto& row : r.rows) {
        sum += row.objective;
        if (row.gap) gsum += *row.gap;
        r.total_seconds += row.seconds;
    }
    r.mean_objective = sum / static_cast<double>(r.rows.size());
    if (cfg.reference != ReferenceKind::None) r.mean_gap = gsum / static_cast<double>(r.rows.size());
    r.version = kVersion;
    r.config_hash = fnv_hex(fingerprint);
    r.seed = cfg.policy.seed;
    return r;
}

std::string report_csv(const BenchReport& r) {
    std::ostringstream os;
    os << "instance,variant,n,method,objective,gap_percent\n";
    for (const auto& row : r.rows)
        os << row.instance_id << ',' << to_string(row.variant) << ',' << row.n << ',' << row.method << ','
           << fmt(row.objective) << ',' << (row.gap ? fmt(*row.gap) : "") << '\n';
    os << "mean,," << r.rows.size() << ",," << fmt(r.mean_objective) << ',' << (r.mean_gap ? fmt(*r.mean_gap) : "") << '\n';
    return os.str();
}

std::string timing_csv(const BenchReport& r) {
    std::ostringstream os;
    os << "instance,seconds\n";
    for (const auto& row : r.rows) os << row.instance_id << ',' << fmt(row.seconds) << '\n';
    os << "total," << fmt(r.total_seconds) << '\n';
    return os.str();
}

nlohmann::json report_json(const BenchReport& r) {
    nlohmann::json j;
    j["environment"] = {{"version", r.version}, {"config_hash", r.config_hash}, {"seed", r.seed}};
    j["rows"] = nlohmann::json::array();
    for (const auto& row : r.rows) {
        nlohmann::json o{{"instance", row.instance_id},
                         {"variant", std::string(to_string(row.variant))},
                         {"n", row.n},
                         {"method", row.method},
                         {"objective", row.objective}};
        o["gap_percent"] = row.gap ? nlohmann::json(*row.gap) : nlohmann::json(nullptr);
        j["rows"].push_back(o);
    }
    j["aggregate"] = {{"count", r.rows.size()},
                      {"mean_objective", r.mean_objective},
                      {"mean_gap_percent", r.mean_gap ? nlohmann::json(*r.mean_gap) : nlohmann::json(nullptr)}};
    return j;
}

std::vector<CpaProfileRow> cpa_profile(const std::vector<std::size_t>& sizes, std::size_t cluster_size, int rounds,
                                       bool smoothing, std::uint64_t seed) {
    std::vector<CpaProfileRow> out;
    for (std::size_t n : sizes) {
        const Instance inst = generate(Variant::VRP, n, {}, seed);
        const ClusterIndex idx = build_cluster_index(inst.customers, inst.depot, cluster_size, rounds, smoothing);
        CpaProfileRow row;
        row.n = n;
        row.dense_pairs = static_cast<std::uint64_t>(n) * n;
        row.cpa_pairs = attention_pair_count(idx);
        if (row.cpa_pairs != measured_pair_count(idx)) throw std::logic_error("cpa_profile: formula and index disagree");
        row.ratio = std::min(1.0, static_cast<double>(row.cpa_pairs) / static_cast<double>(row.dense_pairs));
        row.reduction_percent = 100.0 * (1.0 - row.ratio);
        row.dense_augmented_pairs = static_cast<std::uint64_t>(n + 1) * (n + 1);
        row.augmented_pairs = augmented_pair_count(idx);
        row.reduction_augmented_percent =
            100.0 * (1.0 - std::min(1.0, static_cast<double>(row.augmented_pairs) / static_cast<double>(row.dense_augmented_pairs)));
        out.push_back(row);
    }
    return out;
}

std::string cpa_profile_csv(const std::vector<CpaProfileRow>& rows) {
    std::ostringstream os;
    os << "n,dense_pairs,cpa_pairs,ratio,reduction_percent,dense_augmented_pairs,augmented_pairs,reduction_augmented_percent\n";
    for (const auto& r : rows)
        os << r.n << ',' << r.dense_pairs << ',' << r.cpa_pairs << ',' << fmt(r.ratio) << ',' << fmt(r.reduction_percent) << ','
           << r.dense_augmented_pairs << ',' << r.augmented_pairs << ',' << fmt(r.reduction_augmented_percent) << '\n';
    return os.str();
}

} // namespace rwvrp
