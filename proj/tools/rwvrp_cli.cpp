// rwvrp command-line front end.
#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "rwvrp/bench.hpp"
#include "rwvrp/decoding.hpp"
#include "rwvrp/oracle.hpp"
#include "rwvrp/training.hpp"

using namespace rwvrp;
namespace fs = std::filesystem;

namespace {

void write_text(const std::string& path, const std::string& text) {
    if (const fs::path parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << text;
    if (!out) throw std::runtime_error("write failed: " + path);
}

std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string fmt6(double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", x);
    return buf;
}

// Expands `--config FILE` into flags: every key of the JSON object becomes
// `--key value` unless that flag is already on the command line.
std::vector<std::string> expand_config(int argc, char** argv) {
    std::vector<std::string> in(argv, argv + argc), out;
    std::string config;
    std::set<std::string> given;
    for (std::size_t i = 1; i < in.size(); ++i) {
        const std::string& a = in[i];
        if (a == "--config" && i + 1 < in.size()) {
            config = in[++i];
            continue;
        }
        if (a.rfind("--config=", 0) == 0) {
            config = a.substr(9);
            continue;
        }
        if (a.rfind("--", 0) == 0) given.insert(a.substr(2, a.find('=') == std::string::npos ? std::string::npos : a.find('=') - 2));
        out.push_back(a);
    }
    if (config.empty()) {
        out.insert(out.begin(), in[0]);
        return out;
    }
    const nlohmann::json j = nlohmann::json::parse(read_text(config));
    if (!j.is_object()) throw std::runtime_error("config file must hold a JSON object");
    std::vector<std::string> extra;
    for (const auto& [key, v] : j.items()) {
        if (given.count(key)) continue;
        const std::string flag = "--" + key;
        if (v.is_boolean()) {
            if (v.get<bool>()) extra.push_back(flag);
        } else if (v.is_array()) {
            for (const auto& e : v) {
                extra.push_back(flag);
                extra.push_back(e.is_string() ? e.get<std::string>() : e.dump());
            }
        } else {
            extra.push_back(flag);
            extra.push_back(v.is_string() ? v.get<std::string>() : v.dump());
        }
    }
    // Flags belong to the subcommand, which is the first positional token.
    std::vector<std::string> args{in[0]};
    std::size_t k = 0;
    if (!out.empty() && out[0].rfind("-", 0) != 0) args.push_back(out[k++]);
    args.insert(args.end(), extra.begin(), extra.end());
    args.insert(args.end(), out.begin() + static_cast<std::ptrdiff_t>(k), out.end());
    return args;
}

DecodeMode parse_mode(const std::string& s) {
    if (s == "greedy") return DecodeMode::Greedy;
    if (s == "sample") return DecodeMode::Sample;
    throw std::invalid_argument("mode must be greedy or sample");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Neural solver toolkit for vehicle routing with real-world constraints"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    // gen
    std::string g_variant = "VRP", g_out;
    std::size_t g_n = 20, g_count = 1;
    std::uint64_t g_seed = 1;
    int g_capacity = 0;
    GenConfig gc;
    auto* gen = app.add_subcommand("gen", "Generate random instances");
    gen->add_option("--variant", g_variant, "VRP, VRPTW, EVRPCS, VRPRS or AVRP")->capture_default_str();
    gen->add_option("--n", g_n, "Customers per instance")->capture_default_str();
    gen->add_option("--seed", g_seed, "Seed of the first instance")->capture_default_str();
    gen->add_option("--count", g_count, "Number of instances")->capture_default_str();
    gen->add_option("--capacity", g_capacity, "Vehicle capacity (0 = size default)");
    gen->add_option("--stations", gc.charging_stations, "Charging stations (EVRPCS)")->capture_default_str();
    gen->add_option("--stops", gc.replenishment_stops, "Replenishment stops (VRPRS)")->capture_default_str();
    gen->add_option("--out", g_out, "Output directory")->required();

    // train
    TrainConfig tc;
    std::string t_variant = "VRP", t_out, t_metrics;
    auto* train_cmd = app.add_subcommand("train", "Train a toy-scale model");
    train_cmd->add_option("--variant", t_variant)->capture_default_str();
    train_cmd->add_option("--n", tc.n, "Training instance size")->capture_default_str();
    train_cmd->add_option("--epochs", tc.epochs)->capture_default_str();
    train_cmd->add_option("--instances", tc.instances_per_epoch, "Instances per epoch")->capture_default_str();
    train_cmd->add_option("--batch", tc.batch_size)->capture_default_str();
    train_cmd->add_option("--pomo", tc.pomo_size)->capture_default_str();
    train_cmd->add_option("--lr", tc.learning_rate)->capture_default_str();
    train_cmd->add_option("--seed", tc.seed)->capture_default_str();
    train_cmd->add_option("--validation-size", tc.validation_size)->capture_default_str();
    train_cmd->add_option("--threads", tc.threads)->capture_default_str();
    train_cmd->add_option("--out", t_out, "Checkpoint path")->required();
    train_cmd->add_option("--metrics", t_metrics, "Per-epoch metrics CSV");

    // solve
    std::string s_instance, s_ckpt, s_out, s_mode = "greedy";
    DecodePolicy sp;
    auto* solve = app.add_subcommand("solve", "Solve one instance with a trained model");
    solve->add_option("--instance", s_instance)->required();
    solve->add_option("--checkpoint", s_ckpt)->required();
    solve->add_option("--pomo", sp.pomo_size)->capture_default_str();
    solve->add_flag("--augment", sp.augment, "Best of the eight square symmetries");
    solve->add_option("--mode", s_mode)->capture_default_str();
    solve->add_option("--seed", sp.seed)->capture_default_str();
    solve->add_option("--out", s_out, "Solution JSON");

    // verify
    std::string v_instance, v_solution;
    auto* verify = app.add_subcommand("verify", "Check a solution against every constraint");
    verify->add_option("--instance", v_instance)->required();
    verify->add_option("--solution", v_solution)->required();

    // oracle
    std::string o_instance, o_out;
    OracleLimits ol;
    auto* oracle = app.add_subcommand("oracle", "Exact optimum of a tiny instance");
    oracle->add_option("--instance", o_instance)->required();
    oracle->add_option("--out", o_out, "Solution JSON");
    oracle->add_option("--max-optional-per-route", ol.max_optional_per_route)->capture_default_str();

    // bench
    BenchConfig bc;
    std::string b_method = "model", b_ref = "none", b_mode = "greedy", b_csv, b_json, b_timing;
    auto* bench_cmd = app.add_subcommand("bench", "Benchmark a dataset directory");
    bench_cmd->add_option("--dataset", bc.dataset_dir)->required();
    bench_cmd->add_option("--method", b_method, "model or oracle")->capture_default_str();
    bench_cmd->add_option("--checkpoint", bc.checkpoint);
    bench_cmd->add_option("--pomo", bc.policy.pomo_size)->capture_default_str();
    bench_cmd->add_flag("--augment", bc.policy.augment);
    bench_cmd->add_option("--mode", b_mode)->capture_default_str();
    bench_cmd->add_option("--seed", bc.policy.seed)->capture_default_str();
    bench_cmd->add_option("--reference", b_ref, "none, oracle or file")->capture_default_str();
    bench_cmd->add_option("--reference-file", bc.reference_file, "JSON object: instance id -> objective");
    bench_cmd->add_option("--threads", bc.threads)->capture_default_str();
    bench_cmd->add_option("--out-csv", b_csv);
    bench_cmd->add_option("--out-json", b_json);
    bench_cmd->add_option("--timing-csv", b_timing);

    // cpa-stats
    std::vector<std::size_t> c_n{100};
    std::size_t c_m = 20;
    int c_rounds = 1;
    bool c_smooth = false;
    std::string c_index;
    auto* cpa = app.add_subcommand("cpa-stats", "Attention pair counts of clustered vs dense attention");
    cpa->add_option("--n", c_n, "Problem sizes")->capture_default_str();
    cpa->add_option("--m", c_m, "Cluster size")->capture_default_str();
    cpa->add_option("--rounds", c_rounds)->capture_default_str();
    cpa->add_flag("--smoothing", c_smooth);
    cpa->add_option("--index-json", c_index, "Dump the cluster index of the first size");

    // model-info
    std::string m_variant = "VRP", m_preset = "large", m_ckpt;
    auto* info = app.add_subcommand("model-info", "Parameter counts per module");
    info->add_option("--variant", m_variant)->capture_default_str();
    info->add_option("--preset", m_preset, "toy or large")->capture_default_str();
    info->add_option("--checkpoint", m_ckpt, "Read the configuration from a checkpoint");

    std::vector<std::string> args;
    try {
        args = expand_config(argc, argv);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    std::vector<char*> cargs;
    for (auto& a : args) cargs.push_back(a.data());
    try {
        app.parse(static_cast<int>(cargs.size()), cargs.data());
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (*gen) {
            const Variant v = variant_from_string(g_variant);
            if (g_capacity > 0) gc.capacity = g_capacity;
            for (std::size_t i = 0; i < g_count; ++i) {
                const std::uint64_t seed = g_seed + i;
                const Instance inst = generate(v, g_n, gc, seed);
                char name[96];
                std::snprintf(name, sizeof name, "%s_n%zu_s%llu.json", g_variant.c_str(), g_n, static_cast<unsigned long long>(seed));
                write_text((fs::path(g_out) / name).string(), serialize(inst));
            }
            std::cout << "wrote " << g_count << " instances to " << g_out << '\n';
        } else if (*train_cmd) {
            tc.variant = variant_from_string(t_variant);
            tc.model = ModelConfig::toy(tc.variant);
            const TrainResult r = train(tc, [](const EpochMetrics& m) {
                std::cerr << "epoch " << m.epoch << " sampled " << fmt6(m.sampled_cost) << " greedy_val " << fmt6(m.greedy_val_cost)
                          << " tau " << fmt6(m.tau) << '\n';
            });
            write_text(t_out, checkpoint_text(r.model));
            if (!t_metrics.empty()) write_text(t_metrics, metrics_csv(r.metrics));
            std::cout << "final greedy validation cost " << fmt6(r.metrics.back().greedy_val_cost) << '\n';
        } else if (*solve) {
            const Instance inst = load_instance(s_instance);
            const Model m = load_checkpoint(s_ckpt);
            if (m.config().variant != inst.variant) throw std::invalid_argument("checkpoint was trained for another variant");
            sp.mode = parse_mode(s_mode);
            const RolloutResult r = rollout(inst, m, sp);
            if (!s_out.empty()) write_text(s_out, solution_to_json(r.best, inst).dump() + "\n");
            std::cout << "cost " << fmt6(r.best.cost) << '\n';
        } else if (*verify) {
            const Instance inst = load_instance(v_instance);
            const Solution sol = solution_from_json(nlohmann::json::parse(read_text(v_solution)));
            const ValidationReport rep = validate_solution(inst, sol);
            if (!rep.ok()) {
                std::cout << rep.to_string() << '\n';
                return 1;
            }
            std::cout << "feasible, cost " << fmt6(solution_cost(inst, sol, build_distance_matrix(inst))) << '\n';
        } else if (*oracle) {
            const Instance inst = load_instance(o_instance);
            const OracleResult r = brute_force(inst, ol);
            if (!o_out.empty()) write_text(o_out, solution_to_json(r.optimal_solution, inst).dump() + "\n");
            std::cout << "optimal cost " << fmt6(r.optimal_cost) << " (" << r.nodes_expanded << " nodes)\n";
        } else if (*bench_cmd) {
            if (b_method == "model") bc.method = BenchMethod::Model;
            else if (b_method == "oracle") bc.method = BenchMethod::Oracle;
            else throw std::invalid_argument("method must be model or oracle");
            if (b_ref == "none") bc.reference = ReferenceKind::None;
            else if (b_ref == "oracle") bc.reference = ReferenceKind::Oracle;
            else if (b_ref == "file") bc.reference = ReferenceKind::File;
            else throw std::invalid_argument("reference must be none, oracle or file");
            bc.policy.mode = parse_mode(b_mode);
            const BenchReport r = bench(bc);
            const std::string csv = report_csv(r);
            if (!b_csv.empty()) write_text(b_csv, csv);
            else std::cout << csv;
            if (!b_json.empty()) write_text(b_json, report_json(r).dump(2) + "\n");
            if (!b_timing.empty()) write_text(b_timing, timing_csv(r));
            std::cerr << "total solve time " << fmt6(r.total_seconds) << " s\n";
        } else if (*cpa) {
            std::cout << cpa_profile_csv(cpa_profile(c_n, c_m, c_rounds, c_smooth));
            if (!c_index.empty()) {
                const Instance inst = generate(Variant::VRP, c_n.at(0), {}, 0);
                const ClusterIndex idx = build_cluster_index(inst.customers, inst.depot, c_m, c_rounds, c_smooth);
                write_text(c_index, cluster_index_to_json(idx).dump() + "\n");
            }
        } else if (*info) {
            const Variant v = variant_from_string(m_variant);
            const Model m = !m_ckpt.empty() ? load_checkpoint(m_ckpt)
                            : Model(m_preset == "toy"     ? ModelConfig::toy(v)
                                    : m_preset == "large" ? ModelConfig::large(v)
                                                          : throw std::invalid_argument("preset must be toy or large"),
                                    0);
            std::cout << "module,parameters\n";
            for (const auto& g : param_breakdown(m)) std::cout << g.module << ',' << g.count << '\n';
            std::cout << "total," << param_total(m) << '\n';
            std::cout << "edge_share," << fmt6(edge_share(m)) << '\n';
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
