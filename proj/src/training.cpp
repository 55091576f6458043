#include "rwvrp/training.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "rwvrp/parallel.hpp"
#include "rwvrp/rng.hpp"

namespace rwvrp {

ad::Var pomo_loss(const std::vector<double>& costs, const ad::Var& log_prob) {
    const std::size_t P = costs.size();
    if (P < 2) throw std::invalid_argument("pomo_loss: need at least two trajectories for a shared baseline");
    if (log_prob->rows != P || log_prob->cols != 1) throw std::invalid_argument("pomo_loss: log_prob must be P x 1");
    double mean = 0.0;
    for (double c : costs) mean += c;
    mean /= static_cast<double>(P);
    std::vector<double> adv(P);
    for (std::size_t k = 0; k < P; ++k) adv[k] = costs[k] - mean;
    return ad::mean(ad::mul(log_prob, ad::tensor(P, 1, std::move(adv))));
}

namespace {

std::uint64_t instance_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
    return mix64(base ^ mix64((a << 32) ^ b ^ 0x9e3779b97f4a7c15ULL));
}

std::vector<double> gumbel_noise(const Instance& inst, std::uint64_t seed) {
    if (!has_optional_nodes(inst.variant)) return {};
    Rng rng(seed, 0x6b);
    std::vector<double> g(inst.num_customers() * inst.num_optional());
    for (double& x : g) x = rng.gumbel();
    return g;
}

} // namespace

std::vector<Instance> validation_set(const TrainConfig& cfg) {
    std::vector<Instance> out;
    for (std::size_t i = 0; i < cfg.validation_size; ++i)
        out.push_back(generate(cfg.variant, cfg.n, cfg.gen, instance_seed(cfg.validation_seed, 0xffffffff, i)));
    return out;
}

double greedy_validation_cost(const Model& m, const std::vector<Instance>& set, std::size_t pomo_size, double tau,
                              std::size_t threads) {
    if (set.empty()) throw std::invalid_argument("greedy_validation_cost: empty set");
    std::vector<double> cost(set.size());
    DecodePolicy pol;
    pol.pomo_size = pomo_size;
    pol.tau = tau;
    parallel_for(set.size(), threads, [&](std::size_t i, std::size_t) { cost[i] = rollout(set[i], m, pol).best.cost; });
    double s = 0.0;
    for (double c : cost) s += c;
    return s / static_cast<double>(set.size());
}

TrainResult train(const TrainConfig& cfg, const EpochCallback& on_epoch) {
    if (!(cfg.learning_rate >= 0.0)) throw std::invalid_argument("train: learning rate must be nonnegative");
    if (cfg.pomo_size < 2 || cfg.pomo_size > cfg.n) throw std::invalid_argument("train: pomo_size must lie in [2, n]");
    if (cfg.batch_size == 0 || cfg.instances_per_epoch == 0) throw std::invalid_argument("train: empty batches");
    if (cfg.epochs < 0) throw std::invalid_argument("train: negative epoch count");
    ModelConfig mc = cfg.model;
    mc.variant = cfg.variant;
    TrainResult res{Model(mc, instance_seed(cfg.seed, 0xabcdef, 0)), {}};
    Model& model = res.model;
    Adam adam(model.params(), {cfg.learning_rate, 0.9, 0.999, 1e-8});

    const std::size_t threads = std::max<std::size_t>(1, cfg.threads);
    std::vector<Model> workers;
    for (std::size_t w = 0; w < threads; ++w) workers.push_back(model.clone());
    auto sync_workers = [&] {
        for (auto& w : workers)
            for (std::size_t i = 0; i < w.params().tensors().size(); ++i)
                w.params().tensors()[i]->val = model.params().tensors()[i]->val;
    };

    const std::vector<Instance> val = validation_set(cfg);
    const auto emit = [&](const EpochMetrics& m) {
        res.metrics.push_back(m);
        if (on_epoch) on_epoch(m);
    };
    emit({0, 0.0, greedy_validation_cost(model, val, cfg.pomo_size, tau_schedule(0), threads), tau_schedule(0)});

    const std::size_t nparams = model.params().count();
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const double tau = tau_schedule(epoch - 1);
        double cost_sum = 0.0;
        std::size_t cost_count = 0;
        for (std::size_t b0 = 0; b0 < cfg.instances_per_epoch; b0 += cfg.batch_size) {
            const std::size_t bs = std::min(cfg.batch_size, cfg.instances_per_epoch - b0);
            std::vector<std::vector<double>> grads(bs);
            std::vector<double> losses(bs), sampled(bs);
            parallel_for(bs, threads, [&](std::size_t i, std::size_t w) {
                Model& wm = workers[w];
                const std::uint64_t s = instance_seed(cfg.seed, static_cast<std::uint64_t>(epoch), b0 + i);
                const Instance inst = generate(cfg.variant, cfg.n, cfg.gen, s);
                const DistanceMatrix dist = build_distance_matrix(inst);
                const RoutingEnv env(inst, dist);
                ForwardOptions fo;
                fo.tau = tau;
                fo.gumbel_noise = gumbel_noise(inst, s);
                const auto starts = pomo_starts(env, cfg.pomo_size);
                TrajectoryBatch tb = run_trajectories(inst, dist, inst, wm, fo, starts, DecodeMode::Sample, s);
                std::vector<double> costs;
                for (const auto& t : tb.trajectories) costs.push_back(t.cost);
                double mean = 0.0;
                for (double c : costs) mean += c;
                sampled[i] = mean / static_cast<double>(costs.size());
                wm.params().zero_grad();
                if (costs.size() < 2) {
                    grads[i].assign(nparams, 0.0);
                    losses[i] = 0.0;
                    return;
                }
                const ad::Var loss = ad::scale(pomo_loss(costs, tb.log_prob), 1.0 / static_cast<double>(bs));
                losses[i] = loss->item();
                ad::backward(loss);
                grads[i] = wm.params().flat_grad();
            });
            std::vector<double> g(nparams, 0.0);
            for (std::size_t i = 0; i < bs; ++i) {
                if (!std::isfinite(losses[i]))
                    throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch));
                for (std::size_t k = 0; k < nparams; ++k) g[k] += grads[i][k];
                cost_sum += sampled[i];
                ++cost_count;
            }
            clip_global_norm(g, cfg.grad_clip);
            adam.step(model.params(), g);
            sync_workers();
        }
        emit({epoch, cost_sum / static_cast<double>(cost_count),
              greedy_validation_cost(model, val, cfg.pomo_size, tau_schedule(epoch), threads), tau});
    }
    return res;
}

std::string metrics_csv(const std::vector<EpochMetrics>& rows) {
    std::ostringstream os;
    os << "epoch,sampled_cost,greedy_val_cost,tau\n";
    char buf[160];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%d,%.10f,%.10f,%.6f\n", r.epoch, r.sampled_cost, r.greedy_val_cost, r.tau);
        os << buf;
    }
    return os.str();
}

} // namespace rwvrp
