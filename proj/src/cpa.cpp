#include "rwvrp/cpa.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

namespace rwvrp {

PolarCoords to_polar(const std::vector<Point>& customers, Point depot) {
    if (customers.empty()) throw std::invalid_argument("to_polar: no customers");
    const std::size_t n = customers.size();
    const double two_pi = 2.0 * std::numbers::pi;
    PolarCoords p;
    p.r.resize(n);
    p.theta.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = customers[i].x - depot.x, dy = customers[i].y - depot.y;
        p.r[i] = std::hypot(dx, dy);
        double t = (dx == 0.0 && dy == 0.0) ? 0.0 : std::atan2(dy, dx);
        if (t < 0.0) t += two_pi;
        if (t >= two_pi) t = 0.0;
        p.theta[i] = t;
    }
    const auto [lo, hi] = std::minmax_element(p.r.begin(), p.r.end());
    const double rmin = *lo, span = *hi - *lo;
    p.r_bar.resize(n);
    p.theta_bar.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        p.r_bar[i] = span > 0.0 ? (p.r[i] - rmin) / span : 0.0;
        p.theta_bar[i] = p.theta[i] / two_pi;
    }
    return p;
}

std::vector<double> partition_score(const PolarCoords& polar, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("partition_score: alpha must lie in [0, 1]");
    std::vector<double> s(polar.r_bar.size());
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = alpha * polar.theta_bar[i] + (1.0 - alpha) * polar.r_bar[i];
    return s;
}

std::vector<double> alpha_schedule(int rounds) {
    if (rounds < 1) throw std::invalid_argument("alpha_schedule: need at least one round");
    if (rounds == 1) return {0.0};
    std::vector<double> a(static_cast<std::size_t>(rounds));
    for (int t = 0; t < rounds; ++t) a[static_cast<std::size_t>(t)] = static_cast<double>(t) / (rounds - 1);
    return a;
}

std::vector<std::size_t> smooth_shift(std::vector<std::size_t> sorted, std::size_t cluster_size) {
    if (cluster_size == 0) throw std::invalid_argument("smooth_shift: cluster size must be positive");
    if (sorted.empty()) return sorted;
    const std::size_t k = (cluster_size / 2) % sorted.size();
    std::rotate(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k), sorted.end());
    return sorted;
}

std::size_t ClusterIndex::padding_slots() const {
    std::size_t c = 0;
    for (const auto& round : padding)
        for (const auto& cl : round) c += static_cast<std::size_t>(std::count(cl.begin(), cl.end(), true));
    return c;
}

ClusterIndex build_cluster_index(const std::vector<Point>& customers, Point depot, std::size_t cluster_size, int rounds,
                                 bool smoothing) {
    if (cluster_size == 0) throw std::invalid_argument("build_cluster_index: cluster size must be positive");
    const PolarCoords polar = to_polar(customers, depot);
    const std::size_t n = customers.size();
    ClusterIndex idx;
    idx.num_customers = n;
    idx.cluster_size = cluster_size;

    auto emit = [&](const std::vector<std::size_t>& order, double alpha, bool smoothed) {
        std::vector<std::vector<std::size_t>> clusters;
        std::vector<std::vector<bool>> pads;
        for (std::size_t start = 0; start < n; start += cluster_size) {
            std::vector<std::size_t> cl(cluster_size, 0);
            std::vector<bool> pad(cluster_size, true);
            for (std::size_t s = 0; s < cluster_size && start + s < n; ++s) {
                cl[s] = order[start + s];
                pad[s] = false;
            }
            clusters.push_back(std::move(cl));
            pads.push_back(std::move(pad));
        }
        idx.rounds.push_back(std::move(clusters));
        idx.padding.push_back(std::move(pads));
        idx.alpha_values.push_back(alpha);
        idx.smoothed.push_back(smoothed);
    };

    for (double alpha : alpha_schedule(rounds)) {
        const std::vector<double> score = partition_score(polar, alpha);
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t{1});
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return score[a - 1] < score[b - 1]; });
        emit(order, alpha, false);
        if (smoothing) emit(smooth_shift(order, cluster_size), alpha, true);
    }
    return idx;
}

std::uint64_t attention_pair_count(const ClusterIndex& index) {
    if (index.cluster_size == 0) return 0;
    const std::uint64_t m = index.cluster_size;
    const std::uint64_t per_round = (index.num_customers + m - 1) / m;
    return static_cast<std::uint64_t>(index.num_rounds()) * per_round * m * m;
}

std::uint64_t measured_pair_count(const ClusterIndex& index) {
    std::uint64_t total = 0;
    for (const auto& round : index.rounds)
        for (const auto& cl : round) total += static_cast<std::uint64_t>(cl.size()) * cl.size();
    return total;
}

std::uint64_t augmented_pair_count(const ClusterIndex& index) {
    std::uint64_t total = 0;
    for (const auto& round : index.padding)
        for (const auto& pad : round) {
            const std::uint64_t real = static_cast<std::uint64_t>(std::count(pad.begin(), pad.end(), false)) + 1;
            total += real * real;
        }
    return total;
}

nlohmann::json cluster_index_to_json(const ClusterIndex& index) {
    nlohmann::json j;
    j["num_customers"] = index.num_customers;
    j["cluster_size"] = index.cluster_size;
    j["rounds"] = nlohmann::json::array();
    for (std::size_t r = 0; r < index.num_rounds(); ++r) {
        nlohmann::json round;
        round["alpha"] = index.alpha_values[r];
        round["smoothed"] = static_cast<bool>(index.smoothed[r]);
        round["clusters"] = index.rounds[r];
        nlohmann::json pads = nlohmann::json::array();
        for (const auto& p : index.padding[r]) pads.push_back(std::vector<bool>(p.begin(), p.end()));
        round["padding"] = pads;
        j["rounds"].push_back(round);
    }
    return j;
}

namespace {

void check_params(const ad::Var& h, const AttentionParams& p) {
    const std::size_t d = h->cols;
    for (const ad::Var* w : {&p.wq, &p.wk, &p.wv, &p.wo})
        if (!*w || (*w)->rows != d || (*w)->cols != d)
            throw std::invalid_argument("attention: projection shape does not match embedding width");
    if (!p.bo || p.bo->cols != d) throw std::invalid_argument("attention: output bias shape mismatch");
}

} // namespace

ad::Var clustered_attention(const ad::Var& h, const ClusterIndex& index, const AttentionParams& p) {
    check_params(h, p);
    if (h->rows != index.num_customers + 1) throw std::invalid_argument("clustered_attention: row count does not match index");
    const ad::Var q = ad::matmul(h, p.wq), k = ad::matmul(h, p.wk), v = ad::matmul(h, p.wv);

    // Padding slots would only repeat the depot as a key; they are left out, so
    // each cluster attends over its real members plus one depot row.
    const std::size_t total_clusters = index.num_rounds() * index.clusters_per_round();
    const double w_customer = 1.0 / static_cast<double>(index.num_rounds());
    const double w_depot = 1.0 / static_cast<double>(total_clusters);
    std::vector<ad::Var> outs;
    std::vector<std::size_t> target;
    std::vector<double> weight;
    for (std::size_t r = 0; r < index.num_rounds(); ++r) {
        for (std::size_t c = 0; c < index.rounds[r].size(); ++c) {
            std::vector<std::size_t> rows;
            for (std::size_t s = 0; s < index.cluster_size; ++s)
                if (!index.padding[r][c][s]) rows.push_back(index.rounds[r][c][s]);
            rows.push_back(0);
            outs.push_back(ad::attention(ad::gather_rows(q, rows), ad::gather_rows(k, rows), ad::gather_rows(v, rows), p.heads));
            for (std::size_t node : rows) {
                target.push_back(node);
                weight.push_back(node == 0 ? w_depot : w_customer);
            }
        }
    }
    const ad::Var merged = ad::scatter_add_rows(ad::concat_rows(outs), target, weight, h->rows);
    return ad::add_row(ad::matmul(merged, p.wo), p.bo);
}

ad::Var dense_attention(const ad::Var& h, const AttentionParams& p) {
    check_params(h, p);
    const ad::Var o = ad::attention(ad::matmul(h, p.wq), ad::matmul(h, p.wk), ad::matmul(h, p.wv), p.heads);
    return ad::add_row(ad::matmul(o, p.wo), p.bo);
}

} // namespace rwvrp
