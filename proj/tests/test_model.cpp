#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rwvrp/model.hpp"
#include "rwvrp/rng.hpp"

using namespace rwvrp;

namespace {

void zero(Model& m, const std::string& name) {
    auto& v = m.params().get(name)->val;
    std::fill(v.begin(), v.end(), 0.0);
}

double max_abs_diff(const ad::Var& a, const ad::Var& b) {
    REQUIRE(a->rows == b->rows);
    REQUIRE(a->cols == b->cols);
    double m = 0.0;
    for (std::size_t i = 0; i < a->size(); ++i) m = std::max(m, std::abs(a->val[i] - b->val[i]));
    return m;
}

FeasibilityMask mask_of(const RoutingEnv& env, const RolloutState& s) { return env.feasible_mask(s); }

} // namespace

TEST_CASE("config validation and JSON") {
    ModelConfig c = ModelConfig::toy(Variant::VRP);
    c.validate();
    CHECK(model_config_from_json(to_json(c)).d == c.d);
    c.heads = 3;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = ModelConfig::toy(Variant::VRP);
    c.edge_dim = c.d + 1;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    const ModelConfig p = ModelConfig::large(Variant::EVRPCS);
    CHECK(p.d == 128);
    CHECK(p.heads == 8);
    CHECK(p.layers == 6);
    CHECK(p.edge_dim == 32);
    CHECK(p.knn == 50);
}

TEST_CASE("parameter counts") {
    const Model toy(ModelConfig::toy(Variant::VRP), 1);
    CHECK(param_total(toy) < 20000);
    for (Variant v : {Variant::VRP, Variant::EVRPCS, Variant::VRPRS, Variant::VRPTW, Variant::AVRP}) {
        const Model m(ModelConfig::large(v), 1);
        const std::size_t total = param_total(m);
        CHECK(total >= 1200000);
        CHECK(total <= 1500000);
        CHECK(edge_share(m) >= 0.05);
        CHECK(edge_share(m) <= 0.10);
        std::size_t sum = 0;
        for (const auto& g : param_breakdown(m)) sum += g.count;
        CHECK(sum == total);
        CHECK(sum == m.params().count());
    }
}

TEST_CASE("initialization is seeded and finite") {
    const Model a(ModelConfig::toy(Variant::VRPTW), 5), b(ModelConfig::toy(Variant::VRPTW), 5), c(ModelConfig::toy(Variant::VRPTW), 6);
    CHECK(params_hash(a.params()) == params_hash(b.params()));
    CHECK(params_hash(a.params()) != params_hash(c.params()));
    for (const auto& t : a.params().tensors())
        for (double x : t->val) CHECK(std::isfinite(x));
    CHECK(a.p("init.depot.W")->val != c.p("init.depot.W")->val);
}

TEST_CASE("encoder matches the dense reference when one cluster holds everything") {
    for (Variant v : {Variant::VRP, Variant::VRPTW, Variant::EVRPCS}) {
        const Instance inst = generate(v, 9, {}, 3);
        ModelConfig cfg = ModelConfig::toy(v);
        cfg.cluster_size = 10;
        cfg.rounds = 1;
        cfg.smoothing = false;
        const Model m(cfg, 4);
        ForwardOptions dense;
        dense.dense_attention = true;
        const ad::Var a = encode(inst, m);
        const ad::Var b = encode(inst, m, dense);
        CHECK(max_abs_diff(a, b) <= 1e-9);
    }
}

TEST_CASE("encoder is equivariant to customer relabeling") {
    const Instance inst = generate(Variant::VRPTW, 14, {}, 8);
    const Model m(ModelConfig::toy(Variant::VRPTW), 9);
    std::vector<std::size_t> perm(14);
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(1, 2);
    for (std::size_t i = 13; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
    Instance shuffled = inst;
    for (std::size_t i = 0; i < 14; ++i) {
        shuffled.customers[i] = inst.customers[perm[i]];
        shuffled.demands[i] = inst.demands[perm[i]];
        shuffled.time_windows[i + 1] = inst.time_windows[perm[i] + 1];
        shuffled.service_times[i + 1] = inst.service_times[perm[i] + 1];
    }
    const ad::Var a = encode(inst, m), b = encode(shuffled, m);
    for (std::size_t c = 0; c < a->cols; ++c) CHECK((*a)(0, c) == doctest::Approx((*b)(0, c)).epsilon(1e-9));
    for (std::size_t i = 0; i < 14; ++i)
        for (std::size_t c = 0; c < a->cols; ++c)
            CHECK((*b)(i + 1, c) == doctest::Approx((*a)(perm[i] + 1, c)).epsilon(1e-9));
}

TEST_CASE("identical customers get identical embeddings") {
    Instance inst = generate(Variant::VRP, 20, {}, 1);
    for (auto& c : inst.customers) c = {0.25, 0.75};
    for (auto& q : inst.demands) q = 4;
    const Model m(ModelConfig::toy(Variant::VRP), 2);
    const ad::Var h = encode(inst, m);
    for (std::size_t i = 2; i <= 20; ++i)
        for (std::size_t c = 0; c < h->cols; ++c) CHECK((*h)(i, c) == doctest::Approx((*h)(1, c)).epsilon(1e-12));
}

TEST_CASE("optional-node fusion") {
    const Instance inst = generate(Variant::EVRPCS, 12, {}, 4);
    Model m(ModelConfig::toy(Variant::EVRPCS), 3);
    const ad::Var h = encode(inst, m);
    const ad::Var ho = encode_optional(inst, m);
    CHECK(ho->rows == inst.optional_nodes.size());

    SUBCASE("zero gate is the identity") {
        REQUIRE(m.p("opt.gate")->val[0] == 0.0);
        const ad::Var f = fuse(h, ho, m, 1.0, {});
        CHECK(f->val == h->val);
    }
    SUBCASE("cold temperature gives one-hot weights at the argmax") {
        const auto warm = fusion_weights(h, ho, m, 1.0, {});
        const auto cold = fusion_weights(h, ho, m, 1e-6, {});
        const std::size_t f = ho->rows;
        for (std::size_t i = 0; i < 12; ++i) {
            const auto row = warm.begin() + static_cast<std::ptrdiff_t>(i * f);
            const std::size_t best = static_cast<std::size_t>(std::max_element(row, row + static_cast<std::ptrdiff_t>(f)) - row);
            for (std::size_t k = 0; k < f; ++k) CHECK(cold[i * f + k] == doctest::Approx(k == best ? 1.0 : 0.0));
        }
    }
    SUBCASE("nonzero gate mixes optional embeddings in") {
        m.params().get("opt.gate")->val[0] = 0.5;
        CHECK(max_abs_diff(fuse(h, ho, m, 1.0, {}), h) > 0.0);
    }
    CHECK_THROWS(encode_optional(generate(Variant::VRP, 5, {}, 1), Model(ModelConfig::toy(Variant::VRP), 1)));
}

TEST_CASE("temperature schedule") {
    CHECK(tau_schedule(0) == 1.0);
    CHECK(tau_schedule(100) == doctest::Approx(0.366).epsilon(1e-3));
    CHECK(tau_schedule(200) == 0.2);
}

TEST_CASE("edge set and edge embedding") {
    const Instance inst = generate(Variant::AVRP, 10, {}, 5);
    const DistanceMatrix d = build_distance_matrix(inst);
    const EdgeSet full = build_edge_set(inst, d, 50, 8);
    CHECK(full.size() == 11 * 10);
    for (std::size_t e = 0; e < full.size(); ++e) {
        CHECK(full.src[e] != full.dst[e]);
        CHECK(full.features[e * 8] == d(full.src[e], full.dst[e]));
        CHECK(full.features[e * 8 + 1] == d(full.dst[e], full.src[e]));
    }
    const EdgeSet knn = build_edge_set(inst, d, 3, 8);
    CHECK(knn.size() == 11 * 3);
    for (std::size_t i = 0; i <= 10; ++i) {
        std::vector<double> row;
        for (std::size_t j = 0; j <= 10; ++j)
            if (j != i) row.push_back(d(i, j));
        std::sort(row.begin(), row.end());
        double prev = -1.0;
        for (std::size_t e = 0; e < knn.size(); ++e)
            if (knn.src[e] == i) {
                CHECK(d(i, knn.dst[e]) <= row[2]);
                CHECK(d(i, knn.dst[e]) >= prev);
                prev = d(i, knn.dst[e]);
            }
    }

    Model m(ModelConfig::toy(Variant::AVRP), 6);
    for (const char* n : {"edge.W1", "edge.W2", "edge.W3", "edge.norm.beta"}) zero(m, n);
    const ad::Var he = edge_embed(encode(inst, m), full, m);
    REQUIRE(he->rows == full.size());
    for (std::size_t i = 0; i < he->size(); ++i) CHECK(he->val[i] == full.features[i]);
}

TEST_CASE("heatmap range and saturation") {
    const Instance inst = generate(Variant::EVRPCS, 10, {}, 6);
    const DistanceMatrix d = build_distance_matrix(inst);
    ModelConfig cfg = ModelConfig::toy(Variant::EVRPCS);
    cfg.knn = 50;
    // large weights push tanh to both ends
    Model m(cfg, 7);
    for (auto& x : m.params().get("heat.W3")->val) x *= 40.0;
    const EdgeSet es = build_edge_set(inst, d, cfg.knn, cfg.edge_dim);
    const ad::Var heat = heatmap(edge_embed(encode(inst, m), es, m), es, m, inst.num_nodes());
    REQUIRE(heat->rows == inst.num_nodes());
    for (double x : heat->val) {
        CHECK(x >= -1.0);
        CHECK(x <= 1.0);
    }
    for (std::size_t i = 0; i <= 10; ++i)
        for (std::size_t j = 0; j <= 10; ++j) CHECK(((*heat)(i, j) != 0.0) == (i != j));
    for (std::size_t i = 11; i < inst.num_nodes(); ++i)
        for (std::size_t j = 0; j < inst.num_nodes(); ++j) CHECK((*heat)(i, j) == 0.0);
}

TEST_CASE("decode step distributions") {
    for (Variant v : {Variant::VRP, Variant::EVRPCS, Variant::VRPRS, Variant::VRPTW, Variant::AVRP}) {
        const Instance inst = generate(v, 10, {}, 9);
        const DistanceMatrix d = build_distance_matrix(inst);
        const Model m(ModelConfig::toy(v), 10);
        const Encoded enc = encode_instance(inst, d, m);
        const RoutingEnv env(inst, d);
        RolloutState s = env.init_state();
        env.step_inplace(s, 3);
        const FeasibilityMask mask = mask_of(env, s);
        const auto p = decode_step(s, enc, inst, m, mask);
        REQUIRE(p.size() == inst.num_nodes());
        double total = 0.0;
        for (std::size_t j = 0; j < p.size(); ++j) {
            if (!mask.selectable[j]) CHECK(p[j] == 0.0);
            else CHECK(p[j] > 0.0);
            total += p[j];
        }
        CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
        FeasibilityMask empty = mask;
        std::fill(empty.selectable.begin(), empty.selectable.end(), false);
        CHECK_THROWS(decode_step(s, enc, inst, m, empty));
    }
}

TEST_CASE("optional-node heatmap term") {
    const Instance inst = generate(Variant::EVRPCS, 10, {}, 1);
    RolloutState s = init_state(inst);
    CHECK(optional_heat_term(s, inst) == -2.0);
    s.resource = 0.0;
    CHECK(optional_heat_term(s, inst) == 0.0);
    s.resource = 1.0;
    CHECK(optional_heat_term(s, inst) == -1.0);
}

TEST_CASE("uniform logits give a uniform distribution") {
    const Instance inst = generate(Variant::VRP, 8, {}, 2);
    const DistanceMatrix d = build_distance_matrix(inst);
    Model m(ModelConfig::toy(Variant::VRP), 3);
    for (const char* n : {"dec.Wo", "dec.bo", "heat.W3", "heat.b3"}) zero(m, n);
    const Encoded enc = encode_instance(inst, d, m);
    const RoutingEnv env(inst, d);
    RolloutState s = env.init_state();
    env.step_inplace(s, 1);
    const FeasibilityMask mask = env.feasible_mask(s);
    const auto p = decode_step(s, enc, inst, m, mask);
    const double u = 1.0 / static_cast<double>(mask.count());
    for (std::size_t j = 0; j < p.size(); ++j)
        if (mask.selectable[j]) CHECK(p[j] == doctest::Approx(u));
}

TEST_CASE("a zeroed heatmap reduces to sequential decoding") {
    for (Variant v : {Variant::VRP, Variant::VRPTW, Variant::AVRP}) {
        const Instance inst = generate(v, 10, {}, 12);
        const DistanceMatrix d = build_distance_matrix(inst);
        Model m(ModelConfig::toy(v), 13);
        zero(m, "heat.W3");
        zero(m, "heat.b3");
        ForwardOptions off;
        off.use_heatmap = false;
        const Encoded with = encode_instance(inst, d, m);
        const Encoded without = encode_instance(inst, d, m, off);
        CHECK(without.heat == nullptr);
        for (double x : with.heat->val) CHECK(x == 0.0);
        const RoutingEnv env(inst, d);
        RolloutState s = env.init_state();
        for (int step = 0; step < 3; ++step) {
            std::size_t j = 1;
            while (!env.feasible_mask(s).selectable[j]) ++j;
            env.step_inplace(s, j);
            const FeasibilityMask mask = env.feasible_mask(s);
            CHECK(decode_step(s, with, inst, m, mask) == decode_step(s, without, inst, m, mask));
        }
    }
}

TEST_CASE("batched log-probabilities agree with single steps") {
    const Instance inst = generate(Variant::VRPRS, 9, {}, 14);
    const DistanceMatrix d = build_distance_matrix(inst);
    const Model m(ModelConfig::toy(Variant::VRPRS), 15);
    const Encoded enc = encode_instance(inst, d, m);
    const RoutingEnv env(inst, d);
    RolloutState a = env.init_state(), b = env.init_state();
    env.step_inplace(a, 1);
    env.step_inplace(b, 4);
    env.step_inplace(b, 2);
    std::vector<std::uint8_t> mask;
    for (const RolloutState* s : {&a, &b})
        for (bool x : env.feasible_mask(*s).selectable) mask.push_back(x ? 1 : 0);
    const ad::Var lp = decode_logp(enc, inst, m, {&a, &b}, mask);
    const std::size_t nt = inst.num_nodes();
    REQUIRE(lp->rows == 2);
    const auto pa = decode_step(a, enc, inst, m, env.feasible_mask(a));
    const auto pb = decode_step(b, enc, inst, m, env.feasible_mask(b));
    for (std::size_t j = 0; j < nt; ++j) {
        if (pa[j] > 0) CHECK(std::exp((*lp)(0, j)) == doctest::Approx(pa[j]).epsilon(1e-12));
        if (pb[j] > 0) CHECK(std::exp((*lp)(1, j)) == doctest::Approx(pb[j]).epsilon(1e-12));
    }
}

TEST_CASE("query context") {
    Instance inst = generate(Variant::VRPTW, 10, {}, 1);
    RolloutState s = init_state(inst);
    s.load_used = inst.capacity / 2;
    s.time = inst.horizon / 4;
    const auto c = query_context(s, inst);
    REQUIRE(c.size() == context_dim(Variant::VRPTW));
    CHECK(c[0] == doctest::Approx(1.0 - static_cast<double>(inst.capacity / 2) / inst.capacity));
    CHECK(c[1] == doctest::Approx(0.25));
    CHECK(query_context(init_state(generate(Variant::VRP, 5, {}, 1)), generate(Variant::VRP, 5, {}, 1)).size() == 1);
}

TEST_CASE("checkpoint round trip") {
    const Model m(ModelConfig::toy(Variant::EVRPCS), 21);
    const std::string text = checkpoint_text(m);
    const Model back = checkpoint_from_text(text);
    CHECK(params_hash(back.params()) == params_hash(m.params()));
    CHECK(checkpoint_text(back) == text);
    std::string bad = text;
    const auto pos = bad.find("\"values\":[") + 10;
    bad[pos] = bad[pos] == '1' ? '2' : '1';
    CHECK_THROWS(checkpoint_from_text(bad));
}
