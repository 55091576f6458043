#include "rwvrp/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "rwvrp/rng.hpp"

namespace rwvrp {

ModelConfig ModelConfig::toy(Variant v) {
    ModelConfig c;
    c.variant = v;
    return c;
}

ModelConfig ModelConfig::large(Variant v) {
    ModelConfig c;
    c.variant = v;
    c.d = 128;
    c.heads = 8;
    c.layers = 6;
    c.ff = 512;
    c.edge_dim = 32;
    c.knn = 50;
    c.cluster_size = 50;
    c.rounds = 4;
    c.smoothing = true;
    c.heatmap_hidden = 256;
    return c;
}

void ModelConfig::validate() const {
    if (d == 0 || heads == 0 || d % heads != 0) throw std::invalid_argument("model config: d must be a positive multiple of heads");
    if (layers == 0) throw std::invalid_argument("model config: need at least one encoder layer");
    if (ff == 0 || heatmap_hidden == 0) throw std::invalid_argument("model config: hidden widths must be positive");
    if (edge_dim < 3 || edge_dim > d) throw std::invalid_argument("model config: edge_dim must lie in [3, d]");
    if (cluster_size == 0 || rounds < 1) throw std::invalid_argument("model config: cluster size and rounds must be positive");
    if (!(logit_clip > 0.0)) throw std::invalid_argument("model config: logit clip must be positive");
}

nlohmann::json to_json(const ModelConfig& c) {
    return {{"variant", std::string(to_string(c.variant))},
            {"d", c.d},
            {"heads", c.heads},
            {"layers", c.layers},
            {"ff", c.ff},
            {"edge_dim", c.edge_dim},
            {"knn", c.knn},
            {"cluster_size", c.cluster_size},
            {"rounds", c.rounds},
            {"smoothing", c.smoothing},
            {"heatmap_hidden", c.heatmap_hidden},
            {"logit_clip", c.logit_clip}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.variant = variant_from_string(j.at("variant").get<std::string>());
    c.d = j.at("d").get<std::size_t>();
    c.heads = j.at("heads").get<std::size_t>();
    c.layers = j.at("layers").get<std::size_t>();
    c.ff = j.at("ff").get<std::size_t>();
    c.edge_dim = j.at("edge_dim").get<std::size_t>();
    c.knn = j.at("knn").get<std::size_t>();
    c.cluster_size = j.at("cluster_size").get<std::size_t>();
    c.rounds = j.at("rounds").get<int>();
    c.smoothing = j.at("smoothing").get<bool>();
    c.heatmap_hidden = j.at("heatmap_hidden").get<std::size_t>();
    c.logit_clip = j.at("logit_clip").get<double>();
    c.validate();
    return c;
}

std::size_t customer_feature_dim(Variant v) { return v == Variant::VRPTW ? 6 : 3; }

std::size_t context_dim(Variant v) { return (has_resource(v) || v == Variant::VRPTW) ? 2 : 1; }

ParamSet declare_params(const ModelConfig& c) {
    c.validate();
    const std::size_t d = c.d, de = c.edge_dim, h = c.heatmap_hidden;
    ParamSet p;
    p.add("init.depot.W", 2, d);
    p.add("init.depot.b", 1, d);
    p.add("init.customer.W", customer_feature_dim(c.variant), d);
    p.add("init.customer.b", 1, d);
    for (std::size_t l = 0; l < c.layers; ++l) {
        const std::string pre = "enc." + std::to_string(l) + ".";
        p.add(pre + "attn.Wq", d, d);
        p.add(pre + "attn.Wk", d, d);
        p.add(pre + "attn.Wv", d, d);
        p.add(pre + "attn.Wo", d, d);
        p.add(pre + "attn.bo", 1, d);
        p.add(pre + "norm1.gamma", 1, d);
        p.add(pre + "norm1.beta", 1, d);
        p.add(pre + "ff.W1", d, c.ff);
        p.add(pre + "ff.b1", 1, c.ff);
        p.add(pre + "ff.W2", c.ff, d);
        p.add(pre + "ff.b2", 1, d);
        p.add(pre + "norm2.gamma", 1, d);
        p.add(pre + "norm2.beta", 1, d);
    }
    if (has_optional_nodes(c.variant)) {
        p.add("opt.init.W", 2, d);
        p.add("opt.init.b", 1, d);
        p.add("opt.attn.Wq", d, d);
        p.add("opt.attn.Wk", d, d);
        p.add("opt.attn.Wv", d, d);
        p.add("opt.attn.Wo", d, d);
        p.add("opt.attn.bo", 1, d);
        p.add("opt.norm.gamma", 1, d);
        p.add("opt.norm.beta", 1, d);
        p.add("opt.fuse.Wq", d, d);
        p.add("opt.fuse.Wk", d, d);
        p.add("opt.gate", 1, 1);
    }
    p.add("edge.reduce.W", d, de);
    p.add("edge.reduce.b", 1, de);
    p.add("edge.W1", de, de);
    p.add("edge.W2", de, de);
    p.add("edge.W3", de, de);
    p.add("edge.b", 1, de);
    p.add("edge.norm.gamma", 1, de);
    p.add("edge.norm.beta", 1, de);
    p.add("heat.W1", de, h);
    p.add("heat.b1", 1, h);
    p.add("heat.W2", h, h);
    p.add("heat.b2", 1, h);
    p.add("heat.W3", h, 1);
    p.add("heat.b3", 1, 1);
    p.add("dec.Wctx", d + context_dim(c.variant), d);
    p.add("dec.Wk", d, d);
    p.add("dec.Wv", d, d);
    p.add("dec.Wo", d, d);
    p.add("dec.bo", 1, d);
    return p;
}

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

} // namespace

Model::Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg), params_(declare_params(cfg)) {
    const auto& names = params_.names();
    for (std::size_t i = 0; i < names.size(); ++i) {
        ad::Node& t = *params_.tensors()[i];
        const std::string& nm = names[i];
        if (ends_with(nm, ".gamma")) {
            std::fill(t.val.begin(), t.val.end(), 1.0);
        } else if (t.rows == 1 || nm == "opt.gate") {
            // biases, norm shifts and the fusion gate start at zero
        } else {
            Rng rng(seed, 1000 + i);
            const double bound = 1.0 / std::sqrt(static_cast<double>(t.rows));
            for (double& v : t.val) v = rng.uniform(-bound, bound);
        }
    }
}

Model::Model(const ModelConfig& cfg, ParamSet params) : cfg_(cfg), params_(std::move(params)) {
    const ParamSet ref = declare_params(cfg);
    if (ref.names() != params_.names()) throw std::invalid_argument("Model: parameter names do not match the configuration");
    for (std::size_t i = 0; i < ref.names().size(); ++i) {
        const auto& a = ref.tensors()[i];
        const auto& b = params_.tensors()[i];
        if (a->rows != b->rows || a->cols != b->cols)
            throw std::invalid_argument("Model: shape mismatch for parameter " + ref.names()[i]);
    }
}

std::vector<ParamGroup> param_breakdown(const Model& m) {
    std::vector<ParamGroup> groups{{"input", 0}, {"encoder", 0}, {"optional", 0}, {"edge", 0}, {"heatmap", 0}, {"decoder", 0}};
    const auto& names = m.params().names();
    for (std::size_t i = 0; i < names.size(); ++i) {
        const std::string head = names[i].substr(0, names[i].find('.'));
        const std::size_t c = m.params().tensors()[i]->size();
        std::size_t g = 0;
        if (head == "init") g = 0;
        else if (head == "enc") g = 1;
        else if (head == "opt") g = 2;
        else if (head == "edge") g = 3;
        else if (head == "heat") g = 4;
        else g = 5;
        groups[g].count += c;
    }
    return groups;
}

std::size_t param_total(const Model& m) { return m.params().count(); }

double edge_share(const Model& m) {
    std::size_t edge = 0;
    for (const auto& g : param_breakdown(m))
        if (g.module == "edge" || g.module == "heatmap") edge += g.count;
    return static_cast<double>(edge) / static_cast<double>(param_total(m));
}

EdgeSet build_edge_set(const Instance& inst, const DistanceMatrix& dist, std::size_t knn, std::size_t feature_dim) {
    if (feature_dim < 3) throw std::invalid_argument("build_edge_set: feature width must be at least 3");
    const std::size_t nodes = inst.num_customers() + 1;
    const std::size_t k = knn == 0 ? nodes - 1 : std::min(knn, nodes - 1);
    EdgeSet e;
    e.num_nodes = nodes;
    e.feature_dim = feature_dim;
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < nodes; ++i) {
        order.clear();
        for (std::size_t j = 0; j < nodes; ++j)
            if (j != i) order.push_back(j);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dist(i, a) < dist(i, b); });
        for (std::size_t t = 0; t < k; ++t) {
            const std::size_t j = order[t];
            e.src.push_back(i);
            e.dst.push_back(j);
            const std::size_t off = e.features.size();
            e.features.resize(off + feature_dim, 0.0);
            e.features[off] = dist(i, j);
            e.features[off + 1] = dist(j, i);
            e.features[off + 2] = dist(i, j) - dist(j, i);
        }
    }
    return e;
}

ad::Var node_features(const Instance& inst) {
    const std::size_t n = inst.num_customers();
    const std::size_t f = customer_feature_dim(inst.variant);
    std::vector<double> x(n * f);
    for (std::size_t i = 0; i < n; ++i) {
        double* r = x.data() + i * f;
        r[0] = inst.customers[i].x;
        r[1] = inst.customers[i].y;
        r[2] = static_cast<double>(inst.demands[i]) / inst.capacity;
        if (inst.variant == Variant::VRPTW) {
            r[3] = inst.time_windows[i + 1].early / inst.horizon;
            r[4] = inst.time_windows[i + 1].late / inst.horizon;
            r[5] = inst.service_times[i + 1] / inst.horizon;
        }
    }
    return ad::tensor(n, f, std::move(x));
}

namespace {

AttentionParams attn_params(const Model& m, const std::string& pre) {
    return {m.p(pre + "Wq"), m.p(pre + "Wk"), m.p(pre + "Wv"), m.p(pre + "Wo"), m.p(pre + "bo"), m.config().heads};
}

ad::Var linear(const ad::Var& x, const ad::Var& w, const ad::Var& b) { return ad::add_row(ad::matmul(x, w), b); }

void check_variant(const Instance& inst, const Model& m) {
    if (inst.variant != m.config().variant)
        throw std::invalid_argument("model configured for " + std::string(to_string(m.config().variant)) +
                                    " but instance is " + std::string(to_string(inst.variant)));
}

} // namespace

ad::Var encode(const Instance& inst, const Model& m, const ForwardOptions& opt) {
    const ModelConfig& c = m.config();
    const ClusterIndex index = build_cluster_index(inst.customers, inst.depot, c.cluster_size, c.rounds, c.smoothing);
    return encode(inst, m, index, opt);
}

ad::Var encode(const Instance& inst, const Model& m, const ClusterIndex& index, const ForwardOptions& opt) {
    check_variant(inst, m);
    const ModelConfig& c = m.config();
    const ad::Var depot = ad::tensor(1, 2, {inst.depot.x, inst.depot.y});
    ad::Var h = ad::concat_rows({linear(depot, m.p("init.depot.W"), m.p("init.depot.b")),
                                 linear(node_features(inst), m.p("init.customer.W"), m.p("init.customer.b"))});
    for (std::size_t l = 0; l < c.layers; ++l) {
        const std::string pre = "enc." + std::to_string(l) + ".";
        const AttentionParams ap = attn_params(m, pre + "attn.");
        const ad::Var a = opt.dense_attention ? dense_attention(h, ap) : clustered_attention(h, index, ap);
        h = ad::norm_affine(ad::add(h, a), m.p(pre + "norm1.gamma"), m.p(pre + "norm1.beta"));
        const ad::Var f =
            linear(ad::silu(linear(h, m.p(pre + "ff.W1"), m.p(pre + "ff.b1"))), m.p(pre + "ff.W2"), m.p(pre + "ff.b2"));
        h = ad::norm_affine(ad::add(h, f), m.p(pre + "norm2.gamma"), m.p(pre + "norm2.beta"));
    }
    return h;
}

ad::Var encode_optional(const Instance& inst, const Model& m) {
    if (!has_optional_nodes(inst.variant) || !m.params().contains("opt.init.W"))
        throw std::invalid_argument("encode_optional: variant has no optional nodes");
    if (inst.optional_nodes.empty()) throw std::invalid_argument("encode_optional: instance has no optional nodes");
    std::vector<double> x;
    for (const auto& pt : inst.optional_nodes) {
        x.push_back(pt.x);
        x.push_back(pt.y);
    }
    const ad::Var h0 = linear(ad::tensor(inst.optional_nodes.size(), 2, std::move(x)), m.p("opt.init.W"), m.p("opt.init.b"));
    const ad::Var a = dense_attention(h0, attn_params(m, "opt.attn."));
    return ad::norm_affine(ad::add(h0, a), m.p("opt.norm.gamma"), m.p("opt.norm.beta"));
}

namespace {

ad::Var fusion_softmax(const ad::Var& hc, const ad::Var& h_opt, const Model& m, double tau, const std::vector<double>& noise) {
    if (!(tau > 0.0)) throw std::invalid_argument("fuse: temperature must be positive");
    const std::size_t n = hc->rows, f = h_opt->rows;
    if (!noise.empty() && noise.size() != n * f) throw std::invalid_argument("fuse: noise size must be n x f");
    const double inv = 1.0 / std::sqrt(static_cast<double>(m.config().d));
    ad::Var logits = ad::scale(ad::matmul_nt(ad::matmul(hc, m.p("opt.fuse.Wq")), ad::matmul(h_opt, m.p("opt.fuse.Wk"))), inv);
    if (!noise.empty()) logits = ad::add(logits, ad::tensor(n, f, noise));
    return ad::masked_softmax(ad::scale(logits, 1.0 / tau), {});
}

ad::Var customer_rows(const ad::Var& h) {
    std::vector<std::size_t> rows(h->rows - 1);
    std::iota(rows.begin(), rows.end(), std::size_t{1});
    return ad::gather_rows(h, rows);
}

} // namespace

std::vector<double> fusion_weights(const ad::Var& h_nodes, const ad::Var& h_opt, const Model& m, double tau,
                                   const std::vector<double>& noise) {
    ad::NoGrad ng;
    return fusion_softmax(customer_rows(h_nodes), h_opt, m, tau, noise)->val;
}

ad::Var fuse(const ad::Var& h_nodes, const ad::Var& h_opt, const Model& m, double tau, const std::vector<double>& noise) {
    if (!m.params().contains("opt.gate")) throw std::invalid_argument("fuse: variant has no optional nodes");
    const ad::Var hc = customer_rows(h_nodes);
    const ad::Var w = fusion_softmax(hc, h_opt, m, tau, noise);
    const ad::Var mixed = ad::add(hc, ad::mul_scalar(ad::matmul(w, h_opt), m.p("opt.gate")));
    return ad::concat_rows({ad::gather_rows(h_nodes, {0}), mixed});
}

ad::Var edge_embed(const ad::Var& h_nodes, const EdgeSet& edges, const Model& m) {
    if (edges.size() == 0) throw std::invalid_argument("edge_embed: empty edge set");
    if (edges.feature_dim != m.config().edge_dim || edges.features.size() != edges.size() * edges.feature_dim)
        throw std::invalid_argument("edge_embed: edge features missing or of the wrong width");
    if (h_nodes->rows < edges.num_nodes) throw std::invalid_argument("edge_embed: embedding rows do not cover the edge set");
    const ad::Var red = linear(h_nodes, m.p("edge.reduce.W"), m.p("edge.reduce.b"));
    const ad::Var xe = ad::tensor(edges.size(), edges.feature_dim, edges.features);
    const ad::Var pre = ad::add_row(ad::add(ad::add(ad::matmul(ad::gather_rows(red, edges.src), m.p("edge.W1")),
                                                    ad::matmul(ad::gather_rows(red, edges.dst), m.p("edge.W2"))),
                                            ad::matmul(xe, m.p("edge.W3"))),
                                    m.p("edge.b"));
    return ad::add(xe, ad::silu(ad::norm_affine(pre, m.p("edge.norm.gamma"), m.p("edge.norm.beta"))));
}

ad::Var heatmap(const ad::Var& h_edges, const EdgeSet& edges, const Model& m, std::size_t total_nodes) {
    ad::Var z = ad::silu(linear(h_edges, m.p("heat.W1"), m.p("heat.b1")));
    z = ad::silu(linear(z, m.p("heat.W2"), m.p("heat.b2")));
    const ad::Var out = ad::tanh(linear(z, m.p("heat.W3"), m.p("heat.b3")));
    std::vector<std::size_t> pos(edges.size());
    for (std::size_t e = 0; e < edges.size(); ++e) pos[e] = edges.src[e] * total_nodes + edges.dst[e];
    return ad::scatter(out, pos, total_nodes, total_nodes);
}

Encoded encode_instance(const Instance& inst, const DistanceMatrix& dist, const Model& m, const ForwardOptions& opt) {
    check_variant(inst, m);
    Encoded enc;
    enc.num_customers = inst.num_customers();
    enc.total_nodes = inst.num_nodes();
    ad::Var h = encode(inst, m, opt);
    if (has_optional_nodes(inst.variant)) {
        const ad::Var ho = encode_optional(inst, m);
        h = fuse(h, ho, m, opt.tau, opt.gumbel_noise);
        enc.nodes = ad::concat_rows({h, ho});
    } else {
        enc.nodes = h;
    }
    enc.keys = ad::matmul(enc.nodes, m.p("dec.Wk"));
    enc.values = ad::matmul(enc.nodes, m.p("dec.Wv"));
    if (opt.use_heatmap) {
        const EdgeSet edges = build_edge_set(inst, dist, m.config().knn, m.config().edge_dim);
        enc.heat = heatmap(edge_embed(h, edges, m), edges, m, enc.total_nodes);
    }
    return enc;
}

std::vector<double> query_context(const RolloutState& s, const Instance& inst) {
    std::vector<double> c{static_cast<double>(inst.capacity - s.load_used) / inst.capacity};
    if (has_resource(inst.variant)) c.push_back(s.resource / inst.resource_max);
    if (inst.variant == Variant::VRPTW) c.push_back(s.time / inst.horizon);
    return c;
}

double optional_heat_term(const RolloutState& s, const Instance& inst) { return -2.0 * s.resource / inst.resource_max; }

ad::Var decode_logp(const Encoded& enc, const Instance& inst, const Model& m, const std::vector<const RolloutState*>& states,
                    const std::vector<std::uint8_t>& mask) {
    const std::size_t P = states.size(), N = enc.total_nodes, d = m.config().d;
    if (P == 0) throw std::invalid_argument("decode_logp: no states");
    if (mask.size() != P * N) throw std::invalid_argument("decode_logp: mask must be P x N");
    for (std::size_t r = 0; r < P; ++r)
        if (std::find(mask.begin() + static_cast<std::ptrdiff_t>(r * N), mask.begin() + static_cast<std::ptrdiff_t>((r + 1) * N),
                      std::uint8_t{1}) == mask.begin() + static_cast<std::ptrdiff_t>((r + 1) * N))
            throw std::invalid_argument("decode_logp: empty mask for trajectory " + std::to_string(r));

    std::vector<std::size_t> cur(P);
    const std::size_t cd = context_dim(inst.variant);
    std::vector<double> ctx;
    ctx.reserve(P * cd);
    for (std::size_t r = 0; r < P; ++r) {
        cur[r] = states[r]->current;
        const auto c = query_context(*states[r], inst);
        ctx.insert(ctx.end(), c.begin(), c.end());
    }
    const ad::Var q = ad::matmul(ad::concat_cols({ad::gather_rows(enc.nodes, cur), ad::tensor(P, cd, std::move(ctx))}),
                                 m.p("dec.Wctx"));
    const ad::Var glimpse =
        ad::add_row(ad::matmul(ad::attention(q, enc.keys, enc.values, m.config().heads, mask), m.p("dec.Wo")), m.p("dec.bo"));
    const ad::Var score = ad::scale(ad::matmul_nt(glimpse, enc.nodes), 1.0 / std::sqrt(static_cast<double>(d)));
    ad::Var logits = ad::scale(ad::tanh(score), m.config().logit_clip);
    if (enc.heat) logits = ad::add(logits, ad::gather_rows(enc.heat, cur));
    if (enc.heat && has_optional_nodes(inst.variant)) {
        std::vector<double> term(P * N, 0.0);
        for (std::size_t r = 0; r < P; ++r) {
            const double t = optional_heat_term(*states[r], inst);
            for (std::size_t j = enc.num_customers + 1; j < N; ++j) term[r * N + j] = t;
        }
        logits = ad::add(logits, ad::tensor(P, N, std::move(term)));
    }
    return ad::masked_log_softmax(logits, mask);
}

std::vector<double> decode_step(const RolloutState& s, const Encoded& enc, const Instance& inst, const Model& m,
                                const FeasibilityMask& mask) {
    if (!mask.any()) throw std::invalid_argument("decode_step: empty mask");
    ad::NoGrad ng;
    const std::vector<std::uint8_t> mk(mask.selectable.begin(), mask.selectable.end());
    const ad::Var lp = decode_logp(enc, inst, m, {&s}, mk);
    std::vector<double> p(lp->size());
    for (std::size_t j = 0; j < p.size(); ++j) p[j] = mk[j] ? std::exp(lp->val[j]) : 0.0;
    return p;
}

double tau_schedule(int epoch) {
    if (epoch < 0) throw std::invalid_argument("tau_schedule: negative epoch");
    return std::max(0.2, std::pow(0.99, epoch));
}

} // namespace rwvrp
