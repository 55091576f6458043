#include <bit>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "rwvrp/model.hpp"

namespace rwvrp {

namespace {

constexpr int kCheckpointVersion = 1;

struct Fnv {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    void byte(std::uint8_t b) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) byte(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void str(const std::string& s) {
        u64(s.size());
        for (char c : s) byte(static_cast<std::uint8_t>(c));
    }
};

std::string hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

} // namespace

std::uint64_t params_hash(const ParamSet& p) {
    Fnv f;
    for (std::size_t i = 0; i < p.names().size(); ++i) {
        const auto& t = p.tensors()[i];
        f.str(p.names()[i]);
        f.u64(t->rows);
        f.u64(t->cols);
        for (double v : t->val) f.u64(std::bit_cast<std::uint64_t>(v));
    }
    return f.h;
}

std::string checkpoint_text(const Model& m) {
    nlohmann::json j;
    j["format_version"] = kCheckpointVersion;
    j["config"] = to_json(m.config());
    nlohmann::json params = nlohmann::json::array();
    for (std::size_t i = 0; i < m.params().names().size(); ++i) {
        const auto& t = m.params().tensors()[i];
        params.push_back({{"name", m.params().names()[i]}, {"shape", {t->rows, t->cols}}, {"values", t->val}});
    }
    j["params"] = std::move(params);
    j["hash"] = hex(params_hash(m.params()));
    return j.dump() + "\n";
}

Model checkpoint_from_text(const std::string& text) {
    const nlohmann::json j = nlohmann::json::parse(text);
    if (!j.contains("format_version")) throw std::runtime_error("checkpoint: missing format_version");
    if (j["format_version"].get<int>() != kCheckpointVersion)
        throw std::runtime_error("checkpoint: unsupported format_version " + j["format_version"].dump());
    const ModelConfig cfg = model_config_from_json(j.at("config"));
    ParamSet p = declare_params(cfg);
    const auto& arr = j.at("params");
    if (arr.size() != p.names().size()) throw std::runtime_error("checkpoint: parameter count does not match the configuration");
    for (std::size_t i = 0; i < arr.size(); ++i) {
        const auto& e = arr[i];
        if (e.at("name").get<std::string>() != p.names()[i])
            throw std::runtime_error("checkpoint: unexpected parameter " + e.at("name").get<std::string>());
        auto& t = *p.tensors()[i];
        const auto shape = e.at("shape").get<std::vector<std::size_t>>();
        if (shape.size() != 2 || shape[0] != t.rows || shape[1] != t.cols)
            throw std::runtime_error("checkpoint: shape mismatch for " + p.names()[i]);
        t.val = e.at("values").get<std::vector<double>>();
        if (t.val.size() != t.rows * t.cols) throw std::runtime_error("checkpoint: value count mismatch for " + p.names()[i]);
    }
    if (j.at("hash").get<std::string>() != hex(params_hash(p))) throw std::runtime_error("checkpoint: content hash mismatch");
    return Model(cfg, std::move(p));
}

void save_checkpoint(const Model& m, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path);
    out << checkpoint_text(m);
}

Model load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read checkpoint " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return checkpoint_from_text(ss.str());
}

} // namespace rwvrp
