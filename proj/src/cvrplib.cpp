#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

#include "rwvrp/instance.hpp"

namespace rwvrp {

ParseError::ParseError(const std::string& what, std::size_t line_no)
    : std::runtime_error("line " + std::to_string(line_no) + ": " + what), line(line_no) {}

namespace {

struct Line {
    std::size_t number;
    std::vector<std::string> tokens;
};

std::vector<std::string> split_tokens(const std::string& s) {
    std::istringstream in(s);
    std::vector<std::string> out;
    std::string tok;
    while (in >> tok) out.push_back(tok);
    return out;
}

double to_number(const std::string& tok, std::size_t line) {
    double v = 0.0;
    const char* b = tok.data();
    const char* e = tok.data() + tok.size();
    auto [ptr, ec] = std::from_chars(b, e, v);
    if (ec != std::errc() || ptr != e) throw ParseError("non-numeric token '" + tok + "'", line);
    return v;
}

long to_integer(const std::string& tok, std::size_t line) {
    const double v = to_number(tok, line);
    if (v != std::floor(v)) throw ParseError("expected integer, got '" + tok + "'", line);
    return static_cast<long>(v);
}

std::string upper(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::toupper(c); });
    return s;
}

bool is_section_keyword(const std::string& tok) {
    return tok.find("_SECTION") != std::string::npos || tok == "EOF";
}

} // namespace

Instance parse_cvrplib(std::string_view text) {
    // Tokenize into lines, keeping 1-based line numbers for diagnostics.
    std::vector<Line> lines;
    {
        std::istringstream in{std::string(text)};
        std::string raw;
        std::size_t no = 0;
        while (std::getline(in, raw)) {
            ++no;
            // "KEY : VALUE" and "KEY: VALUE" are both common.
            for (char& c : raw)
                if (c == ':') c = ' ';
            auto toks = split_tokens(raw);
            if (!toks.empty()) lines.push_back({no, std::move(toks)});
        }
    }

    std::map<std::string, std::string> header;
    std::map<std::string, std::vector<Line>> sections;
    std::size_t dimension_line = 0;
    for (std::size_t i = 0; i < lines.size();) {
        const std::string key = upper(lines[i].tokens[0]);
        if (key == "EOF") break;
        if (is_section_keyword(key)) {
            std::vector<Line> body;
            std::size_t j = i + 1;
            while (j < lines.size()) {
                const std::string k = upper(lines[j].tokens[0]);
                if (is_section_keyword(k) || std::isalpha(static_cast<unsigned char>(k[0]))) break;
                body.push_back(lines[j]);
                ++j;
            }
            sections[key] = std::move(body);
            i = j;
            continue;
        }
        std::string value;
        for (std::size_t t = 1; t < lines[i].tokens.size(); ++t) value += (t > 1 ? " " : "") + lines[i].tokens[t];
        header[key] = value;
        if (key == "DIMENSION") dimension_line = lines[i].number;
        ++i;
    }

    auto require_header = [&](const std::string& k) -> const std::string& {
        auto it = header.find(k);
        if (it == header.end()) throw ParseError("missing mandatory field " + k, 0);
        return it->second;
    };
    auto require_section = [&](const std::string& k) -> const std::vector<Line>& {
        auto it = sections.find(k);
        if (it == sections.end()) throw ParseError("missing mandatory section " + k, 0);
        return it->second;
    };

    const long dim = to_integer(require_header("DIMENSION"), dimension_line);
    if (dim < 2) throw ParseError("DIMENSION must be at least 2", dimension_line);
    const long capacity = to_integer(require_header("CAPACITY"), 0);
    const std::string ew_type = header.count("EDGE_WEIGHT_TYPE") ? upper(header["EDGE_WEIGHT_TYPE"]) : "EUC_2D";
    const bool explicit_matrix = ew_type == "EXPLICIT";
    if (!explicit_matrix && ew_type != "EUC_2D")
        throw ParseError("unsupported EDGE_WEIGHT_TYPE " + ew_type, 0);

    const auto& coord_sec = require_section("NODE_COORD_SECTION");
    const auto& demand_sec = require_section("DEMAND_SECTION");
    const auto& depot_sec = require_section("DEPOT_SECTION");
    const auto n = static_cast<std::size_t>(dim);

    auto check_count = [&](const std::vector<Line>& sec, const std::string& name) {
        if (sec.size() != n) {
            const std::size_t at = sec.empty() ? 0 : sec.back().number;
            throw ParseError(name + " has " + std::to_string(sec.size()) + " entries, DIMENSION is " + std::to_string(n), at);
        }
    };
    check_count(coord_sec, "NODE_COORD_SECTION");
    check_count(demand_sec, "DEMAND_SECTION");

    std::vector<Point> raw(n);
    std::vector<bool> seen(n, false);
    for (const Line& l : coord_sec) {
        if (l.tokens.size() < 3) throw ParseError("NODE_COORD_SECTION entry needs id x y", l.number);
        const long id = to_integer(l.tokens[0], l.number);
        if (id < 1 || static_cast<std::size_t>(id) > n) throw ParseError("NODE_COORD_SECTION node id out of range", l.number);
        raw[id - 1] = {to_number(l.tokens[1], l.number), to_number(l.tokens[2], l.number)};
        seen[id - 1] = true;
    }
    if (std::find(seen.begin(), seen.end(), false) != seen.end())
        throw ParseError("NODE_COORD_SECTION is missing node ids", coord_sec.back().number);
    std::vector<long> demand(n, 0);
    for (const Line& l : demand_sec) {
        if (l.tokens.size() < 2) throw ParseError("DEMAND_SECTION entry needs id demand", l.number);
        const long id = to_integer(l.tokens[0], l.number);
        if (id < 1 || static_cast<std::size_t>(id) > n) throw ParseError("DEMAND_SECTION node id out of range", l.number);
        demand[id - 1] = to_integer(l.tokens[1], l.number);
    }
    long depot_id = -1;
    for (const Line& l : depot_sec) {
        for (const auto& tok : l.tokens) {
            const long v = to_integer(tok, l.number);
            if (v == -1) break;
            if (depot_id != -1) throw ParseError("only single-depot records are supported", l.number);
            if (v < 1 || static_cast<std::size_t>(v) > n) throw ParseError("depot id out of range", l.number);
            depot_id = v;
        }
    }
    if (depot_id == -1) throw ParseError("DEPOT_SECTION names no depot", depot_sec.empty() ? 0 : depot_sec.front().number);

    // Affine rescale into [0,1]^2 with a single factor, preserving aspect ratio.
    double minx = std::numeric_limits<double>::infinity(), miny = minx;
    double maxx = -minx, maxy = -minx;
    for (const Point& p : raw) {
        minx = std::min(minx, p.x);
        miny = std::min(miny, p.y);
        maxx = std::max(maxx, p.x);
        maxy = std::max(maxy, p.y);
    }
    const double span = std::max(maxx - minx, maxy - miny);
    const double scale = span > 0.0 ? 1.0 / span : 1.0;
    auto rescale = [&](Point p) {
        return Point{std::clamp((p.x - minx) * scale, 0.0, 1.0), std::clamp((p.y - miny) * scale, 0.0, 1.0)};
    };

    Instance inst;
    inst.name = header.count("NAME") ? header["NAME"] : std::string();
    inst.capacity = static_cast<int>(capacity);
    inst.scale = scale;
    std::vector<std::size_t> order;  // original ids in new node order
    order.push_back(static_cast<std::size_t>(depot_id - 1));
    inst.depot = rescale(raw[depot_id - 1]);
    for (std::size_t i = 0; i < n; ++i) {
        if (static_cast<long>(i) == depot_id - 1) continue;
        order.push_back(i);
        inst.customers.push_back(rescale(raw[i]));
        if (demand[i] <= 0) throw ParseError("customer " + std::to_string(i + 1) + " has nonpositive demand", 0);
        inst.demands.push_back(static_cast<int>(demand[i]));
    }

    if (explicit_matrix) {
        const auto& w_sec = require_section("EDGE_WEIGHT_SECTION");
        const std::string fmt = header.count("EDGE_WEIGHT_FORMAT") ? upper(header["EDGE_WEIGHT_FORMAT"]) : "FULL_MATRIX";
        if (fmt != "FULL_MATRIX") throw ParseError("only FULL_MATRIX explicit weights are supported", 0);
        std::vector<double> flat;
        std::size_t last_line = 0;
        for (const Line& l : w_sec) {
            for (const auto& tok : l.tokens) flat.push_back(to_number(tok, l.number));
            last_line = l.number;
        }
        if (flat.size() != n * n)
            throw ParseError("EDGE_WEIGHT_SECTION has " + std::to_string(flat.size()) + " values, expected " + std::to_string(n * n), last_line);
        std::vector<double> m(n * n);
        for (std::size_t a = 0; a < n; ++a)
            for (std::size_t b = 0; b < n; ++b) m[a * n + b] = a == b ? 0.0 : flat[order[a] * n + order[b]] * scale;
        inst.variant = Variant::AVRP;
        inst.asym_matrix = std::move(m);
    } else {
        inst.variant = Variant::VRP;
    }
    check_instance(inst);
    return inst;
}

} // namespace rwvrp
