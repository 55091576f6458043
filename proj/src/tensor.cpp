#include "rwvrp/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <unordered_set>

#include "rwvrp/rng.hpp"

namespace rwvrp {
namespace ad {

namespace {

thread_local bool g_grad_enabled = true;

constexpr double kNormEps = 1e-5;
const double kNegInf = -std::numeric_limits<double>::infinity();

void shape_error(const char* op, const Var& a, const Var& b) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + std::to_string(a->rows) + "x" +
                                std::to_string(a->cols) + " vs " + std::to_string(b->rows) + "x" +
                                std::to_string(b->cols));
}

Var make(std::size_t r, std::size_t c, Op op, std::initializer_list<Var> inputs) {
    auto n = std::make_shared<Node>();
    n->rows = r;
    n->cols = c;
    n->val.assign(r * c, 0.0);
    n->op = op;
    if (g_grad_enabled) {
        for (const auto& v : inputs)
            if (v->requires_grad) n->requires_grad = true;
        if (n->requires_grad) n->in.assign(inputs.begin(), inputs.end());
    }
    return n;
}

Var make_n(std::size_t r, std::size_t c, Op op, const std::vector<Var>& inputs) {
    auto n = std::make_shared<Node>();
    n->rows = r;
    n->cols = c;
    n->val.assign(r * c, 0.0);
    n->op = op;
    if (g_grad_enabled) {
        for (const auto& v : inputs)
            if (v->requires_grad) n->requires_grad = true;
        if (n->requires_grad) n->in = inputs;
    }
    return n;
}

std::vector<double>& g(Node& n) {
    if (n.grad.size() != n.val.size()) n.grad.assign(n.val.size(), 0.0);
    return n.grad;
}

// C[m,n] += A[m,k] B[k,n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* ci = c + i * n;
        const double* ai = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ai[p];
            if (av == 0.0) continue;
            const double* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

// C[m,n] += A[m,k] B[n,k]ᵀ
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const double* bj = b + j * k;
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
            c[i * n + j] += s;
        }
    }
}

// C[k,n] += A[m,k]ᵀ B[m,n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        const double* bi = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ai[p];
            if (av == 0.0) continue;
            double* cp = c + p * n;
            for (std::size_t j = 0; j < n; ++j) cp[j] += av * bi[j];
        }
    }
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void softmax_rows(const std::vector<double>& a, const std::vector<std::uint8_t>& mask, std::size_t rows,
                  std::size_t cols, std::vector<double>& out, bool log_space) {
    for (std::size_t i = 0; i < rows; ++i) {
        const double* ai = a.data() + i * cols;
        double* oi = out.data() + i * cols;
        const std::uint8_t* mi = mask.empty() ? nullptr : mask.data() + i * cols;
        double mx = kNegInf;
        for (std::size_t j = 0; j < cols; ++j)
            if (!mi || mi[j]) mx = std::max(mx, ai[j]);
        if (mx == kNegInf) throw std::invalid_argument("masked_softmax: row " + std::to_string(i) + " fully masked");
        double z = 0.0;
        for (std::size_t j = 0; j < cols; ++j)
            if (!mi || mi[j]) z += std::exp(ai[j] - mx);
        const double lz = mx + std::log(z);
        for (std::size_t j = 0; j < cols; ++j) {
            if (mi && !mi[j])
                oi[j] = log_space ? kNegInf : 0.0;
            else
                oi[j] = log_space ? ai[j] - lz : std::exp(ai[j] - lz);
        }
    }
}

void backward_node(Node& n) {
    const std::vector<double>& dy = n.grad;
    switch (n.op) {
    case Op::Leaf:
        break;
    case Op::MatMul: {
        Node& a = *n.in[0];
        Node& b = *n.in[1];
        if (a.requires_grad) gemm_nt(dy.data(), b.val.data(), g(a).data(), a.rows, n.cols, a.cols);
        if (b.requires_grad) gemm_tn(a.val.data(), dy.data(), g(b).data(), a.rows, a.cols, n.cols);
        break;
    }
    case Op::MatMulNT: {
        Node& a = *n.in[0];
        Node& b = *n.in[1];
        if (a.requires_grad) gemm_nn(dy.data(), b.val.data(), g(a).data(), a.rows, b.rows, a.cols);
        if (b.requires_grad) gemm_tn(dy.data(), a.val.data(), g(b).data(), a.rows, b.rows, a.cols);
        break;
    }
    case Op::Add:
    case Op::Sub: {
        const double sb = n.op == Op::Add ? 1.0 : -1.0;
        if (n.in[0]->requires_grad) {
            auto& ga = g(*n.in[0]);
            for (std::size_t i = 0; i < dy.size(); ++i) ga[i] += dy[i];
        }
        if (n.in[1]->requires_grad) {
            auto& gb = g(*n.in[1]);
            for (std::size_t i = 0; i < dy.size(); ++i) gb[i] += sb * dy[i];
        }
        break;
    }
    case Op::AddRow: {
        if (n.in[0]->requires_grad) {
            auto& ga = g(*n.in[0]);
            for (std::size_t i = 0; i < dy.size(); ++i) ga[i] += dy[i];
        }
        if (n.in[1]->requires_grad) {
            auto& gb = g(*n.in[1]);
            for (std::size_t r = 0; r < n.rows; ++r)
                for (std::size_t c = 0; c < n.cols; ++c) gb[c] += dy[r * n.cols + c];
        }
        break;
    }
    case Op::Mul: {
        Node& a = *n.in[0];
        Node& b = *n.in[1];
        if (a.requires_grad) {
            auto& ga = g(a);
            for (std::size_t i = 0; i < dy.size(); ++i) ga[i] += dy[i] * b.val[i];
        }
        if (b.requires_grad) {
            auto& gb = g(b);
            for (std::size_t i = 0; i < dy.size(); ++i) gb[i] += dy[i] * a.val[i];
        }
        break;
    }
    case Op::Scale: {
        auto& ga = g(*n.in[0]);
        for (std::size_t i = 0; i < dy.size(); ++i) ga[i] += n.scalar * dy[i];
        break;
    }
    case Op::MulScalar: {
        Node& a = *n.in[0];
        Node& s = *n.in[1];
        const double sv = s.val[0];
        if (a.requires_grad) {
            auto& ga = g(a);
            for (std::size_t i = 0; i < dy.size(); ++i) ga[i] += sv * dy[i];
        }
        if (s.requires_grad) {
            double acc = 0.0;
            for (std::size_t i = 0; i < dy.size(); ++i) acc += dy[i] * a.val[i];
            g(s)[0] += acc;
        }
        break;
    }
    case Op::ConcatCols: {
        std::size_t off = 0;
        for (const auto& p : n.in) {
            if (p->requires_grad) {
                auto& gp = g(*p);
                for (std::size_t r = 0; r < n.rows; ++r)
                    for (std::size_t c = 0; c < p->cols; ++c) gp[r * p->cols + c] += dy[r * n.cols + off + c];
            }
            off += p->cols;
        }
        break;
    }
    case Op::ConcatRows: {
        std::size_t off = 0;
        for (const auto& p : n.in) {
            if (p->requires_grad) {
                auto& gp = g(*p);
                for (std::size_t i = 0; i < p->size(); ++i) gp[i] += dy[off + i];
            }
            off += p->size();
        }
        break;
    }
    case Op::GatherRows: {
        auto& ga = g(*n.in[0]);
        for (std::size_t r = 0; r < n.rows; ++r) {
            const std::size_t src = n.idx[r];
            for (std::size_t c = 0; c < n.cols; ++c) ga[src * n.cols + c] += dy[r * n.cols + c];
        }
        break;
    }
    case Op::SliceCols: {
        Node& a = *n.in[0];
        auto& ga = g(a);
        for (std::size_t r = 0; r < n.rows; ++r)
            for (std::size_t c = 0; c < n.cols; ++c) ga[r * a.cols + n.p0 + c] += dy[r * n.cols + c];
        break;
    }
    case Op::ScatterAddRows: {
        Node& a = *n.in[0];
        auto& ga = g(a);
        for (std::size_t r = 0; r < a.rows; ++r) {
            const double w = n.aux[r];
            if (w == 0.0) continue;
            const std::size_t t = n.idx[r];
            for (std::size_t c = 0; c < a.cols; ++c) ga[r * a.cols + c] += w * dy[t * a.cols + c];
        }
        break;
    }
    case Op::Scatter: {
        auto& ga = g(*n.in[0]);
        for (std::size_t i = 0; i < n.idx.size(); ++i) ga[i] += dy[n.idx[i]];
        break;
    }
    case Op::MaskedSoftmax: {
        auto& ga = g(*n.in[0]);
        for (std::size_t r = 0; r < n.rows; ++r) {
            const double* p = n.val.data() + r * n.cols;
            const double* d = dy.data() + r * n.cols;
            double dot = 0.0;
            for (std::size_t c = 0; c < n.cols; ++c) dot += p[c] * d[c];
            for (std::size_t c = 0; c < n.cols; ++c) ga[r * n.cols + c] += p[c] * (d[c] - dot);
        }
        break;
    }
    case Op::MaskedLogSoftmax: {
        auto& ga = g(*n.in[0]);
        for (std::size_t r = 0; r < n.rows; ++r) {
            const double* y = n.val.data() + r * n.cols;
            const double* d = dy.data() + r * n.cols;
            const std::uint8_t* m = n.mask.empty() ? nullptr : n.mask.data() + r * n.cols;
            double s = 0.0;
            for (std::size_t c = 0; c < n.cols; ++c)
                if (!m || m[c]) s += d[c];
            for (std::size_t c = 0; c < n.cols; ++c)
                if (!m || m[c]) ga[r * n.cols + c] += d[c] - std::exp(y[c]) * s;
        }
        break;
    }
    case Op::Tanh: {
        auto& ga = g(*n.in[0]);
        for (std::size_t i = 0; i < dy.size(); ++i) ga[i] += dy[i] * (1.0 - n.val[i] * n.val[i]);
        break;
    }
    case Op::Silu: {
        Node& a = *n.in[0];
        auto& ga = g(a);
        for (std::size_t i = 0; i < dy.size(); ++i) {
            const double x = a.val[i];
            const double s = sigmoid(x);
            ga[i] += dy[i] * (s + x * s * (1.0 - s));
        }
        break;
    }
    case Op::NormAffine: {
        Node& a = *n.in[0];
        Node& gamma = *n.in[1];
        Node& beta = *n.in[2];
        const std::size_t m = n.rows, k = n.cols;
        const double* xh = n.aux.data();
        const double* inv = n.aux.data() + m * k;
        std::vector<double> sdx(k, 0.0), sdxx(k, 0.0);
        if (gamma.requires_grad || beta.requires_grad) {
            auto* gg = gamma.requires_grad ? g(gamma).data() : nullptr;
            auto* gb = beta.requires_grad ? g(beta).data() : nullptr;
            for (std::size_t r = 0; r < m; ++r)
                for (std::size_t c = 0; c < k; ++c) {
                    if (gg) gg[c] += dy[r * k + c] * xh[r * k + c];
                    if (gb) gb[c] += dy[r * k + c];
                }
        }
        if (a.requires_grad) {
            auto& ga = g(a);
            for (std::size_t r = 0; r < m; ++r)
                for (std::size_t c = 0; c < k; ++c) {
                    const double dxh = dy[r * k + c] * gamma.val[c];
                    sdx[c] += dxh;
                    sdxx[c] += dxh * xh[r * k + c];
                }
            const double fm = static_cast<double>(m);
            for (std::size_t r = 0; r < m; ++r)
                for (std::size_t c = 0; c < k; ++c) {
                    const double dxh = dy[r * k + c] * gamma.val[c];
                    ga[r * k + c] += inv[c] / fm * (fm * dxh - sdx[c] - xh[r * k + c] * sdxx[c]);
                }
        }
        break;
    }
    case Op::Mean:
    case Op::Sum: {
        Node& a = *n.in[0];
        auto& ga = g(a);
        const double d = n.op == Op::Mean ? dy[0] / static_cast<double>(a.size()) : dy[0];
        for (auto& x : ga) x += d;
        break;
    }
    case Op::Pick: {
        Node& a = *n.in[0];
        auto& ga = g(a);
        for (std::size_t r = 0; r < n.rows; ++r)
            if (n.aux[r] != 0.0) ga[r * a.cols + n.idx[r]] += n.aux[r] * dy[r];
        break;
    }
    case Op::Attention: {
        Node& q = *n.in[0];
        Node& k = *n.in[1];
        Node& v = *n.in[2];
        const std::size_t m = q.rows, s = k.rows, d = q.cols, heads = n.p0, dk = d / heads;
        const double inv = 1.0 / std::sqrt(static_cast<double>(dk));
        std::vector<double> dp(s), ds(s);
        double* gq = q.requires_grad ? g(q).data() : nullptr;
        double* gk = k.requires_grad ? g(k).data() : nullptr;
        double* gv = v.requires_grad ? g(v).data() : nullptr;
        for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t o = h * dk;
            const double* P = n.aux.data() + h * m * s;
            for (std::size_t i = 0; i < m; ++i) {
                const double* pi = P + i * s;
                const double* di = dy.data() + i * d + o;
                double dot = 0.0;
                for (std::size_t j = 0; j < s; ++j) {
                    if (pi[j] == 0.0) {
                        dp[j] = 0.0;
                        continue;
                    }
                    const double* vj = v.val.data() + j * d + o;
                    double acc = 0.0;
                    for (std::size_t c = 0; c < dk; ++c) acc += di[c] * vj[c];
                    dp[j] = acc;
                    dot += pi[j] * acc;
                    if (gv) {
                        double* gvj = gv + j * d + o;
                        for (std::size_t c = 0; c < dk; ++c) gvj[c] += pi[j] * di[c];
                    }
                }
                for (std::size_t j = 0; j < s; ++j) ds[j] = pi[j] * (dp[j] - dot) * inv;
                const double* qi = q.val.data() + i * d + o;
                for (std::size_t j = 0; j < s; ++j) {
                    if (ds[j] == 0.0) continue;
                    const double* kj = k.val.data() + j * d + o;
                    if (gq) {
                        double* gqi = gq + i * d + o;
                        for (std::size_t c = 0; c < dk; ++c) gqi[c] += ds[j] * kj[c];
                    }
                    if (gk) {
                        double* gkj = gk + j * d + o;
                        for (std::size_t c = 0; c < dk; ++c) gkj[c] += ds[j] * qi[c];
                    }
                }
            }
        }
        break;
    }
    }
}

} // namespace

double Node::item() const {
    if (val.size() != 1) throw std::invalid_argument("item: tensor is not a scalar");
    return val[0];
}

NoGrad::NoGrad() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGrad::~NoGrad() { g_grad_enabled = prev_; }
bool grad_enabled() { return g_grad_enabled; }

Var tensor(std::size_t rows, std::size_t cols, std::vector<double> values, bool requires_grad) {
    if (values.size() != rows * cols) throw std::invalid_argument("tensor: value count does not match shape");
    auto n = std::make_shared<Node>();
    n->rows = rows;
    n->cols = cols;
    n->val = std::move(values);
    n->requires_grad = requires_grad;
    return n;
}

Var zeros(std::size_t rows, std::size_t cols, bool requires_grad) {
    return tensor(rows, cols, std::vector<double>(rows * cols, 0.0), requires_grad);
}

Var full(std::size_t rows, std::size_t cols, double v) { return tensor(rows, cols, std::vector<double>(rows * cols, v)); }

Var matmul(const Var& a, const Var& b) {
    if (a->cols != b->rows) shape_error("matmul", a, b);
    Var out = make(a->rows, b->cols, Op::MatMul, {a, b});
    gemm_nn(a->val.data(), b->val.data(), out->val.data(), a->rows, a->cols, b->cols);
    return out;
}

Var matmul_nt(const Var& a, const Var& b) {
    if (a->cols != b->cols) shape_error("matmul_nt", a, b);
    Var out = make(a->rows, b->rows, Op::MatMulNT, {a, b});
    gemm_nt(a->val.data(), b->val.data(), out->val.data(), a->rows, a->cols, b->rows);
    return out;
}

Var add(const Var& a, const Var& b) {
    if (a->rows != b->rows || a->cols != b->cols) shape_error("add", a, b);
    Var out = make(a->rows, a->cols, Op::Add, {a, b});
    for (std::size_t i = 0; i < a->size(); ++i) out->val[i] = a->val[i] + b->val[i];
    return out;
}

Var sub(const Var& a, const Var& b) {
    if (a->rows != b->rows || a->cols != b->cols) shape_error("sub", a, b);
    Var out = make(a->rows, a->cols, Op::Sub, {a, b});
    for (std::size_t i = 0; i < a->size(); ++i) out->val[i] = a->val[i] - b->val[i];
    return out;
}

Var add_row(const Var& a, const Var& b) {
    if (b->rows != 1 || b->cols != a->cols) shape_error("add_row", a, b);
    Var out = make(a->rows, a->cols, Op::AddRow, {a, b});
    for (std::size_t r = 0; r < a->rows; ++r)
        for (std::size_t c = 0; c < a->cols; ++c) out->val[r * a->cols + c] = a->val[r * a->cols + c] + b->val[c];
    return out;
}

Var mul(const Var& a, const Var& b) {
    if (a->rows != b->rows || a->cols != b->cols) shape_error("mul", a, b);
    Var out = make(a->rows, a->cols, Op::Mul, {a, b});
    for (std::size_t i = 0; i < a->size(); ++i) out->val[i] = a->val[i] * b->val[i];
    return out;
}

Var scale(const Var& a, double s) {
    Var out = make(a->rows, a->cols, Op::Scale, {a});
    out->scalar = s;
    for (std::size_t i = 0; i < a->size(); ++i) out->val[i] = s * a->val[i];
    return out;
}

Var mul_scalar(const Var& a, const Var& s) {
    if (s->size() != 1) shape_error("mul_scalar", a, s);
    Var out = make(a->rows, a->cols, Op::MulScalar, {a, s});
    const double sv = s->val[0];
    for (std::size_t i = 0; i < a->size(); ++i) out->val[i] = sv * a->val[i];
    return out;
}

Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
    std::size_t cols = 0;
    for (const auto& p : parts) {
        if (p->rows != parts[0]->rows) shape_error("concat_cols", parts[0], p);
        cols += p->cols;
    }
    Var out = make_n(parts[0]->rows, cols, Op::ConcatCols, parts);
    std::size_t off = 0;
    for (const auto& p : parts) {
        for (std::size_t r = 0; r < out->rows; ++r)
            std::copy_n(p->val.data() + r * p->cols, p->cols, out->val.data() + r * cols + off);
        off += p->cols;
    }
    return out;
}

Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
    std::size_t rows = 0;
    for (const auto& p : parts) {
        if (p->cols != parts[0]->cols) shape_error("concat_rows", parts[0], p);
        rows += p->rows;
    }
    Var out = make_n(rows, parts[0]->cols, Op::ConcatRows, parts);
    std::size_t off = 0;
    for (const auto& p : parts) {
        std::copy(p->val.begin(), p->val.end(), out->val.begin() + static_cast<std::ptrdiff_t>(off));
        off += p->size();
    }
    return out;
}

Var gather_rows(const Var& a, const std::vector<std::size_t>& rows) {
    Var out = make(rows.size(), a->cols, Op::GatherRows, {a});
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r] >= a->rows) throw std::out_of_range("gather_rows: row index out of range");
        std::copy_n(a->val.data() + rows[r] * a->cols, a->cols, out->val.data() + r * a->cols);
    }
    if (out->requires_grad) out->idx = rows;
    return out;
}

Var slice_cols(const Var& a, std::size_t c0, std::size_t c1) {
    if (c0 > c1 || c1 > a->cols) throw std::invalid_argument("slice_cols: bad column range");
    Var out = make(a->rows, c1 - c0, Op::SliceCols, {a});
    out->p0 = c0;
    for (std::size_t r = 0; r < a->rows; ++r)
        std::copy_n(a->val.data() + r * a->cols + c0, c1 - c0, out->val.data() + r * (c1 - c0));
    return out;
}

Var scatter_add_rows(const Var& a, const std::vector<std::size_t>& target, const std::vector<double>& weight,
                     std::size_t out_rows) {
    if (target.size() != a->rows || weight.size() != a->rows)
        throw std::invalid_argument("scatter_add_rows: index/weight count does not match rows");
    Var out = make(out_rows, a->cols, Op::ScatterAddRows, {a});
    for (std::size_t r = 0; r < a->rows; ++r) {
        if (target[r] >= out_rows) throw std::out_of_range("scatter_add_rows: target out of range");
        const double w = weight[r];
        if (w == 0.0) continue;
        for (std::size_t c = 0; c < a->cols; ++c) out->val[target[r] * a->cols + c] += w * a->val[r * a->cols + c];
    }
    if (out->requires_grad) {
        out->idx = target;
        out->aux = weight;
    }
    return out;
}

Var scatter(const Var& a, const std::vector<std::size_t>& pos, std::size_t rows, std::size_t cols) {
    if (a->cols != 1 || pos.size() != a->rows) throw std::invalid_argument("scatter: expects a column and one position per row");
    Var out = make(rows, cols, Op::Scatter, {a});
    for (std::size_t i = 0; i < pos.size(); ++i) {
        if (pos[i] >= rows * cols) throw std::out_of_range("scatter: position out of range");
        out->val[pos[i]] = a->val[i];
    }
    if (out->requires_grad) out->idx = pos;
    return out;
}

Var masked_softmax(const Var& a, const std::vector<std::uint8_t>& mask) {
    if (!mask.empty() && mask.size() != a->size()) throw std::invalid_argument("masked_softmax: mask size mismatch");
    Var out = make(a->rows, a->cols, Op::MaskedSoftmax, {a});
    softmax_rows(a->val, mask, a->rows, a->cols, out->val, false);
    return out;
}

Var masked_log_softmax(const Var& a, const std::vector<std::uint8_t>& mask) {
    if (!mask.empty() && mask.size() != a->size()) throw std::invalid_argument("masked_log_softmax: mask size mismatch");
    Var out = make(a->rows, a->cols, Op::MaskedLogSoftmax, {a});
    softmax_rows(a->val, mask, a->rows, a->cols, out->val, true);
    if (out->requires_grad) out->mask = mask;
    return out;
}

Var tanh(const Var& a) {
    Var out = make(a->rows, a->cols, Op::Tanh, {a});
    for (std::size_t i = 0; i < a->size(); ++i) out->val[i] = std::tanh(a->val[i]);
    return out;
}

Var silu(const Var& a) {
    Var out = make(a->rows, a->cols, Op::Silu, {a});
    for (std::size_t i = 0; i < a->size(); ++i) out->val[i] = a->val[i] * sigmoid(a->val[i]);
    return out;
}

Var norm_affine(const Var& a, const Var& gamma, const Var& beta) {
    if (gamma->rows != 1 || gamma->cols != a->cols) shape_error("norm_affine", a, gamma);
    if (beta->rows != 1 || beta->cols != a->cols) shape_error("norm_affine", a, beta);
    if (a->rows == 0) throw std::invalid_argument("norm_affine: empty input");
    Var out = make(a->rows, a->cols, Op::NormAffine, {a, gamma, beta});
    const std::size_t m = a->rows, k = a->cols;
    std::vector<double> xh(m * k), inv(k);
    for (std::size_t c = 0; c < k; ++c) {
        double mu = 0.0;
        for (std::size_t r = 0; r < m; ++r) mu += a->val[r * k + c];
        mu /= static_cast<double>(m);
        double var = 0.0;
        for (std::size_t r = 0; r < m; ++r) {
            const double t = a->val[r * k + c] - mu;
            var += t * t;
        }
        var /= static_cast<double>(m);
        inv[c] = 1.0 / std::sqrt(var + kNormEps);
        for (std::size_t r = 0; r < m; ++r) {
            xh[r * k + c] = (a->val[r * k + c] - mu) * inv[c];
            out->val[r * k + c] = xh[r * k + c] * gamma->val[c] + beta->val[c];
        }
    }
    if (out->requires_grad) {
        out->aux = std::move(xh);
        out->aux.insert(out->aux.end(), inv.begin(), inv.end());
    }
    return out;
}

Var mean(const Var& a) {
    if (a->size() == 0) throw std::invalid_argument("mean: empty input");
    Var out = make(1, 1, Op::Mean, {a});
    double s = 0.0;
    for (double x : a->val) s += x;
    out->val[0] = s / static_cast<double>(a->size());
    return out;
}

Var sum(const Var& a) {
    Var out = make(1, 1, Op::Sum, {a});
    double s = 0.0;
    for (double x : a->val) s += x;
    out->val[0] = s;
    return out;
}

Var pick(const Var& a, const std::vector<std::size_t>& col, const std::vector<double>& weight) {
    if (col.size() != a->rows || weight.size() != a->rows) throw std::invalid_argument("pick: one column per row required");
    Var out = make(a->rows, 1, Op::Pick, {a});
    for (std::size_t r = 0; r < a->rows; ++r) {
        if (col[r] >= a->cols) throw std::out_of_range("pick: column out of range");
        out->val[r] = weight[r] == 0.0 ? 0.0 : weight[r] * a->val[r * a->cols + col[r]];
    }
    if (out->requires_grad) {
        out->idx = col;
        out->aux = weight;
    }
    return out;
}

Var attention(const Var& q, const Var& k, const Var& v, std::size_t heads, const std::vector<std::uint8_t>& mask) {
    if (q->cols != k->cols || k->cols != v->cols || k->rows != v->rows) shape_error("attention", q, k);
    if (heads == 0 || q->cols % heads != 0) throw std::invalid_argument("attention: width not divisible by heads");
    const std::size_t m = q->rows, s = k->rows, d = q->cols, dk = d / heads;
    if (!mask.empty() && mask.size() != m * s) throw std::invalid_argument("attention: mask size mismatch");
    Var out = make(m, d, Op::Attention, {q, k, v});
    out->p0 = heads;
    const double inv = 1.0 / std::sqrt(static_cast<double>(dk));
    std::vector<double> P(heads * m * s);
    std::vector<double> row(s);
    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t o = h * dk;
        for (std::size_t i = 0; i < m; ++i) {
            const double* qi = q->val.data() + i * d + o;
            const std::uint8_t* mi = mask.empty() ? nullptr : mask.data() + i * s;
            double mx = kNegInf;
            for (std::size_t j = 0; j < s; ++j) {
                if (mi && !mi[j]) continue;
                const double* kj = k->val.data() + j * d + o;
                double acc = 0.0;
                for (std::size_t c = 0; c < dk; ++c) acc += qi[c] * kj[c];
                row[j] = acc * inv;
                mx = std::max(mx, row[j]);
            }
            if (mx == kNegInf) throw std::invalid_argument("attention: query row " + std::to_string(i) + " has no keys");
            double z = 0.0;
            double* pi = P.data() + h * m * s + i * s;
            for (std::size_t j = 0; j < s; ++j) {
                if (mi && !mi[j]) {
                    pi[j] = 0.0;
                    continue;
                }
                pi[j] = std::exp(row[j] - mx);
                z += pi[j];
            }
            double* oi = out->val.data() + i * d + o;
            for (std::size_t j = 0; j < s; ++j) {
                if (pi[j] == 0.0) continue;
                pi[j] /= z;
                const double* vj = v->val.data() + j * d + o;
                for (std::size_t c = 0; c < dk; ++c) oi[c] += pi[j] * vj[c];
            }
        }
    }
    if (out->requires_grad) out->aux = std::move(P);
    return out;
}

void backward(const Var& loss) {
    if (loss->size() != 1) throw std::invalid_argument("backward: loss must be a scalar");
    if (loss->consumed) throw std::logic_error("backward: graph already released; run the forward pass again");
    if (!loss->requires_grad) throw std::logic_error("backward: loss was not produced by a recorded computation");

    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{loss.get(), 0}};
    seen.insert(loss.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->in.size()) {
            Node* child = node->in[next++].get();
            if (child->requires_grad && child->op != Op::Leaf && seen.insert(child).second) stack.push_back({child, 0});
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    g(*loss)[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->grad.empty()) continue;
        backward_node(*n);
    }
    for (Node* n : order) {
        if (n->op == Op::Leaf) continue;
        n->in.clear();
        n->grad.clear();
        n->grad.shrink_to_fit();
        n->consumed = true;
    }
}

double finite_diff_check(const std::function<Var()>& fn, const std::vector<Var>& params, double h, std::size_t count,
                         std::uint64_t seed, double abs_floor) {
    for (const auto& p : params) std::fill(p->grad.begin(), p->grad.end(), 0.0);
    Var loss = fn();
    backward(loss);
    std::vector<std::pair<std::size_t, std::size_t>> coords;
    for (std::size_t i = 0; i < params.size(); ++i)
        for (std::size_t j = 0; j < params[i]->size(); ++j) coords.emplace_back(i, j);
    if (coords.empty()) throw std::invalid_argument("finite_diff_check: no parameters");

    NoGrad guard;
    auto eval = [&] { return fn()->item(); };
    const double f0 = eval();
    if (eval() != f0 || f0 != loss->val[0]) throw std::logic_error("finite_diff_check: function is not deterministic");

    Rng rng(seed, 0x5eed);
    // Partial Fisher-Yates: distinct coordinates when enough exist.
    const std::size_t take = std::min(count, coords.size());
    for (std::size_t i = 0; i < take; ++i) {
        const std::size_t j = i + rng.below(coords.size() - i);
        std::swap(coords[i], coords[j]);
    }
    double worst = 0.0;
    for (std::size_t t = 0; t < take; ++t) {
        auto [pi, ci] = coords[t];
        Node& p = *params[pi];
        const double analytic = p.grad.empty() ? 0.0 : p.grad[ci];
        const double v0 = p.val[ci];
        p.val[ci] = v0 + h;
        const double fp = eval();
        p.val[ci] = v0 - h;
        const double fm = eval();
        p.val[ci] = v0;
        const double numeric = (fp - fm) / (2.0 * h);
        const double scale = std::max(std::abs(analytic), std::abs(numeric));
        if (scale < abs_floor) continue;  // both sides are round-off around zero
        const double rel = std::abs(analytic - numeric) / scale;
        worst = std::max(worst, rel);
    }
    return worst;
}

} // namespace ad

// ---------------------------------------------------------------------------

ad::Var& ParamSet::add(const std::string& name, std::size_t rows, std::size_t cols) {
    if (contains(name)) throw std::invalid_argument("ParamSet: duplicate parameter " + name);
    names_.push_back(name);
    vars_.push_back(ad::zeros(rows, cols, true));
    return vars_.back();
}

const ad::Var& ParamSet::get(const std::string& name) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
        if (names_[i] == name) return vars_[i];
    throw std::out_of_range("ParamSet: no parameter named " + name);
}

bool ParamSet::contains(const std::string& name) const {
    return std::find(names_.begin(), names_.end(), name) != names_.end();
}

std::size_t ParamSet::count() const {
    std::size_t c = 0;
    for (const auto& v : vars_) c += v->size();
    return c;
}

void ParamSet::zero_grad() {
    for (auto& v : vars_) v->grad.clear();
}

ParamSet ParamSet::clone() const {
    ParamSet out;
    out.names_ = names_;
    for (const auto& v : vars_) out.vars_.push_back(ad::tensor(v->rows, v->cols, v->val, true));
    return out;
}

std::vector<double> ParamSet::flat_grad() const {
    std::vector<double> out;
    out.reserve(count());
    for (const auto& v : vars_) {
        if (v->grad.empty())
            out.insert(out.end(), v->size(), 0.0);
        else
            out.insert(out.end(), v->grad.begin(), v->grad.end());
    }
    return out;
}

Adam::Adam(const ParamSet& params, AdamConfig cfg) : cfg_(cfg), m_(params.count(), 0.0), v_(params.count(), 0.0) {
    if (!(cfg.lr >= 0.0)) throw std::invalid_argument("Adam: learning rate must be nonnegative");
}

void Adam::step(ParamSet& params, const std::vector<double>& grad) {
    if (grad.size() != m_.size()) throw std::invalid_argument("Adam: gradient size mismatch");
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    std::size_t off = 0;
    for (const auto& var : params.tensors()) {
        for (std::size_t i = 0; i < var->size(); ++i, ++off) {
            const double gi = grad[off];
            m_[off] = cfg_.beta1 * m_[off] + (1.0 - cfg_.beta1) * gi;
            v_[off] = cfg_.beta2 * v_[off] + (1.0 - cfg_.beta2) * gi * gi;
            const double step = cfg_.lr * (m_[off] / bc1) / (std::sqrt(v_[off] / bc2) + cfg_.eps);
            var->val[i] -= step;
        }
    }
}

double clip_global_norm(std::vector<double>& g, double max_norm) {
    double s = 0.0;
    for (double x : g) s += x * x;
    const double norm = std::sqrt(s);
    if (norm > max_norm && norm > 0.0) {
        const double f = max_norm / norm;
        for (double& x : g) x *= f;
    }
    return norm;
}

} // namespace rwvrp
