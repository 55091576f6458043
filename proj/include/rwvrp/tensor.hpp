#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace rwvrp {

/// Reverse-mode autodiff over dense row-major f64 matrices.
///
/// Every value is 2-D (a scalar is 1x1). Ops record a node in the graph when
/// at least one input requires grad and recording is enabled (see NoGrad).
namespace ad {

enum class Op : std::uint8_t {
    Leaf,
    MatMul,
    MatMulNT,
    Add,
    AddRow,
    Sub,
    Mul,
    Scale,
    MulScalar,
    ConcatCols,
    ConcatRows,
    GatherRows,
    SliceCols,
    ScatterAddRows,
    Scatter,
    MaskedSoftmax,
    MaskedLogSoftmax,
    Tanh,
    Silu,
    NormAffine,
    Mean,
    Sum,
    Pick,
    Attention,
};

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> val;
    std::vector<double> grad;  // allocated lazily during backward
    bool requires_grad = false;
    bool consumed = false;  // backward already ran through this node
    Op op = Op::Leaf;
    std::vector<Var> in;
    // Op-specific saved data.
    std::vector<std::size_t> idx;
    std::vector<double> aux;
    std::vector<std::uint8_t> mask;
    double scalar = 0.0;
    std::size_t p0 = 0, p1 = 0;

    std::size_t size() const { return val.size(); }
    double operator()(std::size_t r, std::size_t c) const { return val[r * cols + c]; }
    double item() const;
};

/// Disables graph recording on this thread while alive.
class NoGrad {
public:
    NoGrad();
    ~NoGrad();
    NoGrad(const NoGrad&) = delete;
    NoGrad& operator=(const NoGrad&) = delete;

private:
    bool prev_;
};
bool grad_enabled();

Var tensor(std::size_t rows, std::size_t cols, std::vector<double> values, bool requires_grad = false);
Var zeros(std::size_t rows, std::size_t cols, bool requires_grad = false);
Var full(std::size_t rows, std::size_t cols, double v);

Var matmul(const Var& a, const Var& b);
/// a · bᵀ
Var matmul_nt(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
/// a[m,n] + b[1,n] broadcast over rows.
Var add_row(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
/// a · s where s is a 1x1 tensor.
Var mul_scalar(const Var& a, const Var& s);
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var gather_rows(const Var& a, const std::vector<std::size_t>& rows);
Var slice_cols(const Var& a, std::size_t c0, std::size_t c1);
/// out[target[i]] += weight[i] · a[i] for an output with out_rows rows.
Var scatter_add_rows(const Var& a, const std::vector<std::size_t>& target, const std::vector<double>& weight,
                     std::size_t out_rows);
/// Dense rows x cols matrix with a[i,0] placed at flat position pos[i]; zero elsewhere.
Var scatter(const Var& a, const std::vector<std::size_t>& pos, std::size_t rows, std::size_t cols);
/// Row-wise softmax; entries with mask == 0 get probability exactly 0.
Var masked_softmax(const Var& a, const std::vector<std::uint8_t>& mask);
/// Row-wise log-softmax; masked entries hold -inf and never receive gradient.
Var masked_log_softmax(const Var& a, const std::vector<std::uint8_t>& mask);
Var tanh(const Var& a);
Var silu(const Var& a);
/// Normalize each column over the rows (eps 1e-5), then x·gamma + beta (both 1 x cols).
Var norm_affine(const Var& a, const Var& gamma, const Var& beta);
Var mean(const Var& a);
Var sum(const Var& a);
/// out[i] = weight[i] · a[i, col[i]] as a column vector.
Var pick(const Var& a, const std::vector<std::size_t>& col, const std::vector<double>& weight);
/// Multi-head scaled dot-product attention. q[m,d], k[s,d], v[s,d]; optional key
/// mask of m*s entries (1 = attend). Returns the concatenated heads [m,d].
Var attention(const Var& q, const Var& k, const Var& v, std::size_t heads,
              const std::vector<std::uint8_t>& mask = {});

/// Accumulates d(loss)/d(leaf) into every reachable leaf that requires grad,
/// then releases the graph. Throws for non-scalar loss or a second call.
void backward(const Var& loss);

/// Central-difference check of analytic gradients. fn must rebuild the graph
/// from the current leaf values on every call. Returns the max relative error
/// |a - n| / max(|a|, |n|) over `count` random coordinates; coordinates where
/// both magnitudes fall below abs_floor count as exact.
double finite_diff_check(const std::function<Var()>& fn, const std::vector<Var>& params, double h, std::size_t count,
                         std::uint64_t seed, double abs_floor = 1e-7);

} // namespace ad

/// Named, ordered set of trainable leaves.
class ParamSet {
public:
    ad::Var& add(const std::string& name, std::size_t rows, std::size_t cols);
    const ad::Var& get(const std::string& name) const;
    bool contains(const std::string& name) const;
    const std::vector<std::string>& names() const { return names_; }
    const std::vector<ad::Var>& tensors() const { return vars_; }
    std::size_t count() const;
    void zero_grad();
    /// Deep copy of values (fresh leaves, no grads).
    ParamSet clone() const;
    /// Flattened gradients in declaration order (zeros where absent).
    std::vector<double> flat_grad() const;

private:
    std::vector<std::string> names_;
    std::vector<ad::Var> vars_;
};

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam {
public:
    Adam(const ParamSet& params, AdamConfig cfg);
    /// Applies one update with the supplied flattened gradient.
    void step(ParamSet& params, const std::vector<double>& grad);
    std::size_t steps() const { return t_; }

private:
    AdamConfig cfg_;
    std::vector<double> m_, v_;
    std::size_t t_ = 0;
};

/// Rescales g in place so its L2 norm is at most max_norm; returns the original norm.
double clip_global_norm(std::vector<double>& g, double max_norm);

} // namespace rwvrp
