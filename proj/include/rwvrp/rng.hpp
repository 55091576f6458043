#pragma once

#include <cstdint>

namespace rwvrp {

/// Counter-based generator: the n-th draw is a pure function of (key, n).
/// Each call site derives its own stream, so results never depend on call
/// order elsewhere in the program.
class Rng {
public:
    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

    std::uint64_t next_u64();
    /// Uniform in [0, 1).
    double uniform();
    /// Uniform in (0, 1].
    double uniform_open_closed();
    double uniform(double lo, double hi);
    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);
    /// Uniform integer in [lo, hi].
    int uniform_int(int lo, int hi);
    /// Standard Gumbel(0, 1) draw.
    double gumbel();

    Rng split(std::uint64_t stream) const;

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t x);

} // namespace rwvrp
