#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace rrgcn {

using MatF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct CapacityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// SplitMix64 stream (Steele et al. constants). Fixed forever: every random
/// tensor in the pipeline is a pure function of its 64-bit seed through this
/// generator, so embeddings are reproducible from seeds alone.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1), 53-bit mantissa.
    double uniform() { return double(next() >> 11) * 0x1.0p-53; }

private:
    std::uint64_t state_;
};

/// Seeds for every directed-relation weight matrix plus the self-loop weight.
/// derived_seeds[k] seeds W for directed relation k (k in [0, 2R)); the last
/// entry seeds W_0.
struct SeedSchedule {
    std::uint64_t master_seed = 0;
    std::vector<std::uint64_t> derived_seeds;

    std::uint64_t relation_seed(std::uint32_t directed) const {
        return derived_seeds.at(directed);
    }
    std::uint64_t self_loop_seed() const { return derived_seeds.back(); }
};

/// derived_seeds[k] = k-th output of the SplitMix64 stream seeded with master.
SeedSchedule derive_seeds(std::uint64_t master, std::uint32_t count);

enum class WeightInit { GlorotUniform, Normal };

struct WeightSpec {
    std::uint32_t rows = 0;
    std::uint32_t cols = 0;
    WeightInit init = WeightInit::GlorotUniform;
    double variance = 1.0;  // Normal only
    std::uint64_t seed = 0;
};

/// Fills a matrix deterministically from the spec, row-major fill order.
/// Glorot uniform: entries uniform in [-a, a], a = sqrt(6/(rows+cols)).
/// Normal: Box-Muller on consecutive uniform pairs, one pair per two entries.
MatF materialize(const WeightSpec& spec);

}  // namespace rrgcn
