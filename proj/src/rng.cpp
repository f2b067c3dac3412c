#include "rrgcn/rng.hpp"

#include <cmath>
#include <new>
#include <numbers>

namespace rrgcn {

SeedSchedule derive_seeds(std::uint64_t master, std::uint32_t count) {
    if (count == 0) throw CapacityError("derive_seeds: count must be >= 1");
    SeedSchedule schedule;
    schedule.master_seed = master;
    schedule.derived_seeds.reserve(count);
    SplitMix64 rng(master);
    for (std::uint32_t k = 0; k < count; ++k) schedule.derived_seeds.push_back(rng.next());
    return schedule;
}

MatF materialize(const WeightSpec& spec) {
    const std::uint64_t n = std::uint64_t(spec.rows) * spec.cols;
    MatF m;
    try {
        m.resize(spec.rows, spec.cols);
    } catch (const std::bad_alloc&) {
        throw CapacityError("materialize: cannot allocate " + std::to_string(spec.rows) +
                            "x" + std::to_string(spec.cols) + " matrix");
    }
    SplitMix64 rng(spec.seed);
    float* data = m.data();  // row-major

    if (spec.init == WeightInit::GlorotUniform) {
        const double bound = std::sqrt(6.0 / (double(spec.rows) + double(spec.cols)));
        for (std::uint64_t i = 0; i < n; ++i)
            data[i] = float((2.0 * rng.uniform() - 1.0) * bound);
    } else {
        const double sigma = std::sqrt(spec.variance);
        for (std::uint64_t i = 0; i < n; i += 2) {
            // Box-Muller; 1-u keeps the log argument in (0, 1].
            double u1 = 1.0 - rng.uniform();
            double u2 = rng.uniform();
            double radius = std::sqrt(-2.0 * std::log(u1));
            double angle = 2.0 * std::numbers::pi * u2;
            data[i] = float(sigma * radius * std::cos(angle));
            if (i + 1 < n) data[i + 1] = float(sigma * radius * std::sin(angle));
        }
    }
    return m;
}

}  // namespace rrgcn
