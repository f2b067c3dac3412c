#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "rrgcn/rng.hpp"

using namespace rrgcn;

TEST_CASE("derive_seeds: deterministic and seed-sensitive") {
    auto a = derive_seeds(42, 3);
    auto b = derive_seeds(42, 3);
    CHECK(a.derived_seeds == b.derived_seeds);
    CHECK(a.derived_seeds.size() == 3);

    auto c = derive_seeds(43, 3);
    bool any_diff = false;
    for (std::size_t i = 0; i < 3; ++i) any_diff |= a.derived_seeds[i] != c.derived_seeds[i];
    CHECK(any_diff);

    // Prefix property: a longer schedule extends a shorter one.
    auto d = derive_seeds(42, 91);  // 2*45+1 directed-relation seeds for a 45-relation KG
    CHECK(d.derived_seeds.size() == 91);
    CHECK(std::equal(a.derived_seeds.begin(), a.derived_seeds.end(),
                     d.derived_seeds.begin()));

    CHECK_THROWS_AS(derive_seeds(42, 0), CapacityError);
}

TEST_CASE("materialize: glorot bound") {
    MatF m = materialize({512, 512, WeightInit::GlorotUniform, 1.0, 7});
    const float bound = std::sqrt(6.0f / 1024.0f);
    CHECK(m.maxCoeff() <= bound);
    CHECK(m.minCoeff() >= -bound);
    // The draws should actually fill the range.
    CHECK(m.maxCoeff() > 0.9f * bound);
    CHECK(m.minCoeff() < -0.9f * bound);
}

TEST_CASE("materialize: bitwise determinism") {
    WeightSpec spec{64, 48, WeightInit::Normal, 0.25, 12345};
    MatF a = materialize(spec);
    MatF b = materialize(spec);
    REQUIRE(a.rows() == b.rows());
    CHECK(std::memcmp(a.data(), b.data(), sizeof(float) * std::size_t(a.size())) == 0);

    spec.seed = 12346;
    MatF c = materialize(spec);
    CHECK(std::memcmp(a.data(), c.data(), sizeof(float) * std::size_t(a.size())) != 0);
}

TEST_CASE("materialize: normal sigma^2 = 1/e makes row sums ~ standard normal") {
    const std::uint32_t rows = 10000, e = 64;
    MatF m = materialize({rows, e, WeightInit::Normal, 1.0 / double(e), 99});
    Eigen::VectorXf sums = m.rowwise().sum();
    double mean = sums.mean();
    double var = (sums.array() - float(mean)).square().sum() / double(rows - 1);
    CHECK(std::abs(mean) < 0.05);
    CHECK(var == doctest::Approx(1.0).epsilon(0.10));
}

TEST_CASE("materialize: per-entry variance matches the requested value") {
    MatF m = materialize({2000, 32, WeightInit::Normal, 0.5, 4});
    double var = double(m.array().square().sum()) / double(m.size());
    CHECK(var == doctest::Approx(0.5).epsilon(0.05));
}
