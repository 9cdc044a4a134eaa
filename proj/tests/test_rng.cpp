#include "paro/rng.hpp"

#include "doctest.h"

#include <cmath>

#include <algorithm>
#include <numeric>

using namespace paro;

// Reference streams from tests/oracles/rng_pairs_oracle.py (independent
// implementation of SplitMix64 -> xoshiro256**).
TEST_CASE("Rng.MatchesReferenceStreamSeed0") {
    const std::uint64_t expected[8] = {
        0x99ec5f36cb75f2b4ULL, 0xbf6e1f784956452aULL, 0x1a5f849d4933e6e0ULL, 0x6aa594f1262d2d2cULL,
        0xbba5ad4a1f842e59ULL, 0xffef8375d9ebcacaULL, 0x6c160deed2f54c98ULL, 0x8920ad648fc30a3fULL};
    Rng rng(0);
    for (auto e : expected) CHECK_EQ(rng.next_u64(), e);
}

TEST_CASE("Rng.MatchesReferenceStreamSeed42") {
    const std::uint64_t expected[8] = {
        0x15780b2e0c2ec716ULL, 0x6104d9866d113a7eULL, 0xae17533239e499a1ULL, 0xecb8ad4703b360a1ULL,
        0xfde6dc7fe2ec5e64ULL, 0xc50da53101795238ULL, 0xb82154855a65ddb2ULL, 0xd99a2743ebe60087ULL};
    Rng rng(42);
    for (auto e : expected) CHECK_EQ(rng.next_u64(), e);
}

TEST_CASE("Rng.ShuffleMatchesReference") {
    std::vector<int> items(10);
    std::iota(items.begin(), items.end(), 0);
    Rng rng(7);
    CHECK_EQ(rng_shuffled(items, rng), (std::vector<int>{8, 3, 9, 0, 7, 2, 1, 6, 5, 4}));
}

TEST_CASE("Rng.ShuffleEdgeCases") {
    Rng rng(1);
    CHECK(rng_shuffled(std::vector<int>{}, rng).empty());
    CHECK_EQ(rng_shuffled(std::vector<int>{5}, rng), std::vector<int>{5});
}

TEST_CASE("Rng.ShuffleIsDeterministicPerSeed") {
    std::vector<int> items{0, 1, 2, 3, 4, 5};
    Rng a(99), b(99);
    CHECK_EQ(rng_shuffled(items, a), rng_shuffled(items, b));
}

TEST_CASE("Rng.ShuffleIsAPermutation") {
    Rng rng(5);
    for (int n = 0; n < 50; ++n) {
        std::vector<int> items(n);
        std::iota(items.begin(), items.end(), 0);
        auto out = rng_shuffled(items, rng);
        std::sort(out.begin(), out.end());
        CHECK_EQ(out, items);
    }
}

TEST_CASE("Rng.BelowStaysInRangeAndCoversIt") {
    Rng rng(8);
    std::vector<int> hits(7, 0);
    for (int i = 0; i < 7000; ++i) {
        const auto v = rng.below(7);
        REQUIRE_LT(v, 7u);
        ++hits[v];
    }
    for (int h : hits) CHECK_GT(h, 800);
}

TEST_CASE("Rng.NormalHasUnitMoments") {
    Rng rng(21);
    double sum = 0.0, sq = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double v = rng.normal();
        sum += v;
        sq += v * v;
    }
    CHECK_LE(std::fabs(static_cast<double>(sum / n) - static_cast<double>(0.0)), static_cast<double>(0.01));
    CHECK_LE(std::fabs(static_cast<double>(sq / n) - static_cast<double>(1.0)), static_cast<double>(0.02));
}

TEST_CASE("Rng.ForkedStreamsDiffer") {
    Rng base(3);
    Rng a = base.fork(0), b = base.fork(1), a2 = base.fork(0);
    CHECK_NE(a.next_u64(), b.next_u64());
    Rng a3 = base.fork(0);
    CHECK_EQ(a2.next_u64(), a3.next_u64());
}
