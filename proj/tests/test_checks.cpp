#include <gtest/gtest.h>

#include "bico/checks.hpp"
#include "support.hpp"

using namespace bico;

TEST(Checks, AllPassOnSeparatedBlobs) {
    for (std::uint64_t seed : {0u, 1u, 2u}) {
        Rng rng(seed + 10);
        const Dataset data = bico::testing::blobs(14, 3, 2, rng);
        const auto results = run_checks(data, seed);
        EXPECT_EQ(results.size(), 9u);
        for (const auto &r : results) { EXPECT_TRUE(r.passed) << r.name << ": " << r.detail; }
    }
}

TEST(Checks, FailuresAreReportedNotThrown) {
    // A single point cannot support the selection-rule or design checks.
    const Dataset data = Dataset::classification((Matrix(1, 2) << 1, 2).finished(), {0}, 1);
    std::vector<CheckResult> results;
    ASSERT_NO_THROW(results = run_checks(data, 0));
    EXPECT_EQ(results.size(), 9u);
    bool any_failed = false;
    for (const auto &r : results) { any_failed = any_failed || !r.passed; }
    EXPECT_TRUE(any_failed);
}

TEST(Checks, BruteForceOptimumDominatesGreedy) {
    Rng rng(4);
    DesignInstance inst;
    inst.x = bico::testing::gaussian(8, 3, rng);
    const double opt = checks::brute_force_best(inst, 3);
    EXPECT_GE(opt + 1e-12, design_reward(inst, greedy_design(inst, 3)));
    EXPECT_NEAR(checks::brute_force_best(inst, 8), design_reward(inst, iota_indices(8)), 1e-12);
}
