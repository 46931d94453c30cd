#include <cmath>

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include "bico/hypergrad.hpp"
#include "support.hpp"

using namespace bico;
using bico::testing::gaussian;
using bico::testing::random_problem;

namespace {

// Inner f = w1 (a - 1)^2 + w2 (a - 2)^2 (+ tiny ridge), outer g = sum of both losses.
InnerProblem scalar_toy(double w1, double w2) {
    InnerProblem p;
    p.gram_block = Matrix::Ones(1, 1);
    p.cross_block = Matrix::Ones(1, 2);
    p.labels = (Matrix(2, 1) << 1, 2).finished();
    p.support = {0, 1};
    p.weights = (Vector(2) << w1, w2).finished();
    p.lambda = 1e-12;
    return p;
}

// G(w) with the basis fixed and candidate k carrying weight `wk` (added to the
// support when it is not already there).
double pipeline_value(const InnerProblem &base, Index k, double wk, const OuterObjective &outer) {
    InnerProblem p = base;
    auto it = std::find(p.support.begin(), p.support.end(), k);
    if (it != p.support.end()) {
        p.weights[it - p.support.begin()] = wk;
    } else {
        p.support.push_back(k);
        p.weights.conservativeResize(p.weights.size() + 1);
        p.weights[p.weights.size() - 1] = wk;
    }
    return outer_value(p, solve_inner(p).alpha, outer);
}

double fd_hypergrad(const InnerProblem &p, Index k, const OuterObjective &outer, double h) {
    auto it = std::find(p.support.begin(), p.support.end(), k);
    if (it != p.support.end()) {
        const double w = p.weights[it - p.support.begin()];
        return (pipeline_value(p, k, w + h, outer) - pipeline_value(p, k, w - h, outer)) / (2 * h);
    }
    // weight starts at zero and must stay nonnegative: second-order one-sided difference
    const double f0 = pipeline_value(p, k, 0.0, outer);
    return (-3 * f0 + 4 * pipeline_value(p, k, h, outer) - pipeline_value(p, k, 2 * h, outer)) / (2 * h);
}

Index argmax(const Vector &v) {
    Index best = 0;
    for (Index i = 1; i < v.size(); ++i) {
        if (v[i] > v[best]) { best = i; }
    }
    return best;
}

}  // namespace

TEST(ImplicitGrad, ScalarToySymmetricWeightsGiveZero) {
    const InnerProblem p = scalar_toy(1, 1);
    const auto sol = solve_krr(p);
    const auto hg = implicit_grad(p, sol, OuterObjective::total(), {0, 1});
    EXPECT_NEAR(hg.values[0], 0.0, 1e-10);
    EXPECT_NEAR(hg.values[1], 0.0, 1e-10);
}

TEST(ImplicitGrad, ScalarToyKnownValue) {
    const InnerProblem p = scalar_toy(1, 2);
    const auto sol = solve_krr(p);
    EXPECT_NEAR(sol.alpha(0, 0), 5.0 / 3.0, 1e-10);
    const auto hg = implicit_grad(p, sol, OuterObjective::total(), {0});
    EXPECT_NEAR(hg.values[0], -4.0 / 27.0, 1e-10);
    EXPECT_NEAR(fd_hypergrad(p, 0, OuterObjective::total(), 1e-5), -4.0 / 27.0, 1e-8);
    EXPECT_NEAR(bilinear_scores(p, sol, OuterObjective::total(), {0})[0], 4.0 / 27.0, 1e-10);
    EXPECT_NEAR(influence_scores(p, sol, OuterObjective::total(), {0})[0], 4.0 / 27.0, 1e-10);
}

TEST(ImplicitGrad, ZeroLossGradientCandidateScoresZero) {
    // Add a third universe point whose label equals the prediction.
    InnerProblem p = scalar_toy(1, 2);
    const auto sol0 = solve_krr(p);
    p.cross_block = (Matrix(1, 3) << 1, 1, 0.5).finished();
    p.labels = (Matrix(3, 1) << 1, 2, 0.5 * sol0.alpha(0, 0)).finished();
    const auto sol = solve_krr(p);
    const std::vector<Index> cand{2};
    EXPECT_NEAR(implicit_grad(p, sol, OuterObjective::total(), cand).values[0], 0.0, 1e-12);
    EXPECT_NEAR(bilinear_scores(p, sol, OuterObjective::total(), cand)[0], 0.0, 1e-12);
    EXPECT_NEAR(influence_scores(p, sol, OuterObjective::total(), cand)[0], 0.0, 1e-12);
}

TEST(ImplicitGrad, MatchesFullPipelineFiniteDifferences) {
    Rng rng(20);
    for (Loss loss : {Loss::squared, Loss::cross_entropy}) {
        for (int trial = 0; trial < 5; ++trial) {
            const Index n = 30, s = 6;
            const InnerProblem p = random_problem(n, s, 2, loss, rng, 0.05);
            const auto sol = solve_inner(p);
            HypergradOptions opts;
            opts.cg_iters = s * 2;
            const auto hg = implicit_grad(p, sol, OuterObjective::total(), iota_indices(n), opts);
            for (Index k = 0; k < n; ++k) {
                const double fd = fd_hypergrad(p, k, OuterObjective::total(), 1e-5);
                EXPECT_LE(std::abs(hg.values[k] - fd), std::max(1e-5, 1e-3 * std::abs(fd)))
                    << to_string(loss) << " k=" << k;
            }
        }
    }
}

TEST(ImplicitGrad, SubsetOuterObjective) {
    Rng rng(21);
    const InnerProblem p = random_problem(25, 5, 3, Loss::squared, rng, 0.05);
    const auto sol = solve_krr(p);
    const OuterObjective outer = OuterObjective::subset({1, 4, 7, 20});
    const auto hg = implicit_grad(p, sol, outer, iota_indices(25));
    for (Index k = 0; k < 25; ++k) {
        const double fd = fd_hypergrad(p, k, outer, 1e-5);
        EXPECT_LE(std::abs(hg.values[k] - fd), std::max(1e-5, 1e-3 * std::abs(fd)));
    }
    EXPECT_THROW((void)OuterObjective::subset({}), Error);
}

TEST(ImplicitGrad, StaleSolutionRejected) {
    Rng rng(22);
    const InnerProblem p = random_problem(20, 4, 2, Loss::squared, rng);
    auto sol = solve_krr(p);
    sol.alpha(0, 0) += 0.1;
    try {
        (void)implicit_grad(p, sol, OuterObjective::total(), {0});
        FAIL();
    } catch (const Error &e) {
        EXPECT_EQ(e.qualified_code(), "hypergrad.StaleSolution");
    }
}

TEST(ImplicitGrad, CandidateValidation) {
    const InnerProblem p = scalar_toy(1, 2);
    const auto sol = solve_krr(p);
    EXPECT_THROW((void)implicit_grad(p, sol, OuterObjective::total(), {}), Error);
    try {
        (void)implicit_grad(p, sol, OuterObjective::total(), {5});
        FAIL();
    } catch (const Error &e) {
        EXPECT_EQ(e.code(), ErrorCode::IndexOutOfRange);
    }
}

TEST(ImplicitGrad, TruncatedCgReportsResidual) {
    Rng rng(23);
    const InnerProblem p = random_problem(30, 10, 3, Loss::squared, rng, 1e-4);
    const auto sol = solve_krr(p);
    HypergradOptions opts;
    opts.cg_iters = 1;
    const auto hg = implicit_grad(p, sol, OuterObjective::total(), {0, 1}, opts);
    EXPECT_GT(hg.cg_residual, 0.0);
    EXPECT_TRUE(hg.values.allFinite());
}

TEST(SelectCandidate, ArgminWithLowestIndexTies) {
    HyperGradient hg;
    hg.candidates = {4, 7, 9};
    hg.values = (Vector(3) << -3, 0, 2).finished();
    EXPECT_EQ(select_candidate(hg), 4);
    hg.candidates = {9, 3, 5};
    hg.values = Vector::Constant(3, 1.5);
    EXPECT_EQ(select_candidate(hg), 3);
    hg.candidates.clear();
    hg.values.resize(0);
    try {
        (void)select_candidate(hg);
        FAIL();
    } catch (const Error &e) {
        EXPECT_EQ(e.code(), ErrorCode::EmptyCandidates);
    }
}

TEST(SelectCandidate, MatchesExhaustiveArgmin) {
    Rng rng(24);
    for (int trial = 0; trial < 10; ++trial) {
        const InnerProblem p = random_problem(30, 5, 2, Loss::squared, rng);
        const auto sol = solve_krr(p);
        const auto hg = implicit_grad(p, sol, OuterObjective::total(), iota_indices(30));
        Index best = 0;
        for (Index k = 1; k < 30; ++k) {
            if (hg.values[k] < hg.values[best]) { best = k; }
        }
        EXPECT_EQ(select_candidate(hg), best);
    }
}

TEST(SelectionRules, ThreeRoutesAgree) {
    Rng rng(25);
    for (Loss loss : {Loss::squared, Loss::cross_entropy}) {
        for (int trial = 0; trial < 25; ++trial) {
            const InnerProblem p = random_problem(30, 6, 3, loss, rng);
            const auto sol = solve_inner(p);
            const std::vector<Index> cand = iota_indices(30);
            const Vector hg = implicit_grad(p, sol, OuterObjective::total(), cand).values;
            const Vector bil = bilinear_scores(p, sol, OuterObjective::total(), cand);
            const Vector inf = influence_scores(p, sol, OuterObjective::total(), cand);
            EXPECT_LE((bil - inf).cwiseAbs().maxCoeff(), 1e-10 * std::max(1.0, bil.cwiseAbs().maxCoeff()));
            EXPECT_LE((bil + hg).cwiseAbs().maxCoeff(), 1e-6 * std::max(1.0, bil.cwiseAbs().maxCoeff()));
            HyperGradient wrapped{cand, hg, 0.0};
            EXPECT_EQ(select_candidate(wrapped), argmax(bil));
            EXPECT_EQ(argmax(bil), argmax(inf));
        }
    }
}

TEST(SelectionRules, InvariantUnderJointRescaling) {
    Rng rng(26);
    for (int trial = 0; trial < 10; ++trial) {
        const InnerProblem p = random_problem(30, 6, 2, Loss::squared, rng);
        const std::vector<Index> cand = iota_indices(30);
        const Index base = select_candidate(implicit_grad(p, solve_krr(p), OuterObjective::total(), cand));
        for (double c : {0.1, 10.0}) {
            InnerProblem q = p;
            q.weights *= c;
            q.lambda *= c;
            EXPECT_EQ(select_candidate(implicit_grad(q, solve_krr(q), OuterObjective::total(), cand)), base);
        }
    }
}

TEST(OuterGradient, MatchesFiniteDifference) {
    Rng rng(27);
    for (Loss loss : {Loss::squared, Loss::cross_entropy}) {
        const InnerProblem p = random_problem(15, 4, 3, loss, rng);
        const Matrix a = gaussian(4, 3, rng);
        auto f = [&](const Vector &v) { return outer_value(p, Eigen::Map<const Matrix>(v.data(), 4, 3), OuterObjective::total()); };
        const Vector fd = finite_diff_grad(f, Eigen::Map<const Vector>(a.data(), a.size()), 1e-6);
        const Matrix g = outer_gradient(p, a, OuterObjective::total());
        EXPECT_LT((Eigen::Map<const Vector>(g.data(), g.size()) - fd).cwiseAbs().maxCoeff(), 1e-5);
    }
}
