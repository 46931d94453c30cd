#include <cmath>
#include <functional>
#include <numeric>

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include "bico/expdesign.hpp"
#include "support.hpp"

using namespace bico;
using bico::testing::gaussian;

namespace {

DesignInstance random_instance(Index n, Index d, Rng &rng, double sigma2 = 1.0, double lambda = 1.0) {
    return DesignInstance{gaussian(n, d, rng), sigma2, lambda};
}

// (1/2n) Tr(X ((1/sigma2) X^T D X + lambda I)^{-1} X^T) by a dense inverse.
double bayes_v_dense(const DesignInstance &inst, const Vector &w) {
    const Matrix post = (inst.x.transpose() * w.asDiagonal() * inst.x / inst.sigma2 +
                         inst.lambda * Matrix::Identity(inst.d(), inst.d()))
                            .inverse();
    return (inst.x * post * inst.x.transpose()).trace() / (2.0 * static_cast<double>(inst.n()));
}

void for_each_subset(Index n, Index k, const std::function<void(const std::vector<Index> &)> &fn) {
    std::vector<Index> cur;
    std::function<void(Index)> rec = [&](Index start) {
        if (static_cast<Index>(cur.size()) == k) {
            fn(cur);
            return;
        }
        for (Index i = start; i < n; ++i) {
            cur.push_back(i);
            rec(i + 1);
            cur.pop_back();
        }
    };
    rec(0);
}

}  // namespace

TEST(ADesign, IdentityAndScaling) {
    DesignInstance inst{Matrix::Identity(2, 2), 1.0, 1.0};
    EXPECT_NEAR(obj_a_design(inst, Vector::Ones(2)), 1.0, 1e-14);
    Rng rng(1);
    DesignInstance r = random_instance(10, 3, rng);
    const double base = obj_a_design(r, Vector::Ones(10));
    r.sigma2 = 3.5;
    EXPECT_NEAR(obj_a_design(r, Vector::Ones(10)), 3.5 * base, 1e-12);
}

TEST(ADesign, MatchesDenseInverse) {
    Rng rng(2);
    const DesignInstance inst = random_instance(10, 3, rng, 0.7);
    const double dense = 0.7 / 2.0 * (inst.x.transpose() * inst.x).inverse().trace();
    EXPECT_NEAR(obj_a_design(inst, Vector::Ones(10)), dense, 1e-12);
}

TEST(ADesign, SingularInformation) {
    Rng rng(3);
    const DesignInstance inst = random_instance(10, 3, rng);
    try {
        (void)obj_a_design(inst, indicator(10, {0, 1}));
        FAIL();
    } catch (const Error &e) {
        EXPECT_EQ(e.qualified_code(), "expdesign.SingularInformation");
    }
    EXPECT_THROW((void)obj_v_design(inst, Vector::Zero(10)), Error);
}

TEST(VDesign, IdentityValue) {
    DesignInstance inst{Matrix::Identity(2, 2), 1.0, 1.0};
    EXPECT_NEAR(obj_v_design(inst, Vector::Ones(2)), 0.5, 1e-14);
}

TEST(VDesign, ZeroWeightEqualsDeletedRowInInformation) {
    Rng rng(4);
    const DesignInstance inst = random_instance(9, 3, rng);
    Vector w = Vector::Ones(9);
    w[4] = 0.0;
    Matrix kept(8, 3);
    for (Index i = 0, r = 0; i < 9; ++i) {
        if (i != 4) { kept.row(r++) = inst.x.row(i); }
    }
    const double dense = (inst.x * (kept.transpose() * kept).inverse() * inst.x.transpose()).trace() / 18.0;
    EXPECT_NEAR(obj_v_design(inst, w), dense, 1e-12);
    DesignInstance small{kept, 1.0, 1.0};
    EXPECT_NEAR(obj_a_design(inst, w), obj_a_design(small, Vector::Ones(8)), 1e-12);
}

TEST(VDesign, MatchesMonteCarloOls) {
    Rng rng(5);
    const DesignInstance inst = random_instance(12, 3, rng, 0.5);
    const std::vector<Index> s{0, 2, 3, 5, 7, 8};
    Matrix xs(6, 3);
    for (size_t i = 0; i < s.size(); ++i) { xs.row(static_cast<Index>(i)) = inst.x.row(s[i]); }
    const Eigen::LDLT<Matrix> normal(xs.transpose() * xs);
    const Vector theta = gaussian(3, 1, rng);
    std::normal_distribution<double> noise(0.0, std::sqrt(inst.sigma2));
    const int draws = 100000;
    double acc = 0.0;
    Vector eps(6);
    for (int t = 0; t < draws; ++t) {
        for (Index i = 0; i < 6; ++i) { eps[i] = noise(rng); }
        const Vector theta_hat = normal.solve(xs.transpose() * (xs * theta + eps));
        acc += (inst.x * (theta - theta_hat)).squaredNorm();
    }
    const double mc = acc / draws / (2.0 * 12);
    EXPECT_NEAR(obj_v_design(inst, indicator(12, s)) / mc, 1.0, 0.02);
}

TEST(BayesV, ZeroWeightsClosedForm) {
    Rng rng(6);
    const DesignInstance inst = random_instance(7, 4, rng, 1.3, 0.4);
    EXPECT_NEAR(obj_bayes_v(inst, Vector::Zero(7)), inst.x.squaredNorm() / (2.0 * 7 * 0.4), 1e-12);
}

TEST(BayesV, BothFormsMatchDenseOracle) {
    Rng rng(7);
    for (auto [n, d] : {std::pair<Index, Index>{15, 4}, {4, 9}, {6, 6}}) {
        const DesignInstance inst = random_instance(n, d, rng, 0.8, 0.6);
        const Vector w = bico::testing::uniform_vector(n, 0.0, 2.0, rng);
        EXPECT_NEAR(obj_bayes_v(inst, w), bayes_v_dense(inst, w), 1e-11) << n << "x" << d;
    }
}

TEST(BayesV, MatchesMonteCarloRidge) {
    Rng rng(8);
    const DesignInstance inst = random_instance(12, 3, rng, 0.5, 2.0);
    const std::vector<Index> s{1, 4, 6, 9};
    Matrix xs(4, 3);
    for (size_t i = 0; i < s.size(); ++i) { xs.row(static_cast<Index>(i)) = inst.x.row(s[i]); }
    Matrix post = xs.transpose() * xs / inst.sigma2;
    post.diagonal().array() += inst.lambda;
    const Eigen::LLT<Matrix> llt(post);
    std::normal_distribution<double> prior(0.0, 1.0 / std::sqrt(inst.lambda));
    std::normal_distribution<double> noise(0.0, std::sqrt(inst.sigma2));
    const int draws = 100000;
    double acc = 0.0;
    Vector theta(3), eps(4);
    for (int t = 0; t < draws; ++t) {
        for (Index j = 0; j < 3; ++j) { theta[j] = prior(rng); }
        for (Index i = 0; i < 4; ++i) { eps[i] = noise(rng); }
        const Vector theta_hat = llt.solve(xs.transpose() * (xs * theta + eps) / inst.sigma2);
        acc += (inst.x * (theta - theta_hat)).squaredNorm();
    }
    const double mc = acc / draws / (2.0 * 12);
    EXPECT_NEAR(obj_bayes_v(inst, indicator(12, s)) / mc, 1.0, 0.02);
}

TEST(BayesV, MonotoneAndConvex) {
    Rng rng(9);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        const DesignInstance inst = random_instance(8, 3, rng, 0.5 + unit(rng), 0.2 + unit(rng));
        const Vector w1 = bico::testing::uniform_vector(8, 0.0, 3.0, rng);
        const Vector w2 = bico::testing::uniform_vector(8, 0.0, 3.0, rng);
        const double t = unit(rng);
        EXPECT_LE(obj_bayes_v(inst, t * w1 + (1 - t) * w2),
                  t * obj_bayes_v(inst, w1) + (1 - t) * obj_bayes_v(inst, w2) + 1e-9);
        for (Index i = 0; i < 8; ++i) {
            Vector up = w1;
            up[i] += 0.5 + unit(rng);
            EXPECT_LE(obj_bayes_v(inst, up), obj_bayes_v(inst, w1) + 1e-15);
        }
    }
}

TEST(BayesVGradient, NonpositiveAndMatchesFiniteDifferences) {
    Rng rng(10);
    for (auto [n, d] : {std::pair<Index, Index>{10, 3}, {5, 8}}) {
        for (int trial = 0; trial < 5; ++trial) {
            const DesignInstance inst = random_instance(n, d, rng, 0.7, 0.5);
            const Vector w = bico::testing::uniform_vector(n, 0.1, 2.0, rng);
            const Vector g = grad_bayes_v(inst, w);
            EXPECT_LE(g.maxCoeff(), 0.0);
            const Vector fd = finite_diff_grad([&](const Vector &v) { return obj_bayes_v(inst, v); }, w, 1e-6);
            EXPECT_LE((g - fd).cwiseAbs().maxCoeff(), 1e-5 * g.cwiseAbs().maxCoeff());
        }
    }
}

TEST(BayesVGradient, CollinearCandidateHasSmallerMagnitude) {
    Matrix x(3, 2);
    x << 2, 0,  // selected
        1, 0,   // collinear
        0, 1;   // orthogonal, same norm as the collinear one
    const DesignInstance inst{x, 0.5, 1.0};
    const Vector w = (Vector(3) << 1, 1e-3, 1e-3).finished();
    const Vector g = grad_bayes_v(inst, w);
    EXPECT_LT(std::abs(g[1]), std::abs(g[2]));
    const Vector fd = finite_diff_grad([&](const Vector &v) { return obj_bayes_v(inst, v); }, w, 1e-6);
    EXPECT_LT(std::abs(fd[1]), std::abs(fd[2]));
}

TEST(BayesVHessian, PsdAndMatchesFiniteDifferences) {
    Rng rng(11);
    for (int trial = 0; trial < 5; ++trial) {
        const DesignInstance inst = random_instance(5, 2, rng, 0.9, 0.8);
        const Vector w = bico::testing::uniform_vector(5, 0.0, 2.0, rng);
        const Matrix h = hessian_bayes_v(inst, w);
        EXPECT_TRUE(h.isApprox(h.transpose(), 1e-14));
        const double lo = Eigen::SelfAdjointEigenSolver<Matrix>(h).eigenvalues().minCoeff();
        EXPECT_GE(lo, -1e-8 * h.trace() / 5);
        Matrix fd(5, 5);
        const double step = 1e-5;
        for (Index j = 0; j < 5; ++j) {
            Vector up = w, down = w;
            up[j] += step;
            down[j] -= step;
            fd.col(j) = (grad_bayes_v(inst, up) - grad_bayes_v(inst, down)) / (2 * step);
        }
        EXPECT_LE((h - fd).cwiseAbs().maxCoeff(), 1e-4);
    }
}

TEST(BayesVHessian, SmoothnessBoundAndSizeLimit) {
    Rng rng(12);
    for (int trial = 0; trial < 10; ++trial) {
        const DesignInstance inst = random_instance(20, 3, rng, 0.3 + 0.2 * trial, 0.5 + 0.1 * trial);
        for (const Vector &w : {Vector(Vector::Zero(20)), bico::testing::uniform_vector(20, 0.0, 2.0, rng)}) {
            const double top = Eigen::SelfAdjointEigenSolver<Matrix>(hessian_bayes_v(inst, w)).eigenvalues().maxCoeff();
            EXPECT_LE(top, bayes_v_smoothness_bound(inst));
        }
    }
    const DesignInstance big{Matrix::Ones(501, 2), 1.0, 1.0};
    try {
        (void)hessian_bayes_v(big, Vector::Zero(501));
        FAIL();
    } catch (const Error &e) {
        EXPECT_EQ(e.code(), ErrorCode::TooLarge);
    }
}

TEST(MarginalGain, MatchesDirectDifference) {
    Rng rng(13);
    for (int trial = 0; trial < 10; ++trial) {
        const DesignInstance inst = random_instance(9, 3, rng, 0.6, 0.9);
        const std::vector<Index> a{1, 5};
        for (Index e : {0, 3, 8}) {
            std::vector<Index> ae = a;
            ae.push_back(e);
            const double direct = obj_bayes_v(inst, indicator(9, a)) - obj_bayes_v(inst, indicator(9, ae));
            const double gain = marginal_gain(inst, a, e);
            EXPECT_GE(gain, 0.0);
            EXPECT_NEAR(gain, direct, 1e-8);
        }
        EXPECT_NEAR(marginal_gain(inst, {}, 2), design_reward(inst, {2}), 1e-12);
    }
}

TEST(MarginalGain, DuplicateHasSmallerGain) {
    Matrix x(3, 2);
    x << 1, 0.5, 1, 0.5, -0.3, 1;
    const DesignInstance inst{x, 1.0, 1.0};
    const double first = marginal_gain(inst, {}, 0);
    const double second = marginal_gain(inst, {0}, 1);
    EXPECT_LT(second, first);
    EXPECT_NEAR(second, design_reward(inst, {0, 1}) - design_reward(inst, {0}), 1e-12);
}

TEST(MarginalGain, Errors) {
    Rng rng(14);
    const DesignInstance inst = random_instance(5, 2, rng);
    try {
        (void)marginal_gain(inst, {1, 3}, 3);
        FAIL();
    } catch (const Error &e) {
        EXPECT_EQ(e.qualified_code(), "expdesign.AlreadySelected");
    }
    EXPECT_THROW((void)marginal_gain(inst, {}, 5), Error);
}

TEST(GreedyDesign, FullSizeAndDominantRow) {
    Rng rng(15);
    const DesignInstance inst = random_instance(6, 3, rng);
    std::vector<Index> all = greedy_design(inst, 6);
    std::sort(all.begin(), all.end());
    EXPECT_EQ(all, iota_indices(6));
    DesignInstance dom = random_instance(8, 3, rng, 1.0, 1.0);
    dom.x.row(5) *= 20.0;
    EXPECT_EQ(greedy_design(dom, 1).front(), 5);
    EXPECT_TRUE(greedy_design(dom, 0).empty());
}

TEST(GreedyDesign, WeakSubmodularGuaranteeAgainstEnumeration) {
    Rng rng(16);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int trial = 0; trial < 25; ++trial) {
        const DesignInstance inst = random_instance(10, 3, rng, 0.2 + unit(rng), 0.2 + unit(rng));
        const double greedy = design_reward(inst, greedy_design(inst, 3));
        double opt = 0.0;
        for_each_subset(10, 3, [&](const std::vector<Index> &s) { opt = std::max(opt, design_reward(inst, s)); });
        const double gamma = weak_submodularity_gamma(inst);
        EXPECT_GE(greedy, (1.0 - std::exp(-gamma)) * opt - 1e-12);
        EXPECT_LE(greedy, opt + 1e-12);
    }
}

TEST(SubmodularityProbe, AtLeastGamma) {
    Rng rng(17);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        const DesignInstance inst = random_instance(10, 3, rng, 0.2 + unit(rng), 0.2 + unit(rng));
        EXPECT_GE(submodularity_ratio_probe(inst, 200, static_cast<std::uint64_t>(trial)),
                  weak_submodularity_gamma(inst) - 1e-8);
    }
    EXPECT_THROW((void)submodularity_ratio_probe(random_instance(13, 2, rng), 5, 0), Error);
}

TEST(SubmodularityProbe, SingletonBIsExactlyOne) {
    Rng rng(18);
    const DesignInstance inst = random_instance(8, 3, rng);
    const std::vector<Index> a{0, 4};
    for (Index e : {1, 6}) {
        std::vector<Index> ae = a;
        ae.push_back(e);
        EXPECT_NEAR(marginal_gain(inst, a, e) / (design_reward(inst, ae) - design_reward(inst, a)), 1.0, 1e-9);
    }
}

TEST(SubmodularityProbe, OrthogonalRowsAreModular) {
    Matrix x = Matrix::Zero(6, 6);
    for (Index i = 0; i < 6; ++i) { x(i, i) = 0.5 + 0.3 * static_cast<double>(i); }
    const DesignInstance inst{x, 0.8, 1.5};
    EXPECT_NEAR(submodularity_ratio_probe(inst, 300, 3), 1.0, 1e-8);
}

TEST(InfiniteLimitGap, SignedGapMatchesExactExpectation) {
    // E[g - g_V - sigma2/2] = -sigma2 Tr(H_S) / n, H_S the ridge hat matrix on S.
    const DesignFamily family{4, 0.7, 1.2, 1.0};
    const Index s = 5;
    const auto pts = infinite_limit_gap(family, s, {20, 60}, 40000, 11);
    for (const auto &pt : pts) {
        const Matrix xs = family.features(pt.n, 11).topRows(s);
        Matrix f = xs.transpose() * xs;
        f.diagonal().array() += family.lambda * family.sigma2;
        const double tr_h = (xs * f.inverse() * xs.transpose()).trace();
        const double exact = -family.sigma2 * tr_h / static_cast<double>(pt.n);
        // per-draw sd is about sigma2 / sqrt(2n); allow 5 standard errors
        const double tol = 5.0 * family.sigma2 / std::sqrt(2.0 * static_cast<double>(pt.n)) / std::sqrt(40000.0);
        EXPECT_NEAR(pt.signed_gap, exact, tol + 1e-3 * std::abs(exact)) << pt.n;
    }
}

TEST(InfiniteLimitGap, ShrinksWithN) {
    int shrinks = 0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto pts = infinite_limit_gap(DesignFamily{}, 5, {50, 2000}, 2000, seed);
        shrinks += pts[1].gap < pts[0].gap ? 1 : 0;
    }
    EXPECT_GE(shrinks, 4);
}

TEST(InfiniteLimitGap, FullSubsetHasNonzeroCrossTerm) {
    const auto pts = infinite_limit_gap(DesignFamily{}, 20, {20}, 20000, 4);
    // exact value is -sigma2 Tr(H) / n, roughly -d/n = -0.25
    EXPECT_LT(pts[0].signed_gap, -0.1);
}

TEST(InfiniteLimitGap, NoiseShiftMovesAsymptoteByHalf) {
    DesignFamily lo{};
    DesignFamily hi{};
    hi.sigma2 = lo.sigma2 + 0.8;
    const double g_lo = infinite_limit_gap(lo, 5, {2000}, 1000, 9)[0].signed_gap + lo.sigma2 / 2;
    const double g_hi = infinite_limit_gap(hi, 5, {2000}, 1000, 9)[0].signed_gap + hi.sigma2 / 2;
    EXPECT_NEAR(g_hi - g_lo, 0.4, 0.01);
}

TEST(MatchingPursuit, ConvergenceRateBound) {
    Rng rng(19);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const DesignInstance inst = random_instance(30, 4, rng, 0.5, 1.0);
        const auto trace = matching_pursuit_bayes_v(inst, 10, 300, seed);
        ASSERT_EQ(trace.values.size(), 10u);
        std::vector<Index> sorted = trace.support;
        std::sort(sorted.begin(), sorted.end());
        EXPECT_EQ(std::adjacent_find(sorted.begin(), sorted.end()), sorted.end());
        for (size_t t = 1; t <= trace.values.size(); ++t) {
            EXPECT_LE(trace.values[t - 1] - trace.optimum, trace.bound(t)) << t;
            if (t > 1) { EXPECT_LE(trace.values[t - 1], trace.values[t - 2] + 1e-12); }
        }
    }
}
