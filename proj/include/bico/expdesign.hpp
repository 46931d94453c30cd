#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "bico/dataset.hpp"
#include "bico/error.hpp"
#include "bico/numlin.hpp"

namespace bico {

/// Linear-regression design problem: y = X theta + eps, eps ~ N(0, sigma2 I),
/// theta ~ N(0, lambda^{-1} I) for the Bayesian objectives.
struct DesignInstance {
    Matrix x;  // n x d
    double sigma2 = 1.0;
    double lambda = 1.0;

    [[nodiscard]] Index n() const { return x.rows(); }
    [[nodiscard]] Index d() const { return x.cols(); }

    void validate() const {
        if (x.rows() < 1 || x.cols() < 1) { throw Error(ErrorCode::DimensionMismatch, "design: empty X"); }
        if (!(sigma2 > 0.0)) { throw Error(ErrorCode::ConfigError, "design: sigma2 must be positive"); }
        if (!(lambda > 0.0)) { throw Error(ErrorCode::ConfigError, "design: lambda must be positive"); }
        check_finite(x, "design X");
    }
};

namespace detail {

inline void check_weights(const DesignInstance &inst, const Vector &w) {
    if (w.size() != inst.n()) { throw Error(ErrorCode::DimensionMismatch, "design: weight vector length"); }
    if ((w.array() < 0.0).any()) { throw Error(ErrorCode::ConfigError, "design: negative weight"); }
}

inline Matrix unregularized_information_inverse(const DesignInstance &inst, const Vector &w) {
    const Matrix info = inst.x.transpose() * w.asDiagonal() * inst.x;
    Eigen::SelfAdjointEigenSolver<Matrix> eig(info);
    const double top = std::max(eig.eigenvalues().maxCoeff(), 1e-300);
    if (eig.eigenvalues().minCoeff() <= 1e-12 * top) {
        throw Error(ErrorCode::SingularInformation, "X^T D(w) X is singular (fewer than d independent points)");
    }
    return eig.eigenvectors() * eig.eigenvalues().cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();
}

// F^+ = (X^T D X + lambda sigma2 I)^{-1}, d x d.
inline Matrix regularized_information_inverse(const DesignInstance &inst, const Vector &w) {
    Matrix f = inst.x.transpose() * w.asDiagonal() * inst.x;
    f = 0.5 * (f + f.transpose()).eval();
    f.diagonal().array() += inst.lambda * inst.sigma2;
    return Eigen::LLT<Matrix>(f).solve(Matrix::Identity(inst.d(), inst.d()));
}

}  // namespace detail

/// M = X F^+ X^T (n x n), through the d x d information matrix when d < n and
/// through the n x n kernel form otherwise.
inline Matrix projected_information(const DesignInstance &inst, const Vector &w) {
    inst.validate();
    detail::check_weights(inst, w);
    if (inst.d() < inst.n()) {
        const Matrix fplus = detail::regularized_information_inverse(inst, w);
        Matrix m = inst.x * fplus * inst.x.transpose();
        return 0.5 * (m + m.transpose());
    }
    const double c = inst.lambda * inst.sigma2;
    const Matrix k = inst.x * inst.x.transpose();
    const Vector sw = w.cwiseSqrt();
    Matrix inner = sw.asDiagonal() * k * sw.asDiagonal();
    inner = 0.5 * (inner + inner.transpose()).eval();
    inner.diagonal().array() += c;
    const Matrix right = sw.asDiagonal() * k;
    Matrix m = (k - right.transpose() * Eigen::LLT<Matrix>(inner).solve(right)) / c;
    return 0.5 * (m + m.transpose());
}

/// A-optimal design value (sigma2 / 2) Tr((X^T D(w) X)^{-1}).
inline double obj_a_design(const DesignInstance &inst, const Vector &w) {
    inst.validate();
    detail::check_weights(inst, w);
    return 0.5 * inst.sigma2 * detail::unregularized_information_inverse(inst, w).trace();
}

/// V-optimal design value (sigma2 / 2n) Tr(X (X^T D(w) X)^{-1} X^T).
inline double obj_v_design(const DesignInstance &inst, const Vector &w) {
    inst.validate();
    detail::check_weights(inst, w);
    const Matrix inv = detail::unregularized_information_inverse(inst, w);
    return inst.sigma2 / (2.0 * static_cast<double>(inst.n())) * (inv * (inst.x.transpose() * inst.x)).trace();
}

/// Bayesian V-optimal design value (1/2n) Tr(X ((1/sigma2) X^T D(w) X + lambda I)^{-1} X^T).
inline double obj_bayes_v(const DesignInstance &inst, const Vector &w) {
    return inst.sigma2 / (2.0 * static_cast<double>(inst.n())) * projected_information(inst, w).trace();
}

/// Gradient of obj_bayes_v: -(sigma2/2n) x_i^T F^+ X^T X F^+ x_i per coordinate.
inline Vector grad_bayes_v(const DesignInstance &inst, const Vector &w) {
    inst.validate();
    detail::check_weights(inst, w);
    const double scale = inst.sigma2 / (2.0 * static_cast<double>(inst.n()));
    if (inst.d() < inst.n()) {
        const Matrix fplus = detail::regularized_information_inverse(inst, w);
        const Matrix q = fplus * (inst.x.transpose() * inst.x) * fplus;
        return -scale * (inst.x * q).cwiseProduct(inst.x).rowwise().sum();
    }
    const Matrix m = projected_information(inst, w);
    return -scale * m.colwise().squaredNorm().transpose();
}

/// Hessian of obj_bayes_v: (sigma2/2n) * 2 (X F^+ X^T) o (X F^+ X^T X F^+ X^T).
inline Matrix hessian_bayes_v(const DesignInstance &inst, const Vector &w) {
    if (inst.n() > 500) { throw Error(ErrorCode::TooLarge, "hessian_bayes_v: n > 500"); }
    const Matrix m = projected_information(inst, w);
    const double scale = inst.sigma2 / (2.0 * static_cast<double>(inst.n()));
    Matrix h = 2.0 * scale * m.cwiseProduct(m * m);
    return 0.5 * (h + h.transpose());
}

inline double max_row_norm(const Matrix &x) { return x.rowwise().norm().maxCoeff(); }

/// Upper bound on the largest Hessian eigenvalue of obj_bayes_v:
/// (sigma2/2n) * 2 n^2 L^6 / (lambda^3 sigma2^3) = n L^6 / (lambda^3 sigma2^2),
/// with L the largest row norm.
inline double bayes_v_smoothness_bound(const DesignInstance &inst) {
    const double l = max_row_norm(inst.x);
    return static_cast<double>(inst.n()) * std::pow(l, 6) /
           (std::pow(inst.lambda, 3) * inst.sigma2 * inst.sigma2);
}

/// Weak submodularity ratio gamma = (1 + s^2 / (sigma2 lambda))^{-1}.
inline double weak_submodularity_gamma(const DesignInstance &inst) {
    const double s = max_row_norm(inst.x);
    return 1.0 / (1.0 + s * s / (inst.sigma2 * inst.lambda));
}

inline Vector indicator(Index n, const std::vector<Index> &set) {
    Vector w = Vector::Zero(n);
    for (Index i : set) { w[i] = 1.0; }
    return w;
}

/// R(A) = G(0) - G(A) for the Bayesian V objective on a binary selection.
inline double design_reward(const DesignInstance &inst, const std::vector<Index> &set) {
    return obj_bayes_v(inst, Vector::Zero(inst.n())) - obj_bayes_v(inst, indicator(inst.n(), set));
}

/// Marginal gain R(e | A) in d x d form with M_A = lambda I + (1/sigma2) X_A^T X_A:
/// ||X M_A^{-1} x_e||^2 / (sigma2 + x_e^T M_A^{-1} x_e), times the 1/(2n)
/// normalization of the objective so that the gain equals
/// obj_bayes_v(A) - obj_bayes_v(A + e).
inline double marginal_gain(const DesignInstance &inst, const std::vector<Index> &a, Index e) {
    inst.validate();
    if (e < 0 || e >= inst.n()) { throw Error(ErrorCode::IndexOutOfRange, "marginal_gain: element index"); }
    if (std::find(a.begin(), a.end(), e) != a.end()) {
        throw Error(ErrorCode::AlreadySelected, "marginal_gain: element " + std::to_string(e) + " already in A");
    }
    Matrix m = inst.lambda * Matrix::Identity(inst.d(), inst.d());
    for (Index i : a) { m.noalias() += inst.x.row(i).transpose() * inst.x.row(i) / inst.sigma2; }
    const Vector xe = inst.x.row(e).transpose();
    const Vector minv_x = Eigen::LLT<Matrix>(m).solve(xe);
    const double num = (inst.x * minv_x).squaredNorm();
    return num / (inst.sigma2 + xe.dot(minv_x)) / (2.0 * static_cast<double>(inst.n()));
}

/// Greedy maximization of R under a cardinality constraint; ties go to the lowest index.
inline std::vector<Index> greedy_design(const DesignInstance &inst, Index m) {
    inst.validate();
    if (m < 0 || m > inst.n()) { throw Error(ErrorCode::InsufficientData, "greedy_design: m out of range"); }
    std::vector<Index> chosen;
    std::vector<char> used(static_cast<size_t>(inst.n()), 0);
    for (Index step = 0; step < m; ++step) {
        Index best = -1;
        double best_gain = -std::numeric_limits<double>::infinity();
        for (Index e = 0; e < inst.n(); ++e) {
            if (used[static_cast<size_t>(e)]) { continue; }
            const double g = marginal_gain(inst, chosen, e);
            if (g > best_gain) {
                best_gain = g;
                best = e;
            }
        }
        if (best < 0) { throw Error(ErrorCode::NonFiniteObjective, "greedy_design: no finite marginal gain"); }
        used[static_cast<size_t>(best)] = 1;
        chosen.push_back(best);
    }
    return chosen;
}

/// Minimum over random disjoint (A, B) of sum_{e in B} R(e|A) / (R(A u B) - R(A)).
/// Pairs with a vanishing denominator are skipped; returns +inf if every pair
/// was skipped.
inline double submodularity_ratio_probe(const DesignInstance &inst, Index trials, std::uint64_t seed) {
    inst.validate();
    if (inst.n() > 12) { throw Error(ErrorCode::TooLarge, "submodularity_ratio_probe: n > 12"); }
    Rng rng(seed);
    std::uniform_int_distribution<int> bucket(0, 2);
    std::uniform_int_distribution<Index> any(0, inst.n() - 1);
    const double g0 = obj_bayes_v(inst, Vector::Zero(inst.n()));
    double worst = std::numeric_limits<double>::infinity();
    for (Index t = 0; t < trials; ++t) {
        std::vector<int> role(static_cast<size_t>(inst.n()));
        for (auto &r : role) { r = bucket(rng); }
        if (std::none_of(role.begin(), role.end(), [](int r) { return r == 1; })) { role[static_cast<size_t>(any(rng))] = 1; }
        std::vector<Index> a, b, ab;
        for (Index i = 0; i < inst.n(); ++i) {
            if (role[static_cast<size_t>(i)] == 0) { a.push_back(i); }
            if (role[static_cast<size_t>(i)] == 1) { b.push_back(i); }
            if (role[static_cast<size_t>(i)] != 2) { ab.push_back(i); }
        }
        const double denom = obj_bayes_v(inst, indicator(inst.n(), a)) - obj_bayes_v(inst, indicator(inst.n(), ab));
        if (!(denom > 1e-14 * std::max(1.0, g0))) { continue; }
        double num = 0.0;
        for (Index e : b) { num += marginal_gain(inst, a, e); }
        worst = std::min(worst, num / denom);
    }
    return worst;
}

/// Generator for the infinite-data-limit experiment: rows are i.i.d.
/// N(0, feature_scale^2 I_d) drawn from one seeded stream, so the first rows
/// (the fixed subset S) are shared across all n.
struct DesignFamily {
    Index d = 5;
    double sigma2 = 1.0;
    double lambda = 1.0;
    double feature_scale = 1.0;

    [[nodiscard]] Matrix features(Index n, std::uint64_t seed) const {
        Rng rng(seed);
        std::normal_distribution<double> normal(0.0, feature_scale);
        Matrix x(n, d);
        for (Index i = 0; i < n; ++i) {
            for (Index j = 0; j < d; ++j) { x(i, j) = normal(rng); }
        }
        return x;
    }
};

struct LimitGapPoint {
    Index n = 0;
    double signed_gap = 0.0;  // Monte-Carlo mean of g - g_V - sigma2/2
    double gap = 0.0;         // |signed_gap|
};

/// Monte-Carlo estimate of |g(theta_hat) - g_V(theta_hat) - sigma2/2| where
/// theta_hat is the ridge estimate fitted on the first `subset_size` rows only.
inline std::vector<LimitGapPoint> infinite_limit_gap(const DesignFamily &family, Index subset_size,
                                                     const std::vector<Index> &n_values, Index mc_draws,
                                                     std::uint64_t seed) {
    std::vector<LimitGapPoint> out;
    for (Index n : n_values) {
        if (n < subset_size) { throw Error(ErrorCode::InsufficientData, "infinite_limit_gap: n < |S|"); }
        const Matrix x = family.features(n, seed);
        const Matrix xs = x.topRows(subset_size);
        Matrix f = xs.transpose() * xs;
        f.diagonal().array() += family.lambda * family.sigma2;
        const Eigen::LLT<Matrix> llt(f);

        Rng rng(seed ^ (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(n)));
        std::normal_distribution<double> prior(0.0, 1.0 / std::sqrt(family.lambda));
        std::normal_distribution<double> noise(0.0, std::sqrt(family.sigma2));
        double acc = 0.0;
        Vector theta(family.d), eps(n);
        for (Index t = 0; t < mc_draws; ++t) {
            for (Index j = 0; j < family.d; ++j) { theta[j] = prior(rng); }
            for (Index i = 0; i < n; ++i) { eps[i] = noise(rng); }
            const Vector clean = x * theta;
            const Vector y = clean + eps;
            const Vector theta_hat = llt.solve(xs.transpose() * y.head(subset_size));
            const Vector pred = x * theta_hat;
            const double g = (pred - y).squaredNorm() / (2.0 * static_cast<double>(n));
            const double gv = (pred - clean).squaredNorm() / (2.0 * static_cast<double>(n));
            acc += g - gv - 0.5 * family.sigma2;
        }
        const double mean = acc / static_cast<double>(mc_draws);
        out.push_back({n, mean, std::abs(mean)});
    }
    return out;
}

struct MatchingPursuitTrace {
    std::vector<Index> support;  // selection order
    std::vector<double> values;  // G(w*_{S_t}) for t = 1..steps
    double optimum = 0.0;        // G* from projected GD on the full support
    double smoothness = 0.0;     // L
    [[nodiscard]] double bound(size_t t) const {  // (8L + 4 eps_1) / (t + 3), t 1-based
        const double eps1 = values.front() - optimum;
        return (8.0 * smoothness + 4.0 * eps1) / (static_cast<double>(t) + 3.0);
    }
};

/// Fully-corrective matching pursuit on obj_bayes_v over the nonnegative cone:
/// start from a seeded random point with weight 1, then repeatedly optimize the
/// weights on the current support by projected GD and add the unselected
/// coordinate with the most negative gradient.
inline MatchingPursuitTrace matching_pursuit_bayes_v(const DesignInstance &inst, Index steps, Index gd_iters,
                                                     std::uint64_t seed) {
    inst.validate();
    if (steps < 1 || steps > inst.n()) { throw Error(ErrorCode::InsufficientData, "matching pursuit: steps"); }
    const Index n = inst.n();
    // Curvature is largest at w = 0, so 1/lambda_max there is a safe step.
    const Matrix h0 = hessian_bayes_v(inst, Vector::Zero(n));
    const double lmax = Eigen::SelfAdjointEigenSolver<Matrix>(h0, Eigen::EigenvaluesOnly).eigenvalues().maxCoeff();
    const double step = 1.0 / std::max(lmax, 1e-300);
    auto objective = [&](const Vector &w) { return obj_bayes_v(inst, w); };
    auto gradient = [&](const Vector &w) { return grad_bayes_v(inst, w); };

    MatchingPursuitTrace trace;
    trace.smoothness = bayes_v_smoothness_bound(inst);
    trace.optimum = objective(projected_gd(objective, gradient, Vector::Ones(n), clamp_nonnegative, step, gd_iters));

    Rng rng(seed);
    std::uniform_int_distribution<Index> first(0, n - 1);
    std::vector<char> mask(static_cast<size_t>(n), 0);
    Vector w = Vector::Zero(n);
    Index k = first(rng);
    for (Index t = 1; t <= steps; ++t) {
        mask[static_cast<size_t>(k)] = 1;
        trace.support.push_back(k);
        w[k] = 1.0;
        auto project = [&](const Vector &v) {
            Vector out = v.cwiseMax(0.0);
            for (Index i = 0; i < n; ++i) {
                if (!mask[static_cast<size_t>(i)]) { out[i] = 0.0; }
            }
            return out;
        };
        w = projected_gd(objective, gradient, w, project, step, gd_iters);
        trace.values.push_back(objective(w));
        if (t == steps) { break; }
        const Vector g = gradient(w);
        double best = std::numeric_limits<double>::infinity();
        for (Index i = 0; i < n; ++i) {
            if (!mask[static_cast<size_t>(i)] && g[i] < best) {
                best = g[i];
                k = i;
            }
        }
    }
    return trace;
}

}  // namespace bico
