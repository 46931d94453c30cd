#pragma once

#include <limits>
#include <string>
#include <vector>

#include <Eigen/Cholesky>

#include "bico/error.hpp"
#include "bico/inner.hpp"
#include "bico/numlin.hpp"

namespace bico {

enum class OuterKind { total_loss, subset_loss };

/// Outer objective g(alpha) = sum of unweighted losses over a target set:
/// the whole universe (total_loss) or an explicit index set (subset_loss).
struct OuterObjective {
    OuterKind kind = OuterKind::total_loss;
    std::vector<Index> target_indices;

    static OuterObjective total() { return {OuterKind::total_loss, {}}; }
    static OuterObjective subset(std::vector<Index> targets) {
        if (targets.empty()) { throw Error(ErrorCode::ConfigError, "outer objective: empty target set"); }
        return {OuterKind::subset_loss, std::move(targets)};
    }

    [[nodiscard]] std::vector<Index> targets(Index universe_size) const {
        if (kind == OuterKind::total_loss) { return iota_targets(universe_size); }
        for (Index i : target_indices) {
            if (i < 0 || i >= universe_size) { throw Error(ErrorCode::IndexOutOfRange, "outer objective target"); }
        }
        return target_indices;
    }

private:
    static std::vector<Index> iota_targets(Index n) {
        std::vector<Index> out(static_cast<size_t>(n));
        for (Index i = 0; i < n; ++i) { out[static_cast<size_t>(i)] = i; }
        return out;
    }
};

struct HyperGradient {
    std::vector<Index> candidates;
    Vector values;  // dG/dw_k per candidate, aligned with `candidates`
    double cg_residual = 0.0;
};

struct HypergradOptions {
    Index cg_iters = 50;
    double cg_tol = 1e-10;
    double stationarity_tol = 1e-4;
};

inline double outer_value(const InnerProblem &p, const Matrix &alpha, const OuterObjective &outer) {
    double v = 0.0;
    for (Index i : outer.targets(p.universe_size())) { v += point_loss(p, alpha, i); }
    return v;
}

/// d g / d alpha (s x c), batched over the target set.
inline Matrix outer_gradient(const InnerProblem &p, const Matrix &alpha, const OuterObjective &outer) {
    const std::vector<Index> targets = outer.targets(p.universe_size());
    Matrix kc(p.basis_size(), static_cast<Index>(targets.size()));
    for (size_t j = 0; j < targets.size(); ++j) { kc.col(static_cast<Index>(j)) = p.cross_block.col(targets[j]); }
    return kc * loss_residuals(p, alpha, targets);
}

namespace detail {

inline void require_stationary(const InnerProblem &p, const InnerSolution &sol, double tol) {
    const double g = sol.alpha.size() ? inner_gradient(p, sol.alpha).lpNorm<Eigen::Infinity>() : 0.0;
    if (!(g <= tol)) {
        throw Error(ErrorCode::StaleSolution,
                    "inner gradient norm " + std::to_string(g) + " exceeds " + std::to_string(tol));
    }
}

inline void require_candidates(const InnerProblem &p, const std::vector<Index> &candidates) {
    if (candidates.empty()) { throw Error(ErrorCode::EmptyCandidates, "no candidates to score"); }
    for (Index k : candidates) {
        if (k < 0 || k >= p.universe_size()) {
            throw Error(ErrorCode::IndexOutOfRange, "candidate index " + std::to_string(k));
        }
    }
}

}  // namespace detail

/// Implicit gradient dG/dw_k = -(dg/dalpha)^T H^{-1} grad_alpha loss_k for each
/// candidate. One CG solve v = H^{-1} dg/dalpha is shared by all candidates.
/// The direct dg/dw term vanishes because the outer objective has unit weights.
inline HyperGradient implicit_grad(const InnerProblem &p, const InnerSolution &sol, const OuterObjective &outer,
                                   const std::vector<Index> &candidates, const HypergradOptions &opts = {}) {
    detail::require_candidates(p, candidates);
    detail::require_stationary(p, sol, opts.stationarity_tol);
    HyperGradient out;
    out.candidates = candidates;
    const Index s = p.basis_size(), c = p.outputs();
    if (s == 0) {
        out.values = Vector::Zero(static_cast<Index>(candidates.size()));
        return out;
    }
    const InnerHessian hessian(p, sol);
    const Vector rhs = detail::flatten(outer_gradient(p, sol.alpha, outer));
    const CgResult cg = cg_solve([&](const Vector &v) { return hessian.apply(v); }, rhs, opts.cg_iters, opts.cg_tol);
    out.cg_residual = cg.residual_norm;
    const Matrix adj = detail::unflatten(cg.x, s, c);

    Matrix kc(s, static_cast<Index>(candidates.size()));
    for (size_t j = 0; j < candidates.size(); ++j) { kc.col(static_cast<Index>(j)) = p.cross_block.col(candidates[j]); }
    const Matrix projected = kc.transpose() * adj;  // (K_k^T V) per candidate
    const Matrix resid = loss_residuals(p, sol.alpha, candidates);
    out.values = -(projected.cwiseProduct(resid)).rowwise().sum();
    if (!out.values.allFinite()) { throw Error(ErrorCode::NonFiniteIterate, "implicit_grad: non-finite values"); }
    return out;
}

/// Index of the most negative hypergradient; ties go to the lowest dataset index.
inline Index select_candidate(const HyperGradient &hg) {
    if (hg.candidates.empty()) { throw Error(ErrorCode::EmptyCandidates, "select_candidate: no candidates"); }
    Index best = -1;
    double best_value = std::numeric_limits<double>::infinity();
    for (size_t j = 0; j < hg.candidates.size(); ++j) {
        const double v = hg.values[static_cast<Index>(j)];
        const Index k = hg.candidates[j];
        if (v < best_value || (v == best_value && k < best)) {
            best_value = v;
            best = k;
        }
    }
    return best;
}

/// Bilinear similarity grad loss_k^T H^{-1} grad g. Uses a dense Hessian and a
/// direct Cholesky solve against grad g, then explicit per-candidate gradients.
inline Vector bilinear_scores(const InnerProblem &p, const InnerSolution &sol, const OuterObjective &outer,
                              const std::vector<Index> &candidates, const HypergradOptions &opts = {}) {
    detail::require_candidates(p, candidates);
    detail::require_stationary(p, sol, opts.stationarity_tol);
    Vector scores = Vector::Zero(static_cast<Index>(candidates.size()));
    if (p.basis_size() == 0) { return scores; }
    const Matrix h = InnerHessian(p, sol).dense();
    const Vector g = detail::flatten(outer_gradient(p, sol.alpha, outer));
    const Vector u = cholesky_solve(h, g).solution;
    for (size_t j = 0; j < candidates.size(); ++j) {
        scores[static_cast<Index>(j)] = mixed_partial_column(p, sol, candidates[j]).dot(u);
    }
    return scores;
}

/// Empirical influence of up-weighting each candidate on the outer loss:
/// I(k) = -grad g^T d alpha / d eps with d alpha / d eps = -H^{-1} grad loss_k.
/// Solved per candidate with an LDL^T factorization; grad g is accumulated
/// point by point.
inline Vector influence_scores(const InnerProblem &p, const InnerSolution &sol, const OuterObjective &outer,
                               const std::vector<Index> &candidates, const HypergradOptions &opts = {}) {
    detail::require_candidates(p, candidates);
    detail::require_stationary(p, sol, opts.stationarity_tol);
    Vector scores = Vector::Zero(static_cast<Index>(candidates.size()));
    if (p.basis_size() == 0) { return scores; }
    const Matrix h = InnerHessian(p, sol).dense();
    const Eigen::LDLT<Matrix> ldlt(h);
    if (ldlt.info() != Eigen::Success) { throw Error(ErrorCode::SingularSystem, "influence_scores: Hessian"); }
    Vector grad_g = Vector::Zero(h.rows());
    for (Index i : outer.targets(p.universe_size())) { grad_g += mixed_partial_column(p, sol, i); }
    for (size_t j = 0; j < candidates.size(); ++j) {
        const Vector d_alpha = -ldlt.solve(mixed_partial_column(p, sol, candidates[j]));
        scores[static_cast<Index>(j)] = -grad_g.dot(d_alpha);
    }
    return scores;
}

}  // namespace bico
