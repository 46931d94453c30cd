#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Cholesky>

#include "bico/error.hpp"
#include "bico/numlin.hpp"

namespace bico {

enum class Loss { squared, cross_entropy };

inline std::string_view to_string(Loss l) { return l == Loss::squared ? "squared" : "cross_entropy"; }

inline Loss loss_from_string(std::string_view s) {
    if (s == "squared") { return Loss::squared; }
    if (s == "cross_entropy" || s == "cross-entropy") { return Loss::cross_entropy; }
    throw Error(ErrorCode::ConfigError, "unknown loss '" + std::string(s) + "'");
}

/// Weighted, regularized inner problem in representer form.
///
/// The model is f(x_i) = alpha^T K_{B,i} where B is a basis of s points:
/// `gram_block` is K_{B,B} and `cross_block` is K_{B,.} over the n points of
/// the universe. The weighted data term runs over `support` (indices into the
/// universe) with matching `weights`. In the usual coreset setting the basis
/// and the support are the same points.
///
/// Coefficients alpha are s x c; flattened vectors are column-major
/// (index = output * s + basis_row), which is Eigen's default layout.
struct InnerProblem {
    Matrix gram_block;
    Matrix cross_block;
    Matrix labels;  // n x c
    std::vector<Index> support;
    Vector weights;
    double lambda = 1e-3;
    Loss loss = Loss::squared;

    [[nodiscard]] Index basis_size() const { return gram_block.rows(); }
    [[nodiscard]] Index outputs() const { return labels.cols(); }
    [[nodiscard]] Index universe_size() const { return cross_block.cols(); }

    void validate() const {
        if (gram_block.rows() != gram_block.cols()) {
            throw Error(ErrorCode::DimensionMismatch, "inner: gram block is not square");
        }
        if (cross_block.rows() != gram_block.rows()) {
            throw Error(ErrorCode::DimensionMismatch, "inner: cross block rows differ from basis size");
        }
        if (labels.rows() != cross_block.cols()) {
            throw Error(ErrorCode::DimensionMismatch, "inner: labels rows differ from universe size");
        }
        if (static_cast<Index>(support.size()) != weights.size()) {
            throw Error(ErrorCode::DimensionMismatch, "inner: support and weights differ in length");
        }
        for (Index i : support) {
            if (i < 0 || i >= universe_size()) { throw Error(ErrorCode::IndexOutOfRange, "inner: support index"); }
        }
        if (!(lambda > 0.0)) { throw Error(ErrorCode::ConfigError, "inner: lambda must be positive"); }
        if ((weights.array() < 0.0).any()) { throw Error(ErrorCode::ConfigError, "inner: negative weight"); }
    }
};

struct InnerSolution {
    Matrix alpha;  // s x c
    double achieved_objective = 0.0;
    double grad_norm = 0.0;  // infinity norm of the inner gradient
};

namespace detail {

inline Vector softmax(const Eigen::Ref<const Vector> &z) {
    const double mx = z.maxCoeff();
    Vector e = (z.array() - mx).exp();
    return e / e.sum();
}

inline double log_sum_exp(const Eigen::Ref<const Vector> &z) {
    const double mx = z.maxCoeff();
    return mx + std::log((z.array() - mx).exp().sum());
}

inline Matrix support_columns(const InnerProblem &p) {
    Matrix c(p.basis_size(), static_cast<Index>(p.support.size()));
    for (size_t j = 0; j < p.support.size(); ++j) { c.col(static_cast<Index>(j)) = p.cross_block.col(p.support[j]); }
    return c;
}

inline Matrix support_labels(const InnerProblem &p) {
    Matrix y(static_cast<Index>(p.support.size()), p.outputs());
    for (size_t j = 0; j < p.support.size(); ++j) { y.row(static_cast<Index>(j)) = p.labels.row(p.support[j]); }
    return y;
}

inline Matrix unflatten(const Vector &v, Index rows, Index cols) {
    return Eigen::Map<const Matrix>(v.data(), rows, cols);
}

inline Vector flatten(const Matrix &m) { return Eigen::Map<const Vector>(m.data(), m.size()); }

}  // namespace detail

/// Unweighted loss of universe point k under coefficients alpha.
inline double point_loss(const InnerProblem &p, const Matrix &alpha, Index k) {
    const Vector z = alpha.transpose() * p.cross_block.col(k);
    if (p.loss == Loss::squared) { return (z - p.labels.row(k).transpose()).squaredNorm(); }
    return detail::log_sum_exp(z) - p.labels.row(k).dot(z);
}

/// Gradient of the unweighted loss of point k with respect to alpha (s x c).
inline Matrix loss_gradient(const InnerProblem &p, const Matrix &alpha, Index k) {
    if (k < 0 || k >= p.universe_size()) { throw Error(ErrorCode::IndexOutOfRange, "loss_gradient: index"); }
    const Vector kc = p.cross_block.col(k);
    const Vector z = alpha.transpose() * kc;
    Vector resid = p.loss == Loss::squared ? Vector(2.0 * (z - p.labels.row(k).transpose()))
                                           : Vector(detail::softmax(z) - p.labels.row(k).transpose());
    return kc * resid.transpose();
}

/// Per-point residual factor r_k such that grad_alpha loss_k = K_{B,k} r_k^T,
/// computed for a block of points at once (rows of the result).
inline Matrix loss_residuals(const InnerProblem &p, const Matrix &alpha, const std::vector<Index> &points) {
    Matrix kc(p.basis_size(), static_cast<Index>(points.size()));
    Matrix y(static_cast<Index>(points.size()), p.outputs());
    for (size_t j = 0; j < points.size(); ++j) {
        kc.col(static_cast<Index>(j)) = p.cross_block.col(points[j]);
        y.row(static_cast<Index>(j)) = p.labels.row(points[j]);
    }
    Matrix z = kc.transpose() * alpha;  // |points| x c
    if (p.loss == Loss::squared) { return 2.0 * (z - y); }
    for (Index j = 0; j < z.rows(); ++j) { z.row(j) = detail::softmax(z.row(j).transpose()).transpose(); }
    return z - y;
}

inline double inner_objective(const InnerProblem &p, const Matrix &alpha) {
    double value = p.lambda * (alpha.transpose() * p.gram_block * alpha).trace();
    for (size_t j = 0; j < p.support.size(); ++j) {
        const double w = p.weights[static_cast<Index>(j)];
        if (w != 0.0) { value += w * point_loss(p, alpha, p.support[j]); }
    }
    return value;
}

inline Matrix inner_gradient(const InnerProblem &p, const Matrix &alpha) {
    Matrix g = 2.0 * p.lambda * (p.gram_block * alpha);
    if (p.support.empty()) { return g; }
    const Matrix c = detail::support_columns(p);
    Matrix r = loss_residuals(p, alpha, p.support);
    r.array().colwise() *= p.weights.array();
    g.noalias() += c * r;
    return g;
}

namespace detail {

inline bool basis_is_support(const InnerProblem &p) {
    if (static_cast<Index>(p.support.size()) != p.basis_size()) { return false; }
    const double scale = std::max(1.0, p.gram_block.cwiseAbs().maxCoeff());
    for (size_t j = 0; j < p.support.size(); ++j) {
        const Index jj = static_cast<Index>(j);
        if ((p.cross_block.col(p.support[j]) - p.gram_block.col(jj)).cwiseAbs().maxCoeff() > 1e-12 * scale) {
            return false;
        }
    }
    return true;
}

inline InnerSolution finish(const InnerProblem &p, Matrix alpha) {
    InnerSolution sol;
    sol.achieved_objective = inner_objective(p, alpha);
    sol.grad_norm = alpha.size() ? inner_gradient(p, alpha).lpNorm<Eigen::Infinity>() : 0.0;
    sol.alpha = std::move(alpha);
    return sol;
}

}  // namespace detail

/// Weighted kernel ridge regression.
///
/// When the basis coincides with the support this is the closed form
/// alpha = (D(w) K + lambda I)^{-1} D(w) Y, solved through the symmetric system
/// (D^{1/2} K D^{1/2} + lambda I) beta = D^{1/2} Y with alpha = D^{1/2} beta;
/// rows with zero weight get zero coefficients. Otherwise the normal equations
/// (C D C^T + lambda K) alpha = C D Y of the general representer form are used.
inline InnerSolution solve_krr(const InnerProblem &p) {
    p.validate();
    if (p.loss != Loss::squared) { throw Error(ErrorCode::ConfigError, "solve_krr requires the squared loss"); }
    const Index s = p.basis_size();
    if (s == 0) { return {Matrix(0, p.outputs()), 0.0, 0.0}; }
    const Matrix y = detail::support_labels(p);
    try {
        if (detail::basis_is_support(p)) {
            const Vector sqrt_w = p.weights.cwiseSqrt();
            Matrix a = sqrt_w.asDiagonal() * p.gram_block * sqrt_w.asDiagonal();
            a = 0.5 * (a + a.transpose());
            a.diagonal().array() += p.lambda;
            const Matrix rhs = sqrt_w.asDiagonal() * y;
            const auto solved = cholesky_solve(a, rhs);
            return detail::finish(p, sqrt_w.asDiagonal() * solved.solution);
        }
        const Matrix c = detail::support_columns(p);
        Matrix a = c * p.weights.asDiagonal() * c.transpose() + p.lambda * p.gram_block;
        a = 0.5 * (a + a.transpose());
        const Matrix rhs = c * p.weights.asDiagonal() * y;
        const auto solved = cholesky_solve(a, rhs);
        return detail::finish(p, solved.solution);
    } catch (const Error &e) {
        if (e.code() == ErrorCode::NotPositiveDefinite) {
            throw Error(ErrorCode::SingularSystem, std::string("solve_krr: ") + e.what());
        }
        throw;
    }
}

/// Hessian of the inner objective in flattened alpha coordinates, with the
/// support-dependent quantities cached for repeated products.
class InnerHessian {
public:
    InnerHessian(const InnerProblem &p, const InnerSolution &sol)
        : problem_(&p), s_(p.basis_size()), c_(p.outputs()), cols_(detail::support_columns(p)) {
        if (sol.alpha.rows() != s_ || sol.alpha.cols() != c_) {
            throw Error(ErrorCode::DimensionMismatch, "inner hessian: solution shape does not match problem");
        }
        if (p.loss == Loss::cross_entropy) {
            probs_ = cols_.transpose() * sol.alpha;
            for (Index j = 0; j < probs_.rows(); ++j) {
                probs_.row(j) = detail::softmax(probs_.row(j).transpose()).transpose();
            }
        }
    }

    [[nodiscard]] Index dim() const { return s_ * c_; }

    [[nodiscard]] Vector apply(const Vector &v) const {
        if (v.size() != dim()) { throw Error(ErrorCode::DimensionMismatch, "inner hessian: vector length"); }
        const InnerProblem &p = *problem_;
        const Matrix vm = detail::unflatten(v, s_, c_);
        Matrix out = 2.0 * p.lambda * (p.gram_block * vm);
        if (cols_.cols() > 0) {
            Matrix u = cols_.transpose() * vm;  // |support| x c
            if (p.loss == Loss::squared) {
                u *= 2.0;
            } else {
                for (Index j = 0; j < u.rows(); ++j) {
                    const double pu = probs_.row(j).dot(u.row(j));
                    u.row(j) = probs_.row(j).cwiseProduct(u.row(j)) - pu * probs_.row(j);
                }
            }
            u.array().colwise() *= p.weights.array();
            out.noalias() += cols_ * u;
        }
        return detail::flatten(out);
    }

    [[nodiscard]] Matrix dense() const {
        Matrix h(dim(), dim());
        Vector e = Vector::Zero(dim());
        for (Index i = 0; i < dim(); ++i) {
            e[i] = 1.0;
            h.col(i) = apply(e);
            e[i] = 0.0;
        }
        return 0.5 * (h + h.transpose());
    }

private:
    const InnerProblem *problem_;
    Index s_, c_;
    Matrix cols_;
    Matrix probs_;
};

struct InnerOptions {
    LbfgsOptions lbfgs{};
    Index newton_polish = 3;     // Newton steps after L-BFGS (cross-entropy only)
    Index polish_max_dim = 2000; // skip polishing above this many coefficients
};

namespace detail {

// Damped Newton iterations with the exact Hessian, keeping the best iterate.
inline Matrix newton_polish(const InnerProblem &p, Matrix alpha, Index steps) {
    double f = inner_objective(p, alpha);
    for (Index k = 0; k < steps; ++k) {
        const Vector g = flatten(inner_gradient(p, alpha));
        if (g.lpNorm<Eigen::Infinity>() == 0.0) { break; }
        InnerSolution at{alpha, f, 0.0};
        const Matrix h = InnerHessian(p, at).dense();
        const Eigen::LDLT<Matrix> ldlt(h);
        if (ldlt.info() != Eigen::Success) { break; }
        const Vector step = ldlt.solve(g);
        if (!step.allFinite()) { break; }
        double t = 1.0;
        bool moved = false;
        for (int ls = 0; ls < 30; ++ls, t *= 0.5) {
            const Matrix trial = alpha - t * unflatten(step, alpha.rows(), alpha.cols());
            const double ft = inner_objective(p, trial);
            const double gt = inner_gradient(p, trial).lpNorm<Eigen::Infinity>();
            if (std::isfinite(ft) && (ft < f || (ft <= f + 1e-14 * std::abs(f) && gt < g.lpNorm<Eigen::Infinity>()))) {
                alpha = trial;
                f = ft;
                moved = true;
                break;
            }
        }
        if (!moved) { break; }
    }
    return alpha;
}

}  // namespace detail

/// Weighted multinomial cross-entropy with the RKHS ridge penalty, minimized by
/// L-BFGS from `warm_start` (zeros when absent) and refined by a few Newton
/// steps. A line-search failure is reported only if the refined iterate still
/// misses the tolerance.
inline InnerSolution solve_cross_entropy(const InnerProblem &p, const std::optional<Matrix> &warm_start = std::nullopt,
                                         const InnerOptions &opts = {}) {
    p.validate();
    if (p.loss != Loss::cross_entropy) {
        throw Error(ErrorCode::ConfigError, "solve_cross_entropy requires the cross-entropy loss");
    }
    const Index s = p.basis_size(), c = p.outputs();
    if (s == 0) { return {Matrix(0, c), 0.0, 0.0}; }
    Vector x0 = Vector::Zero(s * c);
    if (warm_start && warm_start->rows() == s && warm_start->cols() == c) { x0 = detail::flatten(*warm_start); }
    auto objective = [&](const Vector &v) { return inner_objective(p, detail::unflatten(v, s, c)); };
    auto gradient = [&](const Vector &v) { return detail::flatten(inner_gradient(p, detail::unflatten(v, s, c))); };
    const bool polish = opts.newton_polish > 0 && s * c <= opts.polish_max_dim;
    Vector x;
    try {
        x = lbfgs_minimize(objective, gradient, x0, opts.lbfgs).x;
    } catch (const LineSearchFailure &e) {
        if (!polish) { throw; }
        Matrix refined = detail::newton_polish(p, detail::unflatten(e.best_iterate(), s, c), opts.newton_polish);
        if (inner_gradient(p, refined).lpNorm<Eigen::Infinity>() > opts.lbfgs.tol) { throw; }
        return detail::finish(p, std::move(refined));
    }
    Matrix alpha = detail::unflatten(x, s, c);
    if (polish) { alpha = detail::newton_polish(p, std::move(alpha), opts.newton_polish); }
    return detail::finish(p, std::move(alpha));
}

inline InnerSolution solve_inner(const InnerProblem &p, const std::optional<Matrix> &warm_start = std::nullopt,
                                 const InnerOptions &opts = {}) {
    return p.loss == Loss::squared ? solve_krr(p) : solve_cross_entropy(p, warm_start, opts);
}

inline Vector inner_hessian_matvec(const InnerProblem &p, const InnerSolution &sol, const Vector &v) {
    return InnerHessian(p, sol).apply(v);
}

/// d^2 f / (d w_k d alpha), which is the gradient of the unweighted loss of
/// point k with respect to alpha, flattened.
inline Vector mixed_partial_column(const InnerProblem &p, const InnerSolution &sol, Index k) {
    if (k < 0 || k >= p.universe_size()) {
        throw Error(ErrorCode::IndexOutOfRange, "mixed_partial_column: index " + std::to_string(k));
    }
    return detail::flatten(loss_gradient(p, sol.alpha, k));
}

}  // namespace bico
