#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <string>
#include <utility>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "bico/error.hpp"

namespace bico {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

using ObjectiveFn = std::function<double(const Vector &)>;
using GradientFn = std::function<Vector(const Vector &)>;
using LinearOperator = std::function<Vector(const Vector &)>;
using ProjectionFn = std::function<Vector(const Vector &)>;

template<typename Derived>
void check_finite(const Eigen::MatrixBase<Derived> &m, std::string_view what) {
    if (!m.allFinite()) { throw Error(ErrorCode::NonFiniteInput, std::string(what) + " contains NaN or Inf"); }
}

struct SpdSolveResult {
    Matrix solution;
    double residual_norm = 0.0;  // ||(A + jitter I) X - B||_F at return time
    double jitter_used = 0.0;
};

struct CholeskyOptions {
    double jitter = 0.0;
    double max_jitter = 1e-4;
    double symmetry_tol = 1e-10;
};

/// Solves (A + jitter I) X = B for symmetric positive (semi)definite A.
///
/// The jitter starts at the caller value and is multiplied by 10 on each failed
/// factorization until it exceeds `max_jitter`. A zero starting jitter escalates
/// through 1e-12. One step of iterative refinement is applied to the result.
inline SpdSolveResult cholesky_solve(const Matrix &a, const Matrix &b, const CholeskyOptions &opts = {}) {
    if (a.rows() != a.cols()) { throw Error(ErrorCode::DimensionMismatch, "cholesky_solve: A is not square"); }
    if (b.rows() != a.rows()) { throw Error(ErrorCode::DimensionMismatch, "cholesky_solve: B is not conformable with A"); }
    check_finite(a, "cholesky_solve: A");
    check_finite(b, "cholesky_solve: B");
    const double scale = a.cwiseAbs().maxCoeff();
    if (a.size() > 0 && (a - a.transpose()).cwiseAbs().maxCoeff() > opts.symmetry_tol * std::max(scale, 1e-300)) {
        throw Error(ErrorCode::DimensionMismatch, "cholesky_solve: A is not symmetric");
    }
    if (a.rows() == 0) { return {Matrix(0, b.cols()), 0.0, opts.jitter}; }

    double jitter = opts.jitter;
    while (true) {
        Matrix shifted = a;
        shifted.diagonal().array() += jitter;
        Eigen::LLT<Matrix> llt(shifted);
        if (llt.info() == Eigen::Success) {
            Matrix x = llt.solve(b);
            if (x.allFinite()) {
                Matrix r = b - shifted * x;
                x += llt.solve(r);
                r = shifted * x - b;
                return {std::move(x), r.norm(), jitter};
            }
        }
        if (jitter >= opts.max_jitter) { break; }
        jitter = (jitter == 0.0) ? 1e-12 : jitter * 10.0;
        if (jitter > opts.max_jitter * (1.0 + 1e-12)) { break; }
    }
    throw Error(ErrorCode::NotPositiveDefinite,
                "factorization failed with jitter up to " + std::to_string(opts.max_jitter));
}

struct CgResult {
    Vector x;
    Index iterations = 0;
    double residual_norm = 0.0;
};

/// Plain (unpreconditioned) conjugate gradient. Returns the best iterate seen
/// when the tolerance is not reached within `max_iters`.
inline CgResult cg_solve(const LinearOperator &matvec, const Vector &b, Index max_iters, double tol = 1e-10) {
    if (max_iters < 1) { throw Error(ErrorCode::DimensionMismatch, "cg_solve: max_iters must be >= 1"); }
    check_finite(b, "cg_solve: b");
    const double b_norm = b.norm();
    Vector x = Vector::Zero(b.size());
    if (b_norm == 0.0) { return {x, 0, 0.0}; }

    Vector r = b;
    Vector p = r;
    double rr = r.squaredNorm();
    Vector best = x;
    double best_res = std::sqrt(rr);
    Index it = 0;
    while (it < max_iters) {
        const Vector ap = matvec(p);
        const double pap = p.dot(ap);
        if (!std::isfinite(pap)) { throw Error(ErrorCode::NonFiniteIterate, "cg_solve: non-finite curvature"); }
        if (pap <= 0.0) { break; }  // direction of non-positive curvature; keep best iterate
        const double step = rr / pap;
        x += step * p;
        r -= step * ap;
        ++it;
        if (!x.allFinite()) { throw Error(ErrorCode::NonFiniteIterate, "cg_solve: non-finite iterate"); }
        const double rr_next = r.squaredNorm();
        const double res = std::sqrt(rr_next);
        if (res < best_res) {
            best_res = res;
            best = x;
        }
        if (res <= tol * b_norm) { break; }
        p = r + (rr_next / rr) * p;
        rr = rr_next;
    }
    return {best, it, best_res};
}

/// Fixed-step projected gradient descent. The returned point is always a
/// fixed point of `project`.
inline Vector projected_gd(const ObjectiveFn &objective, const GradientFn &grad, const Vector &init,
                           const ProjectionFn &project, double step, Index iters) {
    Vector x = project(init);
    if (!std::isfinite(objective(x))) { throw Error(ErrorCode::NonFiniteObjective, "projected_gd: initial objective"); }
    for (Index k = 0; k < iters; ++k) {
        x = project(x - step * grad(x));
        if (!std::isfinite(objective(x))) {
            throw Error(ErrorCode::NonFiniteObjective, "projected_gd: objective at iteration " + std::to_string(k));
        }
    }
    return x;
}

struct LbfgsOptions {
    double step = 0.25;  // trial step length on the first iteration
    Index max_iters = 200;
    double tol = 1e-5;  // on the infinity norm of the gradient
    Index history = 10;
};

struct LbfgsResult {
    Vector x;
    double value = 0.0;
    double grad_inf_norm = 0.0;
    Index iterations = 0;
    bool converged = false;
};

class LineSearchFailure : public Error {
public:
    LineSearchFailure(const std::string &message, Vector best, double best_value)
        : Error(ErrorCode::LineSearchFailure, message), best_(std::move(best)), best_value_(best_value) {}

    [[nodiscard]] const Vector &best_iterate() const noexcept { return best_; }
    [[nodiscard]] double best_value() const noexcept { return best_value_; }

private:
    Vector best_;
    double best_value_;
};

namespace detail {

// Strong-Wolfe line search (bracketing + zoom). Returns a step > 0 or 0 on failure.
inline double wolfe_line_search(const ObjectiveFn &objective, const GradientFn &grad, const Vector &x,
                                double f0, const Vector &g0, const Vector &dir, double alpha_init) {
    constexpr double c1 = 1e-4;
    constexpr double c2 = 0.9;
    const double d0 = g0.dot(dir);
    auto phi = [&](double a) { return objective(x + a * dir); };
    auto dphi = [&](double a) { return grad(x + a * dir).dot(dir); };

    auto zoom = [&](double lo, double hi, double f_lo, double d_lo) -> double {
        for (int j = 0; j < 40; ++j) {
            double a = 0.5 * (lo + hi);
            // Safeguarded quadratic interpolation using f(lo), f'(lo) and f(hi).
            const double f_hi = phi(hi);
            if (std::isfinite(f_hi)) {
                const double denom = 2.0 * (f_hi - f_lo - d_lo * (hi - lo));
                if (denom > 0.0) {
                    const double a_q = lo - d_lo * (hi - lo) * (hi - lo) / denom;
                    const double lo_b = std::min(lo, hi), hi_b = std::max(lo, hi);
                    const double margin = 0.1 * (hi_b - lo_b);
                    if (a_q > lo_b + margin && a_q < hi_b - margin) { a = a_q; }
                }
            }
            const double f_a = phi(a);
            if (!std::isfinite(f_a) || f_a > f0 + c1 * a * d0 || f_a >= f_lo) {
                hi = a;
            } else {
                const double d_a = dphi(a);
                if (std::abs(d_a) <= -c2 * d0) { return a; }
                if (d_a * (hi - lo) >= 0.0) { hi = lo; }
                lo = a;
                f_lo = f_a;
                d_lo = d_a;
            }
            if (std::abs(hi - lo) < 1e-16 * std::max(1.0, std::abs(lo))) { break; }
        }
        return lo;  // satisfies sufficient decrease when lo > 0
    };

    double a_prev = 0.0, f_prev = f0, d_prev = d0;
    double a = alpha_init;
    for (int i = 0; i < 30; ++i) {
        const double f_a = phi(a);
        if (!std::isfinite(f_a) || f_a > f0 + c1 * a * d0 || (i > 0 && f_a >= f_prev)) {
            return zoom(a_prev, a, f_prev, d_prev);
        }
        const double d_a = dphi(a);
        if (std::abs(d_a) <= -c2 * d0) { return a; }
        if (d_a >= 0.0) { return zoom(a, a_prev, f_a, d_a); }
        a_prev = a;
        f_prev = f_a;
        d_prev = d_a;
        a *= 2.0;
    }
    return a_prev;
}

}  // namespace detail

/// Limited-memory BFGS with a strong-Wolfe line search.
inline LbfgsResult lbfgs_minimize(const ObjectiveFn &objective, const GradientFn &grad, const Vector &init,
                                  const LbfgsOptions &opts = {}) {
    Vector x = init;
    double f = objective(x);
    Vector g = grad(x);
    if (!std::isfinite(f) || !g.allFinite()) { throw Error(ErrorCode::NonFiniteObjective, "lbfgs: initial point"); }
    LbfgsResult out{x, f, g.lpNorm<Eigen::Infinity>(), 0, false};
    if (g.size() == 0 || out.grad_inf_norm <= opts.tol) {
        out.converged = true;
        return out;
    }

    std::deque<std::pair<Vector, Vector>> mem;  // (s, y)
    for (Index k = 0; k < opts.max_iters; ++k) {
        // Two-loop recursion.
        Vector q = g;
        std::vector<double> rho(mem.size()), alpha(mem.size());
        for (Index i = static_cast<Index>(mem.size()) - 1; i >= 0; --i) {
            const auto &[s, y] = mem[static_cast<size_t>(i)];
            rho[i] = 1.0 / y.dot(s);
            alpha[i] = rho[i] * s.dot(q);
            q -= alpha[i] * y;
        }
        if (!mem.empty()) {
            const auto &[s, y] = mem.back();
            q *= s.dot(y) / y.squaredNorm();
        }
        for (size_t i = 0; i < mem.size(); ++i) {
            const auto &[s, y] = mem[i];
            const double beta = rho[i] * y.dot(q);
            q += (alpha[i] - beta) * s;
        }
        Vector dir = -q;
        if (g.dot(dir) >= 0.0) {
            mem.clear();
            dir = -g;
        }

        const double a0 = mem.empty() ? opts.step * std::min(1.0, 1.0 / g.lpNorm<Eigen::Infinity>()) : 1.0;
        double a = detail::wolfe_line_search(objective, grad, x, f, g, dir, std::max(a0, 1e-12));
        if (a <= 0.0 && !mem.empty()) {
            mem.clear();
            dir = -g;
            a = detail::wolfe_line_search(objective, grad, x, f, g, dir, opts.step);
        }
        if (a <= 0.0) {
            throw LineSearchFailure("lbfgs: no acceptable step at iteration " + std::to_string(k), x, f);
        }

        Vector x_new = x + a * dir;
        const double f_new = objective(x_new);
        Vector g_new = grad(x_new);
        if (!std::isfinite(f_new) || !g_new.allFinite()) {
            throw LineSearchFailure("lbfgs: non-finite value after step", x, f);
        }
        Vector s = x_new - x;
        Vector y = g_new - g;
        if (s.dot(y) > 1e-12 * y.squaredNorm() && s.dot(y) > 0.0) {
            mem.emplace_back(std::move(s), std::move(y));
            if (static_cast<Index>(mem.size()) > opts.history) { mem.pop_front(); }
        }
        const bool stalled = !(f_new < f);
        x = std::move(x_new);
        f = f_new;
        g = std::move(g_new);
        out.iterations = k + 1;
        if (g.lpNorm<Eigen::Infinity>() <= opts.tol) {
            out.converged = true;
            break;
        }
        if (stalled) { break; }
    }
    out.x = x;
    out.value = f;
    out.grad_inf_norm = g.lpNorm<Eigen::Infinity>();
    return out;
}

/// Central finite differences, one coordinate at a time.
inline Vector finite_diff_grad(const ObjectiveFn &objective, const Vector &x, double h) {
    if (!(h > 0.0)) { throw Error(ErrorCode::DimensionMismatch, "finite_diff_grad: h must be positive"); }
    Vector out(x.size());
    Vector probe = x;
    for (Index i = 0; i < x.size(); ++i) {
        probe[i] = x[i] + h;
        const double fp = objective(probe);
        probe[i] = x[i] - h;
        const double fm = objective(probe);
        probe[i] = x[i];
        if (!std::isfinite(fp) || !std::isfinite(fm)) {
            throw Error(ErrorCode::NonFiniteObjective, "finite_diff_grad: non-finite objective");
        }
        out[i] = (fp - fm) / (2.0 * h);
    }
    return out;
}

inline Vector clamp_nonnegative(const Vector &x) { return x.cwiseMax(0.0); }

}  // namespace bico
