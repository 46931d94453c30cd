#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <string_view>

#include "bico/error.hpp"
#include "bico/numlin.hpp"
#include "bico/parallel.hpp"

namespace bico {

enum class KernelFamily { linear, rbf, fc_ntk };

inline std::string_view to_string(KernelFamily f) {
    switch (f) {
        case KernelFamily::linear: return "linear";
        case KernelFamily::rbf: return "rbf";
        case KernelFamily::fc_ntk: return "fc_ntk";
    }
    return "unknown";
}

inline KernelFamily kernel_family_from_string(std::string_view s) {
    if (s == "linear") { return KernelFamily::linear; }
    if (s == "rbf") { return KernelFamily::rbf; }
    if (s == "fc_ntk" || s == "fc-ntk") { return KernelFamily::fc_ntk; }
    throw Error(ErrorCode::ConfigError, "unknown kernel family '" + std::string(s) + "'");
}

/// Proxy-model kernel. `gamma` is only meaningful for rbf; `depth`,
/// `bias_variance` and `normalize` only for fc_ntk.
struct KernelSpec {
    KernelFamily family = KernelFamily::rbf;
    double gamma = 5e-4;
    int depth = 1;
    double bias_variance = 0.0;
    bool normalize = true;

    static KernelSpec linear() { return {KernelFamily::linear, 0.0, 0, 0.0, false}; }
    static KernelSpec rbf(double gamma = 5e-4) { return {KernelFamily::rbf, gamma, 0, 0.0, false}; }
    static KernelSpec fc_ntk(int depth, double bias_variance = 0.0, bool normalize = true) {
        return {KernelFamily::fc_ntk, 0.0, depth, bias_variance, normalize};
    }

    void validate() const {
        switch (family) {
            case KernelFamily::linear: break;
            case KernelFamily::rbf:
                if (!(gamma > 0.0)) { throw Error(ErrorCode::ConfigError, "rbf kernel requires gamma > 0"); }
                break;
            case KernelFamily::fc_ntk:
                if (depth < 1) { throw Error(ErrorCode::ConfigError, "fc_ntk kernel requires depth >= 1"); }
                if (!(bias_variance >= 0.0)) {
                    throw Error(ErrorCode::ConfigError, "fc_ntk kernel requires bias_variance >= 0");
                }
                break;
        }
    }

    bool operator==(const KernelSpec &) const = default;
};

namespace detail {

// Fully-connected ReLU NTK from the input-layer covariances
// (sxx = S0(x,x), syy = S0(y,y), sxy = S0(x,y)).
inline double fc_ntk_recursion(double sxx, double syy, double sxy, int depth) {
    constexpr double pi = std::numbers::pi;
    double theta = sxy;  // NTK of the first pre-activation equals its covariance
    for (int l = 0; l < depth; ++l) {
        const double norm = std::sqrt(sxx * syy);
        double next_xy = 0.0, deriv = 0.0;
        if (norm > 0.0) {
            const double rho = std::clamp(sxy / norm, -1.0, 1.0);
            const double angle = std::acos(rho);
            next_xy = norm / (2.0 * pi) * (std::sin(angle) + (pi - angle) * rho);
            deriv = (pi - angle) / (2.0 * pi);
        }
        // Diagonal covariances follow the same map with angle 0.
        sxx *= 0.5;
        syy *= 0.5;
        sxy = next_xy;
        theta = sxy + theta * deriv;
    }
    return theta;
}

template<typename A, typename B>
double kernel_eval_impl(const KernelSpec &spec, const Eigen::MatrixBase<A> &x, const Eigen::MatrixBase<B> &y) {
    switch (spec.family) {
        case KernelFamily::linear: return x.dot(y);
        case KernelFamily::rbf: return std::exp(-spec.gamma * (x - y).squaredNorm());
        case KernelFamily::fc_ntk: {
            double xx = x.squaredNorm(), yy = y.squaredNorm(), xy = x.dot(y);
            if (spec.normalize) {
                const double nx = std::sqrt(xx), ny = std::sqrt(yy);
                xy = (nx > 0.0 && ny > 0.0) ? xy / (nx * ny) : 0.0;
                xx = nx > 0.0 ? 1.0 : 0.0;
                yy = ny > 0.0 ? 1.0 : 0.0;
            }
            const double b2 = spec.bias_variance;
            return fc_ntk_recursion(xx + b2, yy + b2, xy + b2, spec.depth);
        }
    }
    return 0.0;
}

}  // namespace detail

/// Evaluates k(x, y) for two feature vectors.
template<typename A, typename B>
double kernel_eval(const KernelSpec &spec, const Eigen::MatrixBase<A> &x, const Eigen::MatrixBase<B> &y) {
    if (x.size() != y.size()) {
        throw Error(ErrorCode::DimensionMismatch, "kernel_eval: feature dimensions differ (" +
                                                      std::to_string(x.size()) + " vs " + std::to_string(y.size()) + ")");
    }
    return detail::kernel_eval_impl(spec, x, y);
}

struct GramMatrix {
    KernelSpec kernel;
    Matrix matrix;
};

/// Rectangular kernel block K(rows_i, cols_j). Rows of each argument are points.
inline Matrix cross_gram(const KernelSpec &spec, const Matrix &rows, const Matrix &cols, unsigned jobs = 1) {
    spec.validate();
    if (rows.cols() != cols.cols()) {
        throw Error(ErrorCode::DimensionMismatch, "cross_gram: feature dimensions differ");
    }
    Matrix out(rows.rows(), cols.rows());
    parallel_for(0, rows.rows(), jobs, [&](std::ptrdiff_t i) {
        for (Index j = 0; j < cols.rows(); ++j) { out(i, j) = detail::kernel_eval_impl(spec, rows.row(i), cols.row(j)); }
    });
    return out;
}

/// Symmetric Gram matrix; the upper triangle is computed and mirrored so the
/// result is bitwise symmetric.
inline GramMatrix gram(const KernelSpec &spec, const Matrix &x, unsigned jobs = 1) {
    spec.validate();
    if (x.rows() < 1) { throw Error(ErrorCode::DimensionMismatch, "gram: need at least one point"); }
    check_finite(x, "gram: features");
    const Index n = x.rows();
    Matrix k(n, n);
    parallel_for(0, n, jobs, [&](std::ptrdiff_t i) {
        for (Index j = i; j < n; ++j) { k(i, j) = detail::kernel_eval_impl(spec, x.row(i), x.row(j)); }
    });
    for (Index i = 0; i < n; ++i) {
        for (Index j = 0; j < i; ++j) { k(i, j) = k(j, i); }
    }
    return {spec, std::move(k)};
}

}  // namespace bico
