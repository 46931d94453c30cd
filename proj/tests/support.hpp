#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "bico/dataset.hpp"
#include "bico/inner.hpp"
#include "bico/kernels.hpp"

namespace bico::testing {

inline Matrix gaussian(Index rows, Index cols, Rng &rng, double scale = 1.0) {
    std::normal_distribution<double> normal(0.0, scale);
    Matrix m(rows, cols);
    for (Index j = 0; j < cols; ++j) {
        for (Index i = 0; i < rows; ++i) { m(i, j) = normal(rng); }
    }
    return m;
}

inline Vector uniform_vector(Index n, double lo, double hi, Rng &rng) {
    std::uniform_real_distribution<double> u(lo, hi);
    Vector v(n);
    for (Index i = 0; i < n; ++i) { v[i] = u(rng); }
    return v;
}

inline Dataset blobs(Index n, Index d, int classes, Rng &rng, double spread = 3.0) {
    const Matrix centers = gaussian(classes, d, rng, spread);
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix x(n, d);
    std::vector<int> labels;
    for (Index i = 0; i < n; ++i) {
        const int c = static_cast<int>(i % classes);
        for (Index j = 0; j < d; ++j) { x(i, j) = centers(c, j) + normal(rng); }
        labels.push_back(c);
    }
    return Dataset::classification(x, labels, classes);
}

/// Representer-form problem whose basis is the support `support` of an n-point
/// universe with an RBF kernel.
inline InnerProblem random_problem(Index n, Index s, Index c, Loss loss, Rng &rng, double lambda = 1e-2) {
    const Dataset data = blobs(n, 3, static_cast<int>(c), rng, 1.5);
    const KernelSpec k = KernelSpec::rbf(0.3);
    std::vector<Index> support = sample_without_replacement(iota_indices(n), static_cast<size_t>(s), rng);
    InnerProblem p;
    p.cross_block = cross_gram(k, data.subset(support).features, data.features);
    p.gram_block.resize(s, s);
    for (Index j = 0; j < s; ++j) { p.gram_block.col(j) = p.cross_block.col(support[static_cast<size_t>(j)]); }
    p.gram_block = 0.5 * (p.gram_block + p.gram_block.transpose()).eval();
    p.labels = loss == Loss::squared && c == 1 ? Matrix(gaussian(n, 1, rng)) : data.targets;
    p.support = support;
    p.weights = uniform_vector(s, 0.5, 2.0, rng);
    p.lambda = lambda;
    p.loss = loss;
    return p;
}

}  // namespace bico::testing
