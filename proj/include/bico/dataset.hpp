#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "bico/error.hpp"
#include "bico/numlin.hpp"

namespace bico {

/// Points are the rows of `features`. `targets` holds one row per point: the
/// one-hot class encoding for classification data or the raw regression
/// targets. `labels` is empty for regression data.
struct Dataset {
    Matrix features;
    Matrix targets;
    std::vector<int> labels;
    int num_classes = 0;

    [[nodiscard]] Index size() const { return features.rows(); }
    [[nodiscard]] Index dim() const { return features.cols(); }
    [[nodiscard]] bool empty() const { return features.rows() == 0; }

    static Dataset classification(Matrix features, std::vector<int> labels, int num_classes = -1) {
        if (static_cast<Index>(labels.size()) != features.rows()) {
            throw Error(ErrorCode::ShapeMismatch, "classification dataset: " + std::to_string(features.rows()) +
                                                      " feature rows but " + std::to_string(labels.size()) + " labels");
        }
        check_finite(features, "dataset features");
        if (num_classes < 0) {
            num_classes = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
        }
        Matrix targets = Matrix::Zero(features.rows(), num_classes);
        for (size_t i = 0; i < labels.size(); ++i) {
            if (labels[i] < 0 || labels[i] >= num_classes) {
                throw Error(ErrorCode::ShapeMismatch, "label " + std::to_string(labels[i]) + " out of range");
            }
            targets(static_cast<Index>(i), labels[i]) = 1.0;
        }
        return {std::move(features), std::move(targets), std::move(labels), num_classes};
    }

    static Dataset regression(Matrix features, Matrix targets) {
        if (targets.rows() != features.rows()) {
            throw Error(ErrorCode::ShapeMismatch, "regression dataset: feature/target row counts differ");
        }
        check_finite(features, "dataset features");
        check_finite(targets, "dataset targets");
        return {std::move(features), std::move(targets), {}, 0};
    }

    [[nodiscard]] Dataset subset(std::span<const Index> rows) const {
        Dataset out;
        out.features.resize(static_cast<Index>(rows.size()), dim());
        out.targets.resize(static_cast<Index>(rows.size()), targets.cols());
        out.num_classes = num_classes;
        for (size_t r = 0; r < rows.size(); ++r) {
            const Index i = rows[r];
            if (i < 0 || i >= size()) { throw Error(ErrorCode::IndexOutOfRange, "dataset subset index out of range"); }
            out.features.row(static_cast<Index>(r)) = features.row(i);
            out.targets.row(static_cast<Index>(r)) = targets.row(i);
            if (!labels.empty()) { out.labels.push_back(labels[static_cast<size_t>(i)]); }
        }
        return out;
    }

    /// Row-wise concatenation; both sides must share dimension and class count.
    [[nodiscard]] Dataset concat(const Dataset &other) const {
        if (empty()) { return other; }
        if (other.empty()) { return *this; }
        if (other.dim() != dim() || other.targets.cols() != targets.cols()) {
            throw Error(ErrorCode::ShapeMismatch, "dataset concat: incompatible shapes");
        }
        Dataset out;
        out.features.resize(size() + other.size(), dim());
        out.features << features, other.features;
        out.targets.resize(size() + other.size(), targets.cols());
        out.targets << targets, other.targets;
        out.labels = labels;
        out.labels.insert(out.labels.end(), other.labels.begin(), other.labels.end());
        out.num_classes = std::max(num_classes, other.num_classes);
        return out;
    }
};

using Rng = std::mt19937_64;

/// First `k` entries of a seeded partial Fisher-Yates shuffle of `pool`.
inline std::vector<Index> sample_without_replacement(std::vector<Index> pool, size_t k, Rng &rng) {
    k = std::min(k, pool.size());
    for (size_t i = 0; i < k; ++i) {
        std::uniform_int_distribution<size_t> pick(i, pool.size() - 1);
        std::swap(pool[i], pool[pick(rng)]);
    }
    pool.resize(k);
    return pool;
}

inline std::vector<Index> iota_indices(Index n) {
    std::vector<Index> out(static_cast<size_t>(n));
    for (Index i = 0; i < n; ++i) { out[static_cast<size_t>(i)] = i; }
    return out;
}

}  // namespace bico
