#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "bico/coreset.hpp"
#include "bico/dataset.hpp"
#include "bico/error.hpp"

namespace bico {

/// Picks which adjacent slot pair to merge, given s + 1 regularizers (1-based result).
/// Returns s when s == 1 or beta_{s-1} > beta_s, otherwise the first i with
/// beta_i == beta_{i+1}. Equality is relative to 1e-9, since sums of a
/// non-dyadic beta unit depend on the merge order in the last bits.
inline size_t select_index(const std::vector<double> &betas) {
    if (betas.size() < 2) { throw Error(ErrorCode::ConfigError, "select_index: need s + 1 >= 2 betas"); }
    const size_t s = betas.size() - 1;
    auto beta = [&](size_t i) { return betas[i - 1]; };
    auto equal = [](double a, double b) { return std::abs(a - b) <= 1e-9 * std::max(std::abs(a), std::abs(b)); };
    if (s == 1 || (beta(s - 1) > beta(s) && !equal(beta(s - 1), beta(s)))) { return s; }
    for (size_t i = 1; i <= s; ++i) {
        if (equal(beta(i), beta(i + 1))) { return i; }
    }
    throw Error(ErrorCode::NoEqualAdjacentPair, "select_index: no equal adjacent regularizers");
}

/// One buffer slot: the materialized summary points, their positions in the
/// stream, and the regularization mass they carry.
struct BufferSlot {
    Dataset points;
    Coreset coreset;  // indices are stream positions
    double beta = 1.0;
};

/// Compresses `data` to `size` points; the default reducer is build_coreset.
using Reducer = std::function<Coreset(const Dataset &data, Index size, std::uint64_t seed)>;

inline Reducer coreset_reducer(SelectionConfig config) {
    return [config](const Dataset &data, Index size, std::uint64_t seed) {
        SelectionConfig cfg = config;
        cfg.size = size;
        cfg.seed = seed;
        return build_coreset(data, cfg);
    };
}

/// Merge-reduce summary buffer with `max_slots` slots of `memory_size / max_slots`
/// points each.
class MergeReduceBuffer {
public:
    MergeReduceBuffer(Index memory_size, Index max_slots, Reducer reducer, double beta_unit = 1.0,
                      std::uint64_t seed = 0)
        : max_slots_(max_slots), beta_unit_(beta_unit), seed_(seed), reducer_(std::move(reducer)) {
        if (memory_size < 1 || max_slots < 1) { throw Error(ErrorCode::ConfigError, "buffer: m and s must be >= 1"); }
        if (memory_size % max_slots != 0) {
            throw Error(ErrorCode::ConfigError, "buffer: slot count " + std::to_string(max_slots) +
                                                    " does not divide memory size " + std::to_string(memory_size));
        }
        if (!(beta_unit > 0.0)) { throw Error(ErrorCode::ConfigError, "buffer: beta_unit must be positive"); }
        slot_capacity_ = memory_size / max_slots;
    }

    MergeReduceBuffer(Index memory_size, Index max_slots, const SelectionConfig &config, double beta_unit = 1.0)
        : MergeReduceBuffer(memory_size, max_slots, coreset_reducer(config), beta_unit, config.seed) {}

    /// Compresses the batch into a new slot and merges two slots when the slot
    /// count exceeds the bound. `positions` are the stream indices of the batch
    /// rows (defaults to consecutive positions).
    void consume(const Dataset &batch, std::vector<Index> positions = {}) {
        if (batch.empty()) { throw Error(ErrorCode::InsufficientData, "consume_batch: empty batch"); }
        if (positions.empty()) {
            for (Index i = 0; i < batch.size(); ++i) { positions.push_back(seen_ + i); }
        }
        if (static_cast<Index>(positions.size()) != batch.size()) {
            throw Error(ErrorCode::ShapeMismatch, "consume_batch: positions/batch size mismatch");
        }
        const Index size = std::min(slot_capacity_, batch.size());
        const Coreset local = reducer_(batch, size, next_seed());
        slots_.push_back(materialize(batch, positions, local, beta_unit_));
        seen_ += batch.size();
        ++batches_;

        if (static_cast<Index>(slots_.size()) > max_slots_) {
            std::vector<double> betas;
            for (const auto &slot : slots_) { betas.push_back(slot.beta); }
            size_t k = 0;
            try {
                k = select_index(betas);
            } catch (const Error &e) {
                if (e.code() != ErrorCode::NoEqualAdjacentPair) { throw; }
                std::clog << "warning: " << e.what() << "; merging the last two slots\n";
                k = slots_.size() - 1;
            }
            merge_at(k - 1);
        }
    }

    [[nodiscard]] const std::vector<BufferSlot> &slots() const { return slots_; }
    [[nodiscard]] std::vector<double> betas() const {
        std::vector<double> out;
        for (const auto &slot : slots_) { out.push_back(slot.beta); }
        return out;
    }
    [[nodiscard]] Index slot_capacity() const { return slot_capacity_; }
    [[nodiscard]] Index max_slots() const { return max_slots_; }
    [[nodiscard]] double beta_unit() const { return beta_unit_; }
    [[nodiscard]] Index batches_consumed() const { return batches_; }
    [[nodiscard]] Index points_seen() const { return seen_; }

    /// All stored points in slot order.
    [[nodiscard]] Dataset contents() const {
        Dataset out;
        for (const auto &slot : slots_) { out = out.concat(slot.points); }
        return out;
    }

    /// Restores a buffer from serialized state (see io.hpp). Every batch and
    /// every merge called the reducer once, which fixes the seed counter.
    void restore(std::vector<BufferSlot> slots, Index batches, Index seen) {
        if (static_cast<Index>(slots.size()) > max_slots_ || static_cast<Index>(slots.size()) > batches) {
            throw Error(ErrorCode::ConfigError, "buffer restore: slot count inconsistent with batches consumed");
        }
        slots_ = std::move(slots);
        batches_ = batches;
        seen_ = seen;
        reductions_ = static_cast<std::uint64_t>(2 * batches - static_cast<Index>(slots_.size()));
    }

private:
    static BufferSlot materialize(const Dataset &data, const std::vector<Index> &positions, const Coreset &local,
                                  double beta) {
        BufferSlot slot;
        slot.points = data.subset(local.indices);
        for (Index i : local.indices) { slot.coreset.indices.push_back(positions[static_cast<size_t>(i)]); }
        slot.coreset.weights.assign(local.indices.size(), 1.0);
        slot.beta = beta;
        return slot;
    }

    // Merges slots j and j + 1 (0-based) into slot j.
    void merge_at(size_t j) {
        const BufferSlot &a = slots_[j], &b = slots_[j + 1];
        const Dataset uni = a.points.concat(b.points);
        std::vector<Index> positions = a.coreset.indices;
        positions.insert(positions.end(), b.coreset.indices.begin(), b.coreset.indices.end());
        const Index size = std::min(slot_capacity_, uni.size());
        const Coreset local = reducer_(uni, size, next_seed());
        BufferSlot merged = materialize(uni, positions, local, a.beta + b.beta);
        slots_[j] = std::move(merged);
        slots_.erase(slots_.begin() + static_cast<std::ptrdiff_t>(j) + 1);
    }

    std::uint64_t next_seed() { return seed_ + 0x9e3779b97f4a7c15ULL * ++reductions_; }

    Index max_slots_;
    Index slot_capacity_ = 0;
    double beta_unit_;
    std::uint64_t seed_;
    Reducer reducer_;
    std::vector<BufferSlot> slots_;
    Index batches_ = 0;
    Index seen_ = 0;
    std::uint64_t reductions_ = 0;
};

inline void consume_batch(MergeReduceBuffer &buffer, const Dataset &batch, std::vector<Index> positions = {}) {
    buffer.consume(batch, std::move(positions));
}

/// Fixed-capacity uniform sample of a stream (Vitter's algorithm R).
template <class T>
class Reservoir {
public:
    explicit Reservoir(size_t capacity) : capacity_(capacity) {
        if (capacity < 1) { throw Error(ErrorCode::ConfigError, "reservoir capacity must be >= 1"); }
    }

    template <class Gen>
    void offer(T item, Gen &rng) {
        ++seen_;
        if (items_.size() < capacity_) {
            items_.push_back(std::move(item));
            return;
        }
        std::uniform_int_distribution<std::uint64_t> pick(0, seen_ - 1);
        const std::uint64_t j = pick(rng);
        if (j < capacity_) { items_[static_cast<size_t>(j)] = std::move(item); }
    }

    [[nodiscard]] const std::vector<T> &items() const { return items_; }
    [[nodiscard]] std::uint64_t seen() const { return seen_; }
    [[nodiscard]] size_t capacity() const { return capacity_; }

private:
    size_t capacity_;
    std::uint64_t seen_ = 0;
    std::vector<T> items_;
};

template <class T, class Gen>
void reservoir_update(Reservoir<T> &reservoir, T item, Gen &rng) {
    reservoir.offer(std::move(item), rng);
}

/// One stream segment: how many points of each class it contains.
struct StreamSegment {
    std::map<int, Index> class_counts;
    [[nodiscard]] Index size() const {
        Index n = 0;
        for (const auto &[cls, count] : class_counts) { n += count; }
        return n;
    }
};

struct StreamSpec {
    Index batch_size = 125;
    std::vector<StreamSegment> composition;
    Index total_batches = 0;  // 0 = as many as the composition yields
    std::uint64_t seed = 0;

    void validate() const {
        if (batch_size < 1) { throw Error(ErrorCode::ConfigError, "stream: batch_size must be >= 1"); }
        if (total_batches < 0) { throw Error(ErrorCode::ConfigError, "stream: total_batches must be >= 0"); }
        if (composition.empty()) { throw Error(ErrorCode::ConfigError, "stream: empty composition"); }
    }

    /// Consecutive class pairs per segment, `per_class[t]` points of each class.
    static StreamSpec split_pairs(const std::vector<Index> &per_class, Index batch_size, std::uint64_t seed) {
        StreamSpec spec;
        spec.batch_size = batch_size;
        spec.seed = seed;
        for (size_t t = 0; t < per_class.size(); ++t) {
            StreamSegment seg;
            seg.class_counts[static_cast<int>(2 * t)] = per_class[t];
            seg.class_counts[static_cast<int>(2 * t + 1)] = per_class[t];
            spec.composition.push_back(seg);
        }
        return spec;
    }
};

struct Batch {
    Dataset data;
    std::vector<Index> source;   // rows of the underlying dataset
    std::vector<Index> segment;  // segment id per row
};

/// Pull-based batch sequence over a dataset. Only the row order is held in
/// memory; each batch is materialized on demand.
class Stream {
public:
    Stream(const Dataset &data, std::vector<Index> order, std::vector<Index> segment_of, Index batch_size,
           Index total_batches)
        : data_(&data), order_(std::move(order)), segment_of_(std::move(segment_of)), batch_size_(batch_size) {
        const Index available = (static_cast<Index>(order_.size()) + batch_size_ - 1) / batch_size_;
        num_batches_ = total_batches > 0 ? std::min(total_batches, available) : available;
    }

    std::optional<Batch> next() {
        if (cursor_ >= num_batches_) { return std::nullopt; }
        const size_t begin = static_cast<size_t>(cursor_ * batch_size_);
        const size_t end = std::min(order_.size(), begin + static_cast<size_t>(batch_size_));
        Batch b;
        b.source.assign(order_.begin() + static_cast<std::ptrdiff_t>(begin), order_.begin() + static_cast<std::ptrdiff_t>(end));
        b.segment.assign(segment_of_.begin() + static_cast<std::ptrdiff_t>(begin),
                         segment_of_.begin() + static_cast<std::ptrdiff_t>(end));
        b.data = data_->subset(b.source);
        ++cursor_;
        return b;
    }

    void rewind() { cursor_ = 0; }
    [[nodiscard]] Index num_batches() const { return num_batches_; }
    [[nodiscard]] Index position() const { return cursor_ * batch_size_; }
    [[nodiscard]] const std::vector<Index> &order() const { return order_; }
    [[nodiscard]] const std::vector<Index> &segments() const { return segment_of_; }

private:
    const Dataset *data_;
    std::vector<Index> order_;
    std::vector<Index> segment_of_;
    Index batch_size_;
    Index num_batches_ = 0;
    Index cursor_ = 0;
};

/// Draws each segment's class counts without replacement (segments never share
/// points), shuffles within the segment, and concatenates segments in order.
/// The returned stream borrows `data`.
inline Stream make_stream(const Dataset &data, const StreamSpec &spec) {
    spec.validate();
    if (data.labels.empty()) { throw Error(ErrorCode::CompositionInfeasible, "stream: dataset has no labels"); }
    std::map<int, std::vector<Index>> by_class;
    for (Index i = 0; i < data.size(); ++i) { by_class[data.labels[static_cast<size_t>(i)]].push_back(i); }

    Rng rng(spec.seed);
    for (auto &[cls, rows] : by_class) { rows = sample_without_replacement(rows, rows.size(), rng); }
    std::map<int, size_t> used;
    std::vector<Index> order, segment_of;
    for (size_t t = 0; t < spec.composition.size(); ++t) {
        std::vector<Index> seg;
        for (const auto &[cls, count] : spec.composition[t].class_counts) {
            if (count < 0) { throw Error(ErrorCode::CompositionInfeasible, "stream: negative class count"); }
            const auto it = by_class.find(cls);
            const size_t have = it == by_class.end() ? 0 : it->second.size() - used[cls];
            if (static_cast<size_t>(count) > have) {
                throw Error(ErrorCode::CompositionInfeasible,
                            "stream: segment " + std::to_string(t) + " wants " + std::to_string(count) +
                                " points of class " + std::to_string(cls) + ", " + std::to_string(have) + " left");
            }
            for (Index j = 0; j < count; ++j) { seg.push_back(it->second[used[cls]++]); }
        }
        seg = sample_without_replacement(seg, seg.size(), rng);
        order.insert(order.end(), seg.begin(), seg.end());
        segment_of.insert(segment_of.end(), seg.size(), static_cast<Index>(t));
    }
    return Stream(data, std::move(order), std::move(segment_of), spec.batch_size, spec.total_batches);
}

}  // namespace bico
