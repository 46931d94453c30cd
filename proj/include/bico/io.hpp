#pragma once

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "bico/coreset.hpp"
#include "bico/dataset.hpp"
#include "bico/error.hpp"
#include "bico/harness.hpp"
#include "bico/streaming.hpp"

namespace bico {

using Json = nlohmann::ordered_json;

enum class DataFormat { csv, f32bin };

inline DataFormat data_format_from_string(std::string_view s) {
    if (s == "csv") { return DataFormat::csv; }
    if (s == "f32bin") { return DataFormat::f32bin; }
    throw Error(ErrorCode::ConfigError, "unknown data format '" + std::string(s) + "' (expected csv or f32bin)");
}

/// `.bin` and `.f32bin` files are binary, everything else is csv.
inline DataFormat data_format_from_path(const std::string &path) {
    auto ends_with = [&](std::string_view suffix) {
        return path.size() >= suffix.size() && path.compare(path.size() - suffix.size(), suffix.size(), suffix) == 0;
    };
    return ends_with(".bin") || ends_with(".f32bin") ? DataFormat::f32bin : DataFormat::csv;
}

namespace detail {

inline std::string read_file(const std::string &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) { throw Error(ErrorCode::ParseError, path + ": cannot open file"); }
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

inline void write_file(const std::string &path, const std::string &bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) { throw Error(ErrorCode::ConfigError, path + ": cannot open for writing"); }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) { throw Error(ErrorCode::ConfigError, path + ": write failed"); }
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) { s.remove_prefix(1); }
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) { s.remove_suffix(1); }
    return s;
}

template <class T>
bool parse_number(std::string_view s, T &out) {
    s = trim(s);
    if (!s.empty() && s.front() == '+') { s.remove_prefix(1); }
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc() && ptr == s.data() + s.size() && !s.empty();
}

inline std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> out;
    size_t start = 0;
    while (true) {
        const size_t comma = line.find(',', start);
        out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
        if (comma == std::string_view::npos) { break; }
        start = comma + 1;
    }
    return out;
}

// Non-empty lines with their 1-based line numbers.
inline std::vector<std::pair<size_t, std::string_view>> lines_of(std::string_view text) {
    std::vector<std::pair<size_t, std::string_view>> out;
    size_t number = 0, start = 0;
    while (start <= text.size()) {
        size_t end = text.find('\n', start);
        if (end == std::string_view::npos) { end = text.size(); }
        ++number;
        const std::string_view line = trim(text.substr(start, end - start));
        if (!line.empty()) { out.emplace_back(number, line); }
        start = end + 1;
    }
    return out;
}

template <class T>
T load_le(const std::string &bytes, size_t offset) {
    T v;
    std::memcpy(&v, bytes.data() + offset, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
        auto *p = reinterpret_cast<unsigned char *>(&v);
        std::reverse(p, p + sizeof(T));
    }
    return v;
}

template <class T>
void store_le(std::string &bytes, T v) {
    if constexpr (std::endian::native == std::endian::big) {
        auto *p = reinterpret_cast<unsigned char *>(&v);
        std::reverse(p, p + sizeof(T));
    }
    bytes.append(reinterpret_cast<const char *>(&v), sizeof(T));
}

}  // namespace detail

/// Numeric comma-separated matrix; a first line that does not parse as
/// numbers is taken as a header.
inline Matrix read_csv_matrix(const std::string &path) {
    const std::string text = detail::read_file(path);
    const auto lines = detail::lines_of(text);
    std::vector<std::vector<double>> rows;
    for (size_t li = 0; li < lines.size(); ++li) {
        const auto &[number, line] = lines[li];
        const auto fields = detail::split_fields(line);
        std::vector<double> row(fields.size());
        bool ok = true;
        size_t bad = 0;
        for (size_t j = 0; j < fields.size() && ok; ++j) {
            ok = detail::parse_number(fields[j], row[j]) && std::isfinite(row[j]);
            bad = j;
        }
        if (!ok) {
            if (li == 0) { continue; }  // header
            throw Error(ErrorCode::ParseError, path + ":" + std::to_string(number) + ": field " + std::to_string(bad + 1) +
                                                   " '" + std::string(detail::trim(fields[bad])) + "' is not a finite number");
        }
        if (!rows.empty() && row.size() != rows.front().size()) {
            throw Error(ErrorCode::ParseError, path + ":" + std::to_string(number) + ": expected " +
                                                   std::to_string(rows.front().size()) + " fields, found " +
                                                   std::to_string(row.size()));
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty()) { throw Error(ErrorCode::EmptyDataset, path + ": no data rows"); }
    Matrix out(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
    for (size_t i = 0; i < rows.size(); ++i) {
        for (size_t j = 0; j < rows[i].size(); ++j) { out(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j]; }
    }
    return out;
}

/// One integer label per line, optional header line.
inline std::vector<std::int64_t> read_csv_labels(const std::string &path) {
    const std::string text = detail::read_file(path);
    const auto lines = detail::lines_of(text);
    std::vector<std::int64_t> out;
    for (size_t li = 0; li < lines.size(); ++li) {
        const auto &[number, line] = lines[li];
        std::int64_t v = 0;
        if (!detail::parse_number(line, v)) {
            if (li == 0) { continue; }
            throw Error(ErrorCode::ParseError,
                        path + ":" + std::to_string(number) + ": '" + std::string(line) + "' is not an integer label");
        }
        out.push_back(v);
    }
    return out;
}

/// "BCD1", u32 n, u32 d, then n * d float32 values, all little-endian, row-major.
inline Matrix read_f32bin(const std::string &path) {
    const std::string bytes = detail::read_file(path);
    if (bytes.size() < 12) {
        throw Error(ErrorCode::ParseError, path + ": offset " + std::to_string(bytes.size()) + ": truncated header");
    }
    if (bytes.compare(0, 4, "BCD1") != 0) { throw Error(ErrorCode::ParseError, path + ": offset 0: bad magic"); }
    const auto n = detail::load_le<std::uint32_t>(bytes, 4);
    const auto d = detail::load_le<std::uint32_t>(bytes, 8);
    if (n == 0 || d == 0) { throw Error(ErrorCode::EmptyDataset, path + ": header declares n=" + std::to_string(n) + ", d=" + std::to_string(d)); }
    const std::uint64_t expected = 12 + 4ULL * n * d;
    if (bytes.size() != expected) {
        throw Error(ErrorCode::ParseError, path + ": offset " + std::to_string(std::min<std::uint64_t>(bytes.size(), expected)) +
                                               ": payload size " + std::to_string(bytes.size() - 12) + " bytes, expected " +
                                               std::to_string(expected - 12));
    }
    Matrix out(static_cast<Index>(n), static_cast<Index>(d));
    size_t offset = 12;
    for (std::uint32_t i = 0; i < n; ++i) {
        for (std::uint32_t j = 0; j < d; ++j, offset += 4) {
            const float v = detail::load_le<float>(bytes, offset);
            if (!std::isfinite(v)) {
                throw Error(ErrorCode::ParseError, path + ": offset " + std::to_string(offset) + ": non-finite value");
            }
            out(i, j) = static_cast<double>(v);
        }
    }
    return out;
}

/// Plain little-endian u32 sequence.
inline std::vector<std::int64_t> read_u32_labels(const std::string &path) {
    const std::string bytes = detail::read_file(path);
    if (bytes.size() % 4 != 0) {
        throw Error(ErrorCode::ParseError, path + ": offset " + std::to_string(bytes.size() - bytes.size() % 4) +
                                               ": trailing partial u32");
    }
    std::vector<std::int64_t> out;
    for (size_t off = 0; off < bytes.size(); off += 4) { out.push_back(detail::load_le<std::uint32_t>(bytes, off)); }
    return out;
}

inline void write_f32bin(const std::string &path, const Matrix &x) {
    std::string bytes = "BCD1";
    detail::store_le(bytes, static_cast<std::uint32_t>(x.rows()));
    detail::store_le(bytes, static_cast<std::uint32_t>(x.cols()));
    for (Index i = 0; i < x.rows(); ++i) {
        for (Index j = 0; j < x.cols(); ++j) { detail::store_le(bytes, static_cast<float>(x(i, j))); }
    }
    detail::write_file(path, bytes);
}

inline void write_u32_labels(const std::string &path, const std::vector<int> &labels) {
    std::string bytes;
    for (int v : labels) { detail::store_le(bytes, static_cast<std::uint32_t>(v)); }
    detail::write_file(path, bytes);
}

inline void write_csv_matrix(const std::string &path, const Matrix &x) {
    std::ostringstream out;
    out.precision(17);
    for (Index i = 0; i < x.rows(); ++i) {
        for (Index j = 0; j < x.cols(); ++j) { out << (j ? "," : "") << x(i, j); }
        out << '\n';
    }
    detail::write_file(path, out.str());
}

inline void write_csv_labels(const std::string &path, const std::vector<int> &labels) {
    std::ostringstream out;
    for (int v : labels) { out << v << '\n'; }
    detail::write_file(path, out.str());
}

inline Matrix load_features(const std::string &path, DataFormat format) {
    return format == DataFormat::csv ? read_csv_matrix(path) : read_f32bin(path);
}

/// Dataset plus the original class id of every contiguous label.
struct LoadedDataset {
    Dataset data;
    std::vector<std::int64_t> class_ids;
};

/// Maps arbitrary integer labels to 0..k-1 in increasing order of the original ids.
inline std::pair<std::vector<int>, std::vector<std::int64_t>> contiguous_labels(const std::vector<std::int64_t> &raw) {
    std::map<std::int64_t, int> ids;
    for (auto v : raw) { ids.emplace(v, 0); }
    std::vector<std::int64_t> original;
    for (auto &[v, id] : ids) {
        id = static_cast<int>(original.size());
        original.push_back(v);
    }
    std::vector<int> out;
    out.reserve(raw.size());
    for (auto v : raw) { out.push_back(ids.at(v)); }
    return {out, original};
}

/// Loads features and labels. The label file format follows the feature
/// format: csv labels for csv features, a u32 sequence next to f32bin.
inline LoadedDataset load_dataset(const std::string &features_path, const std::string &labels_path, DataFormat format) {
    Matrix x = load_features(features_path, format);
    const auto raw = format == DataFormat::csv ? read_csv_labels(labels_path) : read_u32_labels(labels_path);
    if (static_cast<Index>(raw.size()) != x.rows()) {
        throw Error(ErrorCode::ShapeMismatch, features_path + " has " + std::to_string(x.rows()) + " rows but " +
                                                  labels_path + " has " + std::to_string(raw.size()) + " labels");
    }
    auto [labels, original] = contiguous_labels(raw);
    LoadedDataset out;
    out.data = Dataset::classification(std::move(x), std::move(labels), static_cast<int>(original.size()));
    out.class_ids = std::move(original);
    return out;
}

// ---- JSON ----

inline std::string digest_hex(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    static const char *hex = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i, h >>= 4) { out[static_cast<size_t>(i)] = hex[h & 0xf]; }
    return out;
}

/// FNV-1a 64 of the compact serialization.
inline std::string config_digest(const Json &config) { return digest_hex(config.dump()); }

inline Json to_json(const Coreset &c) {
    return Json{{"indices", c.indices}, {"weights", c.weights}};
}

inline Coreset coreset_from_json(const Json &j) {
    Coreset c;
    c.indices = j.at("indices").get<std::vector<Index>>();
    c.weights = j.at("weights").get<std::vector<double>>();
    if (c.indices.size() != c.weights.size()) { throw Error(ErrorCode::ShapeMismatch, "coreset json: indices/weights length"); }
    return c;
}

inline Json to_json(const KernelSpec &k) {
    Json j{{"family", to_string(k.family)}};
    if (k.family == KernelFamily::rbf) { j["gamma"] = k.gamma; }
    if (k.family == KernelFamily::fc_ntk) {
        j["depth"] = k.depth;
        j["bias_variance"] = k.bias_variance;
        j["normalize"] = k.normalize;
    }
    return j;
}

inline Json to_json(const SelectionConfig &c) {
    return Json{{"size", c.size},
                {"weighted", c.weighted},
                {"candidate_pool", c.candidate_pool},
                {"cg_iters", c.cg_iters},
                {"outer_step", c.outer_step},
                {"outer_iters", c.outer_iters},
                {"outer_optimizer", c.outer_optimizer == OuterOptimizer::adam ? "adam" : "gd"},
                {"lambda", c.lambda},
                {"kernel", to_json(c.kernel)},
                {"loss", to_string(c.loss)},
                {"seed", c.seed}};
}

inline Json to_json(const LearnerConfig &c) {
    return Json{{"kernel", to_json(c.kernel)}, {"lambda", c.lambda}, {"loss", to_string(c.loss)}};
}

inline Json to_json(const ReplayConfig &c) {
    return Json{{"memory_size", c.memory_size},
                {"beta", c.beta},
                {"selector", to_string(c.selector)},
                {"learner", to_json(c.learner)},
                {"selection", to_json(c.selection)},
                {"seed", c.seed},
                {"checkpoint_every", c.checkpoint_every}};
}

inline Json to_json(const StreamSpec &s) {
    Json segments = Json::array();
    for (const auto &seg : s.composition) {
        Json counts = Json::object();
        for (const auto &[cls, count] : seg.class_counts) { counts[std::to_string(cls)] = count; }
        segments.push_back(counts);
    }
    return Json{{"batch_size", s.batch_size}, {"total_batches", s.total_batches}, {"seed", s.seed}, {"composition", segments}};
}

/// `with_timing` adds wall_time; without it the report is a pure function of
/// the configuration.
inline Json to_json(const RunReport &r, bool with_timing = false) {
    Json acc = Json::array();
    for (Index t = 0; t < r.per_task_accuracy.rows(); ++t) {
        std::vector<double> row(static_cast<size_t>(r.per_task_accuracy.cols()));
        for (Index c = 0; c < r.per_task_accuracy.cols(); ++c) { row[static_cast<size_t>(c)] = r.per_task_accuracy(t, c); }
        acc.push_back(row);
    }
    Json j{{"selector", r.selector},
           {"beta", r.beta},
           {"seed", r.seed},
           {"per_task_accuracy", acc},
           {"average_accuracy", r.average_accuracy},
           {"selection_trace", r.selection_trace}};
    if (with_timing) { j["wall_time"] = r.wall_time; }
    return j;
}

/// Long-format curves: checkpoint,task,accuracy.
inline std::string run_report_csv(const RunReport &r) {
    std::ostringstream out;
    out.precision(17);
    out << "checkpoint,task,accuracy\n";
    for (Index c = 0; c < r.per_task_accuracy.cols(); ++c) {
        for (Index t = 0; t < r.per_task_accuracy.rows(); ++t) { out << c << ',' << t << ',' << r.per_task_accuracy(t, c) << '\n'; }
    }
    return out.str();
}

/// Buffer state for checkpoint/resume. Slot points are not stored; they are
/// re-read from the stream source by position.
inline Json buffer_to_json(const MergeReduceBuffer &buffer) {
    Json slots = Json::array();
    for (const auto &slot : buffer.slots()) {
        slots.push_back(Json{{"beta", slot.beta}, {"indices", slot.coreset.indices}});
    }
    return Json{{"memory_size", buffer.slot_capacity() * buffer.max_slots()},
                {"max_slots", buffer.max_slots()},
                {"beta_unit", buffer.beta_unit()},
                {"batches_consumed", buffer.batches_consumed()},
                {"points_seen", buffer.points_seen()},
                {"slots", slots}};
}

inline void buffer_from_json(MergeReduceBuffer &buffer, const Json &j, const Dataset &source) {
    if (j.at("max_slots").get<Index>() != buffer.max_slots() ||
        j.at("memory_size").get<Index>() != buffer.slot_capacity() * buffer.max_slots()) {
        throw Error(ErrorCode::ConfigError, "checkpoint: buffer geometry differs from the configuration");
    }
    std::vector<BufferSlot> slots;
    for (const auto &s : j.at("slots")) {
        BufferSlot slot;
        slot.beta = s.at("beta").get<double>();
        slot.coreset.indices = s.at("indices").get<std::vector<Index>>();
        slot.coreset.weights.assign(slot.coreset.indices.size(), 1.0);
        for (Index i : slot.coreset.indices) {
            if (i < 0 || i >= source.size()) { throw Error(ErrorCode::IndexOutOfRange, "checkpoint: stream position out of range"); }
        }
        slot.points = source.subset(slot.coreset.indices);
        slots.push_back(std::move(slot));
    }
    buffer.restore(std::move(slots), j.at("batches_consumed").get<Index>(), j.at("points_seen").get<Index>());
}

}  // namespace bico
