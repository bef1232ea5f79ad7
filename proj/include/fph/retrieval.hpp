#pragma once

// Exact Hamming ranking over packed binary codes and the retrieval metrics:
// mean average precision, precision within a Hamming radius, precision at
// top-N, and the 101-point interpolated precision-recall curve.
//
// Every ranking orders the database by ascending Hamming distance and breaks
// ties by ascending database index, so all metrics are deterministic.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fph/errors.hpp"
#include "fph/pyramid.hpp"

namespace fph {

class BinaryCodeSet {
public:
    BinaryCodeSet() = default;
    explicit BinaryCodeSet(std::size_t q) : q_(q), stride_(words_for_bits(q)) {}

    std::size_t q() const { return q_; }
    std::size_t count() const { return labels_.size(); }
    bool empty() const { return labels_.empty(); }
    std::size_t words_per_code() const { return stride_; }

    void push_back(const BinaryCode& code, std::uint32_t label) {
        if (code.q() != q_) {
            throw ContractError("BinaryCodeSet: cannot append a " + std::to_string(code.q()) +
                                "-bit code to a " + std::to_string(q_) + "-bit set");
        }
        words_.insert(words_.end(), code.words().begin(), code.words().end());
        labels_.push_back(label);
    }

    std::span<const std::uint64_t> words(std::size_t i) const {
        return std::span<const std::uint64_t>(words_).subspan(i * stride_, stride_);
    }
    BinaryCode code(std::size_t i) const {
        auto w = words(i);
        return BinaryCode(q_, std::vector<std::uint64_t>(w.begin(), w.end()));
    }
    std::uint32_t label(std::size_t i) const { return labels_[i]; }
    const std::vector<std::uint32_t>& labels() const { return labels_; }

    friend bool operator==(const BinaryCodeSet&, const BinaryCodeSet&) = default;

private:
    std::size_t q_ = 0;
    std::size_t stride_ = 0;
    std::vector<std::uint64_t> words_;
    std::vector<std::uint32_t> labels_;
};

inline std::size_t hamming_words(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b) {
    std::size_t d = 0;
    for (std::size_t w = 0; w < a.size(); ++w) d += static_cast<std::size_t>(std::popcount(a[w] ^ b[w]));
    return d;
}

inline std::size_t hamming_distance(const BinaryCode& a, const BinaryCode& b) {
    if (a.q() != b.q()) {
        throw ContractError("hamming_distance: code lengths differ (" + std::to_string(a.q()) + " vs " +
                            std::to_string(b.q()) + ")");
    }
    return hamming_words(a.words(), b.words());
}

struct RankedItem {
    std::size_t index = 0;
    std::size_t distance = 0;

    friend bool operator==(const RankedItem&, const RankedItem&) = default;
};

struct RankedResult {
    std::size_t query = 0;
    std::vector<RankedItem> items;
};

/// Counting sort on distance keeps ties in database order.
inline RankedResult rank_database(std::span<const std::uint64_t> query_words, const BinaryCodeSet& db,
                                  std::size_t query_index = 0) {
    if (db.empty()) throw ContractError("rank_database: empty database");
    if (query_words.size() != db.words_per_code()) throw ContractError("rank_database: code length mismatch");
    const std::size_t n = db.count();
    std::vector<std::size_t> dist(n);
    std::vector<std::size_t> bucket(db.q() + 2, 0);
    for (std::size_t i = 0; i < n; ++i) {
        dist[i] = hamming_words(query_words, db.words(i));
        ++bucket[dist[i] + 1];
    }
    for (std::size_t d = 1; d < bucket.size(); ++d) bucket[d] += bucket[d - 1];
    RankedResult out;
    out.query = query_index;
    out.items.resize(n);
    for (std::size_t i = 0; i < n; ++i) out.items[bucket[dist[i]]++] = {i, dist[i]};
    return out;
}

inline RankedResult rank_database(const BinaryCode& query, const BinaryCodeSet& db, std::size_t query_index = 0) {
    if (query.q() != db.q()) {
        throw ContractError("rank_database: query has " + std::to_string(query.q()) + " bits, database has " +
                            std::to_string(db.q()));
    }
    return rank_database(query.words(), db, query_index);
}

/// AP = (1/N+) * sum_k (N+^k / k) * pos(k); 0 when nothing is relevant.
inline double average_precision(std::span<const std::uint8_t> relevant, std::size_t n_plus) {
    if (n_plus == 0) return 0.0;
    double acc = 0.0;
    std::size_t hits = 0;
    for (std::size_t k = 0; k < relevant.size(); ++k) {
        if (relevant[k]) {
            ++hits;
            acc += static_cast<double>(hits) / static_cast<double>(k + 1);
        }
    }
    return acc / static_cast<double>(n_plus);
}

namespace detail {

inline void require_compatible(const BinaryCodeSet& queries, const BinaryCodeSet& db) {
    if (queries.q() != db.q()) {
        throw ContractError("query codes have " + std::to_string(queries.q()) + " bits, database codes have " +
                            std::to_string(db.q()));
    }
    if (db.empty()) throw ContractError("empty database");
}

// Relevance flags of the ranking for query i (same label == relevant).
inline std::vector<std::uint8_t> relevance(const RankedResult& r, std::uint32_t label, const BinaryCodeSet& db) {
    std::vector<std::uint8_t> rel(r.items.size());
    for (std::size_t k = 0; k < r.items.size(); ++k) rel[k] = db.label(r.items[k].index) == label;
    return rel;
}

inline std::size_t count_label(const BinaryCodeSet& db, std::uint32_t label) {
    return static_cast<std::size_t>(std::count(db.labels().begin(), db.labels().end(), label));
}

} // namespace detail

inline double mean_average_precision(const BinaryCodeSet& queries, const BinaryCodeSet& db) {
    detail::require_compatible(queries, db);
    if (queries.empty()) throw ContractError("mean_average_precision: no queries");
    double acc = 0.0;
    for (std::size_t i = 0; i < queries.count(); ++i) {
        auto r = rank_database(queries.words(i), db, i);
        auto rel = detail::relevance(r, queries.label(i), db);
        acc += average_precision(rel, detail::count_label(db, queries.label(i)));
    }
    return acc / static_cast<double>(queries.count());
}

/// What a query that retrieves nothing within the radius contributes.
enum class EmptyRetrieval { count_zero, exclude };

inline double precision_within_radius(const BinaryCodeSet& queries, const BinaryCodeSet& db, std::size_t radius = 3,
                                      EmptyRetrieval policy = EmptyRetrieval::count_zero) {
    detail::require_compatible(queries, db);
    if (radius > db.q()) throw ContractError("precision_within_radius: radius exceeds code length");
    double acc = 0.0;
    std::size_t counted = 0;
    for (std::size_t i = 0; i < queries.count(); ++i) {
        std::size_t retrieved = 0, hits = 0;
        for (std::size_t j = 0; j < db.count(); ++j) {
            if (hamming_words(queries.words(i), db.words(j)) <= radius) {
                ++retrieved;
                if (db.label(j) == queries.label(i)) ++hits;
            }
        }
        if (retrieved == 0) {
            if (policy == EmptyRetrieval::count_zero) ++counted;
            continue;
        }
        acc += static_cast<double>(hits) / static_cast<double>(retrieved);
        ++counted;
    }
    return counted == 0 ? 0.0 : acc / static_cast<double>(counted);
}

using TopNCurve = std::vector<std::pair<std::size_t, double>>;

inline TopNCurve precision_at_top_n(const BinaryCodeSet& queries, const BinaryCodeSet& db,
                                    std::span<const std::size_t> ns) {
    detail::require_compatible(queries, db);
    if (queries.empty()) throw ContractError("precision_at_top_n: no queries");
    for (auto n : ns) {
        if (n < 1 || n > db.count()) {
            throw ContractError("precision_at_top_n: N = " + std::to_string(n) + " outside [1, " +
                                std::to_string(db.count()) + "]");
        }
    }
    std::vector<double> acc(ns.size(), 0.0);
    for (std::size_t i = 0; i < queries.count(); ++i) {
        auto r = rank_database(queries.words(i), db, i);
        auto rel = detail::relevance(r, queries.label(i), db);
        std::vector<std::size_t> prefix(rel.size() + 1, 0);
        for (std::size_t k = 0; k < rel.size(); ++k) prefix[k + 1] = prefix[k] + (rel[k] ? 1 : 0);
        for (std::size_t s = 0; s < ns.size(); ++s) {
            acc[s] += static_cast<double>(prefix[ns[s]]) / static_cast<double>(ns[s]);
        }
    }
    TopNCurve out;
    for (std::size_t s = 0; s < ns.size(); ++s) out.emplace_back(ns[s], acc[s] / static_cast<double>(queries.count()));
    return out;
}

/// Ns reported when none are requested: 1, 5, 10, 20, 50, 100, 200, 500, ...
/// capped by the database size, which is always included.
inline std::vector<std::size_t> default_top_ns(std::size_t db_count) {
    std::vector<std::size_t> out{1};
    for (std::size_t base = 1; base <= db_count; base *= 10) {
        for (std::size_t n : {5 * base, 10 * base, 20 * base}) {
            if (n <= db_count && n > out.back()) out.push_back(n);
        }
    }
    if (out.back() != db_count) out.push_back(db_count);
    return out;
}

inline constexpr std::size_t kPrLevels = 101;

struct PrCurve {
    std::vector<std::pair<double, double>> points; // (recall, precision)
    std::size_t excluded_queries = 0;              // queries without any relevant item
};

/// Interpolated precision at a recall level r is the best precision reached
/// at any rank whose recall is >= r.
inline std::vector<double> interpolated_precision(std::span<const std::uint8_t> relevant, std::size_t n_plus) {
    std::vector<double> out(kPrLevels, 0.0);
    if (n_plus == 0) return out;
    std::vector<double> recall(relevant.size()), precision(relevant.size());
    std::size_t hits = 0;
    for (std::size_t k = 0; k < relevant.size(); ++k) {
        if (relevant[k]) ++hits;
        recall[k] = static_cast<double>(hits) / static_cast<double>(n_plus);
        precision[k] = static_cast<double>(hits) / static_cast<double>(k + 1);
    }
    // precision[k] becomes the max precision over ranks >= k
    for (std::size_t k = relevant.size(); k-- > 1;) precision[k - 1] = std::max(precision[k - 1], precision[k]);
    std::size_t k = 0;
    for (std::size_t level = 0; level < kPrLevels; ++level) {
        const double r = static_cast<double>(level) / 100.0;
        // recall is nondecreasing in k; a small tolerance absorbs the 0.01 grid rounding
        while (k < relevant.size() && recall[k] < r - 1e-12) ++k;
        out[level] = k < relevant.size() ? precision[k] : 0.0;
    }
    return out;
}

inline PrCurve pr_curve(const BinaryCodeSet& queries, const BinaryCodeSet& db) {
    detail::require_compatible(queries, db);
    std::vector<double> acc(kPrLevels, 0.0);
    std::size_t used = 0;
    PrCurve out;
    for (std::size_t i = 0; i < queries.count(); ++i) {
        const std::size_t n_plus = detail::count_label(db, queries.label(i));
        if (n_plus == 0) {
            ++out.excluded_queries;
            continue;
        }
        auto r = rank_database(queries.words(i), db, i);
        auto rel = detail::relevance(r, queries.label(i), db);
        auto interp = interpolated_precision(rel, n_plus);
        for (std::size_t l = 0; l < kPrLevels; ++l) acc[l] += interp[l];
        ++used;
    }
    for (std::size_t l = 0; l < kPrLevels; ++l) {
        out.points.emplace_back(static_cast<double>(l) / 100.0, used ? acc[l] / static_cast<double>(used) : 0.0);
    }
    return out;
}

struct MetricReport {
    double map = 0.0;
    std::size_t radius = 3;
    double precision_at_radius = 0.0;
    PrCurve pr;
    TopNCurve topn;
};

inline MetricReport evaluate(const BinaryCodeSet& queries, const BinaryCodeSet& db, std::size_t radius = 3,
                             std::vector<std::size_t> ns = {}, EmptyRetrieval policy = EmptyRetrieval::count_zero) {
    if (ns.empty()) ns = default_top_ns(db.count());
    MetricReport report;
    report.map = mean_average_precision(queries, db);
    report.radius = radius;
    report.precision_at_radius = precision_within_radius(queries, db, radius, policy);
    report.pr = pr_curve(queries, db);
    report.topn = precision_at_top_n(queries, db, ns);
    return report;
}

} // namespace fph
