#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <thread>
#include <vector>

#include "lporec/data.hpp"
#include "lporec/model.hpp"

namespace lporec {

// HR@N / NDCG@N for each cutoff, overall and restricted to test examples
// whose target is a tail item. Tail metrics are NaN when the stratum is
// empty (serialized as null).
struct MetricsReport {
    std::vector<int> cutoffs;
    std::vector<double> hr;
    std::vector<double> ndcg;
    std::vector<double> tail_hr;
    std::vector<double> tail_ndcg;
    int64_t num_test_users = 0;
    int64_t num_tail_test_users = 0;

    double hr_at_cutoff(int n) const { return at(hr, n); }
    double ndcg_at_cutoff(int n) const { return at(ndcg, n); }
    double tail_hr_at_cutoff(int n) const { return at(tail_hr, n); }
    double tail_ndcg_at_cutoff(int n) const { return at(tail_ndcg, n); }

private:
    double at(const std::vector<double>& v, int n) const {
        for (size_t i = 0; i < cutoffs.size(); ++i)
            if (cutoffs[i] == n) return v[i];
        throw ValidationError("OutOfRange", "cutoff " + std::to_string(n) + " not evaluated");
    }
};

struct ProbDiagnostics {
    std::vector<double> deltas;  // per example: mean tail prob - 1/num_items
    std::vector<double> bin_edges;
    std::vector<int64_t> bin_counts;
    double mean_delta = 0.0;
};

// 1-indexed rank: 1 + |{strictly greater}| + |{equal score, smaller id}|.
int64_t rank_of_target(const std::vector<double>& scores, ItemId target);

inline double hr_at(int64_t rank, int n) { return rank <= n ? 1.0 : 0.0; }
inline double ndcg_at(int64_t rank, int n) {
    return rank <= n ? 1.0 / std::log2(static_cast<double>(rank) + 1.0) : 0.0;
}

std::string metrics_to_json(const MetricsReport& report);
void save_metrics(const std::filesystem::path& path, const MetricsReport& report);
void save_diagnostics(const std::filesystem::path& csv_path, const ProbDiagnostics& diag);

namespace detail {

// Per-example work is independent; results land in index order so
// aggregation is identical for any thread count.
template <class T, class PerExample>
void for_each_example(const ModelParams<T>& params, const std::vector<SequenceExample>& split,
                      int threads, const PerExample& fn) {
    const auto run_range = [&](size_t begin, size_t end) {
        Rng rng(0);  // eval mode; dropout never fires
        constexpr size_t kChunk = 64;
        for (size_t c = begin; c < end; c += kChunk) {
            const size_t hi = std::min(end, c + kChunk);
            Graph<T> g(&rng);
            const ParamNodes<T> pn = register_params(g, params, false);
            std::vector<const std::vector<ItemId>*> histories;
            histories.reserve(hi - c);
            for (size_t i = c; i < hi; ++i) histories.push_back(&split[i].history);
            const NodeId h_all = build_batch_hidden(g, pn, params.dims, histories, false, 0.0);
            const Tensor<T>& sv = g.value(g.matmul(h_all, pn.real_items_t));
            std::vector<double> scores(static_cast<size_t>(sv.cols()));
            for (size_t i = c; i < hi; ++i) {
                const T* row = sv.row_ptr(static_cast<int64_t>(i - c));
                std::copy(row, row + sv.cols(), scores.begin());
                fn(i, scores);
            }
        }
    };
    if (threads <= 1 || split.size() < 2) {
        run_range(0, split.size());
        return;
    }
    const size_t nt = std::min<size_t>(static_cast<size_t>(threads), split.size());
    std::vector<std::thread> pool;
    const size_t per = (split.size() + nt - 1) / nt;
    for (size_t t = 0; t < nt; ++t) {
        const size_t b = t * per, e = std::min(split.size(), b + per);
        if (b >= e) break;
        pool.emplace_back(run_range, b, e);
    }
    for (auto& th : pool) th.join();
}

}  // namespace detail

// Full-catalog ranking evaluation over a split.
template <class T>
MetricsReport evaluate(const ModelParams<T>& params, const std::vector<SequenceExample>& split,
                       const Catalog& catalog, std::vector<int> cutoffs = {5, 10, 20},
                       int threads = 1) {
    if (split.empty()) throw ValidationError("EmptySplit", "evaluate: empty split");
    if (catalog.num_items() != params.dims.num_items)
        throw ValidationError("InvalidSpec", "catalog/model item count mismatch");

    std::vector<int64_t> ranks(split.size());
    std::vector<uint8_t> is_tail(split.size());
    detail::for_each_example(params, split, threads, [&](size_t i, const std::vector<double>& scores) {
        ranks[i] = rank_of_target(scores, split[i].target);
        is_tail[i] = catalog.is_tail(split[i].target) ? 1 : 0;
    });

    MetricsReport report;
    report.cutoffs = std::move(cutoffs);
    const size_t nc = report.cutoffs.size();
    report.hr.assign(nc, 0.0);
    report.ndcg.assign(nc, 0.0);
    report.tail_hr.assign(nc, 0.0);
    report.tail_ndcg.assign(nc, 0.0);
    report.num_test_users = static_cast<int64_t>(split.size());
    for (size_t i = 0; i < split.size(); ++i) {
        for (size_t c = 0; c < nc; ++c) {
            const double h = hr_at(ranks[i], report.cutoffs[c]);
            const double nd = ndcg_at(ranks[i], report.cutoffs[c]);
            report.hr[c] += h;
            report.ndcg[c] += nd;
            if (is_tail[i]) {
                report.tail_hr[c] += h;
                report.tail_ndcg[c] += nd;
            }
        }
        if (is_tail[i]) ++report.num_tail_test_users;
    }
    for (size_t c = 0; c < nc; ++c) {
        report.hr[c] /= static_cast<double>(report.num_test_users);
        report.ndcg[c] /= static_cast<double>(report.num_test_users);
        if (report.num_tail_test_users > 0) {
            report.tail_hr[c] /= static_cast<double>(report.num_tail_test_users);
            report.tail_ndcg[c] /= static_cast<double>(report.num_tail_test_users);
        } else {
            report.tail_hr[c] = std::numeric_limits<double>::quiet_NaN();
            report.tail_ndcg[c] = std::numeric_limits<double>::quiet_NaN();
        }
    }
    return report;
}

// Per-example difference between the mean softmax probability of tail items
// and of all items. The all-items mean of a normalized distribution is
// exactly 1/num_items, so delta = mean(P over tail) - 1/num_items.
template <class T>
ProbDiagnostics prob_diagnostics(const ModelParams<T>& params,
                                 const std::vector<SequenceExample>& split, const Catalog& catalog,
                                 int bins, int threads = 1) {
    if (split.empty()) throw ValidationError("EmptySplit", "prob_diagnostics: empty split");
    if (bins < 1) throw ValidationError("InvalidSpec", "bins must be >= 1");
    if (catalog.tail_items().empty())
        throw ValidationError("EmptyTail", "catalog has no tail items");
    if (catalog.num_items() != params.dims.num_items)
        throw ValidationError("InvalidSpec", "catalog/model item count mismatch");

    const double n = static_cast<double>(catalog.num_items());
    ProbDiagnostics diag;
    diag.deltas.assign(split.size(), 0.0);
    detail::for_each_example(params, split, threads, [&](size_t i, const std::vector<double>& scores) {
        double mx = scores[0];
        for (double s : scores) mx = std::max(mx, s);
        double denom = 0.0;
        for (double s : scores) denom += std::exp(s - mx);
        double tail_sum = 0.0;
        for (ItemId it : catalog.tail_items()) tail_sum += std::exp(scores[static_cast<size_t>(it)] - mx);
        const double tail_mean = tail_sum / denom / static_cast<double>(catalog.tail_items().size());
        diag.deltas[i] = tail_mean - 1.0 / n;
    });

    const double lo = -1.0 / n;
    const double hi = 1.0 / static_cast<double>(catalog.tail_items().size()) - 1.0 / n;
    diag.bin_edges.resize(static_cast<size_t>(bins) + 1);
    for (int b = 0; b <= bins; ++b)
        diag.bin_edges[static_cast<size_t>(b)] = lo + (hi - lo) * static_cast<double>(b) / bins;
    diag.bin_counts.assign(static_cast<size_t>(bins), 0);
    double sum = 0.0;
    for (double d : diag.deltas) {
        sum += d;
        int b = static_cast<int>(std::floor((d - lo) / (hi - lo) * bins));
        b = std::clamp(b, 0, bins - 1);
        ++diag.bin_counts[static_cast<size_t>(b)];
    }
    diag.mean_delta = sum / static_cast<double>(split.size());
    return diag;
}

}  // namespace lporec
