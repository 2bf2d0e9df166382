#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lporec/eval.hpp"

using lporec::Catalog;
using lporec::ItemId;
using lporec::MetricsReport;
using lporec::ModelDims;
using lporec::ModelParams;
using lporec::Rng;
using lporec::SequenceExample;

namespace {

Catalog catalog_with_head(int num_items) {
    std::vector<int64_t> counts(static_cast<size_t>(num_items));
    for (int i = 0; i < num_items; ++i) counts[static_cast<size_t>(i)] = num_items - i;
    return Catalog::from_counts(std::move(counts));
}

// A model whose scores are target-independent of the history: every hidden
// state sums to exactly d (layer-norm output is mean-free, plus bias 1), so
// an all-ones embedding row scores d and zero rows score 0.
ModelParams<double> oracle_params(const ModelDims& dims, ItemId winner) {
    auto params = lporec::init_params<double>(dims, 0);
    params.item_embedding.fill(0.0);
    for (int c = 0; c < dims.d; ++c) params.item_embedding(winner, c) = 1.0;
    params.blocks.back().ln2_bias.fill(1.0);
    return params;
}

std::vector<SequenceExample> random_split(int count, int num_items, int l_max, Rng& rng) {
    std::vector<SequenceExample> split;
    for (int i = 0; i < count; ++i) {
        SequenceExample ex;
        const int len = 1 + static_cast<int>(rng.below(static_cast<uint64_t>(l_max)));
        for (int j = 0; j < len; ++j)
            ex.history.push_back(static_cast<ItemId>(rng.below(static_cast<uint64_t>(num_items))));
        ex.target = static_cast<ItemId>(rng.below(static_cast<uint64_t>(num_items)));
        ex.role = lporec::Role::test;
        split.push_back(std::move(ex));
    }
    return split;
}

// Independent rank: full sort by (score desc, id asc), position of target.
int64_t rank_by_sort(const std::vector<double>& scores, ItemId target) {
    std::vector<ItemId> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](ItemId a, ItemId b) {
        if (scores[static_cast<size_t>(a)] != scores[static_cast<size_t>(b)])
            return scores[static_cast<size_t>(a)] > scores[static_cast<size_t>(b)];
        return a < b;
    });
    return 1 + (std::find(order.begin(), order.end(), target) - order.begin());
}

}  // namespace

TEST_CASE("rank_of_target") {
    CHECK(lporec::rank_of_target({0.1, 0.9, 0.3}, 1) == 1);
    CHECK(lporec::rank_of_target(std::vector<double>(20, 1.0), 7) == 8);
    CHECK(lporec::rank_of_target({0.5, 0.4, 0.9}, 1) == 3);
    CHECK_THROWS_WITH_AS(lporec::rank_of_target({1.0}, 1), doctest::Contains("InvalidTarget"),
                         lporec::ValidationError);
}

TEST_CASE("hr and ndcg at cutoffs") {
    CHECK(lporec::hr_at(1, 5) == 1.0);
    CHECK(lporec::ndcg_at(1, 5) == 1.0);
    CHECK(lporec::ndcg_at(3, 5) == doctest::Approx(0.5).epsilon(1e-15));  // 1/log2(4)
    CHECK(lporec::hr_at(6, 5) == 0.0);
    CHECK(lporec::ndcg_at(6, 5) == 0.0);
}

TEST_CASE("ndcg never exceeds hr") {
    for (int64_t rank = 1; rank <= 30; ++rank)
        for (int n : {1, 5, 10, 20})
            CHECK(lporec::ndcg_at(rank, n) <= lporec::hr_at(rank, n));
}

TEST_CASE("an oracle model scores all metrics 1.0") {
    const ModelDims dims{8, 2, 1, 5, 30};
    const Catalog cat = catalog_with_head(30);
    const ItemId winner = 25;  // tail item, so tail metrics are defined
    REQUIRE(cat.is_tail(winner));
    const auto params = oracle_params(dims, winner);

    Rng rng(1);
    std::vector<SequenceExample> split = random_split(40, 30, 5, rng);
    for (auto& ex : split) ex.target = winner;

    const MetricsReport report = lporec::evaluate(params, split, cat);
    CHECK(report.num_test_users == 40);
    CHECK(report.num_tail_test_users == 40);
    for (int n : {5, 10, 20}) {
        CHECK(report.hr_at_cutoff(n) == 1.0);
        CHECK(report.ndcg_at_cutoff(n) == 1.0);
        CHECK(report.tail_hr_at_cutoff(n) == 1.0);
        CHECK(report.tail_ndcg_at_cutoff(n) == 1.0);
    }
}

TEST_CASE("uniform scores: enumerated HR@N equals N/n") {
    const int n = 20;
    const std::vector<double> scores(n, 0.0);
    for (int cutoff : {5, 10, 20}) {
        double total = 0.0;
        for (ItemId target = 0; target < n; ++target)
            total += lporec::hr_at(lporec::rank_of_target(scores, target), cutoff);
        CHECK(total / n == doctest::Approx(static_cast<double>(cutoff) / n).epsilon(1e-15));
    }
}

TEST_CASE("empty tail stratum reports NaN with zero count") {
    const ModelDims dims{8, 2, 1, 5, 30};
    const Catalog cat = catalog_with_head(30);  // head = {0..5}
    const auto params = lporec::init_params<double>(dims, 11);
    Rng rng(2);
    std::vector<SequenceExample> split = random_split(10, 30, 5, rng);
    for (auto& ex : split) ex.target = 2;  // head item
    const MetricsReport report = lporec::evaluate(params, split, cat);
    CHECK(report.num_tail_test_users == 0);
    CHECK(std::isnan(report.tail_hr_at_cutoff(10)));
    CHECK(std::isnan(report.tail_ndcg_at_cutoff(10)));
    const std::string json = lporec::metrics_to_json(report);
    CHECK(json.find("\"tail_hr@10\": null") != std::string::npos);
}

TEST_CASE("evaluate rejects an empty split") {
    const ModelDims dims{8, 2, 1, 5, 10};
    const auto params = lporec::init_params<double>(dims, 0);
    CHECK_THROWS_WITH_AS(lporec::evaluate(params, {}, catalog_with_head(10)),
                         doctest::Contains("EmptySplit"), lporec::ValidationError);
}

TEST_CASE("evaluate matches a full-sort brute force bit for bit") {
    Rng rng(31);
    for (int trial = 0; trial < 40; ++trial) {
        const int n = 5 + static_cast<int>(rng.below(46));  // <= 50 items
        const ModelDims dims{8, 2, 1, 4, n};
        const Catalog cat = catalog_with_head(n);
        const auto params = lporec::init_params<double>(dims, 100 + static_cast<uint64_t>(trial));
        const std::vector<SequenceExample> split = random_split(12, n, 4, rng);

        const MetricsReport report = lporec::evaluate(params, split, cat);

        double hr10 = 0.0, ndcg10 = 0.0, tail_hr10 = 0.0, tail_ndcg10 = 0.0;
        int64_t tail_count = 0;
        Rng eval_rng(0);
        for (const auto& ex : split) {
            const std::vector<double> scores =
                lporec::score_all(params, lporec::encode(params, ex.history, false, eval_rng));
            const int64_t rank = rank_by_sort(scores, ex.target);
            hr10 += lporec::hr_at(rank, 10);
            ndcg10 += lporec::ndcg_at(rank, 10);
            if (cat.is_tail(ex.target)) {
                ++tail_count;
                tail_hr10 += lporec::hr_at(rank, 10);
                tail_ndcg10 += lporec::ndcg_at(rank, 10);
            }
        }
        CHECK(report.hr_at_cutoff(10) == hr10 / static_cast<double>(split.size()));
        CHECK(report.ndcg_at_cutoff(10) == ndcg10 / static_cast<double>(split.size()));
        if (tail_count > 0) {
            CHECK(report.tail_hr_at_cutoff(10) == tail_hr10 / static_cast<double>(tail_count));
            CHECK(report.tail_ndcg_at_cutoff(10) == tail_ndcg10 / static_cast<double>(tail_count));
        }
    }
}

TEST_CASE("metrics do not depend on example order") {
    const int n = 30;
    const ModelDims dims{8, 2, 1, 5, n};
    const Catalog cat = catalog_with_head(n);
    const auto params = lporec::init_params<double>(dims, 55);
    Rng rng(7);
    std::vector<SequenceExample> split = random_split(25, n, 5, rng);
    const MetricsReport a = lporec::evaluate(params, split, cat);
    lporec::shuffle(split, rng);
    const MetricsReport b = lporec::evaluate(params, split, cat);
    for (int cutoff : {5, 10, 20}) {
        CHECK(a.hr_at_cutoff(cutoff) == b.hr_at_cutoff(cutoff));  // sums of 0/1 are exact
        CHECK(a.ndcg_at_cutoff(cutoff) == doctest::Approx(b.ndcg_at_cutoff(cutoff)).epsilon(1e-12));
    }
}

TEST_CASE("multithreaded evaluation is bit-identical to single-threaded") {
    const int n = 40;
    const ModelDims dims{8, 2, 1, 5, n};
    const Catalog cat = catalog_with_head(n);
    const auto params = lporec::init_params<double>(dims, 77);
    Rng rng(8);
    const std::vector<SequenceExample> split = random_split(150, n, 5, rng);
    const MetricsReport a = lporec::evaluate(params, split, cat, {5, 10, 20}, 1);
    const MetricsReport b = lporec::evaluate(params, split, cat, {5, 10, 20}, 3);
    for (int cutoff : {5, 10, 20}) {
        CHECK(a.hr_at_cutoff(cutoff) == b.hr_at_cutoff(cutoff));
        CHECK(a.ndcg_at_cutoff(cutoff) == b.ndcg_at_cutoff(cutoff));
    }
}

TEST_CASE("probability diagnostics on controlled models") {
    const int n = 30;
    const ModelDims dims{8, 2, 1, 5, n};
    const Catalog cat = catalog_with_head(n);  // head {0..5}, tail {6..29}
    const double inv_n = 1.0 / n;
    Rng rng(3);
    const std::vector<SequenceExample> split = random_split(15, n, 5, rng);

    // all-zero embeddings: uniform softmax, delta exactly zero
    {
        auto params = lporec::init_params<double>(dims, 0);
        params.item_embedding.fill(0.0);
        const auto diag = lporec::prob_diagnostics(params, split, cat, 10);
        for (double d : diag.deltas) CHECK(std::fabs(d) < 1e-15);
    }
    // all probability mass on a head item: delta = -1/n
    {
        const auto diag =
            lporec::prob_diagnostics(oracle_params({64, 2, 1, 5, n}, 2), split, cat, 10);
        for (double d : diag.deltas) CHECK(d == doctest::Approx(-inv_n).epsilon(1e-12));
        CHECK(diag.mean_delta == doctest::Approx(-inv_n).epsilon(1e-12));
    }
    // all probability mass on a tail item: delta = 1/|tail| - 1/n
    {
        const auto diag =
            lporec::prob_diagnostics(oracle_params({64, 2, 1, 5, n}, 20), split, cat, 10);
        const double expected = 1.0 / static_cast<double>(cat.tail_items().size()) - inv_n;
        for (double d : diag.deltas) CHECK(d == doctest::Approx(expected).epsilon(1e-12));
    }
    // random model: deltas stay inside the theoretical range, histogram sums
    {
        const auto params = lporec::init_params<double>(dims, 9);
        const auto diag = lporec::prob_diagnostics(params, split, cat, 7);
        const double hi = 1.0 / static_cast<double>(cat.tail_items().size()) - inv_n;
        int64_t total = 0;
        for (int64_t c : diag.bin_counts) total += c;
        CHECK(total == static_cast<int64_t>(split.size()));
        CHECK(diag.bin_edges.front() == doctest::Approx(-inv_n));
        CHECK(diag.bin_edges.back() == doctest::Approx(hi));
        for (double d : diag.deltas) {
            CHECK(d >= -inv_n - 1e-15);
            CHECK(d <= hi + 1e-15);
        }
    }
}
