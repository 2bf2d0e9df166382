#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "lporec/catalog.hpp"
#include "lporec/rng.hpp"

using lporec::build_catalog;
using lporec::Catalog;
using lporec::ItemId;
using lporec::Rng;

namespace {

std::vector<ItemId> interactions_from_counts(const std::vector<int64_t>& counts) {
    std::vector<ItemId> items;
    for (size_t i = 0; i < counts.size(); ++i)
        for (int64_t k = 0; k < counts[i]; ++k) items.push_back(static_cast<ItemId>(i));
    return items;
}

}  // namespace

TEST_CASE("counts [9,7,5,3,1]: top item is the single head") {
    const Catalog cat = build_catalog(interactions_from_counts({9, 7, 5, 3, 1}));
    CHECK(cat.num_items() == 5);
    CHECK(cat.head_items() == std::vector<ItemId>{0});
    CHECK(cat.tail_items() == std::vector<ItemId>{1, 2, 3, 4});
}

TEST_CASE("equal counts: ties broken by ascending id") {
    const Catalog cat = build_catalog(interactions_from_counts(std::vector<int64_t>(10, 3)));
    CHECK(cat.head_items() == std::vector<ItemId>{0, 1});  // ceil(0.2*10) = 2
    for (ItemId i = 2; i < 10; ++i) CHECK(cat.is_tail(i));
}

TEST_CASE("single item: head only, empty tail") {
    const Catalog cat = build_catalog({0});
    CHECK(cat.num_items() == 1);
    CHECK(cat.head_items() == std::vector<ItemId>{0});
    CHECK(cat.tail_items().empty());
}

TEST_CASE("is_tail membership and bounds") {
    const Catalog cat = build_catalog(interactions_from_counts({5, 1}));
    CHECK_FALSE(cat.is_tail(0));
    CHECK(cat.is_tail(1));
    CHECK_THROWS_AS(cat.is_tail(2), lporec::ValidationError);
    CHECK_THROWS_AS(cat.is_tail(-1), lporec::ValidationError);
}

TEST_CASE("empty input is rejected") {
    CHECK_THROWS_WITH_AS(build_catalog({}), doctest::Contains("EmptyInput"), lporec::ValidationError);
}

TEST_CASE("partition and size properties on random catalogs") {
    Rng rng(77);
    for (int trial = 0; trial < 40; ++trial) {
        const int n = 1 + static_cast<int>(rng.below(60));
        std::vector<int64_t> counts(static_cast<size_t>(n));
        for (auto& c : counts) c = static_cast<int64_t>(rng.below(8));
        counts[rng.below(static_cast<uint64_t>(n))] += 1;  // at least one interaction
        const Catalog cat = Catalog::from_counts(counts);

        const int expected_head = (n + 4) / 5;
        CHECK(static_cast<int>(cat.head_items().size()) == expected_head);
        CHECK(cat.head_items().size() + cat.tail_items().size() == static_cast<size_t>(n));
        for (ItemId i = 0; i < n; ++i) CHECK(cat.is_tail(i) != cat.is_head(i));
        // every head popularity >= every tail popularity
        int64_t min_head = INT64_MAX, max_tail = INT64_MIN;
        for (ItemId i : cat.head_items()) min_head = std::min(min_head, cat.popularity(i));
        for (ItemId i : cat.tail_items()) max_tail = std::max(max_tail, cat.popularity(i));
        if (!cat.tail_items().empty()) CHECK(min_head >= max_tail);
    }
}

TEST_CASE("record order does not change the partition") {
    Rng rng(8);
    std::vector<ItemId> items = interactions_from_counts({4, 4, 2, 7, 1, 1, 3, 3});
    const Catalog a = build_catalog(items);
    lporec::shuffle(items, rng);
    const Catalog b = build_catalog(items);
    REQUIRE(a.num_items() == b.num_items());
    for (ItemId i = 0; i < a.num_items(); ++i) {
        CHECK(a.is_tail(i) == b.is_tail(i));
        CHECK(a.popularity(i) == b.popularity(i));
    }
}

TEST_CASE("catalog file round trip") {
    const Catalog cat = build_catalog(interactions_from_counts({6, 2, 2, 9, 0, 1}));
    const auto path = std::filesystem::temp_directory_path() / "lporec_test_catalog.tsv";
    lporec::save_catalog(path, cat);
    const Catalog loaded = lporec::load_catalog(path);
    REQUIRE(loaded.num_items() == cat.num_items());
    for (ItemId i = 0; i < cat.num_items(); ++i) {
        CHECK(loaded.popularity(i) == cat.popularity(i));
        CHECK(loaded.is_tail(i) == cat.is_tail(i));
    }
    std::filesystem::remove(path);
}
