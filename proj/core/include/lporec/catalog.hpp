#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "lporec/errors.hpp"

namespace lporec {

// Dense item id, 0..num_items-1. The padding id used by the encoder is
// num_items and never appears in catalogs, targets or histories.
using ItemId = int32_t;

// Item universe with interaction counts and the Pareto 20/80 head/tail
// partition. Immutable after construction; safe to share across threads.
class Catalog {
public:
    // counts[i] = interaction count of item i; the universe is 0..counts.size()-1.
    static Catalog from_counts(std::vector<int64_t> counts);

    int32_t num_items() const { return static_cast<int32_t>(popularity_.size()); }
    int64_t popularity(ItemId item) const { return popularity_[check(item)]; }
    bool is_tail(ItemId item) const { return tail_[check(item)] != 0; }
    bool is_head(ItemId item) const { return !is_tail(item); }

    // ascending item id order
    const std::vector<ItemId>& head_items() const { return head_; }
    const std::vector<ItemId>& tail_items() const { return tail_items_; }

private:
    size_t check(ItemId item) const {
        if (item < 0 || item >= num_items())
            throw ValidationError("OutOfRange", "item id " + std::to_string(item) +
                                                    " not in catalog of " + std::to_string(num_items()));
        return static_cast<size_t>(item);
    }

    std::vector<int64_t> popularity_;
    std::vector<uint8_t> tail_;
    std::vector<ItemId> head_;
    std::vector<ItemId> tail_items_;
};

// Builds the universe from one dense item id per interaction. The universe is
// 0..max(id); ids that never occur get popularity 0. Items are ranked by
// descending count with ties broken by ascending id, and the top
// ceil(0.2 * num_items) become the head set.
Catalog build_catalog(const std::vector<ItemId>& interaction_items);

// One line per item: `item_id<TAB>count<TAB>H|T`, sorted by item id.
void save_catalog(const std::filesystem::path& path, const Catalog& catalog);
Catalog load_catalog(const std::filesystem::path& path);

}  // namespace lporec
