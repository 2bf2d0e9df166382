#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "lporec/catalog.hpp"

namespace lporec {

struct InteractionRecord {
    std::string user;
    std::string item;  // raw id, reindexed by build_splits
    int64_t timestamp = 0;

    bool operator==(const InteractionRecord&) const = default;
};

enum class Role : uint8_t { train, validation, test };

const char* role_name(Role r);

struct SequenceExample {
    std::vector<ItemId> history;  // chronological, 1..L_max items
    ItemId target = 0;
    Role role = Role::train;
};

struct DatasetSplits {
    std::vector<SequenceExample> train;
    std::vector<SequenceExample> validation;
    std::vector<SequenceExample> test;
    Catalog catalog;
};

// Line-oriented `user<TAB>item<TAB>timestamp`. A first line whose timestamp
// field is not an integer is treated as a header and skipped.
std::vector<InteractionRecord> parse_interactions(std::istream& in);
std::vector<InteractionRecord> read_interactions(const std::filesystem::path& path);
void write_interactions(const std::filesystem::path& path, const std::vector<InteractionRecord>& records);

// Alternately drops users and items with fewer than min_count interactions
// until nothing changes (k-core). Survivors keep their input order.
std::vector<InteractionRecord> core_filter(std::vector<InteractionRecord> records, int min_count = 5);

// Leave-one-out protocol: per user the most recent interaction becomes the
// test target, the second most recent the validation target, and every
// earlier prefix of length >= 1 becomes a training example predicting its
// successor. Histories are truncated to the most recent l_max items. Raw item
// ids are reindexed densely (lexicographic order) and the catalog is built
// from training-part interactions only.
DatasetSplits build_splits(const std::vector<InteractionRecord>& records, int l_max = 10);

struct SyntheticSpec {
    int num_users = 1000;
    int num_items = 500;
    int interactions_per_user = 20;
    double zipf_exponent = 1.1;
    uint64_t seed = 0;
};

// Zipf-popularity interaction log with per-user latent preference clusters so
// histories carry signal about future items. Deterministic for a fixed seed.
std::vector<InteractionRecord> generate_synthetic(const SyntheticSpec& spec);

// Split files `history comma-joined<TAB>target<TAB>role` plus catalog.tsv.
void save_splits(const std::filesystem::path& dir, const DatasetSplits& splits);
DatasetSplits load_splits(const std::filesystem::path& dir);

}  // namespace lporec
