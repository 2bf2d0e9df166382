#include "lporec/data.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "lporec/rng.hpp"

namespace lporec {

const char* role_name(Role r) {
    switch (r) {
        case Role::train: return "train";
        case Role::validation: return "validation";
        case Role::test: return "test";
    }
    return "?";
}

namespace {

bool parse_i64(const std::string& s, int64_t& out) {
    const char* first = s.data();
    const char* last = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(first, last, out);
    return ec == std::errc() && ptr == last && !s.empty();
}

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> fields;
    size_t start = 0;
    for (;;) {
        const size_t tab = line.find('\t', start);
        if (tab == std::string::npos) {
            fields.push_back(line.substr(start));
            return fields;
        }
        fields.push_back(line.substr(start, tab - start));
        start = tab + 1;
    }
}

}  // namespace

std::vector<InteractionRecord> parse_interactions(std::istream& in) {
    std::vector<InteractionRecord> records;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::vector<std::string> fields = split_tabs(line);
        int64_t ts = 0;
        if (fields.size() != 3 || fields[0].empty() || fields[1].empty() ||
            !parse_i64(fields[2], ts)) {
            if (line_no == 1 && fields.size() == 3) continue;  // header line
            throw ValidationError("ParseError", "line " + std::to_string(line_no));
        }
        records.push_back({fields[0], fields[1], ts});
    }
    return records;
}

std::vector<InteractionRecord> read_interactions(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw RuntimeFailure("IoError", "cannot read " + path.string());
    return parse_interactions(in);
}

void write_interactions(const std::filesystem::path& path,
                        const std::vector<InteractionRecord>& records) {
    std::ofstream out(path);
    if (!out) throw RuntimeFailure("IoError", "cannot write " + path.string());
    out << "user\titem\ttimestamp\n";
    for (const auto& r : records) out << r.user << '\t' << r.item << '\t' << r.timestamp << '\n';
}

std::vector<InteractionRecord> core_filter(std::vector<InteractionRecord> records, int min_count) {
    if (min_count < 1) throw ValidationError("InvalidSpec", "min_count must be >= 1");
    bool changed = true;
    while (changed && !records.empty()) {
        changed = false;
        std::unordered_map<std::string, int> user_count;
        for (const auto& r : records) ++user_count[r.user];
        std::vector<InteractionRecord> kept;
        kept.reserve(records.size());
        for (auto& r : records)
            if (user_count[r.user] >= min_count) kept.push_back(std::move(r));
        if (kept.size() != records.size()) changed = true;
        records = std::move(kept);

        std::unordered_map<std::string, int> item_count;
        for (const auto& r : records) ++item_count[r.item];
        kept.clear();
        kept.reserve(records.size());
        for (auto& r : records)
            if (item_count[r.item] >= min_count) kept.push_back(std::move(r));
        if (kept.size() != records.size()) changed = true;
        records = std::move(kept);
    }
    return records;
}

DatasetSplits build_splits(const std::vector<InteractionRecord>& records, int l_max) {
    if (records.empty()) throw ValidationError("EmptyInput", "build_splits: no records");
    if (l_max < 1) throw ValidationError("InvalidSpec", "l_max must be >= 1");

    // std::map keeps user iteration order deterministic regardless of input order
    std::map<std::string, std::vector<size_t>> by_user;
    for (size_t i = 0; i < records.size(); ++i) by_user[records[i].user].push_back(i);

    // dense reindex of surviving raw item ids, lexicographic
    std::map<std::string, ItemId> item_index;
    for (const auto& r : records) item_index.emplace(r.item, 0);
    ItemId next_id = 0;
    for (auto& [raw, id] : item_index) id = next_id++;
    const int32_t num_items = next_id;

    DatasetSplits splits;
    std::vector<ItemId> train_interactions;
    const auto truncate_tail = [l_max](const std::vector<ItemId>& seq, size_t end) {
        const size_t start = end > static_cast<size_t>(l_max) ? end - static_cast<size_t>(l_max) : 0;
        return std::vector<ItemId>(seq.begin() + static_cast<int64_t>(start),
                                   seq.begin() + static_cast<int64_t>(end));
    };

    for (auto& [user, idxs] : by_user) {
        if (idxs.size() < 3)
            throw ValidationError("TooFewInteractions",
                                  "user " + user + " has " + std::to_string(idxs.size()));
        // chronological; timestamp ties keep input position order
        std::stable_sort(idxs.begin(), idxs.end(), [&](size_t a, size_t b) {
            return records[a].timestamp < records[b].timestamp;
        });
        std::vector<ItemId> seq;
        seq.reserve(idxs.size());
        for (size_t i : idxs) seq.push_back(item_index.at(records[i].item));

        const size_t n = seq.size();
        splits.test.push_back({truncate_tail(seq, n - 1), seq[n - 1], Role::test});
        splits.validation.push_back({truncate_tail(seq, n - 2), seq[n - 2], Role::validation});
        for (size_t t = 1; t + 2 < n; ++t)
            splits.train.push_back({truncate_tail(seq, t), seq[t], Role::train});
        for (size_t t = 0; t + 2 < n; ++t) train_interactions.push_back(seq[t]);
    }

    std::vector<int64_t> counts(static_cast<size_t>(num_items), 0);
    for (ItemId it : train_interactions) ++counts[static_cast<size_t>(it)];
    splits.catalog = Catalog::from_counts(std::move(counts));
    return splits;
}

std::vector<InteractionRecord> generate_synthetic(const SyntheticSpec& spec) {
    if (spec.num_users < 1 || spec.num_items < 1 || spec.interactions_per_user < 1)
        throw ValidationError("InvalidSpec", "all counts must be >= 1");
    if (!(spec.zipf_exponent > 0.0))
        throw ValidationError("InvalidSpec", "zipf_exponent must be > 0");

    const int n = spec.num_items;
    std::vector<double> weight(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i)
        weight[static_cast<size_t>(i)] = std::pow(static_cast<double>(i + 1), -spec.zipf_exponent);

    // clusters balanced by total zipf weight so the cluster-conditioned draw
    // keeps the marginal item distribution zipf-shaped
    const int num_clusters = std::min(8, n);
    std::vector<std::vector<int>> cluster_items(static_cast<size_t>(num_clusters));
    {
        std::vector<double> cluster_weight(static_cast<size_t>(num_clusters), 0.0);
        for (int i = 0; i < n; ++i) {  // descending weight order = ascending id
            int lightest = 0;
            for (int c = 1; c < num_clusters; ++c)
                if (cluster_weight[static_cast<size_t>(c)] < cluster_weight[static_cast<size_t>(lightest)])
                    lightest = c;
            cluster_items[static_cast<size_t>(lightest)].push_back(i);
            cluster_weight[static_cast<size_t>(lightest)] += weight[static_cast<size_t>(i)];
        }
    }

    const auto cumulative = [&weight](const std::vector<int>& items) {
        std::vector<double> cum(items.size());
        double acc = 0.0;
        for (size_t i = 0; i < items.size(); ++i) {
            acc += weight[static_cast<size_t>(items[i])];
            cum[i] = acc;
        }
        return cum;
    };
    std::vector<int> all_items(static_cast<size_t>(n));
    std::iota(all_items.begin(), all_items.end(), 0);
    const std::vector<double> global_cum = cumulative(all_items);
    std::vector<std::vector<double>> cluster_cum;
    cluster_cum.reserve(cluster_items.size());
    for (const auto& items : cluster_items) cluster_cum.push_back(cumulative(items));

    const auto draw = [](const std::vector<double>& cum, const std::vector<int>& items, double u) {
        const double x = u * cum.back();
        const size_t lo = static_cast<size_t>(
            std::lower_bound(cum.begin(), cum.end(), x) - cum.begin());
        return items[std::min(lo, items.size() - 1)];
    };

    constexpr double kClusterAffinity = 0.7;
    Rng rng(spec.seed);
    std::vector<InteractionRecord> records;
    records.reserve(static_cast<size_t>(spec.num_users) * static_cast<size_t>(spec.interactions_per_user));
    for (int u = 0; u < spec.num_users; ++u) {
        const int cluster = static_cast<int>(rng.below(static_cast<uint64_t>(num_clusters)));
        for (int k = 0; k < spec.interactions_per_user; ++k) {
            int item;
            if (rng.uniform01() < kClusterAffinity) {
                item = draw(cluster_cum[static_cast<size_t>(cluster)],
                            cluster_items[static_cast<size_t>(cluster)], rng.uniform01());
            } else {
                item = draw(global_cum, all_items, rng.uniform01());
            }
            records.push_back({"u" + std::to_string(u), "i" + std::to_string(item),
                               static_cast<int64_t>(k + 1)});
        }
    }
    return records;
}

namespace {

void write_split_file(const std::filesystem::path& path, const std::vector<SequenceExample>& split) {
    std::ofstream out(path);
    if (!out) throw RuntimeFailure("IoError", "cannot write " + path.string());
    for (const auto& ex : split) {
        for (size_t i = 0; i < ex.history.size(); ++i) {
            if (i) out << ',';
            out << ex.history[i];
        }
        out << '\t' << ex.target << '\t' << role_name(ex.role) << '\n';
    }
}

std::vector<SequenceExample> read_split_file(const std::filesystem::path& path, Role expected,
                                             int32_t num_items) {
    std::ifstream in(path);
    if (!in) throw RuntimeFailure("IoError", "cannot read " + path.string());
    std::vector<SequenceExample> split;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::vector<std::string> fields = split_tabs(line);
        const auto bad = [&] {
            return ValidationError("ParseError", path.string() + ":" + std::to_string(line_no));
        };
        if (fields.size() != 3 || fields[2] != role_name(expected)) throw bad();
        SequenceExample ex;
        ex.role = expected;
        std::stringstream hist(fields[0]);
        std::string tok;
        while (std::getline(hist, tok, ',')) {
            int64_t v = 0;
            if (!parse_i64(tok, v) || v < 0 || v >= num_items) throw bad();
            ex.history.push_back(static_cast<ItemId>(v));
        }
        int64_t tgt = 0;
        if (ex.history.empty() || !parse_i64(fields[1], tgt) || tgt < 0 || tgt >= num_items)
            throw bad();
        ex.target = static_cast<ItemId>(tgt);
        split.push_back(std::move(ex));
    }
    return split;
}

}  // namespace

void save_splits(const std::filesystem::path& dir, const DatasetSplits& splits) {
    std::filesystem::create_directories(dir);
    write_split_file(dir / "train.tsv", splits.train);
    write_split_file(dir / "validation.tsv", splits.validation);
    write_split_file(dir / "test.tsv", splits.test);
    save_catalog(dir / "catalog.tsv", splits.catalog);
}

DatasetSplits load_splits(const std::filesystem::path& dir) {
    DatasetSplits splits;
    splits.catalog = load_catalog(dir / "catalog.tsv");
    const int32_t n = splits.catalog.num_items();
    splits.train = read_split_file(dir / "train.tsv", Role::train, n);
    splits.validation = read_split_file(dir / "validation.tsv", Role::validation, n);
    splits.test = read_split_file(dir / "test.tsv", Role::test, n);
    return splits;
}

}  // namespace lporec
