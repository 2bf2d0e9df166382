#include "lporec/catalog.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <string>

namespace lporec {

Catalog Catalog::from_counts(std::vector<int64_t> counts) {
    if (counts.empty()) throw ValidationError("EmptyInput", "catalog needs at least one item");
    Catalog cat;
    cat.popularity_ = std::move(counts);
    const int32_t n = cat.num_items();

    std::vector<ItemId> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](ItemId a, ItemId b) {
        if (cat.popularity_[static_cast<size_t>(a)] != cat.popularity_[static_cast<size_t>(b)])
            return cat.popularity_[static_cast<size_t>(a)] > cat.popularity_[static_cast<size_t>(b)];
        return a < b;
    });

    // ceil(0.2 * n) head items so the head set is never empty
    const int32_t head_count = static_cast<int32_t>((n + 4) / 5);
    cat.tail_.assign(static_cast<size_t>(n), 1);
    for (int32_t i = 0; i < head_count; ++i) cat.tail_[static_cast<size_t>(order[i])] = 0;
    for (ItemId i = 0; i < n; ++i)
        (cat.tail_[static_cast<size_t>(i)] ? cat.tail_items_ : cat.head_).push_back(i);
    return cat;
}

Catalog build_catalog(const std::vector<ItemId>& interaction_items) {
    if (interaction_items.empty())
        throw ValidationError("EmptyInput", "build_catalog: no interaction records");
    ItemId max_id = 0;
    for (ItemId it : interaction_items) {
        if (it < 0) throw ValidationError("OutOfRange", "negative item id");
        max_id = std::max(max_id, it);
    }
    std::vector<int64_t> counts(static_cast<size_t>(max_id) + 1, 0);
    for (ItemId it : interaction_items) ++counts[static_cast<size_t>(it)];
    return Catalog::from_counts(std::move(counts));
}

void save_catalog(const std::filesystem::path& path, const Catalog& catalog) {
    std::ofstream out(path);
    if (!out) throw RuntimeFailure("IoError", "cannot write " + path.string());
    for (ItemId i = 0; i < catalog.num_items(); ++i)
        out << i << '\t' << catalog.popularity(i) << '\t' << (catalog.is_tail(i) ? 'T' : 'H') << '\n';
}

Catalog load_catalog(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw RuntimeFailure("IoError", "cannot read " + path.string());
    std::vector<int64_t> counts;
    std::vector<uint8_t> tail_flags;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const size_t t1 = line.find('\t');
        const size_t t2 = line.find('\t', t1 == std::string::npos ? t1 : t1 + 1);
        if (t1 == std::string::npos || t2 == std::string::npos)
            throw ValidationError("ParseError", path.string() + ":" + std::to_string(line_no));
        const long long id = std::stoll(line.substr(0, t1));
        if (id != static_cast<long long>(counts.size()))
            throw ValidationError("ParseError", "catalog ids must be dense and sorted at line " +
                                                    std::to_string(line_no));
        counts.push_back(std::stoll(line.substr(t1 + 1, t2 - t1 - 1)));
        const std::string flag = line.substr(t2 + 1);
        if (flag != "H" && flag != "T")
            throw ValidationError("ParseError", "bad H|T flag at line " + std::to_string(line_no));
        tail_flags.push_back(flag == "T" ? 1 : 0);
    }
    Catalog cat = Catalog::from_counts(std::move(counts));
    // the partition is a pure function of the counts; verify the file agrees
    for (ItemId i = 0; i < cat.num_items(); ++i)
        if (cat.is_tail(i) != (tail_flags[static_cast<size_t>(i)] != 0))
            throw ValidationError("ParseError", "catalog H|T flags inconsistent with counts");
    return cat;
}

}  // namespace lporec
