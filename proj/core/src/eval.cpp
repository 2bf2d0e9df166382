#include "lporec/eval.hpp"

#include <fstream>

#include <json.hpp>

namespace lporec {

int64_t rank_of_target(const std::vector<double>& scores, ItemId target) {
    if (target < 0 || static_cast<size_t>(target) >= scores.size())
        throw ValidationError("InvalidTarget", "target outside catalog");
    const double t = scores[static_cast<size_t>(target)];
    int64_t rank = 1;
    for (size_t i = 0; i < scores.size(); ++i) {
        if (scores[i] > t) ++rank;
        else if (scores[i] == t && static_cast<ItemId>(i) < target) ++rank;
    }
    return rank;
}

std::string metrics_to_json(const MetricsReport& report) {
    nlohmann::ordered_json j;
    const auto put = [&](const std::string& key, double v) {
        if (std::isnan(v)) j[key] = nullptr;
        else j[key] = v;
    };
    for (size_t c = 0; c < report.cutoffs.size(); ++c) {
        const std::string n = std::to_string(report.cutoffs[c]);
        put("hr@" + n, report.hr[c]);
        put("ndcg@" + n, report.ndcg[c]);
    }
    for (size_t c = 0; c < report.cutoffs.size(); ++c) {
        const std::string n = std::to_string(report.cutoffs[c]);
        put("tail_hr@" + n, report.tail_hr[c]);
        put("tail_ndcg@" + n, report.tail_ndcg[c]);
    }
    j["num_test_users"] = report.num_test_users;
    j["num_tail_test_users"] = report.num_tail_test_users;
    return j.dump(2) + "\n";
}

void save_metrics(const std::filesystem::path& path, const MetricsReport& report) {
    std::ofstream out(path);
    if (!out) throw RuntimeFailure("IoError", "cannot write " + path.string());
    out << metrics_to_json(report);
}

void save_diagnostics(const std::filesystem::path& csv_path, const ProbDiagnostics& diag) {
    std::ofstream out(csv_path);
    if (!out) throw RuntimeFailure("IoError", "cannot write " + csv_path.string());
    char buf[64];
    out << "bin_left,bin_right,count\n";
    for (size_t b = 0; b < diag.bin_counts.size(); ++b) {
        std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%lld", diag.bin_edges[b], diag.bin_edges[b + 1],
                      static_cast<long long>(diag.bin_counts[b]));
        out << buf << '\n';
    }
    std::filesystem::path summary = csv_path;
    summary.replace_extension(".summary.csv");
    std::ofstream sum(summary);
    if (!sum) throw RuntimeFailure("IoError", "cannot write " + summary.string());
    std::snprintf(buf, sizeof(buf), "mean_delta,%.17g", diag.mean_delta);
    sum << buf << '\n';
}

}  // namespace lporec
