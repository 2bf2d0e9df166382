#include "lporec/commands.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>

namespace lporec {

int env_threads() {
    const char* v = std::getenv("LPO_REC_THREADS");
    if (!v || !*v) return 1;
    const int n = std::atoi(v);
    return n >= 1 ? n : 1;
}

void cmd_generate(const SyntheticSpec& spec, const std::filesystem::path& out_path) {
    write_interactions(out_path, generate_synthetic(spec));
}

void cmd_prepare(const std::filesystem::path& in_path, const std::filesystem::path& out_dir) {
    const std::vector<InteractionRecord> records = read_interactions(in_path);
    const std::vector<InteractionRecord> filtered = core_filter(records, 5);
    if (filtered.empty())
        throw ValidationError("EmptyAfterFilter", "no interactions survive the 5-core filter");
    save_splits(out_dir, build_splits(filtered, 10));
}

namespace {

template <class T>
void run_train(const RunConfig& config, const DatasetSplits& splits) {
    ModelDims dims = config.dims;
    dims.num_items = splits.catalog.num_items();
    const std::filesystem::path out(config.out_dir);
    const TrainResult<T> result = train<T>(splits, dims, config.train, out);
    save_history_csv(out / "history.csv", result.history);
}

const std::vector<SequenceExample>& pick_split(const DatasetSplits& splits, const std::string& name) {
    if (name == "test") return splits.test;
    if (name == "validation") return splits.validation;
    if (name == "train") return splits.train;
    throw ValidationError("InvalidSpec", "unknown split '" + name + "'");
}

}  // namespace

void cmd_train(const RunConfig& config) {
    if (config.out_dir.empty()) throw ValidationError("InvalidSpec", "out directory not set");
    if (config.data_dir.empty()) throw ValidationError("InvalidSpec", "data.dir not set");
    const DatasetSplits splits = load_splits(config.data_dir);
    std::filesystem::create_directories(config.out_dir);
    config.save(std::filesystem::path(config.out_dir) / "resolved.cfg");
    if (config.precision == Precision::f32) run_train<float>(config, splits);
    else run_train<double>(config, splits);
}

MetricsReport cmd_evaluate(const std::filesystem::path& checkpoint,
                           const std::filesystem::path& split_dir,
                           const std::filesystem::path& out_json, const std::string& split,
                           int threads) {
    const DatasetSplits splits = load_splits(split_dir);
    const std::vector<SequenceExample>& examples = pick_split(splits, split);
    MetricsReport report;
    if (checkpoint_dtype(checkpoint) == 4)
        report = evaluate(load_checkpoint<float>(checkpoint), examples, splits.catalog, {5, 10, 20},
                          threads);
    else
        report = evaluate(load_checkpoint<double>(checkpoint), examples, splits.catalog, {5, 10, 20},
                          threads);
    if (!out_json.empty()) save_metrics(out_json, report);
    return report;
}

ProbDiagnostics cmd_diagnose(const std::filesystem::path& checkpoint,
                             const std::filesystem::path& split_dir, int bins,
                             const std::filesystem::path& out_csv, const std::string& split,
                             int threads) {
    const DatasetSplits splits = load_splits(split_dir);
    const std::vector<SequenceExample>& examples = pick_split(splits, split);
    ProbDiagnostics diag;
    if (checkpoint_dtype(checkpoint) == 4)
        diag = prob_diagnostics(load_checkpoint<float>(checkpoint), examples, splits.catalog, bins,
                                threads);
    else
        diag = prob_diagnostics(load_checkpoint<double>(checkpoint), examples, splits.catalog, bins,
                                threads);
    if (!out_csv.empty()) save_diagnostics(out_csv, diag);
    return diag;
}

void cmd_ablate(const RunConfig& config, const std::filesystem::path& out_csv) {
    if (config.data_dir.empty()) throw ValidationError("InvalidSpec", "data.dir not set");
    const DatasetSplits splits = load_splits(config.data_dir);
    ModelDims dims = config.dims;
    dims.num_items = splits.catalog.num_items();

    std::ofstream out(out_csv);
    if (!out) throw RuntimeFailure("IoError", "cannot write " + out_csv.string());
    out << "loss,sampler,reweight,hr@10,ndcg@10,tail_hr@10,tail_ndcg@10\n";
    char buf[200];
    for (LossKind loss : {LossKind::ce, LossKind::ce_lpo}) {
        for (SamplerKind kind :
             {SamplerKind::adaptive_gumbel, SamplerKind::topk_select, SamplerKind::uniform_random}) {
            for (bool reweight_on : {true, false}) {
                TrainConfig tc = config.train;
                tc.loss = loss;
                tc.sampler.kind = kind;
                if (!reweight_on) {
                    tc.loss_config.alpha_t = 0.0;
                    tc.loss_config.alpha_h = 0.0;
                }
                MetricsReport report;
                if (config.precision == Precision::f32) {
                    const TrainResult<float> r = train<float>(splits, dims, tc);
                    report = evaluate(r.best, splits.test, splits.catalog);
                } else {
                    const TrainResult<double> r = train<double>(splits, dims, tc);
                    report = evaluate(r.best, splits.test, splits.catalog);
                }
                std::snprintf(buf, sizeof(buf), "%s,%s,%s,%.17g,%.17g,%.17g,%.17g",
                              loss_kind_name(loss), sampler_kind_name(kind),
                              reweight_on ? "on" : "off", report.hr_at_cutoff(10),
                              report.ndcg_at_cutoff(10), report.tail_hr_at_cutoff(10),
                              report.tail_ndcg_at_cutoff(10));
                out << buf << '\n';
            }
        }
    }
}

}  // namespace lporec
