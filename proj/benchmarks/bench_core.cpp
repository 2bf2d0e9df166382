#include <benchmark/benchmark.h>

#include "lporec/losses.hpp"
#include "lporec/model.hpp"
#include "lporec/sampler.hpp"

namespace {

using namespace lporec;

struct Fixture {
    ModelDims dims{64, 4, 1, 10, 500};
    ModelParams<float> params = init_params<float>(dims, 1);
    Catalog catalog;
    std::vector<std::vector<ItemId>> histories;

    Fixture() {
        std::vector<int64_t> counts(500);
        for (int i = 0; i < 500; ++i) counts[static_cast<size_t>(i)] = 500 - i;
        catalog = Catalog::from_counts(std::move(counts));
        Rng rng(3);
        for (int i = 0; i < 128; ++i) {
            std::vector<ItemId> h(1 + rng.below(10));
            for (auto& it : h) it = static_cast<ItemId>(rng.below(500));
            histories.push_back(std::move(h));
        }
    }
};

Fixture& fixture() {
    static Fixture f;
    return f;
}

void bm_encode_forward(benchmark::State& state) {
    Fixture& f = fixture();
    Rng rng(0);
    for (auto _ : state) {
        Graph<float> g(&rng);
        const ParamNodes<float> pn = register_params(g, f.params, false);
        std::vector<const std::vector<ItemId>*> hs;
        for (const auto& h : f.histories) hs.push_back(&h);
        const NodeId h_all = build_batch_hidden(g, pn, f.dims, hs, false, 0.0);
        benchmark::DoNotOptimize(g.value(g.matmul(h_all, pn.real_items_t)).data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(f.histories.size()));
}
BENCHMARK(bm_encode_forward)->Unit(benchmark::kMillisecond);

void bm_train_step(benchmark::State& state) {
    Fixture& f = fixture();
    Rng rng(0), srng(1);
    LossConfig lc;
    SamplingStrategy strategy;
    for (auto _ : state) {
        Graph<float> g(&rng);
        const ParamNodes<float> pn = register_params(g, f.params, true);
        std::vector<const std::vector<ItemId>*> hs;
        for (const auto& h : f.histories) hs.push_back(&h);
        const NodeId h_all = build_batch_hidden(g, pn, f.dims, hs, true, 0.2);
        const NodeId scores = g.matmul(h_all, pn.real_items_t);
        std::vector<ExampleLossInput<float>> inputs;
        for (size_t i = 0; i < f.histories.size(); ++i) {
            ExampleLossInput<float> in;
            in.target = static_cast<ItemId>(i % 500);
            in.scores = g.index_select(scores, 0, {static_cast<int32_t>(i)});
            const Tensor<float>& sv = g.value(scores);
            std::vector<double> row(sv.row_ptr(static_cast<int64_t>(i)),
                                    sv.row_ptr(static_cast<int64_t>(i)) + sv.cols());
            in.negatives = sample_negatives(row, f.catalog, in.target, strategy, srng);
            inputs.push_back(std::move(in));
        }
        const NodeId loss = joint_loss(g, inputs, f.catalog, lc);
        g.backward(loss);
        benchmark::DoNotOptimize(g.grad(pn.ordered[0]).data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(f.histories.size()));
}
BENCHMARK(bm_train_step)->Unit(benchmark::kMillisecond);

void bm_sample_negatives(benchmark::State& state) {
    Fixture& f = fixture();
    Rng rng(7);
    std::vector<double> scores(500);
    for (auto& s : scores) s = rng.uniform(-2.0, 2.0);
    SamplingStrategy strategy;
    strategy.k = static_cast<int>(state.range(0));
    for (auto _ : state) {
        const NegativeSet negs = sample_negatives(scores, f.catalog, 400, strategy, rng);
        benchmark::DoNotOptimize(negs.items.data());
    }
    state.SetItemsProcessed(state.iterations());
}
BENCHMARK(bm_sample_negatives)->Arg(1)->Arg(10)->Arg(50);

void bm_ce_loss(benchmark::State& state) {
    Rng rng(9);
    std::vector<double> scores(500);
    for (auto& s : scores) s = rng.uniform(-5.0, 5.0);
    for (auto _ : state) {
        Graph<double> g;
        const NodeId s = g.leaf(Tensor<double>::from_row(scores), true);
        const NodeId loss = ce_loss(g, s, 123);
        g.backward(loss);
        benchmark::DoNotOptimize(g.grad(s).data());
    }
    state.SetItemsProcessed(state.iterations());
}
BENCHMARK(bm_ce_loss);

}  // namespace

BENCHMARK_MAIN();
