#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "lporec/model.hpp"
#include "lporec/trainer.hpp"

using lporec::ItemId;
using lporec::ModelDims;
using lporec::ModelParams;
using lporec::Rng;
using lporec::Tensor;

namespace {

template <class T>
void zero_projections(ModelParams<T>& p) {
    for (auto& blk : p.blocks) {
        blk.w_q.fill(T(0));
        blk.w_k.fill(T(0));
        blk.w_v.fill(T(0));
        blk.w_o.fill(T(0));
        blk.w_ff1.fill(T(0));
        blk.w_ff2.fill(T(0));
    }
}

std::vector<double> layer_norm_row(std::vector<double> v) {
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    var /= static_cast<double>(v.size());
    const double inv = 1.0 / std::sqrt(var + 1e-5);
    for (double& x : v) x = (x - mean) * inv;
    return v;
}

}  // namespace

TEST_CASE("init_params is deterministic and zeroes the padding row") {
    const ModelDims dims{8, 2, 1, 4, 20};
    const auto a = lporec::init_params<double>(dims, 123);
    const auto b = lporec::init_params<double>(dims, 123);
    bool equal = true;
    a.for_each([&](const std::string& name, const Tensor<double>& t) {
        const Tensor<double>* other = nullptr;
        b.for_each([&](const std::string& n2, const Tensor<double>& t2) {
            if (n2 == name) other = &t2;
        });
        for (size_t i = 0; i < t.size(); ++i) equal = equal && t.raw()[i] == other->raw()[i];
    });
    CHECK(equal);
    for (int c = 0; c < dims.d; ++c) CHECK(a.item_embedding(20, c) == 0.0);
    const auto c = lporec::init_params<double>(dims, 124);
    CHECK(a.item_embedding(0, 0) != c.item_embedding(0, 0));
}

TEST_CASE("init_params rejects d not divisible by heads") {
    CHECK_THROWS_WITH_AS(lporec::init_params<double>(ModelDims{8, 3, 1, 4, 10}, 0),
                         doctest::Contains("InvalidDims"), lporec::ValidationError);
}

TEST_CASE("encode with zeroed projections is a double layer norm of e + p") {
    const ModelDims dims{2, 1, 1, 3, 5};
    auto params = lporec::init_params<double>(dims, 1);
    zero_projections(params);
    params.item_embedding(2, 0) = 0.3;
    params.item_embedding(2, 1) = -0.7;
    params.positional(2, 0) = 0.1;
    params.positional(2, 1) = 0.4;

    Rng rng(0);
    const Tensor<double> h = lporec::encode(params, {2}, false, rng);
    const std::vector<double> expected = layer_norm_row(layer_norm_row({0.3 + 0.1, -0.7 + 0.4}));
    CHECK(h(0, 0) == doctest::Approx(expected[0]).epsilon(1e-12));
    CHECK(h(0, 1) == doctest::Approx(expected[1]).epsilon(1e-12));
}

TEST_CASE("encode validates history length") {
    const ModelDims dims{4, 1, 1, 3, 6};
    const auto params = lporec::init_params<double>(dims, 2);
    Rng rng(0);
    CHECK_THROWS_WITH_AS(lporec::encode(params, {}, false, rng), doctest::Contains("EmptyHistory"),
                         lporec::ValidationError);
    CHECK_THROWS_WITH_AS(lporec::encode(params, {0, 1, 2, 3}, false, rng),
                         doctest::Contains("HistoryTooLong"), lporec::ValidationError);
}

TEST_CASE("padding slots do not influence the representation") {
    const ModelDims dims{8, 2, 1, 6, 30};
    auto params = lporec::init_params<double>(dims, 3);
    const std::vector<ItemId> history{4, 9, 2};
    Rng rng(0);
    const Tensor<double> before = lporec::encode(params, history, false, rng);

    // positional rows of the three padding slots, and embeddings of items
    // absent from the history
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < dims.d; ++c) params.positional(r, c) += 17.0 + r - c;
    for (int c = 0; c < dims.d; ++c) params.item_embedding(11, c) -= 3.5;
    const Tensor<double> after = lporec::encode(params, history, false, rng);
    for (size_t i = 0; i < before.size(); ++i) CHECK(before.raw()[i] == after.raw()[i]);
}

TEST_CASE("eval-mode encode is deterministic") {
    const ModelDims dims{8, 2, 1, 5, 15};
    const auto params = lporec::init_params<double>(dims, 4);
    Rng r1(1), r2(99);
    const Tensor<double> a = lporec::encode(params, {1, 2, 3}, false, r1);
    const Tensor<double> b = lporec::encode(params, {1, 2, 3}, false, r2);
    for (size_t i = 0; i < a.size(); ++i) CHECK(a.raw()[i] == b.raw()[i]);
}

TEST_CASE("score_all basics") {
    const ModelDims dims{4, 1, 1, 3, 6};
    auto params = lporec::init_params<double>(dims, 5);

    Tensor<double> zero(1, 4);
    for (double s : lporec::score_all(params, zero)) CHECK(s == 0.0);

    Tensor<double> h(1, 4);
    h.raw() = {0.5, -1.0, 2.0, 0.25};
    for (int c = 0; c < 4; ++c) params.item_embedding(3, c) = h.raw()[static_cast<size_t>(c)];
    const std::vector<double> scores = lporec::score_all(params, h);
    const double norm2 = 0.25 + 1.0 + 4.0 + 0.0625;
    CHECK(scores[3] == doctest::Approx(norm2).epsilon(1e-12));
    CHECK(*std::max_element(scores.begin(), scores.end()) == doctest::Approx(norm2));

    // independent dot-product loop
    for (int y = 0; y < 6; ++y) {
        double acc = 0.0;
        for (int c = 0; c < 4; ++c) acc += h.raw()[static_cast<size_t>(c)] * params.item_embedding(y, c);
        CHECK(scores[static_cast<size_t>(y)] == doctest::Approx(acc).epsilon(1e-15));
    }
}

TEST_CASE("relabeling item ids permutes the scores identically") {
    const ModelDims dims{8, 2, 1, 5, 12};
    const auto params = lporec::init_params<double>(dims, 6);
    const std::vector<ItemId> history{3, 7, 1};
    Rng rng(0);
    const std::vector<double> scores =
        lporec::score_all(params, lporec::encode(params, history, false, rng));

    // permutation pi: rotate ids by 5
    const auto pi = [&](ItemId i) { return static_cast<ItemId>((i + 5) % dims.num_items); };
    auto relabeled = params;
    for (ItemId i = 0; i < dims.num_items; ++i)
        for (int c = 0; c < dims.d; ++c) relabeled.item_embedding(pi(i), c) = params.item_embedding(i, c);
    std::vector<ItemId> relabeled_history;
    for (ItemId i : history) relabeled_history.push_back(pi(i));

    const std::vector<double> permuted =
        lporec::score_all(relabeled, lporec::encode(relabeled, relabeled_history, false, rng));
    for (ItemId i = 0; i < dims.num_items; ++i)
        CHECK(permuted[static_cast<size_t>(pi(i))] == doctest::Approx(scores[static_cast<size_t>(i)]).epsilon(1e-12));
}

TEST_CASE("checkpoint round trip is bit exact in both precisions") {
    const ModelDims dims{8, 2, 2, 5, 17};
    const auto dir = std::filesystem::temp_directory_path();
    {
        const auto params = lporec::init_params<double>(dims, 7);
        const auto path = dir / "lporec_test_ckpt_f64.ckpt";
        lporec::save_checkpoint(path, params);
        CHECK(lporec::checkpoint_dtype(path) == 8);
        const auto loaded = lporec::load_checkpoint<double>(path);
        bool equal = loaded.seed == params.seed;
        size_t idx = 0;
        std::vector<const Tensor<double>*> orig;
        params.for_each([&](const std::string&, const Tensor<double>& t) { orig.push_back(&t); });
        loaded.for_each([&](const std::string&, const Tensor<double>& t) {
            for (size_t i = 0; i < t.size(); ++i) equal = equal && t.raw()[i] == orig[idx]->raw()[i];
            ++idx;
        });
        CHECK(equal);
        CHECK_THROWS_AS(lporec::load_checkpoint<float>(path), lporec::ValidationError);
        std::filesystem::remove(path);
    }
    {
        const auto params = lporec::init_params<float>(dims, 8);
        const auto path = dir / "lporec_test_ckpt_f32.ckpt";
        lporec::save_checkpoint(path, params);
        CHECK(lporec::checkpoint_dtype(path) == 4);
        const auto loaded = lporec::load_checkpoint<float>(path);
        bool equal = true;
        size_t idx = 0;
        std::vector<const Tensor<float>*> orig;
        params.for_each([&](const std::string&, const Tensor<float>& t) { orig.push_back(&t); });
        loaded.for_each([&](const std::string&, const Tensor<float>& t) {
            for (size_t i = 0; i < t.size(); ++i) equal = equal && t.raw()[i] == orig[idx]->raw()[i];
            ++idx;
        });
        CHECK(equal);
        std::filesystem::remove(path);
    }
}

TEST_CASE("full-model CE gradient matches finite differences on a tiny model") {
    const ModelDims dims{8, 2, 1, 5, 50};
    Rng rng(40);
    std::vector<int64_t> counts(50);
    for (auto& c : counts) c = 1 + static_cast<int64_t>(rng.below(9));
    lporec::Catalog catalog = lporec::Catalog::from_counts(counts);

    std::vector<lporec::BatchLossExample> examples;
    for (int i = 0; i < 4; ++i) {
        lporec::BatchLossExample ex;
        const int len = 1 + static_cast<int>(rng.below(5));
        for (int j = 0; j < len; ++j) ex.history.push_back(static_cast<ItemId>(rng.below(50)));
        ex.target = static_cast<ItemId>(rng.below(50));
        examples.push_back(std::move(ex));
    }
    lporec::LossConfig lc;
    lc.lambda = 0.0;  // plain CE

    const auto params = lporec::init_params<double>(dims, 41);
    const auto fn = lporec::batch_loss_fn(dims, examples, catalog, lc);
    const double err = lporec::finite_diff_check(fn, lporec::flatten_params(params), 1e-5);
    CHECK(err < 1e-4);
}
