#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "lporec/finite_diff.hpp"
#include "lporec/graph.hpp"

using lporec::DiffFn;
using lporec::Graph;
using lporec::NodeId;
using lporec::Rng;
using lporec::Tensor;

namespace {

Tensor<double> random_tensor(int64_t r, int64_t c, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<double> t(r, c);
    for (auto& v : t.raw()) v = rng.uniform(lo, hi);
    return t;
}

}  // namespace

TEST_CASE("softmax_rows on zeros is uniform") {
    Graph<double> g;
    const NodeId x = g.leaf(Tensor<double>::from_row({0.0, 0.0, 0.0}));
    const NodeId y = g.softmax_rows(x);
    for (double v : g.value(y).raw()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("matmul reproduces a hand computation") {
    Graph<double> g;
    const NodeId a = g.leaf(Tensor<double>::from_row({1, 2, 3}));  // reshape below
    Tensor<double> av(2, 3);
    av.raw() = {1, 2, 3, 4, 5, 6};
    Tensor<double> bv(3, 2);
    bv.raw() = {7, 8, 9, 10, 11, 12};
    const NodeId c = g.matmul(g.leaf(av), g.leaf(bv));
    (void)a;
    CHECK(g.value(c)(0, 0) == 58.0);
    CHECK(g.value(c)(0, 1) == 64.0);
    CHECK(g.value(c)(1, 0) == 139.0);
    CHECK(g.value(c)(1, 1) == 154.0);
}

TEST_CASE("matmul shape mismatch names the op") {
    Graph<double> g;
    const NodeId a = g.leaf(Tensor<double>(2, 3));
    const NodeId b = g.leaf(Tensor<double>(2, 3));
    CHECK_THROWS_WITH_AS(g.matmul(a, b), doctest::Contains("matmul"), lporec::RuntimeFailure);
}

TEST_CASE("backward of sum is all ones") {
    Graph<double> g;
    Rng rng(7);
    const NodeId x = g.leaf(random_tensor(3, 4, rng), true);
    g.backward(g.reduce_sum(x));
    for (double v : g.grad(x).raw()) CHECK(v == 1.0);
}

TEST_CASE("sigmoid gradient at zero is 0.25") {
    Graph<double> g;
    const NodeId x = g.leaf(Tensor<double>::scalar(0.0), true);
    g.backward(g.sigmoid(x));
    CHECK(g.grad(x).raw()[0] == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("softmax cross-entropy gradient equals softmax minus onehot") {
    Rng rng(11);
    Tensor<double> scores = random_tensor(1, 6, rng, -2.0, 2.0);
    const int target = 2;

    Graph<double> g;
    const NodeId s = g.leaf(scores, true);
    // -log softmax(s)[target], via log of the softmax row
    const NodeId p = g.softmax_rows(s);
    const NodeId lp = g.log(g.index_select(p, 1, {target}));
    g.backward(g.scale(lp, -1.0));

    double mx = scores.raw()[0];
    for (double v : scores.raw()) mx = std::max(mx, v);
    double denom = 0.0;
    for (double v : scores.raw()) denom += std::exp(v - mx);
    for (int i = 0; i < 6; ++i) {
        const double soft = std::exp(scores.raw()[static_cast<size_t>(i)] - mx) / denom;
        const double expected = soft - (i == target ? 1.0 : 0.0);
        CHECK(g.grad(s).raw()[static_cast<size_t>(i)] == doctest::Approx(expected).epsilon(1e-12));
    }

    // cross-check by central differences
    const DiffFn f = [&](const std::vector<Tensor<double>>& params,
                         std::vector<Tensor<double>>* grads) -> double {
        Graph<double> gg;
        const NodeId ss = gg.leaf(params[0], grads != nullptr);
        const NodeId loss = gg.scale(gg.log(gg.index_select(gg.softmax_rows(ss), 1, {target})), -1.0);
        if (grads) {
            gg.backward(loss);
            (*grads)[0] = gg.grad(ss);
        }
        return gg.value(loss).item();
    };
    CHECK(lporec::finite_diff_check(f, {scores}, 1e-5) < 1e-8);
}

TEST_CASE("gradient shapes match leaf shapes") {
    Graph<double> g;
    Rng rng(3);
    const NodeId a = g.leaf(random_tensor(4, 3, rng), true);
    const NodeId b = g.leaf(random_tensor(3, 5, rng), true);
    g.backward(g.reduce_sum(g.sigmoid(g.matmul(a, b))));
    CHECK(g.grad(a).rows() == 4);
    CHECK(g.grad(a).cols() == 3);
    CHECK(g.grad(b).rows() == 3);
    CHECK(g.grad(b).cols() == 5);
}

TEST_CASE("backward rejects non-scalar roots") {
    Graph<double> g;
    const NodeId x = g.leaf(Tensor<double>(2, 2), true);
    CHECK_THROWS_WITH_AS(g.backward(x), doctest::Contains("NotScalar"), lporec::RuntimeFailure);
}

TEST_CASE("dropout backward is the masked identity scaled by 1/(1-p)") {
    const double p = 0.4;
    Rng rng(123);
    Graph<double> g(&rng);
    Tensor<double> xv(4, 8, 1.0);  // strictly positive so zeros identify the mask
    const NodeId x = g.leaf(xv, true);
    const NodeId y = g.dropout(x, p, true);
    g.backward(g.reduce_sum(y));
    for (size_t i = 0; i < xv.size(); ++i) {
        const bool kept = g.value(y).raw()[i] != 0.0;
        const double expected = kept ? 1.0 / (1.0 - p) : 0.0;
        CHECK(g.grad(x).raw()[i] == doctest::Approx(expected).epsilon(1e-15));
    }
}

TEST_CASE("dropout in eval mode is the identity") {
    Rng rng(5);
    Graph<double> g(&rng);
    const NodeId x = g.leaf(random_tensor(3, 3, rng), true);
    const NodeId y = g.dropout(x, 0.8, false);
    for (size_t i = 0; i < g.value(x).size(); ++i)
        CHECK(g.value(y).raw()[i] == g.value(x).raw()[i]);
}

TEST_CASE("finite_diff_check on x^2 at x=3") {
    const DiffFn f = [](const std::vector<Tensor<double>>& params,
                        std::vector<Tensor<double>>* grads) -> double {
        const double x = params[0].raw()[0];
        if (grads) (*grads)[0].raw()[0] = 2.0 * x;
        return x * x;
    };
    CHECK(lporec::finite_diff_check(f, {Tensor<double>::scalar(3.0)}, 1e-5) < 1e-8);
}

TEST_CASE("finite_diff_check on a constant function is zero") {
    const DiffFn f = [](const std::vector<Tensor<double>>&, std::vector<Tensor<double>>*) -> double {
        return 4.25;
    };
    CHECK(lporec::finite_diff_check(f, {Tensor<double>::scalar(1.0)}, 1e-4) == 0.0);
}

TEST_CASE("finite_diff_check validates epsilon") {
    const DiffFn f = [](const std::vector<Tensor<double>>&, std::vector<Tensor<double>>*) -> double {
        return 0.0;
    };
    CHECK_THROWS_AS(lporec::finite_diff_check(f, {Tensor<double>::scalar(1.0)}, 1e-2),
                    lporec::ValidationError);
    CHECK_THROWS_AS(lporec::finite_diff_check(f, {Tensor<double>::scalar(1.0)}, 1e-8),
                    lporec::ValidationError);
}

// Chain-rule spot checks: small composite graphs over random values, each
// compared against central differences.
namespace {

struct Program {
    const char* name;
    // builds the scalar loss from leaves; leaves[0] is the main input
    std::function<NodeId(Graph<double>&, const std::vector<NodeId>&)> build;
    // shapes of the required leaves given (r, c)
    std::function<std::vector<std::pair<int64_t, int64_t>>(int64_t, int64_t)> shapes;
};

const std::vector<Program>& programs() {
    static const std::vector<Program> progs = {
        {"sigmoid(matmul)",
         [](Graph<double>& g, const std::vector<NodeId>& in) {
             return g.reduce_sum(g.sigmoid(g.matmul(in[0], in[1])));
         },
         [](int64_t r, int64_t c) {
             return std::vector<std::pair<int64_t, int64_t>>{{r, c}, {c, r}};
         }},
        {"softmax*const",
         [](Graph<double>& g, const std::vector<NodeId>& in) {
             return g.reduce_sum(g.mul(g.softmax_rows(in[0]), in[1]));
         },
         [](int64_t r, int64_t c) {
             return std::vector<std::pair<int64_t, int64_t>>{{r, c}, {r, c}};
         }},
        {"layer_norm",
         [](Graph<double>& g, const std::vector<NodeId>& in) {
             return g.reduce_sum(g.mul(g.layer_norm(in[0], in[1], in[2]), in[3]));
         },
         [](int64_t r, int64_t c) {
             return std::vector<std::pair<int64_t, int64_t>>{{r, c}, {1, c}, {1, c}, {r, c}};
         }},
        {"log(exp+exp)",
         [](Graph<double>& g, const std::vector<NodeId>& in) {
             return g.reduce_sum(g.log(g.add(g.exp(in[0]), g.exp(in[1]))));
         },
         [](int64_t r, int64_t c) {
             return std::vector<std::pair<int64_t, int64_t>>{{r, c}, {r, c}};
         }},
        {"mask_fill",
         [](Graph<double>& g, const std::vector<NodeId>& in) {
             const auto& v = g.value(in[0]);
             std::vector<uint8_t> mask(v.size(), 0);
             for (size_t i = 0; i < mask.size(); i += 2) mask[i] = 1;
             return g.reduce_sum(g.mul(g.mask_fill(in[0], mask, 0.5), in[1]));
         },
         [](int64_t r, int64_t c) {
             return std::vector<std::pair<int64_t, int64_t>>{{r, c}, {r, c}};
         }},
        {"index_select rows+cols",
         [](Graph<double>& g, const std::vector<NodeId>& in) {
             const NodeId rows = g.index_select(in[0], 0, {0, 0});
             return g.reduce_sum(g.mul(g.index_select(rows, 1, {0}), in[1]));
         },
         [](int64_t r, int64_t c) {
             return std::vector<std::pair<int64_t, int64_t>>{{r, c}, {2, 1}};
         }},
        {"transpose(A)*A",
         [](Graph<double>& g, const std::vector<NodeId>& in) {
             return g.reduce_sum(g.matmul(g.transpose(in[0]), in[0]));
         },
         [](int64_t r, int64_t c) {
             return std::vector<std::pair<int64_t, int64_t>>{{r, c}};
         }},
        {"embedding_lookup repeated ids",
         [](Graph<double>& g, const std::vector<NodeId>& in) {
             return g.reduce_sum(g.mul(g.embedding_lookup(in[0], {1, 0, 1}), in[1]));
         },
         [](int64_t r, int64_t c) {
             (void)r;
             return std::vector<std::pair<int64_t, int64_t>>{{3, c}, {3, c}};
         }},
        {"concat axis1",
         [](Graph<double>& g, const std::vector<NodeId>& in) {
             return g.reduce_sum(g.sigmoid(g.concat({in[0], in[1]}, 1)));
         },
         [](int64_t r, int64_t c) {
             return std::vector<std::pair<int64_t, int64_t>>{{r, c}, {r, c}};
         }},
        {"broadcast add + scale + exp",
         [](Graph<double>& g, const std::vector<NodeId>& in) {
             return g.reduce_sum(g.exp(g.scale(g.add(in[0], in[1]), -0.7)));
         },
         [](int64_t r, int64_t c) {
             return std::vector<std::pair<int64_t, int64_t>>{{r, c}, {1, c}};
         }},
    };
    return progs;
}

}  // namespace

TEST_CASE("chain rule matches finite differences on random small graphs") {
    Rng rng(2024);
    for (const Program& prog : programs()) {
        for (int trial = 0; trial < 5; ++trial) {
            const int64_t r = 1 + static_cast<int64_t>(rng.below(5));
            const int64_t c = 1 + static_cast<int64_t>(rng.below(5));
            std::vector<Tensor<double>> leaves;
            for (const auto& [lr, lc] : prog.shapes(r, c))
                leaves.push_back(random_tensor(lr, lc, rng, -0.9, 0.9));
            const DiffFn f = [&](const std::vector<Tensor<double>>& params,
                                 std::vector<Tensor<double>>* grads) -> double {
                Graph<double> g;
                std::vector<NodeId> in;
                in.reserve(params.size());
                for (const auto& p : params) in.push_back(g.leaf(p, grads != nullptr));
                const NodeId loss = prog.build(g, in);
                if (grads) {
                    g.backward(loss);
                    for (size_t i = 0; i < in.size(); ++i) (*grads)[i] = g.grad(in[i]);
                }
                return g.value(loss).item();
            };
            INFO(prog.name << " trial " << trial << " shape " << r << "x" << c);
            CHECK(lporec::finite_diff_check(f, leaves, 1e-5) < 1e-6);
        }
    }
}

TEST_CASE("forward values stay finite on a deep composite") {
    Rng rng(9);
    Graph<double> g(&rng);
    NodeId x = g.leaf(random_tensor(4, 4, rng, -3.0, 3.0));
    const NodeId gain = g.leaf(Tensor<double>(1, 4, 1.0));
    const NodeId bias = g.leaf(Tensor<double>(1, 4, 0.0));
    for (int i = 0; i < 4; ++i) x = g.layer_norm(g.softmax_rows(g.matmul(x, x)), gain, bias);
    CHECK(g.value(x).all_finite());
}
