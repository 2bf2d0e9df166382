#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "lporec/errors.hpp"
#include "lporec/rng.hpp"
#include "lporec/tensor.hpp"

namespace lporec {

enum class Op : uint8_t {
    leaf,
    embedding_lookup,
    matmul,
    add,
    mul,
    softmax_rows,
    layer_norm,
    relu,
    dropout,
    transpose,
    scale,
    concat,
    mask_fill,
    reduce_sum,
    log,
    exp,
    sigmoid,
    index_select,
};

inline const char* op_name(Op op) {
    switch (op) {
        case Op::leaf: return "leaf";
        case Op::embedding_lookup: return "embedding_lookup";
        case Op::matmul: return "matmul";
        case Op::add: return "add";
        case Op::mul: return "mul";
        case Op::softmax_rows: return "softmax_rows";
        case Op::layer_norm: return "layer_norm";
        case Op::relu: return "relu";
        case Op::dropout: return "dropout";
        case Op::transpose: return "transpose";
        case Op::scale: return "scale";
        case Op::concat: return "concat";
        case Op::mask_fill: return "mask_fill";
        case Op::reduce_sum: return "reduce_sum";
        case Op::log: return "log";
        case Op::exp: return "exp";
        case Op::sigmoid: return "sigmoid";
        case Op::index_select: return "index_select";
    }
    return "?";
}

using NodeId = int32_t;

namespace detail {

// One register tile of C(m x n) += A(m x k) * B(k x n): R rows by kBlock
// columns held in registers across the whole k loop, so B is streamed once
// per R rows instead of once per row.
template <class T, int R>
void matmul_tile(const T* __restrict a, const T* __restrict b, T* __restrict c, int64_t k,
                 int64_t n, int64_t i0, int64_t j0, int64_t jb) {
    constexpr int64_t kBlock = 256 / sizeof(T);
    T acc[R][kBlock];
    for (int r = 0; r < R; ++r)
        for (int64_t jj = 0; jj < jb; ++jj) acc[r][jj] = c[(i0 + r) * n + j0 + jj];
    for (int64_t p = 0; p < k; ++p) {
        const T* brow = b + p * n + j0;
        for (int r = 0; r < R; ++r) {
            const T av = a[(i0 + r) * k + p];
            for (int64_t jj = 0; jj < jb; ++jj) acc[r][jj] += av * brow[jj];
        }
    }
    for (int r = 0; r < R; ++r)
        for (int64_t jj = 0; jj < jb; ++jj) c[(i0 + r) * n + j0 + jj] = acc[r][jj];
}

// C(m x n) += A(m x k) * B(k x n), 4 x kBlock register tiles.
template <class T>
void matmul_acc(const T* __restrict a, const T* __restrict b, T* __restrict c, int64_t m,
                int64_t k, int64_t n) {
    constexpr int64_t kBlock = 256 / sizeof(T);  // 64 floats or 32 doubles
    for (int64_t j0 = 0; j0 < n; j0 += kBlock) {
        const int64_t jb = std::min(kBlock, n - j0);
        int64_t i0 = 0;
        for (; i0 + 4 <= m; i0 += 4) matmul_tile<T, 4>(a, b, c, k, n, i0, j0, jb);
        for (; i0 < m; ++i0) matmul_tile<T, 1>(a, b, c, k, n, i0, j0, jb);
    }
}

}  // namespace detail

// Eager expression graph with reverse-mode differentiation. Nodes are created
// in topological order and forward values are computed at construction, so
// backward() is a single reverse sweep. One graph instance per thread.
template <class T>
class Graph {
public:
    Graph() = default;
    explicit Graph(Rng* dropout_rng) : rng_(dropout_rng) {}

    size_t num_nodes() const { return nodes_.size(); }
    const Tensor<T>& value(NodeId id) const { return nodes_[static_cast<size_t>(id)].value; }

    // Gradient of the last backward() w.r.t. node `id`; zero tensor if the
    // node was not reached.
    const Tensor<T>& grad(NodeId id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (n.grad.size() == 0) n.grad = Tensor<T>(n.value.rows(), n.value.cols());
        return n.grad;
    }

    NodeId leaf(Tensor<T> v, bool requires_grad = false) {
        Node n;
        n.op = Op::leaf;
        n.value = std::move(v);
        n.needs_grad = requires_grad;
        return push(std::move(n));
    }
    NodeId constant(Tensor<T> v) { return leaf(std::move(v), false); }
    NodeId constant_scalar(T v) { return leaf(Tensor<T>::scalar(v), false); }

    // rows of `table` gathered by item id; `skip_row` receives no gradient
    // (used for the padding embedding row).
    NodeId embedding_lookup(NodeId table, std::vector<int32_t> ids, int32_t skip_row = -1) {
        const Tensor<T>& tv = val(table, Op::embedding_lookup);
        Tensor<T> out(static_cast<int64_t>(ids.size()), tv.cols());
        for (size_t i = 0; i < ids.size(); ++i) {
            const int32_t id = ids[i];
            if (id < 0 || id >= tv.rows())
                throw ValidationError("OutOfRange", "embedding_lookup: id out of range");
            std::copy(tv.row_ptr(id), tv.row_ptr(id) + tv.cols(), out.row_ptr(static_cast<int64_t>(i)));
        }
        Node n = unary(Op::embedding_lookup, table, std::move(out));
        n.indices = std::move(ids);
        n.skip_row = skip_row;
        return push(std::move(n));
    }

    NodeId matmul(NodeId a, NodeId b) {
        const Tensor<T>&av = val(a, Op::matmul), &bv = val(b, Op::matmul);
        if (av.cols() != bv.rows())
            throw RuntimeFailure("ShapeMismatch", std::string("matmul: ") + shape_str(av) + " x " + shape_str(bv));
        Tensor<T> out(av.rows(), bv.cols());
        detail::matmul_acc(av.data(), bv.data(), out.data(), av.rows(), av.cols(), bv.cols());
        Node n = binary(Op::matmul, a, b, std::move(out));
        return push(std::move(n));
    }

    // Elementwise add; rhs may be 1 x cols (row broadcast) or 1 x 1 (scalar).
    NodeId add(NodeId a, NodeId b) {
        const Tensor<T>&av = val(a, Op::add), &bv = val(b, Op::add);
        Tensor<T> out = av;
        if (bv.same_shape(av)) {
            for (size_t i = 0; i < out.size(); ++i) out.raw()[i] += bv.raw()[i];
        } else if (bv.rows() == 1 && bv.cols() == av.cols()) {
            for (int64_t r = 0; r < av.rows(); ++r)
                for (int64_t c = 0; c < av.cols(); ++c) out(r, c) += bv(0, c);
        } else if (bv.size() == 1) {
            for (auto& x : out.raw()) x += bv.raw()[0];
        } else {
            throw RuntimeFailure("ShapeMismatch", std::string("add: ") + shape_str(av) + " + " + shape_str(bv));
        }
        return push(binary(Op::add, a, b, std::move(out)));
    }

    NodeId mul(NodeId a, NodeId b) {
        const Tensor<T>&av = val(a, Op::mul), &bv = val(b, Op::mul);
        if (!av.same_shape(bv))
            throw RuntimeFailure("ShapeMismatch", std::string("mul: ") + shape_str(av) + " * " + shape_str(bv));
        Tensor<T> out = av;
        for (size_t i = 0; i < out.size(); ++i) out.raw()[i] *= bv.raw()[i];
        return push(binary(Op::mul, a, b, std::move(out)));
    }

    NodeId softmax_rows(NodeId x) {
        const Tensor<T>& xv = val(x, Op::softmax_rows);
        Tensor<T> out(xv.rows(), xv.cols());
        for (int64_t r = 0; r < xv.rows(); ++r) {
            const T* in = xv.row_ptr(r);
            T* o = out.row_ptr(r);
            T mx = in[0];
            for (int64_t c = 1; c < xv.cols(); ++c) mx = std::max(mx, in[c]);
            T sum = 0;
            for (int64_t c = 0; c < xv.cols(); ++c) {
                o[c] = std::exp(in[c] - mx);
                sum += o[c];
            }
            const T inv = T(1) / sum;
            for (int64_t c = 0; c < xv.cols(); ++c) o[c] *= inv;
        }
        return push(unary(Op::softmax_rows, x, std::move(out)));
    }

    // Row-wise normalization with learned gain/bias (both 1 x cols).
    NodeId layer_norm(NodeId x, NodeId gain, NodeId bias, T eps = T(1e-5)) {
        const Tensor<T>&xv = val(x, Op::layer_norm), &gv = val(gain, Op::layer_norm),
                       &bv = val(bias, Op::layer_norm);
        if (gv.rows() != 1 || gv.cols() != xv.cols() || !gv.same_shape(bv))
            throw RuntimeFailure("ShapeMismatch", "layer_norm: gain/bias must be 1 x cols");
        Tensor<T> out(xv.rows(), xv.cols());
        const int64_t c = xv.cols();
        for (int64_t r = 0; r < xv.rows(); ++r) {
            const T* in = xv.row_ptr(r);
            T* o = out.row_ptr(r);
            T mean = 0;
            for (int64_t j = 0; j < c; ++j) mean += in[j];
            mean /= static_cast<T>(c);
            T var = 0;
            for (int64_t j = 0; j < c; ++j) var += (in[j] - mean) * (in[j] - mean);
            var /= static_cast<T>(c);
            const T inv = T(1) / std::sqrt(var + eps);
            for (int64_t j = 0; j < c; ++j) o[j] = (in[j] - mean) * inv * gv.raw()[j] + bv.raw()[j];
        }
        Node n;
        n.op = Op::layer_norm;
        n.a = x;
        n.b = gain;
        n.c = bias;
        n.value = std::move(out);
        n.scalar = eps;
        n.needs_grad = needs(x) || needs(gain) || needs(bias);
        return push(std::move(n));
    }

    NodeId relu(NodeId x) {
        Tensor<T> out = val(x, Op::relu);
        for (auto& v : out.raw()) v = v > T(0) ? v : T(0);
        return push(unary(Op::relu, x, std::move(out)));
    }

    // Inverted dropout: keep with probability 1-p and scale by 1/(1-p) in
    // train mode, identity in eval mode. Mask is drawn once and reused by
    // backward.
    NodeId dropout(NodeId x, double p, bool train_mode) {
        if (p < 0.0 || p >= 1.0) throw ValidationError("InvalidDropout", "p must be in [0,1)");
        const Tensor<T>& xv = val(x, Op::dropout);
        Node n = unary(Op::dropout, x, xv);
        n.scalar = static_cast<T>(p);
        if (train_mode && p > 0.0) {
            if (!rng_) throw ValidationError("MissingRng", "dropout in train mode needs an rng");
            n.mask.resize(xv.size());
            const T scale_keep = T(1) / static_cast<T>(1.0 - p);
            for (size_t i = 0; i < xv.size(); ++i) {
                const bool keep = rng_->uniform01() >= p;
                n.mask[i] = keep ? 1 : 0;
                n.value.raw()[i] = keep ? xv.raw()[i] * scale_keep : T(0);
            }
        }
        return push(std::move(n));
    }

    NodeId transpose(NodeId x) {
        const Tensor<T>& xv = val(x, Op::transpose);
        Tensor<T> out(xv.cols(), xv.rows());
        for (int64_t r = 0; r < xv.rows(); ++r)
            for (int64_t c = 0; c < xv.cols(); ++c) out(c, r) = xv(r, c);
        return push(unary(Op::transpose, x, std::move(out)));
    }

    NodeId scale(NodeId x, T factor) {
        Tensor<T> out = val(x, Op::scale);
        for (auto& v : out.raw()) v *= factor;
        Node n = unary(Op::scale, x, std::move(out));
        n.scalar = factor;
        return push(std::move(n));
    }

    NodeId concat(const std::vector<NodeId>& parts, int axis) {
        if (parts.empty()) throw ValidationError("EmptyInput", "concat of zero tensors");
        if (axis != 0 && axis != 1) throw ValidationError("OutOfRange", "concat axis must be 0 or 1");
        const Tensor<T>& first = val(parts[0], Op::concat);
        int64_t rows = first.rows(), cols = first.cols();
        for (size_t i = 1; i < parts.size(); ++i) {
            const Tensor<T>& v = val(parts[i], Op::concat);
            if (axis == 0) {
                if (v.cols() != cols) throw RuntimeFailure("ShapeMismatch", "concat axis 0: column mismatch");
                rows += v.rows();
            } else {
                if (v.rows() != rows) throw RuntimeFailure("ShapeMismatch", "concat axis 1: row mismatch");
                cols += v.cols();
            }
        }
        if (axis == 1) rows = first.rows();
        Tensor<T> out(rows, cols);
        if (axis == 0) {
            int64_t r0 = 0;
            for (NodeId p : parts) {
                const Tensor<T>& v = value(p);
                std::copy(v.data(), v.data() + v.size(), out.row_ptr(r0));
                r0 += v.rows();
            }
        } else {
            int64_t c0 = 0;
            for (NodeId p : parts) {
                const Tensor<T>& v = value(p);
                for (int64_t r = 0; r < rows; ++r)
                    std::copy(v.row_ptr(r), v.row_ptr(r) + v.cols(), out.row_ptr(r) + c0);
                c0 += v.cols();
            }
        }
        Node n;
        n.op = Op::concat;
        n.inputs.assign(parts.begin(), parts.end());
        n.axis = axis;
        n.value = std::move(out);
        for (NodeId p : parts) n.needs_grad = n.needs_grad || needs(p);
        return push(std::move(n));
    }

    // out[i] = mask[i] ? fill : x[i]; masked entries block gradient flow.
    NodeId mask_fill(NodeId x, std::vector<uint8_t> mask, T fill) {
        const Tensor<T>& xv = val(x, Op::mask_fill);
        if (mask.size() != xv.size()) throw RuntimeFailure("ShapeMismatch", "mask_fill: mask size mismatch");
        Tensor<T> out = xv;
        for (size_t i = 0; i < mask.size(); ++i)
            if (mask[i]) out.raw()[i] = fill;
        Node n = unary(Op::mask_fill, x, std::move(out));
        n.mask = std::move(mask);
        n.scalar = fill;
        return push(std::move(n));
    }

    NodeId reduce_sum(NodeId x) {
        const Tensor<T>& xv = val(x, Op::reduce_sum);
        T s = 0;
        for (T v : xv.raw()) s += v;
        return push(unary(Op::reduce_sum, x, Tensor<T>::scalar(s)));
    }

    NodeId log(NodeId x) {
        Tensor<T> out = val(x, Op::log);
        for (auto& v : out.raw()) v = std::log(v);
        return push(unary(Op::log, x, std::move(out)));
    }

    NodeId exp(NodeId x) {
        Tensor<T> out = val(x, Op::exp);
        for (auto& v : out.raw()) v = std::exp(v);
        return push(unary(Op::exp, x, std::move(out)));
    }

    NodeId sigmoid(NodeId x) {
        Tensor<T> out = val(x, Op::sigmoid);
        for (auto& v : out.raw()) v = T(1) / (T(1) + std::exp(-v));
        return push(unary(Op::sigmoid, x, std::move(out)));
    }

    NodeId index_select(NodeId x, int axis, std::vector<int32_t> idx) {
        const Tensor<T>& xv = val(x, Op::index_select);
        if (axis != 0 && axis != 1) throw ValidationError("OutOfRange", "index_select axis must be 0 or 1");
        Tensor<T> out;
        if (axis == 0) {
            out = Tensor<T>(static_cast<int64_t>(idx.size()), xv.cols());
            for (size_t i = 0; i < idx.size(); ++i) {
                if (idx[i] < 0 || idx[i] >= xv.rows())
                    throw ValidationError("OutOfRange", "index_select: row out of range");
                std::copy(xv.row_ptr(idx[i]), xv.row_ptr(idx[i]) + xv.cols(),
                          out.row_ptr(static_cast<int64_t>(i)));
            }
        } else {
            out = Tensor<T>(xv.rows(), static_cast<int64_t>(idx.size()));
            for (size_t i = 0; i < idx.size(); ++i)
                if (idx[i] < 0 || idx[i] >= xv.cols())
                    throw ValidationError("OutOfRange", "index_select: column out of range");
            for (int64_t r = 0; r < xv.rows(); ++r)
                for (size_t i = 0; i < idx.size(); ++i)
                    out(r, static_cast<int64_t>(i)) = xv(r, idx[i]);
        }
        Node n = unary(Op::index_select, x, std::move(out));
        n.axis = axis;
        n.indices = std::move(idx);
        return push(std::move(n));
    }

    // Values are computed eagerly at node construction; this returns the
    // cached forward value of `root`.
    const Tensor<T>& forward(NodeId root) const { return value(root); }

    // Reverse accumulation from a scalar root. Gradients of earlier backward
    // calls on the same graph are cleared first.
    void backward(NodeId root) {
        Node& r = nodes_[static_cast<size_t>(root)];
        if (r.value.size() != 1) throw RuntimeFailure("NotScalar", "backward root must be scalar");
        for (Node& n : nodes_) n.grad = Tensor<T>();
        transposed_.clear();
        ensure_grad(root).raw()[0] = T(1);
        for (NodeId id = root; id >= 0; --id) {
            Node& n = nodes_[static_cast<size_t>(id)];
            if (!n.needs_grad || n.grad.size() == 0) continue;
            propagate(n);
        }
        transposed_.clear();
    }

private:
    struct Node {
        Op op = Op::leaf;
        NodeId a = -1, b = -1, c = -1;
        std::vector<NodeId> inputs;  // concat only
        Tensor<T> value;
        Tensor<T> grad;
        bool needs_grad = false;
        T scalar{};
        int axis = 0;
        std::vector<int32_t> indices;
        std::vector<uint8_t> mask;
        int32_t skip_row = -1;
    };

    NodeId push(Node&& n) {
        nodes_.push_back(std::move(n));
        return static_cast<NodeId>(nodes_.size() - 1);
    }
    const Tensor<T>& val(NodeId id, Op op) const {
        if (id < 0 || static_cast<size_t>(id) >= nodes_.size())
            throw ValidationError("OutOfRange", std::string(op_name(op)) + ": bad node id");
        return nodes_[static_cast<size_t>(id)].value;
    }
    bool needs(NodeId id) const { return nodes_[static_cast<size_t>(id)].needs_grad; }
    Node unary(Op op, NodeId a, Tensor<T> out) {
        Node n;
        n.op = op;
        n.a = a;
        n.value = std::move(out);
        n.needs_grad = needs(a);
        return n;
    }
    Node binary(Op op, NodeId a, NodeId b, Tensor<T> out) {
        Node n;
        n.op = op;
        n.a = a;
        n.b = b;
        n.value = std::move(out);
        n.needs_grad = needs(a) || needs(b);
        return n;
    }
    static std::string shape_str(const Tensor<T>& t) {
        return std::to_string(t.rows()) + "x" + std::to_string(t.cols());
    }
    Tensor<T>& ensure_grad(NodeId id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (n.grad.size() == 0) n.grad = Tensor<T>(n.value.rows(), n.value.cols());
        return n.grad;
    }
    bool wants(NodeId id) const { return id >= 0 && nodes_[static_cast<size_t>(id)].needs_grad; }

    const Tensor<T>& transposed(NodeId id) {
        auto it = transposed_.find(id);
        if (it != transposed_.end()) return it->second;
        const Tensor<T>& v = nodes_[static_cast<size_t>(id)].value;
        Tensor<T> t(v.cols(), v.rows());
        for (int64_t r = 0; r < v.rows(); ++r)
            for (int64_t c = 0; c < v.cols(); ++c) t(c, r) = v(r, c);
        return transposed_.emplace(id, std::move(t)).first->second;
    }

    void propagate(Node& n) {
        const Tensor<T>& g = n.grad;
        switch (n.op) {
            case Op::leaf:
                break;
            case Op::embedding_lookup: {
                if (!wants(n.a)) break;
                Tensor<T>& dt = ensure_grad(n.a);
                for (size_t i = 0; i < n.indices.size(); ++i) {
                    const int32_t id = n.indices[i];
                    if (id == n.skip_row) continue;
                    const T* grow = g.row_ptr(static_cast<int64_t>(i));
                    T* drow = dt.row_ptr(id);
                    for (int64_t c = 0; c < g.cols(); ++c) drow[c] += grow[c];
                }
                break;
            }
            case Op::matmul: {
                const Tensor<T>& av = nodes_[n.a].value;
                const Tensor<T>& bv = nodes_[n.b].value;
                // dA = dC * B^T and dB = A^T * dC, both through the same
                // contiguous kernel; transposes of shared operands (weights,
                // batch activations) are computed once per backward pass
                if (wants(n.a)) {
                    const Tensor<T>& bt = transposed(n.b);
                    detail::matmul_acc(g.data(), bt.data(), ensure_grad(n.a).data(), g.rows(),
                                       g.cols(), bv.rows());
                }
                if (wants(n.b)) {
                    const Tensor<T>& at = transposed(n.a);
                    detail::matmul_acc(at.data(), g.data(), ensure_grad(n.b).data(), av.cols(),
                                       av.rows(), g.cols());
                }
                break;
            }
            case Op::add: {
                if (wants(n.a)) {
                    Tensor<T>& da = ensure_grad(n.a);
                    for (size_t i = 0; i < g.size(); ++i) da.raw()[i] += g.raw()[i];
                }
                if (wants(n.b)) {
                    const Tensor<T>& bv = nodes_[n.b].value;
                    Tensor<T>& db = ensure_grad(n.b);
                    if (bv.same_shape(n.value)) {
                        for (size_t i = 0; i < g.size(); ++i) db.raw()[i] += g.raw()[i];
                    } else if (bv.size() == 1) {
                        T s = 0;
                        for (T v : g.raw()) s += v;
                        db.raw()[0] += s;
                    } else {  // 1 x cols broadcast
                        for (int64_t r = 0; r < g.rows(); ++r)
                            for (int64_t c = 0; c < g.cols(); ++c) db(0, c) += g(r, c);
                    }
                }
                break;
            }
            case Op::mul: {
                const Tensor<T>& av = nodes_[n.a].value;
                const Tensor<T>& bv = nodes_[n.b].value;
                if (wants(n.a)) {
                    Tensor<T>& da = ensure_grad(n.a);
                    for (size_t i = 0; i < g.size(); ++i) da.raw()[i] += g.raw()[i] * bv.raw()[i];
                }
                if (wants(n.b)) {
                    Tensor<T>& db = ensure_grad(n.b);
                    for (size_t i = 0; i < g.size(); ++i) db.raw()[i] += g.raw()[i] * av.raw()[i];
                }
                break;
            }
            case Op::softmax_rows: {
                if (!wants(n.a)) break;
                Tensor<T>& dx = ensure_grad(n.a);
                const Tensor<T>& y = n.value;
                for (int64_t r = 0; r < y.rows(); ++r) {
                    const T* yr = y.row_ptr(r);
                    const T* gr = g.row_ptr(r);
                    T dot = 0;
                    for (int64_t c = 0; c < y.cols(); ++c) dot += gr[c] * yr[c];
                    T* dr = dx.row_ptr(r);
                    for (int64_t c = 0; c < y.cols(); ++c) dr[c] += yr[c] * (gr[c] - dot);
                }
                break;
            }
            case Op::layer_norm: {
                const Tensor<T>& xv = nodes_[n.a].value;
                const Tensor<T>& gv = nodes_[n.b].value;
                const int64_t cols = xv.cols();
                const T eps = n.scalar;
                for (int64_t r = 0; r < xv.rows(); ++r) {
                    const T* in = xv.row_ptr(r);
                    const T* gr = g.row_ptr(r);
                    T mean = 0;
                    for (int64_t j = 0; j < cols; ++j) mean += in[j];
                    mean /= static_cast<T>(cols);
                    T var = 0;
                    for (int64_t j = 0; j < cols; ++j) var += (in[j] - mean) * (in[j] - mean);
                    var /= static_cast<T>(cols);
                    const T inv = T(1) / std::sqrt(var + eps);
                    if (wants(n.b) || wants(n.c)) {
                        Tensor<T>* dg = wants(n.b) ? &ensure_grad(n.b) : nullptr;
                        Tensor<T>* db = wants(n.c) ? &ensure_grad(n.c) : nullptr;
                        for (int64_t j = 0; j < cols; ++j) {
                            const T xhat = (in[j] - mean) * inv;
                            if (dg) dg->raw()[j] += gr[j] * xhat;
                            if (db) db->raw()[j] += gr[j];
                        }
                    }
                    if (wants(n.a)) {
                        // dx = inv * (dxh - mean(dxh) - xhat * mean(dxh .* xhat))
                        T m1 = 0, m2 = 0;
                        for (int64_t j = 0; j < cols; ++j) {
                            const T xhat = (in[j] - mean) * inv;
                            const T dxh = gr[j] * gv.raw()[j];
                            m1 += dxh;
                            m2 += dxh * xhat;
                        }
                        m1 /= static_cast<T>(cols);
                        m2 /= static_cast<T>(cols);
                        T* da = ensure_grad(n.a).row_ptr(r);
                        for (int64_t j = 0; j < cols; ++j) {
                            const T xhat = (in[j] - mean) * inv;
                            const T dxh = gr[j] * gv.raw()[j];
                            da[j] += inv * (dxh - m1 - xhat * m2);
                        }
                    }
                }
                break;
            }
            case Op::relu: {
                if (!wants(n.a)) break;
                const Tensor<T>& xv = nodes_[n.a].value;
                Tensor<T>& dx = ensure_grad(n.a);
                for (size_t i = 0; i < g.size(); ++i)
                    if (xv.raw()[i] > T(0)) dx.raw()[i] += g.raw()[i];
                break;
            }
            case Op::dropout: {
                if (!wants(n.a)) break;
                Tensor<T>& dx = ensure_grad(n.a);
                if (n.mask.empty()) {
                    for (size_t i = 0; i < g.size(); ++i) dx.raw()[i] += g.raw()[i];
                } else {
                    const T scale_keep = T(1) / (T(1) - n.scalar);
                    for (size_t i = 0; i < g.size(); ++i)
                        if (n.mask[i]) dx.raw()[i] += g.raw()[i] * scale_keep;
                }
                break;
            }
            case Op::transpose: {
                if (!wants(n.a)) break;
                Tensor<T>& dx = ensure_grad(n.a);
                for (int64_t r = 0; r < g.rows(); ++r)
                    for (int64_t c = 0; c < g.cols(); ++c) dx(c, r) += g(r, c);
                break;
            }
            case Op::scale: {
                if (!wants(n.a)) break;
                Tensor<T>& dx = ensure_grad(n.a);
                for (size_t i = 0; i < g.size(); ++i) dx.raw()[i] += g.raw()[i] * n.scalar;
                break;
            }
            case Op::concat: {
                int64_t r0 = 0, c0 = 0;
                for (NodeId p : n.inputs) {
                    const Tensor<T>& pv = nodes_[p].value;
                    if (wants(p)) {
                        Tensor<T>& dp = ensure_grad(p);
                        if (n.axis == 0) {
                            for (int64_t r = 0; r < pv.rows(); ++r)
                                for (int64_t c = 0; c < pv.cols(); ++c) dp(r, c) += g(r0 + r, c);
                        } else {
                            for (int64_t r = 0; r < pv.rows(); ++r)
                                for (int64_t c = 0; c < pv.cols(); ++c) dp(r, c) += g(r, c0 + c);
                        }
                    }
                    r0 += pv.rows();
                    c0 += pv.cols();
                }
                break;
            }
            case Op::mask_fill: {
                if (!wants(n.a)) break;
                Tensor<T>& dx = ensure_grad(n.a);
                for (size_t i = 0; i < g.size(); ++i)
                    if (!n.mask[i]) dx.raw()[i] += g.raw()[i];
                break;
            }
            case Op::reduce_sum: {
                if (!wants(n.a)) break;
                Tensor<T>& dx = ensure_grad(n.a);
                const T gv = g.raw()[0];
                for (auto& v : dx.raw()) v += gv;
                break;
            }
            case Op::log: {
                if (!wants(n.a)) break;
                const Tensor<T>& xv = nodes_[n.a].value;
                Tensor<T>& dx = ensure_grad(n.a);
                for (size_t i = 0; i < g.size(); ++i) dx.raw()[i] += g.raw()[i] / xv.raw()[i];
                break;
            }
            case Op::exp: {
                if (!wants(n.a)) break;
                Tensor<T>& dx = ensure_grad(n.a);
                for (size_t i = 0; i < g.size(); ++i) dx.raw()[i] += g.raw()[i] * n.value.raw()[i];
                break;
            }
            case Op::sigmoid: {
                if (!wants(n.a)) break;
                Tensor<T>& dx = ensure_grad(n.a);
                for (size_t i = 0; i < g.size(); ++i) {
                    const T y = n.value.raw()[i];
                    dx.raw()[i] += g.raw()[i] * y * (T(1) - y);
                }
                break;
            }
            case Op::index_select: {
                if (!wants(n.a)) break;
                Tensor<T>& dx = ensure_grad(n.a);
                if (n.axis == 0) {
                    for (size_t i = 0; i < n.indices.size(); ++i) {
                        const T* grow = g.row_ptr(static_cast<int64_t>(i));
                        T* drow = dx.row_ptr(n.indices[i]);
                        for (int64_t c = 0; c < g.cols(); ++c) drow[c] += grow[c];
                    }
                } else {
                    for (int64_t r = 0; r < g.rows(); ++r)
                        for (size_t i = 0; i < n.indices.size(); ++i)
                            dx(r, n.indices[i]) += g(r, static_cast<int64_t>(i));
                }
                break;
            }
        }
    }

    std::vector<Node> nodes_;
    std::unordered_map<NodeId, Tensor<T>> transposed_;  // backward-pass cache
    Rng* rng_ = nullptr;
};

}  // namespace lporec
