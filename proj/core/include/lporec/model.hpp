#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "lporec/catalog.hpp"
#include "lporec/graph.hpp"
#include "lporec/rng.hpp"
#include "lporec/tensor.hpp"

namespace lporec {

struct ModelDims {
    int d = 64;
    int heads = 4;
    int blocks = 1;
    int l_max = 10;
    int32_t num_items = 0;

    int d_ff() const { return 4 * d; }
    int head_dim() const { return d / heads; }
    ItemId padding_id() const { return num_items; }

    void validate() const {
        if (d < 1 || heads < 1 || d % heads != 0)
            throw ValidationError("InvalidDims", "d must be a positive multiple of heads");
        if (blocks < 1) throw ValidationError("InvalidDims", "blocks must be >= 1");
        if (l_max < 1) throw ValidationError("InvalidDims", "l_max must be >= 1");
        if (num_items < 1) throw ValidationError("InvalidDims", "num_items must be >= 1");
    }
};

// All weights of the policy. The item embedding table has one extra row for
// the padding item which stays exactly zero and is never updated. The same
// table scores the catalog (tied input/output embeddings).
template <class T>
struct ModelParams {
    struct Block {
        Tensor<T> w_q, w_k, w_v, w_o;    // d x d
        Tensor<T> w_ff1, b_ff1;          // d x d_ff, 1 x d_ff
        Tensor<T> w_ff2, b_ff2;          // d_ff x d, 1 x d
        Tensor<T> ln1_gain, ln1_bias;    // 1 x d
        Tensor<T> ln2_gain, ln2_bias;    // 1 x d
    };

    ModelDims dims;
    uint64_t seed = 0;
    Tensor<T> item_embedding;  // (num_items + 1) x d
    Tensor<T> positional;      // l_max x d
    std::vector<Block> blocks;

    // Fixed traversal order; the optimizer, checkpoints and gradient checks
    // all index parameters by this order.
    template <class F>
    void for_each(F&& f) {
        f("item_embedding", item_embedding);
        f("positional_embedding", positional);
        for (size_t b = 0; b < blocks.size(); ++b) {
            const std::string p = "block" + std::to_string(b) + ".";
            auto& blk = blocks[b];
            f(p + "w_q", blk.w_q);
            f(p + "w_k", blk.w_k);
            f(p + "w_v", blk.w_v);
            f(p + "w_o", blk.w_o);
            f(p + "w_ff1", blk.w_ff1);
            f(p + "b_ff1", blk.b_ff1);
            f(p + "w_ff2", blk.w_ff2);
            f(p + "b_ff2", blk.b_ff2);
            f(p + "ln1_gain", blk.ln1_gain);
            f(p + "ln1_bias", blk.ln1_bias);
            f(p + "ln2_gain", blk.ln2_gain);
            f(p + "ln2_bias", blk.ln2_bias);
        }
    }
    template <class F>
    void for_each(F&& f) const {
        const_cast<ModelParams*>(this)->for_each(
            [&](const std::string& name, Tensor<T>& t) { f(name, const_cast<const Tensor<T>&>(t)); });
    }

    size_t num_tensors() const { return 2 + 12 * blocks.size(); }
};

// Embeddings and projections uniform in [-1/sqrt(d), +1/sqrt(d)], layer-norm
// gain 1 / bias 0, FF biases 0, padding row zeroed. Deterministic in `seed`.
template <class T>
ModelParams<T> init_params(const ModelDims& dims, uint64_t seed) {
    dims.validate();
    Rng rng(seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(dims.d));
    const auto uniform_fill = [&](Tensor<T>& t) {
        for (auto& v : t.raw()) v = static_cast<T>(rng.uniform(-bound, bound));
    };

    ModelParams<T> p;
    p.dims = dims;
    p.seed = seed;
    p.item_embedding = Tensor<T>(dims.num_items + 1, dims.d);
    uniform_fill(p.item_embedding);
    for (int c = 0; c < dims.d; ++c) p.item_embedding(dims.num_items, c) = T(0);
    p.positional = Tensor<T>(dims.l_max, dims.d);
    uniform_fill(p.positional);
    p.blocks.resize(static_cast<size_t>(dims.blocks));
    for (auto& blk : p.blocks) {
        blk.w_q = Tensor<T>(dims.d, dims.d);
        blk.w_k = Tensor<T>(dims.d, dims.d);
        blk.w_v = Tensor<T>(dims.d, dims.d);
        blk.w_o = Tensor<T>(dims.d, dims.d);
        uniform_fill(blk.w_q);
        uniform_fill(blk.w_k);
        uniform_fill(blk.w_v);
        uniform_fill(blk.w_o);
        blk.w_ff1 = Tensor<T>(dims.d, dims.d_ff());
        blk.b_ff1 = Tensor<T>(1, dims.d_ff());
        blk.w_ff2 = Tensor<T>(dims.d_ff(), dims.d);
        blk.b_ff2 = Tensor<T>(1, dims.d);
        uniform_fill(blk.w_ff1);
        uniform_fill(blk.w_ff2);
        blk.ln1_gain = Tensor<T>(1, dims.d, T(1));
        blk.ln1_bias = Tensor<T>(1, dims.d);
        blk.ln2_gain = Tensor<T>(1, dims.d, T(1));
        blk.ln2_bias = Tensor<T>(1, dims.d);
    }
    return p;
}

// Parameter leaves registered in one graph; shared by every example subgraph
// built on that graph so gradients accumulate across a batch.
template <class T>
struct ParamNodes {
    struct Block {
        NodeId w_q, w_k, w_v, w_o;
        NodeId w_ff1, b_ff1, w_ff2, b_ff2;
        NodeId ln1_gain, ln1_bias, ln2_gain, ln2_bias;
    };
    NodeId item_embedding = -1;
    NodeId positional = -1;
    std::vector<Block> blocks;
    NodeId real_items = -1;    // item_embedding without the padding row
    NodeId real_items_t = -1;  // its transpose, d x num_items, shared by all scores

    std::vector<NodeId> ordered;  // same order as ModelParams::for_each
};

template <class T>
ParamNodes<T> register_params(Graph<T>& g, const ModelParams<T>& params, bool requires_grad) {
    ParamNodes<T> pn;
    pn.blocks.resize(params.blocks.size());
    size_t tensor_idx = 0;
    std::vector<NodeId*> slots = {&pn.item_embedding, &pn.positional};
    for (auto& blk : pn.blocks)
        for (NodeId* s : {&blk.w_q, &blk.w_k, &blk.w_v, &blk.w_o, &blk.w_ff1, &blk.b_ff1, &blk.w_ff2,
                          &blk.b_ff2, &blk.ln1_gain, &blk.ln1_bias, &blk.ln2_gain, &blk.ln2_bias})
            slots.push_back(s);
    params.for_each([&](const std::string&, const Tensor<T>& t) {
        const NodeId id = g.leaf(t, requires_grad);
        *slots[tensor_idx++] = id;
        pn.ordered.push_back(id);
    });
    std::vector<int32_t> real_ids(static_cast<size_t>(params.dims.num_items));
    for (int32_t i = 0; i < params.dims.num_items; ++i) real_ids[static_cast<size_t>(i)] = i;
    pn.real_items = g.index_select(pn.item_embedding, 0, std::move(real_ids));
    pn.real_items_t = g.transpose(pn.real_items);
    return pn;
}

// Causal self-attention stack over a batch of left-padded histories, stacked
// into one (B * l_max) x d sequence so the projection and feed-forward
// matmuls run at batch width. Attention itself is block-diagonal and handled
// per example. Returns the hidden states at each example's last position
// (B x d). Positions are indexed within the fixed l_max window, so a
// representation does not depend on how much padding precedes the content.
template <class T>
NodeId build_batch_hidden(Graph<T>& g, const ParamNodes<T>& pn, const ModelDims& dims,
                          const std::vector<const std::vector<ItemId>*>& histories, bool train_mode,
                          double dropout_p) {
    if (histories.empty()) throw ValidationError("EmptyInput", "encode: no histories");
    const int L = dims.l_max;
    const int64_t batch = static_cast<int64_t>(histories.size());

    std::vector<int32_t> ids(static_cast<size_t>(batch) * static_cast<size_t>(L),
                             dims.padding_id());
    std::vector<int> pad_start(static_cast<size_t>(batch));
    for (int64_t b = 0; b < batch; ++b) {
        const std::vector<ItemId>& history = *histories[static_cast<size_t>(b)];
        if (history.empty()) throw ValidationError("EmptyHistory", "encode: empty history");
        if (static_cast<int>(history.size()) > L)
            throw ValidationError("HistoryTooLong", "encode: history longer than l_max");
        for (ItemId it : history)
            if (it < 0 || it >= dims.num_items)
                throw ValidationError("OutOfRange", "encode: item id outside catalog");
        pad_start[static_cast<size_t>(b)] = L - static_cast<int>(history.size());
        std::copy(history.begin(), history.end(),
                  ids.begin() + b * L + pad_start[static_cast<size_t>(b)]);
    }

    NodeId x = g.embedding_lookup(pn.item_embedding, std::move(ids), dims.padding_id());
    x = g.add(x, g.concat(std::vector<NodeId>(static_cast<size_t>(batch), pn.positional), 0));

    // per-example attention mask: attend to j <= i, content positions only
    const auto make_mask = [L](int pad) {
        std::vector<uint8_t> mask(static_cast<size_t>(L) * static_cast<size_t>(L));
        for (int i = 0; i < L; ++i)
            for (int j = 0; j < L; ++j)
                mask[static_cast<size_t>(i * L + j)] = (j > i || j < pad) ? 1 : 0;
        return mask;
    };

    const int dh = dims.head_dim();
    const T attn_scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
    std::vector<int32_t> cols(static_cast<size_t>(dh));
    std::vector<int32_t> rows(static_cast<size_t>(L));
    for (const auto& blk : pn.blocks) {
        const NodeId q = g.matmul(x, blk.w_q);
        const NodeId k = g.matmul(x, blk.w_k);
        const NodeId v = g.matmul(x, blk.w_v);
        std::vector<NodeId> qh(static_cast<size_t>(dims.heads));
        std::vector<NodeId> kh(static_cast<size_t>(dims.heads));
        std::vector<NodeId> vh(static_cast<size_t>(dims.heads));
        for (int h = 0; h < dims.heads; ++h) {
            for (int c = 0; c < dh; ++c) cols[static_cast<size_t>(c)] = h * dh + c;
            qh[static_cast<size_t>(h)] = g.index_select(q, 1, cols);
            kh[static_cast<size_t>(h)] = g.index_select(k, 1, cols);
            vh[static_cast<size_t>(h)] = g.index_select(v, 1, cols);
        }

        std::vector<NodeId> ctx(static_cast<size_t>(batch));
        std::vector<NodeId> head_ctx(static_cast<size_t>(dims.heads));
        for (int64_t b = 0; b < batch; ++b) {
            const std::vector<uint8_t> mask = make_mask(pad_start[static_cast<size_t>(b)]);
            for (int r = 0; r < L; ++r) rows[static_cast<size_t>(r)] = static_cast<int32_t>(b * L + r);
            for (int h = 0; h < dims.heads; ++h) {
                const NodeId qi = g.index_select(qh[static_cast<size_t>(h)], 0, rows);
                const NodeId ki = g.index_select(kh[static_cast<size_t>(h)], 0, rows);
                const NodeId vi = g.index_select(vh[static_cast<size_t>(h)], 0, rows);
                NodeId att = g.scale(g.matmul(qi, g.transpose(ki)), attn_scale);
                att = g.mask_fill(att, mask, T(-1e9));
                head_ctx[static_cast<size_t>(h)] = g.matmul(g.softmax_rows(att), vi);
            }
            ctx[static_cast<size_t>(b)] = g.concat(head_ctx, 1);
        }
        NodeId attn_out = g.matmul(g.concat(ctx, 0), blk.w_o);
        attn_out = g.dropout(attn_out, dropout_p, train_mode);
        x = g.layer_norm(g.add(x, attn_out), blk.ln1_gain, blk.ln1_bias);

        NodeId ff = g.relu(g.add(g.matmul(x, blk.w_ff1), blk.b_ff1));
        ff = g.add(g.matmul(ff, blk.w_ff2), blk.b_ff2);
        ff = g.dropout(ff, dropout_p, train_mode);
        x = g.layer_norm(g.add(x, ff), blk.ln2_gain, blk.ln2_bias);
    }

    std::vector<int32_t> last(static_cast<size_t>(batch));
    for (int64_t b = 0; b < batch; ++b) last[static_cast<size_t>(b)] = static_cast<int32_t>(b * L + L - 1);
    return g.index_select(x, 0, std::move(last));
}

// Single-history encoder: the hidden state at the last position (1 x d).
template <class T>
NodeId build_encoder(Graph<T>& g, const ParamNodes<T>& pn, const ModelDims& dims,
                     const std::vector<ItemId>& history, bool train_mode, double dropout_p) {
    return build_batch_hidden(g, pn, dims, {&history}, train_mode, dropout_p);
}

// Score node over the full catalog: s(y|S) = <h, E[y]> for every real item,
// shaped 1 x num_items.
template <class T>
NodeId build_scores(Graph<T>& g, const ParamNodes<T>& pn, NodeId h) {
    return g.matmul(h, pn.real_items_t);
}

// Convenience single-example forward pass.
template <class T>
Tensor<T> encode(const ModelParams<T>& params, const std::vector<ItemId>& history, bool train_mode,
                 Rng& rng, double dropout_p = 0.0) {
    Graph<T> g(&rng);
    const ParamNodes<T> pn = register_params(g, params, false);
    return g.value(build_encoder(g, pn, params.dims, history, train_mode, dropout_p));
}

// Full-catalog scores from a hidden state; the padding row is excluded.
template <class T>
std::vector<double> score_all(const ModelParams<T>& params, const Tensor<T>& h) {
    if (h.rows() != 1 || h.cols() != params.dims.d)
        throw ValidationError("ShapeMismatch", "score_all: h must be 1 x d");
    std::vector<double> scores(static_cast<size_t>(params.dims.num_items));
    for (int32_t y = 0; y < params.dims.num_items; ++y) {
        const T* row = params.item_embedding.row_ptr(y);
        T acc = 0;
        for (int c = 0; c < params.dims.d; ++c) acc += h.raw()[static_cast<size_t>(c)] * row[c];
        scores[static_cast<size_t>(y)] = static_cast<double>(acc);
    }
    return scores;
}

// ---- checkpoint io ------------------------------------------------------

namespace detail {
constexpr char kCheckpointMagic[8] = {'L', 'P', 'O', 'R', 'E', 'C', 'K', '1'};

template <class T>
constexpr uint32_t dtype_tag() {
    return sizeof(T) == 4 ? 4u : 8u;
}

inline void write_bytes(std::ofstream& out, const void* p, size_t n) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}
inline void read_bytes(std::ifstream& in, void* p, size_t n) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!in) throw RuntimeFailure("IoError", "truncated checkpoint");
}
}  // namespace detail

template <class T>
void save_checkpoint(const std::filesystem::path& path, const ModelParams<T>& params) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw RuntimeFailure("IoError", "cannot write " + path.string());
    detail::write_bytes(out, detail::kCheckpointMagic, 8);
    const uint32_t dtype = detail::dtype_tag<T>();
    detail::write_bytes(out, &dtype, 4);
    const int32_t meta[5] = {params.dims.d, params.dims.heads, params.dims.blocks,
                             params.dims.l_max, params.dims.num_items};
    detail::write_bytes(out, meta, sizeof(meta));
    detail::write_bytes(out, &params.seed, 8);
    const uint32_t count = static_cast<uint32_t>(params.num_tensors());
    detail::write_bytes(out, &count, 4);
    params.for_each([&](const std::string& name, const Tensor<T>& t) {
        const uint32_t len = static_cast<uint32_t>(name.size());
        detail::write_bytes(out, &len, 4);
        detail::write_bytes(out, name.data(), name.size());
        const int64_t shape[2] = {t.rows(), t.cols()};
        detail::write_bytes(out, shape, sizeof(shape));
        detail::write_bytes(out, t.data(), t.size() * sizeof(T));
    });
    if (!out) throw RuntimeFailure("IoError", "write failed for " + path.string());
}

// dtype tag of a stored checkpoint (4 = f32, 8 = f64)
inline uint32_t checkpoint_dtype(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw RuntimeFailure("IoError", "cannot read " + path.string());
    char magic[8];
    detail::read_bytes(in, magic, 8);
    if (std::memcmp(magic, detail::kCheckpointMagic, 8) != 0)
        throw ValidationError("ParseError", path.string() + " is not a checkpoint");
    uint32_t dtype = 0;
    detail::read_bytes(in, &dtype, 4);
    if (dtype != 4 && dtype != 8)
        throw ValidationError("ParseError", "unknown checkpoint dtype");
    return dtype;
}

template <class T>
ModelParams<T> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw RuntimeFailure("IoError", "cannot read " + path.string());
    char magic[8];
    detail::read_bytes(in, magic, 8);
    if (std::memcmp(magic, detail::kCheckpointMagic, 8) != 0)
        throw ValidationError("ParseError", path.string() + " is not a checkpoint");
    uint32_t dtype = 0;
    detail::read_bytes(in, &dtype, 4);
    if (dtype != detail::dtype_tag<T>())
        throw ValidationError("ParseError", "checkpoint precision does not match requested type");
    int32_t meta[5];
    detail::read_bytes(in, meta, sizeof(meta));
    ModelDims dims{meta[0], meta[1], meta[2], meta[3], meta[4]};
    dims.validate();
    uint64_t seed = 0;
    detail::read_bytes(in, &seed, 8);
    uint32_t count = 0;
    detail::read_bytes(in, &count, 4);

    ModelParams<T> params = init_params<T>(dims, 0);
    params.seed = seed;
    if (count != params.num_tensors())
        throw ValidationError("ParseError", "checkpoint tensor count mismatch");
    params.for_each([&](const std::string& name, Tensor<T>& t) {
        uint32_t len = 0;
        detail::read_bytes(in, &len, 4);
        std::string stored(len, '\0');
        detail::read_bytes(in, stored.data(), len);
        if (stored != name)
            throw ValidationError("ParseError", "checkpoint tensor order mismatch: " + stored);
        int64_t shape[2];
        detail::read_bytes(in, shape, sizeof(shape));
        if (shape[0] != t.rows() || shape[1] != t.cols())
            throw ValidationError("ParseError", "checkpoint tensor shape mismatch: " + stored);
        detail::read_bytes(in, t.data(), t.size() * sizeof(T));
    });
    return params;
}

}  // namespace lporec
