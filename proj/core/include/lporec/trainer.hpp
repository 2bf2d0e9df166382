#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "lporec/eval.hpp"
#include "lporec/finite_diff.hpp"
#include "lporec/losses.hpp"
#include "lporec/model.hpp"
#include "lporec/sampler.hpp"

namespace lporec {

enum class LossKind : uint8_t { ce, ce_lpo, dpo };

inline const char* loss_kind_name(LossKind k) {
    switch (k) {
        case LossKind::ce: return "ce";
        case LossKind::ce_lpo: return "ce_lpo";
        case LossKind::dpo: return "dpo";
    }
    return "?";
}

inline LossKind parse_loss_kind(const std::string& s) {
    if (s == "ce") return LossKind::ce;
    if (s == "ce_lpo") return LossKind::ce_lpo;
    if (s == "dpo") return LossKind::dpo;
    throw ValidationError("InvalidSpec", "unknown loss '" + s + "'");
}

struct TrainConfig {
    double lr = 5e-4;
    int epochs = 20;
    int batch_size = 128;
    double warmup_ratio = 0.1;
    double dropout_p = 0.2;
    uint64_t seed = 0;
    LossKind loss = LossKind::ce_lpo;
    LossConfig loss_config;
    SamplingStrategy sampler;
    double grad_clip = 0.0;  // global-norm clip, 0 disables
    int ref_epochs = 0;      // dpo reference pretraining; 0 means `epochs`

    void validate() const {
        if (!(lr > 0.0)) throw ValidationError("InvalidSpec", "lr must be > 0");
        if (epochs < 1) throw ValidationError("InvalidSpec", "epochs must be >= 1");
        if (batch_size < 1) throw ValidationError("InvalidSpec", "batch_size must be >= 1");
        if (warmup_ratio < 0.0 || warmup_ratio > 1.0)
            throw ValidationError("InvalidRatio", "warmup_ratio must be in [0,1]");
        if (dropout_p < 0.0 || dropout_p >= 1.0)
            throw ValidationError("InvalidSpec", "dropout_p must be in [0,1)");
        if (grad_clip < 0.0) throw ValidationError("InvalidSpec", "grad_clip must be >= 0");
        loss_config.validate();
        if (loss != LossKind::ce) sampler.validate();
    }
};

// Linear ramp 0 -> base_lr over the first ceil(warmup_ratio * total_steps)
// steps, then constant.
inline double lr_at(int64_t step, int64_t total_steps, double base_lr, double warmup_ratio) {
    if (warmup_ratio < 0.0 || warmup_ratio > 1.0)
        throw ValidationError("InvalidRatio", "warmup_ratio must be in [0,1]");
    if (step < 0 || total_steps < 0 || step > total_steps)
        throw ValidationError("InvalidRatio", "step must be in [0, total_steps]");
    const int64_t warmup_steps =
        static_cast<int64_t>(std::ceil(warmup_ratio * static_cast<double>(total_steps)));
    if (step >= warmup_steps) return base_lr;
    return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
}

template <class T>
struct AdamState {
    std::vector<Tensor<T>> m;
    std::vector<Tensor<T>> v;
    int64_t t = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    static AdamState like(const ModelParams<T>& params) {
        AdamState s;
        params.for_each([&](const std::string&, const Tensor<T>& p) {
            s.m.emplace_back(p.rows(), p.cols());
            s.v.emplace_back(p.rows(), p.cols());
        });
        return s;
    }
};

// Bias-corrected Adam update. `grads` follows ModelParams::for_each order.
// The padding embedding row is forced back to zero afterwards.
template <class T>
void adam_step(ModelParams<T>& params, const std::vector<const Tensor<T>*>& grads,
               AdamState<T>& state, double lr) {
    if (grads.size() != state.m.size())
        throw ValidationError("ShapeMismatch", "adam_step: gradient count mismatch");
    ++state.t;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    const T b1 = static_cast<T>(state.beta1), b2 = static_cast<T>(state.beta2);
    const T ib1 = static_cast<T>(1.0 - state.beta1), ib2 = static_cast<T>(1.0 - state.beta2);
    size_t idx = 0;
    params.for_each([&](const std::string& name, Tensor<T>& p) {
        const Tensor<T>& g = *grads[idx];
        if (!g.same_shape(p))
            throw ValidationError("ShapeMismatch", "adam_step: gradient shape mismatch for " + name);
        if (!g.all_finite())
            throw RuntimeFailure("NonFiniteGradient", "non-finite gradient in " + name);
        Tensor<T>& m = state.m[idx];
        Tensor<T>& v = state.v[idx];
        for (size_t i = 0; i < p.size(); ++i) {
            const T gi = g.raw()[i];
            m.raw()[i] = b1 * m.raw()[i] + ib1 * gi;
            v.raw()[i] = b2 * v.raw()[i] + ib2 * gi * gi;
            const double mhat = static_cast<double>(m.raw()[i]) / bc1;
            const double vhat = static_cast<double>(v.raw()[i]) / bc2;
            p.raw()[i] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + state.eps));
        }
        ++idx;
    });
    for (int c = 0; c < params.dims.d; ++c) params.item_embedding(params.dims.num_items, c) = T(0);
}

struct TrainHistory {
    struct Epoch {
        double mean_loss = 0.0;
        double val_hr10 = 0.0;
        double val_ndcg10 = 0.0;
        double seconds = 0.0;
    };
    std::vector<Epoch> epochs;
};

inline void save_history_csv(const std::filesystem::path& path, const TrainHistory& history) {
    std::ofstream out(path);
    if (!out) throw RuntimeFailure("IoError", "cannot write " + path.string());
    out << "epoch,loss,val_hr10,val_ndcg10,seconds\n";
    char buf[160];
    for (size_t e = 0; e < history.epochs.size(); ++e) {
        const auto& row = history.epochs[e];
        std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g,%.3f", e, row.mean_loss, row.val_hr10,
                      row.val_ndcg10, row.seconds);
        out << buf << '\n';
    }
}

template <class T>
struct TrainResult {
    ModelParams<T> params;  // after the final epoch
    ModelParams<T> best;    // best validation NDCG@10 checkpoint
    int best_epoch = 0;
    TrainHistory history;
};

// Test hook: called with the example indices of every mini-batch.
using BatchObserver = std::function<void(int epoch, const std::vector<size_t>&)>;

namespace detail {

// Per-example reference log-probabilities for DPO, computed outside the
// graph with the frozen reference parameters.
template <class T>
double log_softmax_at(const std::vector<double>& scores, ItemId item) {
    double mx = scores[0];
    for (double s : scores) mx = std::max(mx, s);
    double denom = 0.0;
    for (double s : scores) denom += std::exp(s - mx);
    return scores[static_cast<size_t>(item)] - mx - std::log(denom);
}

}  // namespace detail

template <class T>
TrainResult<T> train(const DatasetSplits& splits, ModelDims dims, const TrainConfig& config,
                     const std::filesystem::path& checkpoint_dir = {},
                     const ModelParams<T>* reference = nullptr,
                     const BatchObserver& observer = nullptr) {
    config.validate();
    if (splits.train.empty()) throw ValidationError("EmptyInput", "train: no training examples");
    if (dims.num_items == 0) dims.num_items = splits.catalog.num_items();
    if (dims.num_items != splits.catalog.num_items())
        throw ValidationError("InvalidSpec", "dims.num_items disagrees with the catalog");
    dims.validate();

    // DPO needs a frozen reference; pretrain one if the caller did not pass it
    ModelParams<T> owned_reference;
    if (config.loss == LossKind::dpo && reference == nullptr) {
        owned_reference = pretrain_reference<T>(splits, dims, config);
        reference = &owned_reference;
    }

    ModelParams<T> params = config.loss == LossKind::dpo
                                ? *reference  // policy starts at the reference
                                : init_params<T>(dims, config.seed);
    AdamState<T> adam = AdamState<T>::like(params);

    const size_t n = splits.train.size();
    const int64_t batches_per_epoch =
        static_cast<int64_t>((n + static_cast<size_t>(config.batch_size) - 1) /
                             static_cast<size_t>(config.batch_size));
    const int64_t total_steps = batches_per_epoch * config.epochs;

    TrainResult<T> result;
    result.best_epoch = -1;
    double best_ndcg = -1.0;
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});

    int64_t step = 0;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        Rng shuffle_rng(Rng::derive(config.seed, 1000 + static_cast<uint64_t>(epoch)));
        shuffle(order, shuffle_rng);

        double loss_sum = 0.0;
        int64_t batch_index = 0;
        for (size_t start = 0; start < n; start += static_cast<size_t>(config.batch_size)) {
            const size_t end = std::min(n, start + static_cast<size_t>(config.batch_size));
            std::vector<size_t> batch(order.begin() + static_cast<int64_t>(start),
                                      order.begin() + static_cast<int64_t>(end));
            if (observer) observer(epoch, batch);

            Rng dropout_rng(Rng::derive(config.seed, 2'000'000 + static_cast<uint64_t>(epoch) * 100'000 +
                                                          static_cast<uint64_t>(batch_index)));
            Rng sampler_rng(Rng::derive(config.seed, 3'000'000 + static_cast<uint64_t>(epoch) * 100'000 +
                                                          static_cast<uint64_t>(batch_index)));
            Graph<T> g(&dropout_rng);
            const ParamNodes<T> pn = register_params(g, params, true);

            std::vector<const std::vector<ItemId>*> histories;
            histories.reserve(batch.size());
            for (size_t bi : batch) histories.push_back(&splits.train[bi].history);
            const NodeId h_all = build_batch_hidden(g, pn, dims, histories, true, config.dropout_p);
            const NodeId scores_all = g.matmul(h_all, pn.real_items_t);  // batch x num_items
            // value() references go stale as loss nodes are appended; re-fetch
            const auto score_row = [&](size_t i) {
                const Tensor<T>& sv = g.value(scores_all);
                const T* row = sv.row_ptr(static_cast<int64_t>(i));
                return std::vector<double>(row, row + sv.cols());
            };

            NodeId loss_node = -1;
            if (config.loss == LossKind::dpo) {
                std::vector<ItemId> targets;
                std::vector<NodeId> terms;
                targets.reserve(batch.size());
                terms.reserve(batch.size());
                for (size_t i = 0; i < batch.size(); ++i) {
                    const SequenceExample& ex = splits.train[batch[i]];
                    const NegativeSet negs = sample_negatives(score_row(i), splits.catalog, ex.target,
                                                              config.sampler, sampler_rng);
                    const ItemId rejected = negs.items.front();

                    const Tensor<T> rh = encode(*reference, ex.history, false, sampler_rng);
                    const std::vector<double> rs = score_all(*reference, rh);
                    const double ref_w = detail::log_softmax_at<T>(rs, ex.target);
                    const double ref_l = detail::log_softmax_at<T>(rs, rejected);

                    const NodeId s = g.index_select(scores_all, 0, {static_cast<int32_t>(i)});
                    const NodeId lse = logsumexp_row(g, s);
                    const NodeId lp_w =
                        g.add(g.index_select(s, 1, {ex.target}), g.scale(lse, T(-1)));
                    const NodeId lp_l = g.add(g.index_select(s, 1, {rejected}), g.scale(lse, T(-1)));
                    terms.push_back(
                        dpo_loss(g, lp_w, lp_l, ref_w, ref_l, config.loss_config.dpo_beta));
                    targets.push_back(ex.target);
                }
                const std::vector<double> omega = reweight(targets, splits.catalog,
                                                           config.loss_config.alpha_t,
                                                           config.loss_config.alpha_h);
                for (size_t i = 0; i < terms.size(); ++i)
                    terms[i] = g.scale(terms[i], static_cast<T>(omega[i]));
                loss_node = g.reduce_sum(g.concat(terms, 1));
            } else {
                std::vector<ExampleLossInput<T>> inputs;
                inputs.reserve(batch.size());
                for (size_t i = 0; i < batch.size(); ++i) {
                    const SequenceExample& ex = splits.train[batch[i]];
                    ExampleLossInput<T> in;
                    in.target = ex.target;
                    in.scores = g.index_select(scores_all, 0, {static_cast<int32_t>(i)});
                    if (config.loss == LossKind::ce_lpo)
                        in.negatives = sample_negatives(score_row(i), splits.catalog, ex.target,
                                                        config.sampler, sampler_rng);
                    inputs.push_back(std::move(in));
                }
                LossConfig lc = config.loss_config;
                if (config.loss == LossKind::ce) lc.lambda = 0.0;
                loss_node = joint_loss(g, inputs, splits.catalog, lc);
            }

            const double loss_value = static_cast<double>(g.value(loss_node).item());
            if (!std::isfinite(loss_value))
                throw RuntimeFailure("NonFiniteLoss", "batch " + std::to_string(batch_index) +
                                                          " of epoch " + std::to_string(epoch));
            loss_sum += loss_value;
            g.backward(loss_node);

            std::vector<const Tensor<T>*> grads;
            grads.reserve(pn.ordered.size());
            for (NodeId id : pn.ordered) grads.push_back(&g.grad(id));

            std::vector<Tensor<T>> clipped;
            if (config.grad_clip > 0.0) {
                double sq = 0.0;
                for (const Tensor<T>* gt : grads)
                    for (T v : gt->raw()) sq += static_cast<double>(v) * static_cast<double>(v);
                const double norm = std::sqrt(sq);
                if (norm > config.grad_clip) {
                    const T scale_factor = static_cast<T>(config.grad_clip / norm);
                    clipped.reserve(grads.size());
                    for (const Tensor<T>* gt : grads) {
                        clipped.push_back(*gt);
                        for (T& v : clipped.back().raw()) v *= scale_factor;
                    }
                    for (size_t i = 0; i < grads.size(); ++i) grads[i] = &clipped[i];
                }
            }

            adam_step(params, grads, adam, lr_at(step, total_steps, config.lr, config.warmup_ratio));
            ++step;
            ++batch_index;
        }

        const MetricsReport val = evaluate(params, splits.validation, splits.catalog);
        TrainHistory::Epoch row;
        row.mean_loss = loss_sum / static_cast<double>(batch_index);
        row.val_hr10 = val.hr_at_cutoff(10);
        row.val_ndcg10 = val.ndcg_at_cutoff(10);
        row.seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.history.epochs.push_back(row);

        if (!checkpoint_dir.empty())
            save_checkpoint(checkpoint_dir / ("epoch" + std::to_string(epoch) + ".ckpt"), params);
        if (row.val_ndcg10 > best_ndcg) {
            best_ndcg = row.val_ndcg10;
            result.best = params;
            result.best_epoch = epoch;
        }
    }
    result.params = std::move(params);
    if (!checkpoint_dir.empty()) save_checkpoint(checkpoint_dir / "best.ckpt", result.best);
    return result;
}

// CE pretraining; returns the best validation NDCG@10 checkpoint, used as
// the frozen reference policy for DPO.
template <class T>
ModelParams<T> pretrain_reference(const DatasetSplits& splits, const ModelDims& dims,
                                  const TrainConfig& config) {
    TrainConfig ref_config = config;
    ref_config.loss = LossKind::ce;
    if (config.ref_epochs > 0) ref_config.epochs = config.ref_epochs;
    return train<T>(splits, dims, ref_config).best;
}

// The joint training objective as a differentiable function of the flat
// parameter vector (ModelParams::for_each order), with frozen negatives and
// dropout off. This is what the finite-difference harness probes.
struct BatchLossExample {
    std::vector<ItemId> history;
    ItemId target = 0;
    NegativeSet negatives;
};

inline std::vector<Tensor<double>> flatten_params(const ModelParams<double>& params) {
    std::vector<Tensor<double>> out;
    params.for_each([&](const std::string&, const Tensor<double>& t) { out.push_back(t); });
    return out;
}

inline void unflatten_params(ModelParams<double>& params, const std::vector<Tensor<double>>& flat) {
    size_t i = 0;
    params.for_each([&](const std::string&, Tensor<double>& t) { t = flat[i++]; });
}

inline DiffFn batch_loss_fn(const ModelDims& dims, std::vector<BatchLossExample> examples,
                            Catalog catalog, LossConfig loss_config) {
    return [dims, examples = std::move(examples), catalog = std::move(catalog),
            loss_config](const std::vector<Tensor<double>>& flat,
                         std::vector<Tensor<double>>* grads_out) -> double {
        ModelParams<double> params = init_params<double>(dims, 0);
        unflatten_params(params, flat);
        Graph<double> g;
        const ParamNodes<double> pn = register_params(g, params, grads_out != nullptr);
        std::vector<ExampleLossInput<double>> inputs;
        inputs.reserve(examples.size());
        for (const auto& ex : examples) {
            ExampleLossInput<double> in;
            in.target = ex.target;
            in.negatives = ex.negatives;
            in.scores = build_scores(g, pn, build_encoder(g, pn, dims, ex.history, false, 0.0));
            inputs.push_back(std::move(in));
        }
        const NodeId loss = joint_loss(g, inputs, catalog, loss_config);
        if (grads_out) {
            g.backward(loss);
            for (size_t i = 0; i < pn.ordered.size(); ++i) (*grads_out)[i] = g.grad(pn.ordered[i]);
        }
        return g.value(loss).item();
    };
}

}  // namespace lporec
