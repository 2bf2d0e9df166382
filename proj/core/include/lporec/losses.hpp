#pragma once

#include <algorithm>
#include <cmath>
#include <unordered_set>
#include <vector>

#include "lporec/catalog.hpp"
#include "lporec/graph.hpp"

namespace lporec {

struct LossConfig {
    double lambda = 0.5;   // LPO weight in the joint objective
    double tau = 0.1;      // temperature; smaller sharpens the candidate softmax
    int k = 10;            // negatives per example
    double alpha_t = 1.0;  // reweight logit for tail targets
    double alpha_h = 0.0;  // reweight logit for head targets
    double dpo_beta = 1.0;

    void validate() const {
        if (!(tau > 0.0)) throw ValidationError("TemperatureNonPositive", "tau must be > 0");
        if (k < 0) throw ValidationError("InvalidSpec", "k must be >= 0");
        if (lambda < 0.0) throw ValidationError("InvalidSpec", "lambda must be >= 0");
        if (!(dpo_beta > 0.0)) throw ValidationError("InvalidSpec", "dpo_beta must be > 0");
    }
};

// Ordered list of distinct negative item ids, never containing the target.
struct NegativeSet {
    std::vector<ItemId> items;

    void validate_against(ItemId target) const {
        std::unordered_set<ItemId> seen;
        for (ItemId it : items) {
            if (it == target) throw ValidationError("TargetInNegatives", "negative equals target");
            if (!seen.insert(it).second)
                throw ValidationError("DuplicateNegative", "duplicate negative " + std::to_string(it));
        }
    }
};

// log(sum(exp(row))) of a 1 x n node, max-shifted with a host-side constant
// so exp never overflows; the shift is grad-free and cancels analytically.
template <class T>
NodeId logsumexp_row(Graph<T>& g, NodeId row) {
    const Tensor<T>& v = g.value(row);
    T mx = v.raw()[0];
    for (T x : v.raw()) mx = std::max(mx, x);
    const NodeId shifted = g.add(row, g.constant_scalar(-mx));
    const NodeId lse = g.log(g.reduce_sum(g.exp(shifted)));
    return g.add(lse, g.constant_scalar(mx));
}

// Full-catalog cross entropy: -log softmax(scores)[target].
template <class T>
NodeId ce_loss(Graph<T>& g, NodeId scores, ItemId target) {
    const Tensor<T>& v = g.value(scores);
    if (v.rows() != 1) throw ValidationError("ShapeMismatch", "ce_loss: scores must be 1 x n");
    if (target < 0 || target >= v.cols())
        throw ValidationError("InvalidTarget", "target " + std::to_string(target) +
                                                   " outside catalog of " + std::to_string(v.cols()));
    const NodeId s_w = g.index_select(scores, 1, {target});
    return g.add(logsumexp_row(g, scores), g.scale(s_w, T(-1)));
}

// Listwise preference loss over the target plus K sampled negatives:
// -log( exp(s_w/tau) / (exp(s_w/tau) + sum_l exp(s_l/tau)) ).
// An empty negative set yields exactly zero.
template <class T>
NodeId lpo_loss(Graph<T>& g, NodeId scores, ItemId target, const NegativeSet& negatives,
                double tau) {
    if (!(tau > 0.0)) throw ValidationError("TemperatureNonPositive", "tau must be > 0");
    negatives.validate_against(target);
    const Tensor<T>& v = g.value(scores);
    if (v.rows() != 1) throw ValidationError("ShapeMismatch", "lpo_loss: scores must be 1 x n");
    if (target < 0 || target >= v.cols())
        throw ValidationError("InvalidTarget", "target outside catalog");
    if (negatives.items.empty()) return g.constant_scalar(T(0));

    std::vector<int32_t> cand;
    cand.reserve(negatives.items.size() + 1);
    cand.push_back(target);
    for (ItemId it : negatives.items) {
        if (it < 0 || it >= v.cols()) throw ValidationError("OutOfRange", "negative outside catalog");
        cand.push_back(it);
    }
    const NodeId scaled = g.scale(g.index_select(scores, 1, std::move(cand)), static_cast<T>(1.0 / tau));
    const NodeId s_w = g.index_select(scaled, 1, {0});
    return g.add(logsumexp_row(g, scaled), g.scale(s_w, T(-1)));
}

// DPO on log-probability margins: -log sigma(beta*(dw - dl)) with
// dw = policy_w - ref_w, dl = policy_l - ref_l. Built as softplus via
// logsumexp so saturated margins stay finite. ref_* are frozen scalars.
template <class T>
NodeId dpo_loss(Graph<T>& g, NodeId policy_w, NodeId policy_l, double ref_w, double ref_l,
                double beta) {
    if (!(beta > 0.0)) throw ValidationError("InvalidSpec", "dpo_beta must be > 0");
    if (!std::isfinite(ref_w) || !std::isfinite(ref_l))
        throw ValidationError("NonFinite", "reference log-probabilities must be finite");
    if (g.value(policy_w).size() != 1 || g.value(policy_l).size() != 1)
        throw ValidationError("ShapeMismatch", "dpo_loss operates on scalars");
    if (!g.value(policy_w).all_finite() || !g.value(policy_l).all_finite())
        throw ValidationError("NonFinite", "policy log-probabilities must be finite");
    // z = beta * ((policy_w - ref_w) - (policy_l - ref_l)); loss = log(1 + exp(-z))
    NodeId margin = g.add(policy_w, g.scale(policy_l, T(-1)));
    margin = g.add(margin, g.constant_scalar(static_cast<T>(ref_l - ref_w)));
    const NodeId neg_z = g.scale(margin, static_cast<T>(-beta));
    return logsumexp_row(g, g.concat({g.constant_scalar(T(0)), neg_z}, 1));
}

// d L_LPO / d s_w in closed form: (softmax over {w} u negs of s/tau)[w] - 1,
// scaled by 1/tau. Mirrors what backward() must produce on the target score.
inline double lpo_grad_wrt_target(const std::vector<double>& scores, ItemId target,
                                  const NegativeSet& negatives, double tau) {
    if (!(tau > 0.0)) throw ValidationError("TemperatureNonPositive", "tau must be > 0");
    negatives.validate_against(target);
    const auto at = [&](ItemId i) {
        if (i < 0 || static_cast<size_t>(i) >= scores.size())
            throw ValidationError("OutOfRange", "score index out of range");
        return scores[static_cast<size_t>(i)] / tau;
    };
    double mx = at(target);
    for (ItemId it : negatives.items) mx = std::max(mx, at(it));
    double denom = std::exp(at(target) - mx);
    for (ItemId it : negatives.items) denom += std::exp(at(it) - mx);
    const double p_w = std::exp(at(target) - mx) / denom;
    return (p_w - 1.0) / tau;
}

inline double bt_pairwise_prob(double r_w, double r_l) {
    return 1.0 / (1.0 + std::exp(r_l - r_w));
}

inline double bt_listwise_prob(double r_w, const std::vector<double>& r_list) {
    double p = 1.0;
    for (double r : r_list) p *= bt_pairwise_prob(r_w, r);
    return p;
}

// Batch softmax weights: omega_i = exp(alpha_i) / sum_j exp(alpha_j) with
// alpha_i = alpha_t for tail targets, alpha_h for head targets.
inline std::vector<double> reweight(const std::vector<ItemId>& batch_targets, const Catalog& catalog,
                                    double alpha_t, double alpha_h) {
    if (batch_targets.empty()) throw ValidationError("EmptyBatch", "reweight: empty batch");
    std::vector<double> logits(batch_targets.size());
    for (size_t i = 0; i < batch_targets.size(); ++i)
        logits[i] = catalog.is_tail(batch_targets[i]) ? alpha_t : alpha_h;
    const double mx = *std::max_element(logits.begin(), logits.end());
    double denom = 0.0;
    for (double a : logits) denom += std::exp(a - mx);
    std::vector<double> w(logits.size());
    for (size_t i = 0; i < logits.size(); ++i) w[i] = std::exp(logits[i] - mx) / denom;
    return w;
}

template <class T>
struct ExampleLossInput {
    NodeId scores = -1;  // 1 x num_items
    ItemId target = 0;
    NegativeSet negatives;
};

// Joint objective: sum_i omega_i * (ce_i + lambda * lpo_i), the scalar the
// trainer minimizes.
template <class T>
NodeId joint_loss(Graph<T>& g, const std::vector<ExampleLossInput<T>>& batch, const Catalog& catalog,
                  const LossConfig& config) {
    config.validate();
    if (batch.empty()) throw ValidationError("EmptyBatch", "joint_loss: empty batch");
    std::vector<ItemId> targets;
    targets.reserve(batch.size());
    for (const auto& ex : batch) targets.push_back(ex.target);
    const std::vector<double> omega = reweight(targets, catalog, config.alpha_t, config.alpha_h);

    std::vector<NodeId> terms;
    terms.reserve(batch.size());
    for (size_t i = 0; i < batch.size(); ++i) {
        NodeId term = ce_loss(g, batch[i].scores, batch[i].target);
        if (config.lambda > 0.0) {
            const NodeId lpo = lpo_loss(g, batch[i].scores, batch[i].target, batch[i].negatives,
                                        config.tau);
            term = g.add(term, g.scale(lpo, static_cast<T>(config.lambda)));
        }
        terms.push_back(g.scale(term, static_cast<T>(omega[i])));
    }
    return g.reduce_sum(g.concat(terms, 1));
}

}  // namespace lporec
