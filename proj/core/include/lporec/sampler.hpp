#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "lporec/catalog.hpp"
#include "lporec/losses.hpp"
#include "lporec/rng.hpp"

namespace lporec {

enum class SamplerKind : uint8_t { adaptive_gumbel, topk_select, uniform_random };

inline const char* sampler_kind_name(SamplerKind k) {
    switch (k) {
        case SamplerKind::adaptive_gumbel: return "adaptive_gumbel";
        case SamplerKind::topk_select: return "topk_select";
        case SamplerKind::uniform_random: return "uniform_random";
    }
    return "?";
}

inline SamplerKind parse_sampler_kind(const std::string& s) {
    if (s == "adaptive_gumbel") return SamplerKind::adaptive_gumbel;
    if (s == "topk_select") return SamplerKind::topk_select;
    if (s == "uniform_random") return SamplerKind::uniform_random;
    throw ValidationError("InvalidStrategy", "unknown sampler kind '" + s + "'");
}

struct SamplingStrategy {
    SamplerKind kind = SamplerKind::adaptive_gumbel;
    int k = 10;
    double gumbel_scale = 1.0;

    void validate() const {
        if (k < 1) throw ValidationError("InvalidSpec", "sampler.k must be >= 1");
        if (!(gumbel_scale > 0.0))
            throw ValidationError("InvalidSpec", "sampler.gumbel_scale must be > 0");
    }
};

// Head items minus the target, ascending id.
inline std::vector<ItemId> head_candidates(const Catalog& catalog, ItemId target) {
    std::vector<ItemId> cand;
    cand.reserve(catalog.head_items().size());
    for (ItemId it : catalog.head_items())
        if (it != target) cand.push_back(it);
    return cand;
}

// Softmax of current model scores over the candidate head items; the
// distribution adaptive sampling draws from.
inline std::vector<double> sampling_distribution(const std::vector<double>& scores,
                                                 const Catalog& catalog, ItemId target) {
    const std::vector<ItemId> cand = head_candidates(catalog, target);
    if (cand.empty()) throw ValidationError("NotEnoughCandidates", "no head candidates");
    double mx = scores.at(static_cast<size_t>(cand[0]));
    for (ItemId it : cand) mx = std::max(mx, scores.at(static_cast<size_t>(it)));
    std::vector<double> p(cand.size());
    double denom = 0.0;
    for (size_t i = 0; i < cand.size(); ++i) {
        p[i] = std::exp(scores[static_cast<size_t>(cand[i])] - mx);
        denom += p[i];
    }
    for (double& v : p) v /= denom;
    return p;
}

// Draws K distinct negatives from the head set (target excluded).
//   adaptive_gumbel: scores perturbed with Gumbel(0, scale) noise, top K;
//                    equivalent to K draws without replacement from the
//                    score softmax.
//   topk_select:     K largest raw scores, ties by ascending id.
//   uniform_random:  K distinct uniform candidates.
// Deterministic given the rng state. RngT needs uniform01/uniform_open01/below.
template <class RngT>
NegativeSet sample_negatives(const std::vector<double>& scores, const Catalog& catalog,
                             ItemId target, const SamplingStrategy& strategy, RngT& rng) {
    strategy.validate();
    std::vector<ItemId> cand = head_candidates(catalog, target);
    const size_t k = static_cast<size_t>(strategy.k);
    if (cand.size() < k)
        throw ValidationError("NotEnoughCandidates",
                              std::to_string(cand.size()) + " candidates for k=" + std::to_string(strategy.k));

    NegativeSet out;
    out.items.reserve(k);
    switch (strategy.kind) {
        case SamplerKind::adaptive_gumbel:
        case SamplerKind::topk_select: {
            std::vector<double> key(cand.size());
            for (size_t i = 0; i < cand.size(); ++i) {
                key[i] = scores.at(static_cast<size_t>(cand[i]));
                if (strategy.kind == SamplerKind::adaptive_gumbel)
                    key[i] += -strategy.gumbel_scale * std::log(-std::log(rng.uniform_open01()));
            }
            std::vector<size_t> order(cand.size());
            std::iota(order.begin(), order.end(), 0);
            std::partial_sort(order.begin(), order.begin() + static_cast<int64_t>(k), order.end(),
                              [&](size_t a, size_t b) {
                                  if (key[a] != key[b]) return key[a] > key[b];
                                  return cand[a] < cand[b];
                              });
            for (size_t i = 0; i < k; ++i) out.items.push_back(cand[order[i]]);
            break;
        }
        case SamplerKind::uniform_random: {
            for (size_t i = 0; i < k; ++i) {
                const size_t j = i + static_cast<size_t>(rng.below(cand.size() - i));
                std::swap(cand[i], cand[j]);
                out.items.push_back(cand[i]);
            }
            break;
        }
    }
    return out;
}

}  // namespace lporec
