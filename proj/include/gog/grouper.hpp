#pragma once

// Greedy offset-guided keypoint grouping (GOG).
//
// Adjacent-type candidate pairs are scored with the guiding offset read at
// the from-candidate, the best pairs per limb type are kept, and limbs are
// then accepted greedily into person skeletons. A candidate fills at most
// one slot in one pose.

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "core.hpp"
#include "decoder.hpp"
#include "encoder.hpp"

namespace gog {

enum class GreedyOrder {
    per_limb_type,  // sweep limb types in skeleton order
    global,         // all limbs score-descending regardless of type
};

inline std::string_view to_string(GreedyOrder o)
{
    return o == GreedyOrder::per_limb_type ? "per_limb_type" : "global";
}

inline GreedyOrder parse_greedy_order(std::string_view s)
{
    if (s == "per_limb_type") return GreedyOrder::per_limb_type;
    if (s == "global") return GreedyOrder::global;
    throw std::invalid_argument("unknown greedy order '" + std::string(s) + "'");
}

struct GroupConfig {
    double limb_score_threshold = 0.05;
    int min_keypoints = 3;
    double pose_score_threshold = 0.1;
    int top_k_limbs = 32;
    GreedyOrder order = GreedyOrder::per_limb_type;

    void validate() const
    {
        if (!(limb_score_threshold >= 0.0))
            throw std::invalid_argument("group config: limb_score_threshold must be >= 0");
        if (!(pose_score_threshold >= 0.0))
            throw std::invalid_argument("group config: pose_score_threshold must be >= 0");
        if (min_keypoints < 0)
            throw std::invalid_argument("group config: min_keypoints must be >= 0");
        if (top_k_limbs < 1) throw std::invalid_argument("group config: top_k_limbs must be >= 1");
    }
};

struct LimbCandidate {
    int limb = 0;
    KeypointCandidate from;
    KeypointCandidate to;
    double score = 0.0;
};

struct PoseSkeleton {
    std::vector<std::optional<KeypointCandidate>> slots;
    double pose_score = 0.0;

    int num_keypoints() const
    {
        return static_cast<int>(std::count_if(slots.begin(), slots.end(),
                                              [](const auto& s) { return s.has_value(); }));
    }

    double mean_score() const
    {
        double sum = 0.0;
        int n = 0;
        for (const auto& s : slots) {
            if (!s) continue;
            sum += s->score;
            ++n;
        }
        return n > 0 ? sum / n : 0.0;
    }
};

inline constexpr double kMinLimbLength = 1e-6;

/// s_from * s_to * exp(-guide_error / length), with length floored at 1e-6.
inline double connection_score(double from_score, double to_score, double guide_error,
                               double length)
{
    return from_score * to_score * std::exp(-guide_error / std::max(length, kMinLimbLength));
}

/// Position the guiding offset of `limb` points to from `from`: the nearest
/// grid cell's image position plus the offset stored there.
inline ImageCoord guided_position(const KeypointCandidate& from, int limb,
                                  const GuidingOffsetField& offsets)
{
    const auto& spec = offsets.spec;
    const auto g = image_to_grid(from.position, spec);
    const int u = nearest_index(g.u);
    const int v = nearest_index(g.v);
    if (u < 0 || u >= offsets.values.cols() || v < 0 || v >= offsets.values.rows())
        throw std::out_of_range("guiding offset lookup outside the grid");
    if (limb < 0 || 2 * limb + 1 >= offsets.values.channels())
        throw std::out_of_range("guiding offset field has no limb " + std::to_string(limb));
    return {cell_center(u, spec.stride) + offsets.values(2 * limb, v, u),
            cell_center(v, spec.stride) + offsets.values(2 * limb + 1, v, u)};
}

inline double connection_score(const KeypointCandidate& from, const KeypointCandidate& to,
                               int limb, const GuidingOffsetField& offsets)
{
    const ImageCoord guide = guided_position(from, limb, offsets);
    return connection_score(from.score, to.score, distance(guide, to.position),
                            distance(from.position, to.position));
}

namespace detail {

inline bool position_less(const ImageCoord& a, const ImageCoord& b)
{
    if (a.y != b.y) return a.y < b.y;
    return a.x < b.x;
}

/// Score-descending, ties by from position then to position.
inline bool limb_before(const LimbCandidate& a, const LimbCandidate& b)
{
    if (a.score != b.score) return a.score > b.score;
    if (a.from.position != b.from.position) return position_less(a.from.position, b.from.position);
    return position_less(a.to.position, b.to.position);
}

}  // namespace detail

/// Scores every from x to pair of each limb type, drops pairs below the
/// threshold and keeps the top_k_limbs best per type. Output is grouped by
/// limb type in skeleton order.
inline std::vector<LimbCandidate> collect_limbs(std::span<const KeypointCandidate> cands,
                                               const GuidingOffsetField& offsets,
                                               const Skeleton& skeleton, const GroupConfig& cfg)
{
    cfg.validate();
    if (offsets.num_limbs() != skeleton.num_limbs())
        throw std::invalid_argument("guiding offset field has " +
                                    std::to_string(offsets.num_limbs()) + " limbs, skeleton has " +
                                    std::to_string(skeleton.num_limbs()));

    std::vector<std::vector<const KeypointCandidate*>> by_type(
        static_cast<std::size_t>(skeleton.num_types()));
    for (const auto& c : cands) {
        if (c.type < 0 || c.type >= skeleton.num_types())
            throw std::invalid_argument("candidate type outside the skeleton");
        by_type[static_cast<std::size_t>(c.type)].push_back(&c);
    }

    std::vector<LimbCandidate> out;
    std::vector<LimbCandidate> scratch;
    for (int p = 0; p < skeleton.num_limbs(); ++p) {
        const Limb limb = skeleton[p];
        scratch.clear();
        for (const auto* from : by_type[static_cast<std::size_t>(limb.from)]) {
            for (const auto* to : by_type[static_cast<std::size_t>(limb.to)]) {
                const double s = connection_score(*from, *to, p, offsets);
                if (s >= cfg.limb_score_threshold) scratch.push_back({p, *from, *to, s});
            }
        }
        std::sort(scratch.begin(), scratch.end(), detail::limb_before);
        if (scratch.size() > static_cast<std::size_t>(cfg.top_k_limbs))
            scratch.resize(static_cast<std::size_t>(cfg.top_k_limbs));
        out.insert(out.end(), scratch.begin(), scratch.end());
    }
    return out;
}

/// Greedy assembly of limbs, in the given order, into skeletons.
///
/// For each limb: if neither endpoint is owned, start a pose; if one is,
/// attach the other when its slot is free; if both are owned by different
/// poses with disjoint slots, merge them; otherwise reject the limb.
/// Requires candidate ids (see assign_ids).
inline std::vector<PoseSkeleton> assemble_limbs(std::span<const LimbCandidate> ordered,
                                                int num_types)
{
    int max_id = -1;
    for (const auto& l : ordered) {
        if (l.from.id < 0 || l.to.id < 0)
            throw std::invalid_argument("grouping requires candidate ids");
        max_id = std::max({max_id, l.from.id, l.to.id});
    }

    std::vector<PoseSkeleton> poses;
    std::vector<char> alive;
    std::vector<int> owner(static_cast<std::size_t>(max_id + 1), -1);
    const auto slot = [](PoseSkeleton& p, int type) -> std::optional<KeypointCandidate>& {
        return p.slots[static_cast<std::size_t>(type)];
    };

    for (const auto& limb : ordered) {
        const auto& a = limb.from;
        const auto& b = limb.to;
        int& pa = owner[static_cast<std::size_t>(a.id)];
        int& pb = owner[static_cast<std::size_t>(b.id)];

        if (pa < 0 && pb < 0) {
            PoseSkeleton pose;
            pose.slots.resize(static_cast<std::size_t>(num_types));
            slot(pose, a.type) = a;
            slot(pose, b.type) = b;
            pa = pb = static_cast<int>(poses.size());
            poses.push_back(std::move(pose));
            alive.push_back(1);
        } else if (pa >= 0 && pb < 0) {
            auto& s = slot(poses[static_cast<std::size_t>(pa)], b.type);
            if (s) continue;
            s = b;
            pb = pa;
        } else if (pa < 0 && pb >= 0) {
            auto& s = slot(poses[static_cast<std::size_t>(pb)], a.type);
            if (s) continue;
            s = a;
            pa = pb;
        } else if (pa != pb) {
            auto& keep = poses[static_cast<std::size_t>(pa)];
            auto& gone = poses[static_cast<std::size_t>(pb)];
            bool disjoint = true;
            for (int t = 0; t < num_types && disjoint; ++t)
                disjoint = !(slot(keep, t) && slot(gone, t));
            if (!disjoint) continue;
            const int gone_index = pb;
            for (int t = 0; t < num_types; ++t) {
                if (!slot(gone, t)) continue;
                owner[static_cast<std::size_t>(slot(gone, t)->id)] = pa;
                slot(keep, t) = std::move(slot(gone, t));
                slot(gone, t).reset();
            }
            alive[static_cast<std::size_t>(gone_index)] = 0;
        }
    }

    std::vector<PoseSkeleton> out;
    for (std::size_t i = 0; i < poses.size(); ++i) {
        if (!alive[i]) continue;
        poses[i].pose_score = poses[i].mean_score();
        out.push_back(std::move(poses[i]));
    }
    return out;
}

/// GOG over limbs as produced by collect_limbs.
inline std::vector<PoseSkeleton> gog_group(std::vector<LimbCandidate> limbs,
                                           const Skeleton& skeleton, const GroupConfig& cfg)
{
    if (cfg.order == GreedyOrder::per_limb_type) {
        std::stable_sort(limbs.begin(), limbs.end(), [](const auto& a, const auto& b) {
            if (a.limb != b.limb) return a.limb < b.limb;
            return detail::limb_before(a, b);
        });
    } else {
        std::stable_sort(limbs.begin(), limbs.end(), [](const auto& a, const auto& b) {
            if (a.score != b.score) return a.score > b.score;
            if (a.limb != b.limb) return a.limb < b.limb;
            return detail::limb_before(a, b);
        });
    }
    return assemble_limbs(limbs, skeleton.num_types());
}

/// Recomputes pose scores, drops small or low-confidence poses and sorts by
/// score descending (stable).
inline std::vector<PoseSkeleton> score_and_filter(std::vector<PoseSkeleton> poses,
                                                  const GroupConfig& cfg)
{
    std::vector<PoseSkeleton> out;
    for (auto& pose : poses) {
        pose.pose_score = pose.mean_score();
        if (pose.num_keypoints() < cfg.min_keypoints) continue;
        if (pose.pose_score < cfg.pose_score_threshold) continue;
        out.push_back(std::move(pose));
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const auto& a, const auto& b) { return a.pose_score > b.pose_score; });
    return out;
}

}  // namespace gog
