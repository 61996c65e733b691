#pragma once

// End-to-end post-processing: decode -> collect limbs -> GOG -> filter,
// optionally preceded by ground-truth encoding.

#include <chrono>
#include <optional>
#include <span>
#include <vector>

#include "core.hpp"
#include "decoder.hpp"
#include "encoder.hpp"
#include "grouper.hpp"

namespace gog {

struct PipelineConfig {
    EncodeConfig encode;
    DecodeConfig decode;
    GroupConfig group;
    Skeleton skeleton = canonical_skeleton();
    Variant variant = Variant::standard;
};

/// Wall time per stage, milliseconds.
struct StageTimes {
    double peaks = 0.0;   // upsampling and local maxima
    double top_k = 0.0;
    double limbs = 0.0;
    double gog = 0.0;
    double filter = 0.0;

    double decode() const { return peaks + top_k; }
    double group() const { return limbs + gog + filter; }
    double total() const { return decode() + group(); }
};

struct GroundTruthTensors {
    HeatmapTensor heatmaps;
    GuidingOffsetField offsets;
    std::optional<RefinementOffsetField> refinement;
};

namespace detail {

class StageClock {
public:
    double lap()
    {
        const auto now = std::chrono::steady_clock::now();
        const double ms = std::chrono::duration<double, std::milli>(now - last_).count();
        last_ = now;
        return ms;
    }

private:
    std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

}  // namespace detail

inline GroundTruthTensors encode_ground_truth(std::span<const Person> persons, const GridSpec& spec,
                                              const PipelineConfig& cfg)
{
    EncodeConfig enc = cfg.encode;
    enc.variant = cfg.variant;
    GroundTruthTensors t{encode_heatmaps(persons, spec, enc),
                         encode_guiding_offsets(persons, cfg.skeleton, spec, enc), std::nullopt};
    if (refines(cfg.variant)) t.refinement = encode_refinement_offsets(persons, spec);
    return t;
}

/// Decodes keypoint candidates and groups them into filtered poses. When
/// `refinement` is given, keypoints come from the refinement decode.
inline std::vector<PoseSkeleton> estimate_poses(const HeatmapTensor& heatmaps,
                                                const GuidingOffsetField& offsets,
                                                const RefinementOffsetField* refinement,
                                                const PipelineConfig& cfg, int workers = 1,
                                                StageTimes* times = nullptr)
{
    detail::StageClock clock;
    StageTimes local;

    std::vector<KeypointCandidate> cands;
    if (refinement) {
        cands = decode_with_refinement(heatmaps, *refinement, cfg.decode);
        local.peaks = clock.lap();
    } else {
        auto peaks = find_peaks_sparse(heatmaps, cfg.decode, workers);
        local.peaks = clock.lap();
        cands = top_k_per_type(std::move(peaks), cfg.decode.top_k);
        assign_ids(cands);
        local.top_k = clock.lap();
    }

    auto limbs = collect_limbs(cands, offsets, cfg.skeleton, cfg.group);
    local.limbs = clock.lap();
    auto poses = gog_group(std::move(limbs), cfg.skeleton, cfg.group);
    local.gog = clock.lap();
    poses = score_and_filter(std::move(poses), cfg.group);
    local.filter = clock.lap();

    if (times) *times = local;
    return poses;
}

/// Ground-truth upper-bound path: encode the annotations, then decode and
/// group the resulting tensors.
inline std::vector<PoseSkeleton> estimate_from_ground_truth(std::span<const Person> persons,
                                                            const GridSpec& spec,
                                                            const PipelineConfig& cfg,
                                                            int workers = 1)
{
    const auto t = encode_ground_truth(persons, spec, cfg);
    return estimate_poses(t.heatmaps, t.offsets, t.refinement ? &*t.refinement : nullptr, cfg,
                          workers);
}

}  // namespace gog
