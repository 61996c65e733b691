#pragma once

// Ground-truth tensor generation: Gaussian keypoint heatmaps, guiding-offset
// fields and single-cell refinement offsets.

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "core.hpp"

namespace gog {

struct EncodeConfig {
    double sigma = 7.0;         // Gaussian kernel, input pixels
    int supervision_area = 7;   // side of the guiding-offset square, cells
    Variant variant = Variant::standard;
    double truncation = 3.0;    // responses beyond truncation*sigma are zero

    void validate() const
    {
        if (!(sigma > 0.0) || !std::isfinite(sigma))
            throw std::invalid_argument("encode config: sigma must be positive");
        if (supervision_area < 1 || supervision_area % 2 == 0)
            throw std::invalid_argument("encode config: supervision_area must be odd and >= 1");
        if (!(truncation > 0.0))
            throw std::invalid_argument("encode config: truncation must be positive");
    }
};

struct HeatmapTensor {
    GridSpec spec;
    Tensor3<float> values;  // [C, rows, cols]
};

struct GuidingOffsetField {
    GridSpec spec;
    Tensor3<float> values;        // [2P, rows, cols], (dx, dy) pairs per limb
    Tensor3<std::uint8_t> mask;   // [P, rows, cols]; empty for loaded predictions

    int num_limbs() const { return values.channels() / 2; }
};

struct RefinementOffsetField {
    GridSpec spec;
    Tensor3<float> values;        // [2C, rows, cols]
    Tensor3<std::uint8_t> mask;   // [C, rows, cols]
};

/// Round half up, per axis.
inline ImageCoord quantize(const ImageCoord& p)
{
    return {std::floor(p.x + 0.5), std::floor(p.y + 0.5)};
}

namespace detail {

inline void check_persons(std::span<const Person> persons, const GridSpec& spec)
{
    spec.validate();
    for (std::size_t i = 0; i < persons.size(); ++i) {
        const auto& person = persons[i];
        if (person.keypoints.size() != static_cast<std::size_t>(spec.num_types))
            throw std::invalid_argument("person " + std::to_string(i) + ": expected " +
                                        std::to_string(spec.num_types) + " keypoint slots");
        if (person.num_labeled() == 0)
            throw std::invalid_argument("person " + std::to_string(i) + " has no keypoints");
        for (const auto& k : person.keypoints) {
            if (!k) continue;
            if (!(k->x >= 0.0 && k->x < spec.width && k->y >= 0.0 && k->y < spec.height))
                throw std::invalid_argument("person " + std::to_string(i) +
                                            ": keypoint outside the image");
        }
    }
}

}  // namespace detail

/// Per-channel Gaussian responses; each cell holds the response to the
/// nearest keypoint of its type, i.e. the max over per-keypoint Gaussians.
inline HeatmapTensor encode_heatmaps(std::span<const Person> persons, const GridSpec& spec,
                                     const EncodeConfig& cfg)
{
    cfg.validate();
    detail::check_persons(persons, spec);

    const int cols = spec.grid_cols();
    const int rows = spec.grid_rows();
    HeatmapTensor out{spec, Tensor3<float>(spec.num_types, rows, cols, 0.0f)};

    const double radius = cfg.truncation * cfg.sigma;
    const double radius2 = radius * radius;
    const double inv_two_sigma2 = 1.0 / (2.0 * cfg.sigma * cfg.sigma);
    for (const auto& person : persons) {
        for (int c = 0; c < spec.num_types; ++c) {
            const auto& kp = person.keypoints[static_cast<std::size_t>(c)];
            if (!kp) continue;
            const ImageCoord p = quantizes(cfg.variant) ? quantize(*kp) : *kp;

            const auto lo = image_to_grid({p.x - radius, p.y - radius}, spec);
            const auto hi = image_to_grid({p.x + radius, p.y + radius}, spec);
            const int u0 = std::max(0, static_cast<int>(std::floor(lo.u)));
            const int v0 = std::max(0, static_cast<int>(std::floor(lo.v)));
            const int u1 = std::min(cols - 1, static_cast<int>(std::ceil(hi.u)));
            const int v1 = std::min(rows - 1, static_cast<int>(std::ceil(hi.v)));

            for (int v = v0; v <= v1; ++v) {
                const double dy = cell_center(v, spec.stride) - p.y;
                for (int u = u0; u <= u1; ++u) {
                    const double dx = cell_center(u, spec.stride) - p.x;
                    const double d2 = dx * dx + dy * dy;
                    if (d2 > radius2) continue;
                    const auto value = static_cast<float>(std::exp(-d2 * inv_two_sigma2));
                    float& cell = out.values(c, v, u);
                    cell = std::max(cell, value);
                }
            }
        }
    }
    return out;
}

/// Same as encode_heatmaps with every keypoint rounded (half up) to the
/// nearest integer image coordinate first.
inline HeatmapTensor encode_variant_qnt(std::span<const Person> persons, const GridSpec& spec,
                                        EncodeConfig cfg)
{
    cfg.variant = Variant::qnt;
    return encode_heatmaps(persons, spec, cfg);
}

/// Each supervised cell g in the square around J_from's nearest cell stores
/// J_to - g~(g). Where squares of different persons overlap, the person
/// whose J_from is nearer to the cell wins; ties go to the earlier person.
inline GuidingOffsetField encode_guiding_offsets(std::span<const Person> persons,
                                                 const Skeleton& skeleton, const GridSpec& spec,
                                                 const EncodeConfig& cfg)
{
    cfg.validate();
    detail::check_persons(persons, spec);
    if (skeleton.num_types() != spec.num_types)
        throw std::invalid_argument("guiding offsets: skeleton and grid disagree on type count");

    const int cols = spec.grid_cols();
    const int rows = spec.grid_rows();
    const int limbs = skeleton.num_limbs();
    GuidingOffsetField out{spec, Tensor3<float>(2 * limbs, rows, cols, 0.0f),
                           Tensor3<std::uint8_t>(limbs, rows, cols, 0)};

    const int half = cfg.supervision_area / 2;
    std::vector<double> owner(static_cast<std::size_t>(rows) * cols);

    for (int p = 0; p < limbs; ++p) {
        const Limb limb = skeleton[p];
        std::fill(owner.begin(), owner.end(), std::numeric_limits<double>::infinity());

        for (const auto& person : persons) {
            const auto& from = person.keypoints[static_cast<std::size_t>(limb.from)];
            const auto& to = person.keypoints[static_cast<std::size_t>(limb.to)];
            if (!from || !to) continue;

            const auto [cu, cv] = nearest_cell_clamped(*from, spec);
            for (int v = std::max(0, cv - half); v <= std::min(rows - 1, cv + half); ++v) {
                for (int u = std::max(0, cu - half); u <= std::min(cols - 1, cu + half); ++u) {
                    const ImageCoord g{cell_center(u, spec.stride), cell_center(v, spec.stride)};
                    const double dx = g.x - from->x;
                    const double dy = g.y - from->y;
                    const double d2 = dx * dx + dy * dy;
                    double& best = owner[static_cast<std::size_t>(v) * cols + u];
                    if (!(d2 < best)) continue;
                    best = d2;
                    out.values(2 * p, v, u) = static_cast<float>(to->x - g.x);
                    out.values(2 * p + 1, v, u) = static_cast<float>(to->y - g.y);
                    out.mask(p, v, u) = 1;
                }
            }
        }
    }
    return out;
}

/// Residual (p - g~) stored at each keypoint's nearest cell only.
inline RefinementOffsetField encode_refinement_offsets(std::span<const Person> persons,
                                                       const GridSpec& spec)
{
    detail::check_persons(persons, spec);

    const int cols = spec.grid_cols();
    const int rows = spec.grid_rows();
    RefinementOffsetField out{spec, Tensor3<float>(2 * spec.num_types, rows, cols, 0.0f),
                              Tensor3<std::uint8_t>(spec.num_types, rows, cols, 0)};
    Tensor3<double> owner(spec.num_types, rows, cols, std::numeric_limits<double>::infinity());

    for (const auto& person : persons) {
        for (int c = 0; c < spec.num_types; ++c) {
            const auto& kp = person.keypoints[static_cast<std::size_t>(c)];
            if (!kp) continue;
            const auto [u, v] = nearest_cell_clamped(*kp, spec);
            const ImageCoord g{cell_center(u, spec.stride), cell_center(v, spec.stride)};
            const double d2 = (kp->x - g.x) * (kp->x - g.x) + (kp->y - g.y) * (kp->y - g.y);
            if (!(d2 < owner(c, v, u))) continue;
            owner(c, v, u) = d2;
            out.values(2 * c, v, u) = static_cast<float>(kp->x - g.x);
            out.values(2 * c + 1, v, u) = static_cast<float>(kp->y - g.y);
            out.mask(c, v, u) = 1;
        }
    }
    return out;
}

}  // namespace gog
