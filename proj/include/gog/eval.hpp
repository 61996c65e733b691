#pragma once

// Evaluation harness: OKS and COCO-style AP, an exhaustive per-limb
// assignment oracle for checking GOG, synthetic scenes, and the
// ground-truth upper-bound run.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "core.hpp"
#include "decoder.hpp"
#include "encoder.hpp"
#include "grouper.hpp"
#include "parallel.hpp"
#include "pipeline.hpp"

namespace gog {

/// Standard COCO per-keypoint falloff constants.
inline constexpr std::array<double, kCocoKeypoints> kCocoKappas = {
    0.026, 0.025, 0.025, 0.035, 0.035, 0.079, 0.079, 0.072, 0.072,
    0.062, 0.062, 0.107, 0.107, 0.087, 0.087, 0.089, 0.089};

struct OksParams {
    std::vector<double> kappas{kCocoKappas.begin(), kCocoKappas.end()};
    std::vector<double> thresholds{0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95};

    void validate() const
    {
        if (kappas.empty()) throw std::invalid_argument("oks: no falloff constants");
        for (double k : kappas)
            if (!(k > 0.0)) throw std::invalid_argument("oks: falloff constants must be positive");
        if (thresholds.empty()) throw std::invalid_argument("oks: no thresholds");
        for (double t : thresholds)
            if (!(t > 0.0 && t < 1.0)) throw std::invalid_argument("oks: thresholds must lie in (0, 1)");
    }
};

/// Mean over labeled ground-truth keypoints of exp(-d^2 / (2 s^2 k_c^2)).
/// Keypoints missing from the prediction contribute zero.
inline double oks(const Person& gt, const PoseSkeleton& pred, const OksParams& params)
{
    if (!(gt.scale > 0.0)) throw std::invalid_argument("oks: person scale must be positive");
    if (gt.keypoints.size() > params.kappas.size())
        throw std::invalid_argument("oks: more keypoint types than falloff constants");
    const double s2 = gt.scale * gt.scale;
    double sum = 0.0;
    int labeled = 0;
    for (std::size_t c = 0; c < gt.keypoints.size(); ++c) {
        if (!gt.keypoints[c]) continue;
        ++labeled;
        if (c >= pred.slots.size() || !pred.slots[c]) continue;
        const auto& p = pred.slots[c]->position;
        const double dx = p.x - gt.keypoints[c]->x;
        const double dy = p.y - gt.keypoints[c]->y;
        const double k = params.kappas[c];
        sum += std::exp(-(dx * dx + dy * dy) / (2.0 * s2 * k * k));
    }
    if (labeled == 0) throw std::invalid_argument("oks: ground truth has no labeled keypoints");
    return sum / labeled;
}

struct ApReport {
    double ap = 0.0;
    std::vector<double> thresholds;
    std::vector<double> per_threshold;
};

/// COCO-style AP. Per OKS threshold, predictions of all images are visited
/// score-descending (ties by image then list order) and each is matched to
/// the unmatched ground truth of its image with the highest OKS; a match
/// needs OKS >= threshold. AP is the area under the precision envelope.
/// Ground truths without labeled keypoints are ignored.
inline ApReport average_precision(std::span<const std::vector<Person>> gt,
                                  std::span<const std::vector<PoseSkeleton>> pred,
                                  const OksParams& params)
{
    params.validate();
    if (gt.size() != pred.size())
        throw std::invalid_argument("average_precision: image count mismatch");

    struct Ref {
        std::size_t image;
        std::size_t pose;
        double score;
    };
    std::vector<Ref> order;
    std::size_t total_gt = 0;
    std::vector<std::vector<std::vector<double>>> sims(gt.size());  // [image][pred][gt]
    for (std::size_t i = 0; i < gt.size(); ++i) {
        std::vector<std::size_t> valid;
        for (std::size_t g = 0; g < gt[i].size(); ++g)
            if (gt[i][g].num_labeled() > 0) valid.push_back(g);
        total_gt += valid.size();
        sims[i].resize(pred[i].size());
        for (std::size_t p = 0; p < pred[i].size(); ++p) {
            order.push_back({i, p, pred[i][p].pose_score});
            for (std::size_t g = 0; g < gt[i].size(); ++g)
                sims[i][p].push_back(gt[i][g].num_labeled() > 0 ? oks(gt[i][g], pred[i][p], params)
                                                                : -1.0);
        }
    }
    std::stable_sort(order.begin(), order.end(),
                     [](const Ref& a, const Ref& b) { return a.score > b.score; });

    ApReport report;
    report.thresholds = params.thresholds;
    for (double thr : params.thresholds) {
        double ap = 0.0;
        if (total_gt > 0) {
            std::vector<std::vector<char>> used(gt.size());
            for (std::size_t i = 0; i < gt.size(); ++i) used[i].assign(gt[i].size(), 0);

            std::vector<char> hit;
            hit.reserve(order.size());
            for (const auto& ref : order) {
                const auto& row = sims[ref.image][ref.pose];
                int best = -1;
                double best_sim = thr;
                for (std::size_t g = 0; g < row.size(); ++g) {
                    if (used[ref.image][g] || row[g] < 0.0) continue;
                    if (row[g] >= best_sim && (best < 0 || row[g] > best_sim)) {
                        best = static_cast<int>(g);
                        best_sim = row[g];
                    }
                }
                if (best >= 0) used[ref.image][static_cast<std::size_t>(best)] = 1;
                hit.push_back(best >= 0 ? 1 : 0);
            }

            // precision envelope, integrated over recall steps
            std::vector<double> precision(hit.size());
            std::vector<double> recall(hit.size());
            double tp = 0.0;
            for (std::size_t n = 0; n < hit.size(); ++n) {
                tp += hit[n];
                precision[n] = tp / static_cast<double>(n + 1);
                recall[n] = tp / static_cast<double>(total_gt);
            }
            for (std::size_t n = hit.size(); n-- > 1;)
                precision[n - 1] = std::max(precision[n - 1], precision[n]);
            double prev_recall = 0.0;
            for (std::size_t n = 0; n < hit.size(); ++n) {
                ap += (recall[n] - prev_recall) * precision[n];
                prev_recall = recall[n];
            }
        }
        report.per_threshold.push_back(ap);
    }
    double sum = 0.0;
    for (double v : report.per_threshold) sum += v;
    report.ap = sum / static_cast<double>(report.per_threshold.size());
    return report;
}

inline constexpr int kOracleMaxPerType = 6;

/// Globally optimal per-limb grouping: for each limb type, the one-to-one
/// matching between from- and to-candidates maximizing the total connection
/// score (pairs below the limb threshold are not allowed) is found by
/// exhaustive enumeration, then the matched limbs are assembled like GOG.
inline std::vector<PoseSkeleton> oracle_group(std::span<const KeypointCandidate> cands,
                                              const GuidingOffsetField& offsets,
                                              const Skeleton& skeleton, const GroupConfig& cfg)
{
    cfg.validate();
    std::vector<std::vector<const KeypointCandidate*>> by_type(
        static_cast<std::size_t>(skeleton.num_types()));
    for (const auto& c : cands) {
        if (c.type < 0 || c.type >= skeleton.num_types())
            throw std::invalid_argument("candidate type outside the skeleton");
        by_type[static_cast<std::size_t>(c.type)].push_back(&c);
    }
    for (const auto& list : by_type)
        if (list.size() > static_cast<std::size_t>(kOracleMaxPerType))
            throw std::invalid_argument("oracle_group: more than " +
                                        std::to_string(kOracleMaxPerType) +
                                        " candidates of one type");

    std::vector<LimbCandidate> matched;
    for (int p = 0; p < skeleton.num_limbs(); ++p) {
        const auto& froms = by_type[static_cast<std::size_t>(skeleton[p].from)];
        const auto& tos = by_type[static_cast<std::size_t>(skeleton[p].to)];
        const std::size_t nf = froms.size();
        const std::size_t nt = tos.size();

        std::vector<double> score(nf * nt, -1.0);
        for (std::size_t i = 0; i < nf; ++i)
            for (std::size_t j = 0; j < nt; ++j) {
                const double s = connection_score(*froms[i], *tos[j], p, offsets);
                if (s >= cfg.limb_score_threshold) score[i * nt + j] = s;
            }

        std::vector<int> current(nf, -1);
        std::vector<int> best(nf, -1);
        std::vector<char> taken(nt, 0);
        double best_total = -1.0;
        std::function<void(std::size_t, double)> search = [&](std::size_t i, double total) {
            if (i == nf) {
                if (total > best_total) {
                    best_total = total;
                    best = current;
                }
                return;
            }
            for (std::size_t j = 0; j < nt; ++j) {
                if (taken[j] || score[i * nt + j] < 0.0) continue;
                taken[j] = 1;
                current[i] = static_cast<int>(j);
                search(i + 1, total + score[i * nt + j]);
                taken[j] = 0;
            }
            current[i] = -1;
            search(i + 1, total);
        };
        search(0, 0.0);

        std::vector<LimbCandidate> limbs;
        for (std::size_t i = 0; i < nf; ++i) {
            if (best[i] < 0) continue;
            const auto j = static_cast<std::size_t>(best[i]);
            limbs.push_back({p, *froms[i], *tos[j], score[i * nt + j]});
        }
        std::sort(limbs.begin(), limbs.end(), detail::limb_before);
        matched.insert(matched.end(), limbs.begin(), limbs.end());
    }
    return assemble_limbs(matched, skeleton.num_types());
}

/// Candidate ids per pose, each sorted, poses sorted: an order-free
/// description of a grouping.
inline std::vector<std::vector<int>> grouping_signature(std::span<const PoseSkeleton> poses)
{
    std::vector<std::vector<int>> sig;
    for (const auto& pose : poses) {
        std::vector<int> ids;
        for (const auto& s : pose.slots)
            if (s) ids.push_back(s->id);
        std::sort(ids.begin(), ids.end());
        sig.push_back(std::move(ids));
    }
    std::sort(sig.begin(), sig.end());
    return sig;
}

// Synthetic scenes ---------------------------------------------------------

/// Upright template person, unit height, centered near the origin; x to
/// the person's left, y down. Shoulder width is 0.25 of the height.
inline constexpr std::array<ImageCoord, kCocoKeypoints> kTemplatePose = {{
    {0.00, -0.42},                  // nose
    {0.03, -0.45},  {-0.03, -0.45},  // eyes
    {0.07, -0.43},  {-0.07, -0.43},  // ears
    {0.125, -0.30}, {-0.125, -0.30},  // shoulders
    {0.17, -0.13},  {-0.17, -0.13},  // elbows
    {0.19, 0.02},   {-0.19, 0.02},   // wrists
    {0.09, 0.05},   {-0.09, 0.05},   // hips
    {0.10, 0.27},   {-0.10, 0.27},   // knees
    {0.11, 0.48},   {-0.11, 0.48},   // ankles
}};

struct SceneOptions {
    double min_height = 80.0;
    double max_height = 140.0;
    double max_rotation_deg = 20.0;
    double jitter = 1.5;
    double margin = 2.0;
    bool integer_coords = true;
    int tries_per_person = 500;
    int restarts = 100;
};

struct SyntheticScene {
    std::vector<Person> persons;
    GridSpec spec;
    double separation = 0.0;
    std::uint64_t seed = 0;

    AnnotatedImage to_image(long long id) const { return {id, spec.width, spec.height, persons}; }
};

inline ImageCoord centroid(const Person& p)
{
    ImageCoord c;
    int n = 0;
    for (const auto& k : p.keypoints) {
        if (!k) continue;
        c.x += k->x;
        c.y += k->y;
        ++n;
    }
    if (n > 0) {
        c.x /= n;
        c.y /= n;
    }
    return c;
}

/// Scale from the keypoint bounding box: sqrt(width * height), floored at 1.
inline double bbox_scale(const Person& p)
{
    double x0 = std::numeric_limits<double>::infinity(), y0 = x0;
    double x1 = -x0, y1 = -x0;
    for (const auto& k : p.keypoints) {
        if (!k) continue;
        x0 = std::min(x0, k->x);
        x1 = std::max(x1, k->x);
        y0 = std::min(y0, k->y);
        y1 = std::max(y1, k->y);
    }
    if (x1 < x0) return 1.0;
    return std::max(1.0, std::sqrt((x1 - x0) * (y1 - y0)));
}

/// Persons drawn from the template with random height, rotation, position
/// and per-keypoint jitter; pairwise centroid distance >= separation.
inline SyntheticScene generate_scene(int num_persons, const GridSpec& spec, double separation,
                                     std::uint64_t seed, const SceneOptions& opts = {})
{
    spec.validate();
    if (num_persons < 1) throw std::invalid_argument("generate_scene: need at least one person");
    if (spec.num_types != kCocoKeypoints)
        throw std::invalid_argument("generate_scene: template has 17 keypoint types");

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
    const double lo_x = opts.margin, hi_x = spec.width - 1.0 - opts.margin;
    const double lo_y = opts.margin, hi_y = spec.height - 1.0 - opts.margin;

    const auto draw_person = [&]() -> std::optional<Person> {
        const double h = uniform(opts.min_height, opts.max_height);
        const double theta = uniform(-opts.max_rotation_deg, opts.max_rotation_deg) *
                             std::numbers::pi / 180.0;
        const ImageCoord center{uniform(lo_x, hi_x), uniform(lo_y, hi_y)};
        const double cs = std::cos(theta), sn = std::sin(theta);
        Person p;
        p.keypoints.resize(kCocoKeypoints);
        for (int c = 0; c < kCocoKeypoints; ++c) {
            const auto& t = kTemplatePose[static_cast<std::size_t>(c)];
            double x = center.x + h * (cs * t.x - sn * t.y) + uniform(-opts.jitter, opts.jitter);
            double y = center.y + h * (sn * t.x + cs * t.y) + uniform(-opts.jitter, opts.jitter);
            if (opts.integer_coords) {
                x = std::round(x);
                y = std::round(y);
            }
            if (x < lo_x || x > hi_x || y < lo_y || y > hi_y) return std::nullopt;
            p.keypoints[static_cast<std::size_t>(c)] = ImageCoord{x, y};
        }
        p.scale = bbox_scale(p);
        return p;
    };

    for (int restart = 0; restart < opts.restarts; ++restart) {
        SyntheticScene scene{{}, spec, separation, seed};
        for (int i = 0; i < num_persons; ++i) {
            bool placed = false;
            for (int t = 0; t < opts.tries_per_person && !placed; ++t) {
                auto p = draw_person();
                if (!p) continue;
                const auto c = centroid(*p);
                placed = std::all_of(scene.persons.begin(), scene.persons.end(),
                                     [&](const Person& q) { return distance(c, centroid(q)) >= separation; });
                if (placed) scene.persons.push_back(std::move(*p));
            }
            if (!placed) break;
        }
        if (static_cast<int>(scene.persons.size()) == num_persons) return scene;
    }
    throw std::runtime_error("generate_scene: cannot place " + std::to_string(num_persons) +
                             " persons with separation " + std::to_string(separation));
}

/// Smallest distance between keypoints of two different persons.
inline double min_interperson_distance(std::span<const Person> persons)
{
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < persons.size(); ++a)
        for (std::size_t b = a + 1; b < persons.size(); ++b)
            for (const auto& ka : persons[a].keypoints)
                for (const auto& kb : persons[b].keypoints)
                    if (ka && kb) best = std::min(best, distance(*ka, *kb));
    return best;
}

/// Longest annotated limb over all persons.
inline double max_limb_length(std::span<const Person> persons, const Skeleton& skeleton)
{
    double best = 0.0;
    for (const auto& p : persons)
        for (const auto& l : skeleton.limbs()) {
            const auto& a = p.keypoints[static_cast<std::size_t>(l.from)];
            const auto& b = p.keypoints[static_cast<std::size_t>(l.to)];
            if (a && b) best = std::max(best, distance(*a, *b));
        }
    return best;
}

/// Adds N(0, sigma) noise; optionally clamps the result.
inline void add_noise(std::span<float> values, double sigma, std::uint64_t seed,
                      std::optional<std::pair<float, float>> clamp = std::nullopt)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, sigma);
    for (auto& v : values) {
        v = static_cast<float>(v + noise(rng));
        if (clamp) v = std::clamp(v, clamp->first, clamp->second);
    }
}

// Upper bound ----------------------------------------------------------------

struct UpperBoundReport {
    ApReport ap;
    double seconds = 0.0;
    std::vector<std::vector<PoseSkeleton>> poses;  // per image, input order
};

/// Encodes ground truth at `stride`, decodes, groups and scores against the
/// same annotations. Images run in parallel; results keep input order.
inline UpperBoundReport upper_bound_run(std::span<const AnnotatedImage> images, int stride,
                                        const PipelineConfig& cfg, const OksParams& oks_params,
                                        int workers = 1)
{
    const auto start = std::chrono::steady_clock::now();
    UpperBoundReport report;
    report.poses.resize(images.size());
    parallel_for(static_cast<int>(images.size()), workers, [&](int, int i) {
        const auto& img = images[static_cast<std::size_t>(i)];
        const GridSpec spec{img.width, img.height, stride, cfg.skeleton.num_types()};
        report.poses[static_cast<std::size_t>(i)] =
            img.persons.empty() ? std::vector<PoseSkeleton>{}
                                : estimate_from_ground_truth(img.persons, spec, cfg);
    });

    std::vector<std::vector<Person>> gt;
    gt.reserve(images.size());
    for (const auto& img : images) gt.push_back(img.persons);
    report.ap = average_precision(gt, report.poses, oks_params);
    report.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

}  // namespace gog
