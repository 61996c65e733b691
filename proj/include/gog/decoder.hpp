#pragma once

// Keypoint decoding: stride-R heatmaps are upsampled to input resolution
// (bicubic or bilinear, grid values anchored at their pixel-center image
// positions) and local maxima become keypoint candidates.
//
// Two routes produce identical candidates: `upsample` + `find_peaks` works on
// the dense full-resolution map, while `find_peaks_sparse` only evaluates
// pixels whose interpolation support touches a grid value large enough to
// reach the detection threshold. Both evaluate a pixel with the same
// arithmetic, so their outputs are bit-identical.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "core.hpp"
#include "encoder.hpp"
#include "parallel.hpp"

namespace gog {

enum class Interpolation { bicubic, bilinear };

inline std::string_view to_string(Interpolation i)
{
    return i == Interpolation::bicubic ? "bicubic" : "bilinear";
}

inline Interpolation parse_interpolation(std::string_view s)
{
    if (s == "bicubic") return Interpolation::bicubic;
    if (s == "bilinear") return Interpolation::bilinear;
    throw std::invalid_argument("unknown interpolation '" + std::string(s) + "'");
}

struct DecodeConfig {
    Interpolation interpolation = Interpolation::bicubic;
    double keypoint_threshold = 0.1;
    int top_k = 32;
    int local_max_window = 3;

    void validate() const
    {
        if (!(keypoint_threshold >= 0.0 && keypoint_threshold <= 1.0))
            throw std::invalid_argument("decode config: keypoint_threshold must lie in [0, 1]");
        if (top_k < 1) throw std::invalid_argument("decode config: top_k must be >= 1");
        if (local_max_window < 3 || local_max_window % 2 == 0)
            throw std::invalid_argument("decode config: local_max_window must be odd and >= 3");
    }
};

struct KeypointCandidate {
    int type = 0;
    ImageCoord position;
    double score = 0.0;
    int id = -1;  // index in the decoded candidate list

    friend bool operator==(const KeypointCandidate&, const KeypointCandidate&) = default;
};

/// Keys cubic convolution kernel with a = -0.5.
inline double keys_kernel(double t)
{
    constexpr double a = -0.5;
    t = std::abs(t);
    if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
    if (t < 2.0) return ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a;
    return 0.0;
}

/// Interpolation taps along one axis: four clamped grid indices and weights
/// per output pixel.
struct AxisTaps {
    std::vector<std::array<int, 4>> index;
    std::vector<std::array<float, 4>> weight;
    std::vector<int> first;  // per grid index: first output pixel using it
    std::vector<int> last;   // per grid index: last output pixel using it
    double gain = 1.0;       // max over pixels of sum |w|

    int out_len() const { return static_cast<int>(index.size()); }
};

inline AxisTaps make_axis_taps(int out_len, int grid_len, int stride, Interpolation interp)
{
    AxisTaps taps;
    taps.index.resize(static_cast<std::size_t>(out_len));
    taps.weight.resize(static_cast<std::size_t>(out_len));
    taps.first.assign(static_cast<std::size_t>(grid_len), std::numeric_limits<int>::max());
    taps.last.assign(static_cast<std::size_t>(grid_len), -1);
    taps.gain = 0.0;

    const double r = stride;
    for (int x = 0; x < out_len; ++x) {
        const double t = (x - r / 2.0 + 0.5) / r;
        const double base = std::floor(t);
        const double f = t - base;
        const int i0 = static_cast<int>(base);

        std::array<double, 4> w{};
        if (interp == Interpolation::bicubic)
            w = {keys_kernel(1.0 + f), keys_kernel(f), keys_kernel(1.0 - f), keys_kernel(2.0 - f)};
        else
            w = {0.0, 1.0 - f, f, 0.0};

        double gain = 0.0;
        for (int j = 0; j < 4; ++j) {
            const int idx = std::clamp(i0 - 1 + j, 0, grid_len - 1);
            taps.index[x][j] = idx;
            taps.weight[x][j] = static_cast<float>(w[j]);
            gain += std::abs(static_cast<double>(taps.weight[x][j]));
            taps.first[idx] = std::min(taps.first[idx], x);
            taps.last[idx] = std::max(taps.last[idx], x);
        }
        taps.gain = std::max(taps.gain, gain);
    }
    return taps;
}

namespace detail {

inline float blend4(const std::array<float, 4>& w, float a, float b, float c, float d)
{
    return ((w[0] * a + w[1] * b) + w[2] * c) + w[3] * d;
}

inline float horizontal(const float* row, const AxisTaps& tx, int x)
{
    const auto& i = tx.index[x];
    return blend4(tx.weight[x], row[i[0]], row[i[1]], row[i[2]], row[i[3]]);
}

inline float interpolate_pixel(std::span<const float> grid, int grid_cols, const AxisTaps& tx,
                               const AxisTaps& ty, int x, int y)
{
    const auto& iy = ty.index[y];
    const float* base = grid.data();
    return blend4(ty.weight[y], horizontal(base + iy[0] * grid_cols, tx, x),
                  horizontal(base + iy[1] * grid_cols, tx, x),
                  horizontal(base + iy[2] * grid_cols, tx, x),
                  horizontal(base + iy[3] * grid_cols, tx, x));
}

/// Local-maximum test over a (2*radius+1)^2 window: the center must be
/// >= every later neighbor and > every earlier one in (y, x) order, so a
/// plateau reports only its first pixel. Out-of-image neighbors are ignored.
template <typename Get>
bool is_peak(Get&& get, int x, int y, int width, int height, int radius, float center)
{
    for (int dy = -radius; dy <= radius; ++dy) {
        const int ny = y + dy;
        if (ny < 0 || ny >= height) continue;
        for (int dx = -radius; dx <= radius; ++dx) {
            const int nx = x + dx;
            if ((dx == 0 && dy == 0) || nx < 0 || nx >= width) continue;
            const float n = get(nx, ny);
            const bool earlier = dy < 0 || (dy == 0 && dx < 0);
            if (earlier ? !(center > n) : !(center >= n)) return false;
        }
    }
    return true;
}

inline KeypointCandidate make_candidate(int type, double x, double y, float value)
{
    return {type, {x, y}, std::min(static_cast<double>(value), 1.0), -1};
}

inline void check_heatmap(const HeatmapTensor& h)
{
    h.spec.validate();
    if (h.values.channels() != h.spec.num_types || h.values.rows() != h.spec.grid_rows() ||
        h.values.cols() != h.spec.grid_cols())
        throw std::invalid_argument("heatmap tensor shape does not match its grid spec");
}

}  // namespace detail

/// Full-resolution [C, H, W] map.
inline Tensor3<float> upsample(const HeatmapTensor& h, const DecodeConfig& cfg)
{
    detail::check_heatmap(h);
    const auto& spec = h.spec;
    const int gcols = spec.grid_cols();
    const int grows = spec.grid_rows();
    const auto tx = make_axis_taps(spec.width, gcols, spec.stride, cfg.interpolation);
    const auto ty = make_axis_taps(spec.height, grows, spec.stride, cfg.interpolation);

    Tensor3<float> out(spec.num_types, spec.height, spec.width);
    std::vector<float> rows(static_cast<std::size_t>(grows) * spec.width);
    for (int c = 0; c < spec.num_types; ++c) {
        const auto grid = h.values.channel(c);
        for (int r = 0; r < grows; ++r)
            for (int x = 0; x < spec.width; ++x)
                rows[static_cast<std::size_t>(r) * spec.width + x] =
                    detail::horizontal(grid.data() + r * gcols, tx, x);

        auto plane = out.channel(c);
        for (int y = 0; y < spec.height; ++y) {
            const auto& iy = ty.index[y];
            const float* h0 = rows.data() + static_cast<std::size_t>(iy[0]) * spec.width;
            const float* h1 = rows.data() + static_cast<std::size_t>(iy[1]) * spec.width;
            const float* h2 = rows.data() + static_cast<std::size_t>(iy[2]) * spec.width;
            const float* h3 = rows.data() + static_cast<std::size_t>(iy[3]) * spec.width;
            float* dst = plane.data() + static_cast<std::size_t>(y) * spec.width;
            for (int x = 0; x < spec.width; ++x)
                dst[x] = detail::blend4(ty.weight[y], h0[x], h1[x], h2[x], h3[x]);
        }
    }
    return out;
}

/// Local maxima >= keypoint_threshold of a full-resolution map, per channel
/// in row-major order. Positions are pixel centers.
inline std::vector<KeypointCandidate> find_peaks(const Tensor3<float>& full, const DecodeConfig& cfg)
{
    cfg.validate();
    const int w = full.cols();
    const int h = full.rows();
    const int radius = cfg.local_max_window / 2;
    const auto thr = static_cast<float>(cfg.keypoint_threshold);

    std::vector<KeypointCandidate> out;
    for (int c = 0; c < full.channels(); ++c) {
        const auto plane = full.channel(c);
        const auto get = [&](int x, int y) { return plane[static_cast<std::size_t>(y) * w + x]; };
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const float v = get(x, y);
                if (!(v >= thr)) continue;
                if (detail::is_peak(get, x, y, w, h, radius, v))
                    out.push_back(detail::make_candidate(c, x, y, v));
            }
        }
    }
    return out;
}

/// Scratch buffers for sparse peak finding; reusable across channels.
class PeakWorkspace {
public:
    void prepare(std::size_t pixels)
    {
        if (value_.size() != pixels) {
            value_.assign(pixels, 0.0f);
            stamp_.assign(pixels, 0);
            generation_ = 0;
        }
        if (++generation_ == 0) {
            std::fill(stamp_.begin(), stamp_.end(), 0);
            generation_ = 1;
        }
        touched_.clear();
    }

    bool computed(std::size_t i) const { return stamp_[i] == generation_; }
    void store(std::size_t i, float v)
    {
        value_[i] = v;
        stamp_[i] = generation_;
        touched_.push_back(i);
    }
    float get(std::size_t i) const
    {
        return computed(i) ? value_[i] : -std::numeric_limits<float>::infinity();
    }
    std::vector<std::size_t>& touched() { return touched_; }

private:
    std::vector<float> value_;
    std::vector<std::uint32_t> stamp_;
    std::vector<std::size_t> touched_;
    std::uint32_t generation_ = 0;
};

/// Peaks of one upsampled channel, evaluating only pixels that can reach the
/// threshold. A pixel is skipped when every grid value in its support is
/// below threshold / (gain_x * gain_y); such pixels cannot be peaks and are
/// strictly below any pixel that is.
inline std::vector<KeypointCandidate> find_channel_peaks_sparse(
    std::span<const float> grid, int grid_rows, int grid_cols, const AxisTaps& tx,
    const AxisTaps& ty, int channel, const DecodeConfig& cfg, PeakWorkspace& ws)
{
    const int w = tx.out_len();
    const int h = ty.out_len();
    const int radius = cfg.local_max_window / 2;
    const auto thr = static_cast<float>(cfg.keypoint_threshold);
    const double hot =
        thr > 0.0f ? cfg.keypoint_threshold / (tx.gain * ty.gain) * (1.0 - 1e-5) : -1.0;

    ws.prepare(static_cast<std::size_t>(w) * h);
    for (int r = 0; r < grid_rows; ++r) {
        for (int c = 0; c < grid_cols; ++c) {
            if (!(std::abs(grid[static_cast<std::size_t>(r) * grid_cols + c]) >= hot)) continue;
            for (int y = ty.first[r]; y <= ty.last[r]; ++y) {
                for (int x = tx.first[c]; x <= tx.last[c]; ++x) {
                    const auto i = static_cast<std::size_t>(y) * w + x;
                    if (ws.computed(i)) continue;
                    ws.store(i, detail::interpolate_pixel(grid, grid_cols, tx, ty, x, y));
                }
            }
        }
    }

    auto& touched = ws.touched();
    std::sort(touched.begin(), touched.end());
    const auto get = [&](int x, int y) { return ws.get(static_cast<std::size_t>(y) * w + x); };
    std::vector<KeypointCandidate> out;
    for (const auto i : touched) {
        const int y = static_cast<int>(i / static_cast<std::size_t>(w));
        const int x = static_cast<int>(i % static_cast<std::size_t>(w));
        const float v = ws.get(i);
        if (!(v >= thr)) continue;
        if (detail::is_peak(get, x, y, w, h, radius, v))
            out.push_back(detail::make_candidate(channel, x, y, v));
    }
    return out;
}

/// Equivalent to find_peaks(upsample(h, cfg), cfg), channels in parallel.
inline std::vector<KeypointCandidate> find_peaks_sparse(const HeatmapTensor& h,
                                                        const DecodeConfig& cfg, int workers = 1)
{
    cfg.validate();
    detail::check_heatmap(h);
    const auto& spec = h.spec;
    const auto tx = make_axis_taps(spec.width, spec.grid_cols(), spec.stride, cfg.interpolation);
    const auto ty = make_axis_taps(spec.height, spec.grid_rows(), spec.stride, cfg.interpolation);

    workers = std::clamp(workers, 1, spec.num_types);
    std::vector<PeakWorkspace> spaces(static_cast<std::size_t>(workers));
    std::vector<std::vector<KeypointCandidate>> per_channel(static_cast<std::size_t>(spec.num_types));
    parallel_for(spec.num_types, workers, [&](int worker, int c) {
        per_channel[static_cast<std::size_t>(c)] = find_channel_peaks_sparse(
            h.values.channel(c), spec.grid_rows(), spec.grid_cols(), tx, ty, c, cfg,
            spaces[static_cast<std::size_t>(worker)]);
    });

    std::vector<KeypointCandidate> out;
    for (auto& ch : per_channel) out.insert(out.end(), ch.begin(), ch.end());
    return out;
}

/// Keeps the k best candidates per type. Output is grouped by type
/// (ascending), score-descending within a type, ties by smaller (y, x).
inline std::vector<KeypointCandidate> top_k_per_type(std::vector<KeypointCandidate> cands, int k)
{
    if (k < 1) throw std::invalid_argument("top_k must be >= 1");
    std::stable_sort(cands.begin(), cands.end(), [](const auto& a, const auto& b) {
        if (a.type != b.type) return a.type < b.type;
        if (a.score != b.score) return a.score > b.score;
        if (a.position.y != b.position.y) return a.position.y < b.position.y;
        return a.position.x < b.position.x;
    });
    std::vector<KeypointCandidate> out;
    out.reserve(cands.size());
    int type = -1;
    int kept = 0;
    for (const auto& cand : cands) {
        if (cand.type != type) {
            type = cand.type;
            kept = 0;
        }
        if (kept++ < k) out.push_back(cand);
    }
    return out;
}

/// Assigns dense ids in list order.
inline void assign_ids(std::vector<KeypointCandidate>& cands)
{
    for (std::size_t i = 0; i < cands.size(); ++i) cands[i].id = static_cast<int>(i);
}

/// Standard decode: sparse upsampled peaks, threshold, top-k, ids.
inline std::vector<KeypointCandidate> decode_keypoints(const HeatmapTensor& h,
                                                       const DecodeConfig& cfg, int workers = 1)
{
    auto cands = top_k_per_type(find_peaks_sparse(h, cfg, workers), cfg.top_k);
    assign_ids(cands);
    return cands;
}

/// Refinement decode: peaks on the stride-R grid, position = cell center
/// plus the refinement offset stored at that cell.
inline std::vector<KeypointCandidate> decode_with_refinement(const HeatmapTensor& h,
                                                             const RefinementOffsetField& ro,
                                                             const DecodeConfig& cfg)
{
    cfg.validate();
    detail::check_heatmap(h);
    if (ro.values.channels() != 2 * h.values.channels() || ro.values.rows() != h.values.rows() ||
        ro.values.cols() != h.values.cols())
        throw std::invalid_argument("refinement offsets do not match the heatmap shape");

    const auto& spec = h.spec;
    const int w = spec.grid_cols();
    const int hgt = spec.grid_rows();
    const int radius = cfg.local_max_window / 2;
    const auto thr = static_cast<float>(cfg.keypoint_threshold);

    std::vector<KeypointCandidate> cands;
    for (int c = 0; c < spec.num_types; ++c) {
        const auto plane = h.values.channel(c);
        const auto get = [&](int x, int y) { return plane[static_cast<std::size_t>(y) * w + x]; };
        for (int v = 0; v < hgt; ++v) {
            for (int u = 0; u < w; ++u) {
                const float value = get(u, v);
                if (!(value >= thr) || !detail::is_peak(get, u, v, w, hgt, radius, value)) continue;
                const double x = cell_center(u, spec.stride) + ro.values(2 * c, v, u);
                const double y = cell_center(v, spec.stride) + ro.values(2 * c + 1, v, u);
                cands.push_back(detail::make_candidate(c, std::clamp(x, 0.0, spec.width - 1.0),
                                                       std::clamp(y, 0.0, spec.height - 1.0),
                                                       value));
            }
        }
    }
    cands = top_k_per_type(std::move(cands), cfg.top_k);
    assign_ids(cands);
    return cands;
}

}  // namespace gog
