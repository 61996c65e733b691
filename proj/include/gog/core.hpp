#pragma once

// Domain types shared by every stage of the pipeline: grid geometry, the
// pixel-center coordinate transform, dense tensors and skeleton topology.
//
// Convention: an image pixel occupies a 1x1 cell and its value sits at the
// cell center, so integer image coordinates are pixel centers. Grid cell
// (u, v) at output stride R maps to image position (u*R + R/2 - 0.5, ...).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace gog {

inline constexpr int kCocoKeypoints = 17;

inline constexpr std::array<std::string_view, kCocoKeypoints> kCocoKeypointNames = {
    "nose",          "left_eye",       "right_eye",  "left_ear",    "right_ear",
    "left_shoulder", "right_shoulder", "left_elbow", "right_elbow", "left_wrist",
    "right_wrist",   "left_hip",       "right_hip",  "left_knee",   "right_knee",
    "left_ankle",    "right_ankle"};

struct ImageCoord {
    double x = 0.0;
    double y = 0.0;

    friend bool operator==(const ImageCoord&, const ImageCoord&) = default;
};

inline double distance(const ImageCoord& a, const ImageCoord& b)
{
    return std::hypot(a.x - b.x, a.y - b.y);
}

struct GridCoord {
    int u = 0;
    int v = 0;
    int channel = 0;
};

/// Real-valued position on the output grid (cell units).
struct GridPoint {
    double u = 0.0;
    double v = 0.0;
};

struct GridSpec {
    int width = 640;      // input image pixels
    int height = 640;
    int stride = 4;       // input pixels per grid cell
    int num_types = kCocoKeypoints;

    int grid_cols() const { return (width + stride - 1) / stride; }
    int grid_rows() const { return (height + stride - 1) / stride; }

    void validate() const
    {
        if (width <= 0 || height <= 0)
            throw std::invalid_argument("grid spec: image dimensions must be positive");
        if (stride < 1)
            throw std::invalid_argument("grid spec: output stride must be >= 1");
        if (num_types < 1)
            throw std::invalid_argument("grid spec: need at least one keypoint type");
    }

    friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

/// Image position of grid index `index` along one axis.
inline double cell_center(int index, int stride)
{
    return index * static_cast<double>(stride) + stride / 2.0 - 0.5;
}

inline ImageCoord grid_to_image(const GridCoord& g, const GridSpec& spec)
{
    if (g.u < 0 || g.u >= spec.grid_cols() || g.v < 0 || g.v >= spec.grid_rows() ||
        g.channel < 0 || g.channel >= spec.num_types)
        throw std::out_of_range("grid_to_image: grid coordinate outside the grid");
    return {cell_center(g.u, spec.stride), cell_center(g.v, spec.stride)};
}

/// Exact inverse of grid_to_image; not clamped to the grid.
inline GridPoint image_to_grid(const ImageCoord& q, const GridSpec& spec)
{
    const double r = spec.stride;
    return {(q.x - r / 2.0 + 0.5) / r, (q.y - r / 2.0 + 0.5) / r};
}

/// Index of the nearest grid cell along one axis; equidistant ties go to the
/// lower index. The result is not clamped.
inline int nearest_index(double grid_real)
{
    return static_cast<int>(std::ceil(grid_real - 0.5));
}

/// Nearest grid cell (u, v) to an image position, clamped into the grid.
inline std::pair<int, int> nearest_cell_clamped(const ImageCoord& q, const GridSpec& spec)
{
    const auto g = image_to_grid(q, spec);
    return {std::clamp(nearest_index(g.u), 0, spec.grid_cols() - 1),
            std::clamp(nearest_index(g.v), 0, spec.grid_rows() - 1)};
}

/// Dense row-major [channels x rows x cols] tensor.
template <typename T>
class Tensor3 {
public:
    Tensor3() = default;
    Tensor3(int channels, int rows, int cols, T fill = T{})
        : channels_(channels), rows_(rows), cols_(cols)
    {
        if (channels < 0 || rows < 0 || cols < 0)
            throw std::invalid_argument("tensor: negative dimension");
        data_.assign(static_cast<std::size_t>(channels) * rows * cols, fill);
    }

    int channels() const { return channels_; }
    int rows() const { return rows_; }
    int cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    std::size_t plane_size() const { return static_cast<std::size_t>(rows_) * cols_; }

    T& operator()(int c, int r, int col) { return data_[index(c, r, col)]; }
    const T& operator()(int c, int r, int col) const { return data_[index(c, r, col)]; }

    std::span<T> channel(int c) { return {data_.data() + c * plane_size(), plane_size()}; }
    std::span<const T> channel(int c) const
    {
        return {data_.data() + c * plane_size(), plane_size()};
    }

    std::span<T> data() { return data_; }
    std::span<const T> data() const { return data_; }

    bool same_shape(const Tensor3& other) const
    {
        return channels_ == other.channels_ && rows_ == other.rows_ && cols_ == other.cols_;
    }

    friend bool operator==(const Tensor3&, const Tensor3&) = default;

private:
    std::size_t index(int c, int r, int col) const
    {
        return (static_cast<std::size_t>(c) * rows_ + r) * cols_ + col;
    }

    int channels_ = 0;
    int rows_ = 0;
    int cols_ = 0;
    std::vector<T> data_;
};

struct Limb {
    int from = 0;
    int to = 0;

    friend bool operator==(const Limb&, const Limb&) = default;
};

/// Ordered set of directed limbs over `num_types` keypoint types. The
/// constructor enforces: indices in range, no self loops, no duplicate
/// directed pairs, and an undirected limb graph that reaches every type.
class Skeleton {
public:
    Skeleton(std::vector<Limb> limbs, int num_types) : limbs_(std::move(limbs)), num_types_(num_types)
    {
        validate();
    }

    const std::vector<Limb>& limbs() const { return limbs_; }
    int num_limbs() const { return static_cast<int>(limbs_.size()); }
    int num_types() const { return num_types_; }
    const Limb& operator[](int p) const { return limbs_.at(static_cast<std::size_t>(p)); }

    friend bool operator==(const Skeleton&, const Skeleton&) = default;

private:
    void validate() const
    {
        if (num_types_ < 1)
            throw std::invalid_argument("skeleton: need at least one keypoint type");
        if (limbs_.empty() && num_types_ > 1)
            throw std::invalid_argument("skeleton: no limbs");
        for (std::size_t i = 0; i < limbs_.size(); ++i) {
            const auto& l = limbs_[i];
            if (l.from < 0 || l.from >= num_types_ || l.to < 0 || l.to >= num_types_)
                throw std::invalid_argument("skeleton: limb " + std::to_string(i) +
                                            " references an unknown keypoint type");
            if (l.from == l.to)
                throw std::invalid_argument("skeleton: limb " + std::to_string(i) +
                                            " connects a type to itself");
            for (std::size_t j = 0; j < i; ++j)
                if (limbs_[j] == l)
                    throw std::invalid_argument("skeleton: duplicate limb " + std::to_string(i));
        }

        // connectivity by traversal from type 0
        std::vector<char> seen(static_cast<std::size_t>(num_types_), 0);
        std::vector<int> stack{0};
        seen[0] = 1;
        while (!stack.empty()) {
            const int t = stack.back();
            stack.pop_back();
            for (const auto& l : limbs_) {
                const int other = l.from == t ? l.to : (l.to == t ? l.from : -1);
                if (other >= 0 && !seen[static_cast<std::size_t>(other)]) {
                    seen[static_cast<std::size_t>(other)] = 1;
                    stack.push_back(other);
                }
            }
        }
        if (std::find(seen.begin(), seen.end(), 0) != seen.end())
            throw std::invalid_argument("skeleton: limb graph does not reach every keypoint type");
    }

    std::vector<Limb> limbs_;
    int num_types_ = 0;
};

/// Default 19-limb COCO topology. Limb order is the grouping order.
inline Skeleton canonical_skeleton()
{
    enum : int {
        nose, l_eye, r_eye, l_ear, r_ear, l_sho, r_sho, l_elb, r_elb,
        l_wri, r_wri, l_hip, r_hip, l_kne, r_kne, l_ank, r_ank
    };
    return Skeleton({{nose, l_eye},  {nose, r_eye},  {l_eye, l_ear}, {r_eye, r_ear},
                     {nose, l_sho},  {nose, r_sho},  {l_sho, l_elb}, {l_elb, l_wri},
                     {r_sho, r_elb}, {r_elb, r_wri}, {l_sho, l_hip}, {r_sho, r_hip},
                     {l_hip, l_kne}, {l_kne, l_ank}, {r_hip, r_kne}, {r_kne, r_ank},
                     {l_sho, r_sho}, {l_hip, r_hip}, {l_ear, l_sho}},
                    kCocoKeypoints);
}

/// Annotated person: one optional position per keypoint type plus the
/// person scale (square root of the person area, input pixels).
struct Person {
    std::vector<std::optional<ImageCoord>> keypoints;
    double scale = 1.0;

    int num_labeled() const
    {
        return static_cast<int>(std::count_if(keypoints.begin(), keypoints.end(),
                                              [](const auto& k) { return k.has_value(); }));
    }
};

struct AnnotatedImage {
    long long id = 0;
    int width = 0;
    int height = 0;
    std::vector<Person> persons;
};

/// Encoding/decoding ablation variant.
enum class Variant { standard, qnt, ro, qnt_ro };

inline bool quantizes(Variant v) { return v == Variant::qnt || v == Variant::qnt_ro; }
inline bool refines(Variant v) { return v == Variant::ro || v == Variant::qnt_ro; }

inline std::string_view to_string(Variant v)
{
    switch (v) {
    case Variant::standard: return "standard";
    case Variant::qnt: return "qnt";
    case Variant::ro: return "ro";
    case Variant::qnt_ro: return "qnt+ro";
    }
    return "standard";
}

inline Variant parse_variant(std::string_view s)
{
    if (s == "standard") return Variant::standard;
    if (s == "qnt") return Variant::qnt;
    if (s == "ro") return Variant::ro;
    if (s == "qnt+ro") return Variant::qnt_ro;
    throw std::invalid_argument("unknown variant '" + std::string(s) + "'");
}

}  // namespace gog
