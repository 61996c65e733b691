#pragma once

// File formats: NPY v1.0 float32 tensors, annotation / candidate / pose
// JSON documents, skeleton definitions and the run configuration.

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "core.hpp"
#include "decoder.hpp"
#include "encoder.hpp"
#include "eval.hpp"
#include "grouper.hpp"
#include "pipeline.hpp"

namespace gog {

using json = nlohmann::json;

enum class IoErrorKind { file, magic, version, header, dtype, order, shape, size, nonfinite, format };

class IoError : public std::runtime_error {
public:
    IoError(IoErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    IoErrorKind kind() const { return kind_; }

private:
    IoErrorKind kind_;
};

enum class ConfigErrorKind { parse, unknown_key, invalid_value, not_odd };

class ConfigError : public std::runtime_error {
public:
    ConfigError(ConfigErrorKind kind, const std::string& what)
        : std::runtime_error(what), kind_(kind)
    {
    }
    ConfigErrorKind kind() const { return kind_; }

private:
    ConfigErrorKind kind_;
};

// NPY ------------------------------------------------------------------------

namespace detail {

inline constexpr std::array<char, 6> kNpyMagic = {'\x93', 'N', 'U', 'M', 'P', 'Y'};

inline std::uint32_t swap32(std::uint32_t v)
{
    return (v >> 24) | ((v >> 8) & 0xff00u) | ((v << 8) & 0xff0000u) | (v << 24);
}

inline std::string npy_header(int channels, int rows, int cols)
{
    std::string dict = "{'descr': '<f4', 'fortran_order': False, 'shape': (" +
                       std::to_string(channels) + ", " + std::to_string(rows) + ", " +
                       std::to_string(cols) + "), }";
    // magic(6) + version(2) + length(2) + dict + padding + '\n' is a multiple of 64
    const std::size_t unpadded = 10 + dict.size() + 1;
    dict.append((64 - unpadded % 64) % 64, ' ');
    dict.push_back('\n');
    return dict;
}

/// Value following `'key':` in a Python dict literal, up to the next
/// top-level comma or closing brace.
inline std::optional<std::string> dict_value(std::string_view dict, std::string_view key)
{
    const std::string needle = "'" + std::string(key) + "'";
    auto pos = dict.find(needle);
    if (pos == std::string_view::npos) return std::nullopt;
    pos = dict.find(':', pos + needle.size());
    if (pos == std::string_view::npos) return std::nullopt;
    ++pos;
    while (pos < dict.size() && dict[pos] == ' ') ++pos;
    int depth = 0;
    std::size_t end = pos;
    for (; end < dict.size(); ++end) {
        const char ch = dict[end];
        if (ch == '(') ++depth;
        if (ch == ')') --depth;
        if (depth == 0 && (ch == ',' || ch == '}')) break;
    }
    auto value = std::string(dict.substr(pos, end - pos));
    while (!value.empty() && value.back() == ' ') value.pop_back();
    return value;
}

}  // namespace detail

/// Writes a little-endian float32, C-order NPY v1.0 file.
inline void write_tensor(const Tensor3<float>& t, const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(IoErrorKind::file, "cannot open " + path.string() + " for writing");

    const std::string header = detail::npy_header(t.channels(), t.rows(), t.cols());
    out.write(detail::kNpyMagic.data(), detail::kNpyMagic.size());
    const char version[2] = {1, 0};
    out.write(version, 2);
    const auto len = static_cast<std::uint16_t>(header.size());
    const char len_bytes[2] = {static_cast<char>(len & 0xff), static_cast<char>(len >> 8)};
    out.write(len_bytes, 2);
    out.write(header.data(), static_cast<std::streamsize>(header.size()));

    std::vector<std::uint32_t> words(t.size());
    std::memcpy(words.data(), t.data().data(), t.size() * sizeof(float));
    if constexpr (std::endian::native == std::endian::big)
        for (auto& w : words) w = detail::swap32(w);
    out.write(reinterpret_cast<const char*>(words.data()),
              static_cast<std::streamsize>(words.size() * sizeof(std::uint32_t)));
    if (!out) throw IoError(IoErrorKind::file, "write failed: " + path.string());
}

inline Tensor3<float> read_tensor(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(IoErrorKind::file, "cannot open " + path.string());
    const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    const std::string name = path.string();

    if (bytes.size() < 10 || std::memcmp(bytes.data(), detail::kNpyMagic.data(), 6) != 0)
        throw IoError(IoErrorKind::magic, name + ": not an NPY file (bad magic)");
    if (bytes[6] != 1 || bytes[7] != 0)
        throw IoError(IoErrorKind::version, name + ": unsupported NPY version " +
                                                std::to_string(int(bytes[6])) + "." +
                                                std::to_string(int(bytes[7])));
    const std::size_t header_len = static_cast<unsigned char>(bytes[8]) |
                                   (static_cast<std::size_t>(static_cast<unsigned char>(bytes[9])) << 8);
    if (bytes.size() < 10 + header_len)
        throw IoError(IoErrorKind::header, name + ": truncated header");
    const std::string_view dict(bytes.data() + 10, header_len);

    const auto descr = detail::dict_value(dict, "descr");
    const auto order = detail::dict_value(dict, "fortran_order");
    const auto shape = detail::dict_value(dict, "shape");
    if (!descr || !order || !shape) throw IoError(IoErrorKind::header, name + ": malformed header");
    if (*descr != "'<f4'")
        throw IoError(IoErrorKind::dtype, name + ": dtype " + *descr + ", expected '<f4'");
    if (*order != "False")
        throw IoError(IoErrorKind::order, name + ": fortran-order arrays are not supported");

    std::vector<long long> dims;
    {
        std::string s = *shape;
        if (s.size() < 2 || s.front() != '(' || s.back() != ')')
            throw IoError(IoErrorKind::shape, name + ": malformed shape " + s);
        std::stringstream ss(s.substr(1, s.size() - 2));
        std::string item;
        while (std::getline(ss, item, ',')) {
            if (item.find_first_not_of(' ') == std::string::npos) continue;
            try {
                dims.push_back(std::stoll(item));
            } catch (const std::exception&) {
                throw IoError(IoErrorKind::shape, name + ": malformed shape " + s);
            }
        }
    }
    if (dims.size() != 3)
        throw IoError(IoErrorKind::shape, name + ": expected a 3-d tensor, got " +
                                              std::to_string(dims.size()) + " dims");
    for (auto d : dims)
        if (d < 0 || d > (1LL << 30)) throw IoError(IoErrorKind::shape, name + ": bad dimension");

    const auto count = static_cast<std::size_t>(dims[0] * dims[1] * dims[2]);
    const std::size_t payload = bytes.size() - 10 - header_len;
    if (payload != count * sizeof(float))
        throw IoError(IoErrorKind::size, name + ": payload holds " + std::to_string(payload) +
                                             " bytes, shape needs " +
                                             std::to_string(count * sizeof(float)));

    Tensor3<float> t(static_cast<int>(dims[0]), static_cast<int>(dims[1]), static_cast<int>(dims[2]));
    std::vector<std::uint32_t> words(count);
    std::memcpy(words.data(), bytes.data() + 10 + header_len, payload);
    if constexpr (std::endian::native == std::endian::big)
        for (auto& w : words) w = detail::swap32(w);
    std::memcpy(t.data().data(), words.data(), payload);
    for (float v : t.data())
        if (!std::isfinite(v)) throw IoError(IoErrorKind::nonfinite, name + ": non-finite value");
    return t;
}

// JSON helpers ---------------------------------------------------------------

inline json read_json(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw IoError(IoErrorKind::file, "cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw IoError(IoErrorKind::format, path.string() + ": " + e.what());
    }
}

inline void write_json(const json& doc, const std::filesystem::path& path, int indent = -1)
{
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError(IoErrorKind::file, "cannot open " + path.string() + " for writing");
    out << doc.dump(indent) << '\n';
    if (!out) throw IoError(IoErrorKind::file, "write failed: " + path.string());
}

// Skeleton -------------------------------------------------------------------

inline Skeleton skeleton_from_json(const json& doc, int num_types)
{
    if (!doc.is_object() || !doc.contains("limbs") || !doc["limbs"].is_array())
        throw IoError(IoErrorKind::format, "skeleton: expected {\"limbs\": [[from, to], ...]}");
    std::vector<Limb> limbs;
    for (const auto& pair : doc["limbs"]) {
        if (!pair.is_array() || pair.size() != 2 || !pair[0].is_number_integer() ||
            !pair[1].is_number_integer())
            throw IoError(IoErrorKind::format, "skeleton: each limb must be [from, to]");
        limbs.push_back({pair[0].get<int>(), pair[1].get<int>()});
    }
    return Skeleton(std::move(limbs), num_types);
}

inline json skeleton_to_json(const Skeleton& s)
{
    json limbs = json::array();
    for (const auto& l : s.limbs()) limbs.push_back({l.from, l.to});
    return {{"limbs", limbs}};
}

// Annotations ----------------------------------------------------------------

inline Person person_from_flat(const json& kps, double scale, int num_types)
{
    if (!kps.is_array() || kps.size() != static_cast<std::size_t>(3 * num_types))
        throw IoError(IoErrorKind::format,
                      "annotations: keypoints must hold " + std::to_string(3 * num_types) + " values");
    Person p;
    p.scale = scale;
    p.keypoints.resize(static_cast<std::size_t>(num_types));
    for (int c = 0; c < num_types; ++c) {
        const auto i = static_cast<std::size_t>(3 * c);
        if (kps[i + 2].get<double>() > 0.0)
            p.keypoints[static_cast<std::size_t>(c)] =
                ImageCoord{kps[i].get<double>(), kps[i + 1].get<double>()};
    }
    return p;
}

/// {"images": [{"id", "width", "height", "persons": [{"keypoints": [x, y, v] x C, "scale"}]}]}
inline std::vector<AnnotatedImage> annotations_from_json(const json& doc, int num_types = kCocoKeypoints)
{
    if (!doc.is_object() || !doc.contains("images") || !doc["images"].is_array())
        throw IoError(IoErrorKind::format, "annotations: missing \"images\" array");
    std::vector<AnnotatedImage> images;
    try {
        for (const auto& im : doc["images"]) {
            AnnotatedImage img;
            img.id = im.at("id").get<long long>();
            img.width = im.at("width").get<int>();
            img.height = im.at("height").get<int>();
            for (const auto& p : im.value("persons", json::array())) {
                const double scale = p.contains("scale") ? p["scale"].get<double>() : 0.0;
                auto person = person_from_flat(p.at("keypoints"), scale, num_types);
                if (!(person.scale > 0.0)) person.scale = bbox_scale(person);
                img.persons.push_back(std::move(person));
            }
            images.push_back(std::move(img));
        }
    } catch (const json::exception& e) {
        throw IoError(IoErrorKind::format, std::string("annotations: ") + e.what());
    }
    return images;
}

inline json annotations_to_json(std::span<const AnnotatedImage> images)
{
    json arr = json::array();
    for (const auto& img : images) {
        json persons = json::array();
        for (const auto& p : img.persons) {
            json kps = json::array();
            for (const auto& k : p.keypoints) {
                if (k) kps.insert(kps.end(), {k->x, k->y, 1});
                else kps.insert(kps.end(), {0, 0, 0});
            }
            persons.push_back({{"keypoints", kps}, {"scale", p.scale}});
        }
        arr.push_back({{"id", img.id}, {"width", img.width}, {"height", img.height},
                       {"persons", persons}});
    }
    return {{"images", arr}};
}

/// Standard COCO person-keypoints annotation file. Crowd regions and persons
/// without labeled keypoints are skipped; images left without persons are
/// dropped. Person scale is sqrt(area).
inline std::vector<AnnotatedImage> coco_annotations_from_json(const json& doc)
{
    std::vector<AnnotatedImage> images;
    try {
        std::map<long long, std::size_t> index;
        for (const auto& im : doc.at("images")) {
            index[im.at("id").get<long long>()] = images.size();
            images.push_back({im.at("id").get<long long>(), im.at("width").get<int>(),
                              im.at("height").get<int>(), {}});
        }
        for (const auto& ann : doc.at("annotations")) {
            if (ann.value("iscrowd", 0) != 0) continue;
            if (ann.value("num_keypoints", 1) == 0) continue;
            const auto it = index.find(ann.at("image_id").get<long long>());
            if (it == index.end()) continue;
            auto p = person_from_flat(ann.at("keypoints"), std::sqrt(ann.value("area", 0.0)),
                                      kCocoKeypoints);
            if (p.num_labeled() == 0) continue;
            if (!(p.scale > 0.0)) p.scale = bbox_scale(p);
            images[it->second].persons.push_back(std::move(p));
        }
    } catch (const json::exception& e) {
        throw IoError(IoErrorKind::format, std::string("coco annotations: ") + e.what());
    }
    std::erase_if(images, [](const AnnotatedImage& im) { return im.persons.empty(); });
    return images;
}

/// Our annotation format, or COCO when the document has "annotations".
inline std::vector<AnnotatedImage> load_annotations(const std::filesystem::path& path)
{
    const json doc = read_json(path);
    if (doc.is_object() && doc.contains("annotations")) return coco_annotations_from_json(doc);
    return annotations_from_json(doc);
}

// Candidates -----------------------------------------------------------------

struct CandidateSet {
    long long image_id = 0;
    int width = 0;
    int height = 0;
    std::vector<KeypointCandidate> candidates;
};

inline json candidates_to_json(const CandidateSet& set)
{
    json arr = json::array();
    for (const auto& c : set.candidates)
        arr.push_back({{"id", c.id}, {"type", c.type}, {"x", c.position.x}, {"y", c.position.y},
                       {"score", c.score}});
    return {{"image_id", set.image_id}, {"width", set.width}, {"height", set.height},
            {"candidates", arr}};
}

inline CandidateSet candidates_from_json(const json& doc)
{
    CandidateSet set;
    try {
        set.image_id = doc.value("image_id", 0LL);
        set.width = doc.at("width").get<int>();
        set.height = doc.at("height").get<int>();
        for (const auto& c : doc.at("candidates")) {
            KeypointCandidate k;
            k.type = c.at("type").get<int>();
            k.position = {c.at("x").get<double>(), c.at("y").get<double>()};
            k.score = c.at("score").get<double>();
            k.id = static_cast<int>(set.candidates.size());
            set.candidates.push_back(k);
        }
    } catch (const json::exception& e) {
        throw IoError(IoErrorKind::format, std::string("candidates: ") + e.what());
    }
    return set;
}

// Poses ----------------------------------------------------------------------

/// COCO result entries; absent slots are written as (0, 0, 0).
inline json poses_to_json(long long image_id, std::span<const PoseSkeleton> poses, json out = json::array())
{
    for (const auto& pose : poses) {
        json kps = json::array();
        for (const auto& s : pose.slots) {
            if (s) kps.insert(kps.end(), {s->position.x, s->position.y, s->score});
            else kps.insert(kps.end(), {0, 0, 0});
        }
        out.push_back({{"image_id", image_id}, {"category_id", 1}, {"keypoints", kps},
                       {"score", pose.pose_score}});
    }
    return out;
}

/// Groups COCO result entries by image id.
inline std::map<long long, std::vector<PoseSkeleton>> poses_from_json(const json& doc,
                                                                      int num_types = kCocoKeypoints)
{
    std::map<long long, std::vector<PoseSkeleton>> out;
    if (!doc.is_array()) throw IoError(IoErrorKind::format, "poses: expected a JSON array");
    try {
        for (const auto& r : doc) {
            const auto& kps = r.at("keypoints");
            if (kps.size() != static_cast<std::size_t>(3 * num_types))
                throw IoError(IoErrorKind::format, "poses: wrong keypoint count");
            PoseSkeleton pose;
            pose.slots.resize(static_cast<std::size_t>(num_types));
            for (int c = 0; c < num_types; ++c) {
                const auto i = static_cast<std::size_t>(3 * c);
                const double x = kps[i].get<double>(), y = kps[i + 1].get<double>(),
                             s = kps[i + 2].get<double>();
                if (x == 0.0 && y == 0.0 && s == 0.0) continue;
                pose.slots[static_cast<std::size_t>(c)] = KeypointCandidate{c, {x, y}, s, -1};
            }
            pose.pose_score = r.at("score").get<double>();
            out[r.at("image_id").get<long long>()].push_back(std::move(pose));
        }
    } catch (const json::exception& e) {
        throw IoError(IoErrorKind::format, std::string("poses: ") + e.what());
    }
    return out;
}

// Run configuration ------------------------------------------------------------

struct RunConfig {
    std::optional<int> width;   // derived from tensors when absent
    std::optional<int> height;
    int stride = 4;
    int num_types = kCocoKeypoints;
    PipelineConfig pipeline;
    std::string skeleton_path;
    OksParams oks;
    int threads = 0;  // 0: hardware concurrency

    GridSpec grid(int w, int h) const { return {width.value_or(w), height.value_or(h), stride, num_types}; }
};

inline const std::vector<std::string>& config_keys()
{
    static const std::vector<std::string> keys = {
        "width", "height", "stride", "num_keypoints", "sigma", "supervision_area", "variant",
        "interpolation", "keypoint_threshold", "top_k", "local_max_window",
        "limb_score_threshold", "min_keypoints", "pose_score_threshold", "top_k_limbs",
        "greedy_order", "skeleton", "oks_kappas", "oks_thresholds", "threads"};
    return keys;
}

/// Applies defaults for absent keys and validates everything. Relative
/// skeleton paths resolve against `base_dir`.
inline RunConfig parse_config(const json& doc, const std::filesystem::path& base_dir = {})
{
    if (!doc.is_object()) throw ConfigError(ConfigErrorKind::parse, "config: expected a JSON object");
    const auto& keys = config_keys();
    for (const auto& [key, _] : doc.items())
        if (std::find(keys.begin(), keys.end(), key) == keys.end())
            throw ConfigError(ConfigErrorKind::unknown_key, "config: unknown key '" + key + "'");

    RunConfig cfg;
    auto& pc = cfg.pipeline;
    const auto invalid = [](const std::string& key, const std::string& why) {
        return ConfigError(ConfigErrorKind::invalid_value, "config: " + key + " " + why);
    };

    try {
        if (doc.contains("width")) cfg.width = doc["width"].get<int>();
        if (doc.contains("height")) cfg.height = doc["height"].get<int>();
        cfg.stride = doc.value("stride", cfg.stride);
        cfg.num_types = doc.value("num_keypoints", cfg.num_types);
        pc.encode.sigma = doc.value("sigma", pc.encode.sigma);
        pc.encode.supervision_area = doc.value("supervision_area", pc.encode.supervision_area);
        if (doc.contains("variant")) pc.variant = parse_variant(doc["variant"].get<std::string>());
        if (doc.contains("interpolation"))
            pc.decode.interpolation = parse_interpolation(doc["interpolation"].get<std::string>());
        pc.decode.keypoint_threshold = doc.value("keypoint_threshold", pc.decode.keypoint_threshold);
        pc.decode.top_k = doc.value("top_k", pc.decode.top_k);
        pc.decode.local_max_window = doc.value("local_max_window", pc.decode.local_max_window);
        pc.group.limb_score_threshold = doc.value("limb_score_threshold", pc.group.limb_score_threshold);
        pc.group.min_keypoints = doc.value("min_keypoints", pc.group.min_keypoints);
        pc.group.pose_score_threshold = doc.value("pose_score_threshold", pc.group.pose_score_threshold);
        pc.group.top_k_limbs = doc.value("top_k_limbs", pc.group.top_k_limbs);
        if (doc.contains("greedy_order"))
            pc.group.order = parse_greedy_order(doc["greedy_order"].get<std::string>());
        cfg.skeleton_path = doc.value("skeleton", std::string{});
        if (doc.contains("oks_kappas")) cfg.oks.kappas = doc["oks_kappas"].get<std::vector<double>>();
        if (doc.contains("oks_thresholds"))
            cfg.oks.thresholds = doc["oks_thresholds"].get<std::vector<double>>();
        cfg.threads = doc.value("threads", cfg.threads);
    } catch (const json::exception& e) {
        throw ConfigError(ConfigErrorKind::invalid_value, std::string("config: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw ConfigError(ConfigErrorKind::invalid_value, std::string("config: ") + e.what());
    }

    if (pc.encode.supervision_area % 2 == 0)
        throw ConfigError(ConfigErrorKind::not_odd, "config: supervision_area must be odd, got " +
                                                        std::to_string(pc.encode.supervision_area));
    if (pc.decode.local_max_window % 2 == 0)
        throw ConfigError(ConfigErrorKind::not_odd, "config: local_max_window must be odd, got " +
                                                        std::to_string(pc.decode.local_max_window));
    if (cfg.width && *cfg.width <= 0) throw invalid("width", "must be positive");
    if (cfg.height && *cfg.height <= 0) throw invalid("height", "must be positive");
    if (cfg.stride < 1) throw invalid("stride", "must be >= 1");
    if (cfg.num_types < 1) throw invalid("num_keypoints", "must be >= 1");
    if (cfg.threads < 0) throw invalid("threads", "must be >= 0");

    try {
        pc.encode.validate();
        pc.decode.validate();
        pc.group.validate();
        cfg.oks.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(ConfigErrorKind::invalid_value, std::string("config: ") + e.what());
    }
    if (cfg.oks.kappas.size() < static_cast<std::size_t>(cfg.num_types))
        throw invalid("oks_kappas", "needs one constant per keypoint type");

    try {
        if (!cfg.skeleton_path.empty()) {
            std::filesystem::path p = cfg.skeleton_path;
            if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
            pc.skeleton = skeleton_from_json(read_json(p), cfg.num_types);
        } else if (cfg.num_types != kCocoKeypoints) {
            throw invalid("skeleton", "is required when num_keypoints != 17");
        }
    } catch (const std::invalid_argument& e) {
        throw ConfigError(ConfigErrorKind::invalid_value, std::string("config: ") + e.what());
    }
    return cfg;
}

inline RunConfig load_config(const std::filesystem::path& path)
{
    json doc;
    try {
        doc = read_json(path);
    } catch (const IoError& e) {
        if (e.kind() == IoErrorKind::format) throw ConfigError(ConfigErrorKind::parse, e.what());
        throw;
    }
    return parse_config(doc, path.parent_path());
}

}  // namespace gog
