#include <gog/io.hpp>

#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include <unistd.h>

using namespace gog;
namespace fs = std::filesystem;

namespace {

class TempDir {
public:
    TempDir()
    {
        static int counter = 0;
        path_ = fs::temp_directory_path() /
                ("gog_io_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::create_directories(path_);
    }
    ~TempDir() { fs::remove_all(path_); }
    fs::path operator/(const std::string& name) const { return path_ / name; }

private:
    fs::path path_;
};

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void dump(const fs::path& p, const std::string& bytes)
{
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << bytes;
}

IoErrorKind read_error(const fs::path& p)
{
    try {
        read_tensor(p);
    } catch (const IoError& e) {
        return e.kind();
    }
    ADD_FAILURE() << "expected an IoError for " << p;
    return IoErrorKind::format;
}

ConfigErrorKind config_error(const json& doc)
{
    try {
        parse_config(doc);
    } catch (const ConfigError& e) {
        return e.kind();
    }
    ADD_FAILURE() << "expected a ConfigError for " << doc.dump();
    return ConfigErrorKind::parse;
}

}  // namespace

TEST(Npy, RoundTripIsBitIdentical)
{
    TempDir dir;
    Tensor3<float> t(17, 160, 160);
    std::mt19937 rng(3);
    std::uniform_real_distribution<float> u(-5.0f, 5.0f);
    for (auto& v : t.data()) v = u(rng);
    t(0, 0, 0) = -0.0f;
    t(1, 2, 3) = 1e-42f;  // subnormal
    write_tensor(t, dir / "t.npy");
    const auto back = read_tensor(dir / "t.npy");
    ASSERT_TRUE(back.same_shape(t));
    EXPECT_EQ(std::memcmp(back.data().data(), t.data().data(), t.data().size_bytes()), 0);
}

TEST(Npy, HeaderIsAlignedAndLoadableLayout)
{
    TempDir dir;
    write_tensor(Tensor3<float>(2, 3, 4), dir / "t.npy");
    const auto bytes = slurp(dir / "t.npy");
    ASSERT_GE(bytes.size(), 10u);
    EXPECT_EQ(bytes.substr(1, 5), "NUMPY");
    const std::size_t header_len = static_cast<unsigned char>(bytes[8]) |
                                   (static_cast<unsigned char>(bytes[9]) << 8);
    EXPECT_EQ((10 + header_len) % 64, 0u);
    EXPECT_EQ(bytes[10 + header_len - 1], '\n');
    EXPECT_NE(bytes.find("'shape': (2, 3, 4)"), std::string::npos);
    EXPECT_EQ(bytes.size(), 10 + header_len + 2 * 3 * 4 * sizeof(float));
}

TEST(Npy, EmptyTensorRoundTrips)
{
    TempDir dir;
    write_tensor(Tensor3<float>(0, 5, 5), dir / "e.npy");
    EXPECT_EQ(read_tensor(dir / "e.npy").channels(), 0);
}

TEST(Npy, ErrorsAreDistinguished)
{
    TempDir dir;
    write_tensor(Tensor3<float>(2, 3, 4), dir / "good.npy");
    const auto good = slurp(dir / "good.npy");

    EXPECT_EQ(read_error(dir / "missing.npy"), IoErrorKind::file);

    auto bad = good;
    bad[1] = 'X';
    dump(dir / "magic.npy", bad);
    EXPECT_EQ(read_error(dir / "magic.npy"), IoErrorKind::magic);

    bad = good;
    bad[6] = 2;
    dump(dir / "version.npy", bad);
    EXPECT_EQ(read_error(dir / "version.npy"), IoErrorKind::version);

    bad = good;
    bad.replace(bad.find("False"), 5, "True ");
    dump(dir / "order.npy", bad);
    EXPECT_EQ(read_error(dir / "order.npy"), IoErrorKind::order);

    bad = good;
    bad.replace(bad.find("<f4"), 3, "<f8");
    dump(dir / "dtype.npy", bad);
    EXPECT_EQ(read_error(dir / "dtype.npy"), IoErrorKind::dtype);

    bad = good;
    bad.replace(bad.find("(2, 3, 4)"), 9, "(2, 3)   ");
    dump(dir / "shape.npy", bad);
    EXPECT_EQ(read_error(dir / "shape.npy"), IoErrorKind::shape);

    dump(dir / "size.npy", good.substr(0, good.size() - 4));
    EXPECT_EQ(read_error(dir / "size.npy"), IoErrorKind::size);

    Tensor3<float> nan(1, 1, 2);
    nan(0, 0, 1) = std::numeric_limits<float>::quiet_NaN();
    write_tensor(nan, dir / "nan.npy");
    EXPECT_EQ(read_error(dir / "nan.npy"), IoErrorKind::nonfinite);
}

TEST(Config, EmptyGivesDefaults)
{
    const auto cfg = parse_config(json::object());
    EXPECT_EQ(cfg.pipeline.encode.sigma, 7.0);
    EXPECT_EQ(cfg.pipeline.encode.supervision_area, 7);
    EXPECT_EQ(cfg.pipeline.decode.top_k, 32);
    EXPECT_EQ(cfg.pipeline.decode.keypoint_threshold, 0.1);
    EXPECT_EQ(cfg.pipeline.decode.local_max_window, 3);
    EXPECT_EQ(cfg.pipeline.decode.interpolation, Interpolation::bicubic);
    EXPECT_EQ(cfg.pipeline.group.limb_score_threshold, 0.05);
    EXPECT_EQ(cfg.pipeline.group.min_keypoints, 3);
    EXPECT_EQ(cfg.pipeline.group.pose_score_threshold, 0.1);
    EXPECT_EQ(cfg.pipeline.group.top_k_limbs, 32);
    EXPECT_EQ(cfg.pipeline.group.order, GreedyOrder::per_limb_type);
    EXPECT_EQ(cfg.pipeline.variant, Variant::standard);
    EXPECT_EQ(cfg.stride, 4);
    EXPECT_EQ(cfg.num_types, 17);
    EXPECT_EQ(cfg.pipeline.skeleton.num_limbs(), 19);
    EXPECT_FALSE(cfg.width);
}

TEST(Config, ValuesAreApplied)
{
    const auto cfg = parse_config({{"sigma", 3.5}, {"variant", "qnt+ro"}, {"interpolation", "bilinear"},
                                   {"top_k", 8}, {"greedy_order", "global"}, {"width", 320}});
    EXPECT_EQ(cfg.pipeline.encode.sigma, 3.5);
    EXPECT_EQ(cfg.pipeline.variant, Variant::qnt_ro);
    EXPECT_EQ(cfg.pipeline.decode.interpolation, Interpolation::bilinear);
    EXPECT_EQ(cfg.pipeline.decode.top_k, 8);
    EXPECT_EQ(cfg.pipeline.group.order, GreedyOrder::global);
    EXPECT_EQ(cfg.grid(640, 480).width, 320);
    EXPECT_EQ(cfg.grid(640, 480).height, 480);
}

TEST(Config, ErrorsAreDistinguished)
{
    EXPECT_EQ(config_error({{"sigma", -1}}), ConfigErrorKind::invalid_value);
    EXPECT_EQ(config_error({{"sigma", 0}}), ConfigErrorKind::invalid_value);
    EXPECT_EQ(config_error({{"top_k", 0}}), ConfigErrorKind::invalid_value);
    EXPECT_EQ(config_error({{"sigma", "seven"}}), ConfigErrorKind::invalid_value);
    EXPECT_EQ(config_error({{"variant", "fancy"}}), ConfigErrorKind::invalid_value);
    EXPECT_EQ(config_error({{"supervision_area", 4}}), ConfigErrorKind::not_odd);
    EXPECT_EQ(config_error({{"local_max_window", 2}}), ConfigErrorKind::not_odd);
    EXPECT_EQ(config_error({{"sigmaa", 7}}), ConfigErrorKind::unknown_key);
    EXPECT_EQ(config_error(json::array()), ConfigErrorKind::parse);
    EXPECT_EQ(config_error({{"num_keypoints", 5}}), ConfigErrorKind::invalid_value);
}

TEST(Config, LoadResolvesSkeletonRelativeToFile)
{
    TempDir dir;
    const Skeleton s({{0, 1}, {1, 2}}, 3);
    write_json(skeleton_to_json(s), dir / "sk.json");
    write_json({{"num_keypoints", 3}, {"skeleton", "sk.json"}, {"oks_kappas", {0.1, 0.1, 0.1}}},
               dir / "cfg.json");
    const auto cfg = load_config(dir / "cfg.json");
    EXPECT_EQ(cfg.pipeline.skeleton.num_limbs(), 2);

    dump(dir / "broken.json", "{\"sigma\": ");
    try {
        load_config(dir / "broken.json");
        ADD_FAILURE();
    } catch (const ConfigError& e) {
        EXPECT_EQ(e.kind(), ConfigErrorKind::parse);
    }
}

TEST(Annotations, RoundTrip)
{
    Person p;
    p.keypoints.resize(17);
    p.keypoints[0] = ImageCoord{10.5, 20.25};
    p.keypoints[16] = ImageCoord{1, 2};
    p.scale = 42.0;
    const std::vector<AnnotatedImage> images{{7, 640, 480, {p}}, {8, 320, 320, {}}};
    const auto back = annotations_from_json(annotations_to_json(images));
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back[0].id, 7);
    EXPECT_EQ(back[0].height, 480);
    ASSERT_EQ(back[0].persons.size(), 1u);
    EXPECT_EQ(back[0].persons[0].keypoints, p.keypoints);
    EXPECT_EQ(back[0].persons[0].scale, 42.0);
    EXPECT_TRUE(back[1].persons.empty());
}

TEST(Annotations, MissingScaleFallsBackToBoundingBox)
{
    std::vector<double> kps(51, 0.0);
    kps[0] = 10; kps[1] = 10; kps[2] = 2;
    kps[3] = 40; kps[4] = 50; kps[5] = 2;
    const json doc = {{"images", {{{"id", 1}, {"width", 64}, {"height", 64},
                                   {"persons", {{{"keypoints", kps}}}}}}}};
    const auto images = annotations_from_json(doc);
    EXPECT_DOUBLE_EQ(images[0].persons[0].scale, std::sqrt(30.0 * 40.0));
}

TEST(Annotations, CocoFormat)
{
    std::vector<double> kps(51, 0.0);
    kps[15] = 100; kps[16] = 120; kps[17] = 2;
    const json doc = {
        {"images", {{{"id", 3}, {"width", 640}, {"height", 480}}, {{"id", 4}, {"width", 10}, {"height", 10}}}},
        {"annotations",
         {{{"image_id", 3}, {"keypoints", kps}, {"num_keypoints", 1}, {"area", 400.0}, {"iscrowd", 0}},
          {{"image_id", 3}, {"keypoints", kps}, {"num_keypoints", 1}, {"area", 900.0}, {"iscrowd", 1}},
          {{"image_id", 4}, {"keypoints", std::vector<double>(51, 0.0)}, {"num_keypoints", 0}}}}};
    const auto images = coco_annotations_from_json(doc);
    ASSERT_EQ(images.size(), 1u);
    ASSERT_EQ(images[0].persons.size(), 1u);
    EXPECT_EQ(images[0].persons[0].scale, 20.0);
    EXPECT_EQ(*images[0].persons[0].keypoints[5], (ImageCoord{100, 120}));

    TempDir dir;
    write_json(doc, dir / "coco.json");
    EXPECT_EQ(load_annotations(dir / "coco.json").size(), 1u);
}

TEST(Annotations, MalformedIsFormatError)
{
    try {
        annotations_from_json({{"images", {{{"id", 1}, {"width", 4}, {"height", 4},
                                            {"persons", {{{"keypoints", {1, 2, 3}}}}}}}}});
        ADD_FAILURE();
    } catch (const IoError& e) {
        EXPECT_EQ(e.kind(), IoErrorKind::format);
    }
}

TEST(Candidates, RoundTripAssignsDenseIds)
{
    CandidateSet set{5, 640, 640, {{0, {1.5, 2.5}, 0.9, 0}, {3, {7, 8}, 0.4, 1}}};
    const auto back = candidates_from_json(candidates_to_json(set));
    EXPECT_EQ(back.image_id, 5);
    EXPECT_EQ(back.candidates, set.candidates);
}

TEST(Poses, RoundTripWithAbsentSlots)
{
    PoseSkeleton pose;
    pose.slots.resize(17);
    pose.slots[2] = KeypointCandidate{2, {3, 4}, 0.5, -1};
    pose.slots[9] = KeypointCandidate{9, {30, 40}, 0.7, -1};
    pose.pose_score = 0.6;
    const json doc = poses_to_json(11, std::vector{pose});
    ASSERT_EQ(doc.size(), 1u);
    EXPECT_EQ(doc[0]["keypoints"].size(), 51u);
    EXPECT_EQ(doc[0]["keypoints"][0], 0);
    const auto back = poses_from_json(doc);
    ASSERT_EQ(back.at(11).size(), 1u);
    EXPECT_EQ(back.at(11)[0].slots, pose.slots);
    EXPECT_EQ(back.at(11)[0].pose_score, 0.6);
}
