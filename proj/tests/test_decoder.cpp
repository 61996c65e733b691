#include <gog/decoder.hpp>
#include <gog/encoder.hpp>
#include <gog/eval.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace gog;

namespace {

Person single(int type, ImageCoord p, int num_types = 1)
{
    Person person;
    person.keypoints.resize(static_cast<std::size_t>(num_types));
    person.keypoints[static_cast<std::size_t>(type)] = p;
    return person;
}

HeatmapTensor encode_one(const GridSpec& spec, ImageCoord p)
{
    return encode_heatmaps(std::vector<Person>{single(0, p)}, spec, {});
}

HeatmapTensor random_heatmap(std::mt19937_64& rng, const GridSpec& spec, int persons, double noise)
{
    std::uniform_real_distribution<double> ux(0.0, spec.width - 1.0), uy(0.0, spec.height - 1.0);
    std::vector<Person> ps;
    for (int i = 0; i < persons; ++i) {
        Person p;
        p.keypoints.resize(static_cast<std::size_t>(spec.num_types));
        for (auto& k : p.keypoints) k = ImageCoord{ux(rng), uy(rng)};
        ps.push_back(std::move(p));
    }
    auto h = encode_heatmaps(ps, spec, {});
    if (noise > 0.0) add_noise(h.values.data(), noise, rng(), std::pair{0.0f, 1.0f});
    return h;
}

DecodeConfig bilinear()
{
    DecodeConfig cfg;
    cfg.interpolation = Interpolation::bilinear;
    return cfg;
}

}  // namespace

TEST(KeysKernel, CatmullRomValues)
{
    EXPECT_EQ(keys_kernel(0.0), 1.0);
    EXPECT_EQ(keys_kernel(1.0), 0.0);
    EXPECT_EQ(keys_kernel(2.0), 0.0);
    EXPECT_DOUBLE_EQ(keys_kernel(0.5), 0.5625);
    EXPECT_DOUBLE_EQ(keys_kernel(1.5), -0.0625);
    for (double f = 0.0; f < 1.0; f += 0.0625)
        EXPECT_NEAR(keys_kernel(1 + f) + keys_kernel(f) + keys_kernel(1 - f) + keys_kernel(2 - f), 1.0,
                    1e-15);
}

TEST(Upsample, StrideOneIsIdentity)
{
    std::mt19937_64 rng(1);
    const GridSpec spec{37, 23, 1, 2};
    const auto h = random_heatmap(rng, spec, 3, 0.05);
    for (auto cfg : {DecodeConfig{}, bilinear()}) EXPECT_EQ(upsample(h, cfg), h.values);
}

TEST(Upsample, ConstantGridStaysConstant)
{
    const GridSpec spec{64, 48, 4, 1};
    HeatmapTensor h{spec, Tensor3<float>(1, 12, 16, 0.37f)};
    for (auto cfg : {DecodeConfig{}, bilinear()})
        for (float v : upsample(h, cfg).data()) EXPECT_NEAR(v, 0.37f, 1e-6f);
}

TEST(Upsample, InterpolatesThroughGridValuesAtCellCenters)
{
    // Stride 2: cell centers sit at pixel 0.5 + 2u, so no pixel hits a center;
    // stride 3: centers at 1 + 3u hit pixels exactly.
    std::mt19937_64 rng(2);
    const GridSpec spec{30, 30, 3, 1};
    const auto h = random_heatmap(rng, spec, 2, 0.0);
    const auto full = upsample(h, {});
    for (int v = 0; v < 10; ++v)
        for (int u = 0; u < 10; ++u) EXPECT_EQ(full(0, 3 * v + 1, 3 * u + 1), h.values(0, v, u));
}

TEST(Upsample, BicubicArgmaxRecoversIntegerKeypoints)
{
    const GridSpec spec{256, 256, 4, 1};
    std::mt19937_64 rng(100);
    std::uniform_int_distribution<int> pos(12, 243);
    for (int i = 0; i < 100; ++i) {
        const ImageCoord p{double(pos(rng)), double(pos(rng))};
        const auto full = upsample(encode_one(spec, p), {});
        const auto data = full.data();
        const auto best = std::max_element(data.begin(), data.end()) - data.begin();
        EXPECT_EQ(best % 256, p.x);
        EXPECT_EQ(best / 256, p.y);
    }
}

TEST(FindPeaks, SingleKeypoint)
{
    const GridSpec spec{160, 160, 4, 1};
    auto cands = find_peaks(upsample(encode_one(spec, {41.0, 21.0}), {}), {});
    ASSERT_EQ(cands.size(), 1u);
    EXPECT_EQ(cands[0].position, (ImageCoord{41.0, 21.0}));
    EXPECT_NEAR(cands[0].score, 1.0, 1e-2);

    const GridSpec r1{160, 160, 1, 1};
    cands = find_peaks(upsample(encode_one(r1, {41.0, 21.0}), {}), {});
    ASSERT_EQ(cands.size(), 1u);
    EXPECT_EQ(cands[0].score, 1.0);
}

TEST(FindPeaks, TwoSeparatedKeypoints)
{
    const GridSpec spec{160, 160, 4, 1};
    const std::vector<Person> ps{single(0, {50.0, 60.0}), single(0, {90.0, 60.0})};
    const auto full = upsample(encode_heatmaps(ps, spec, {}), {});

    // brute-force scan: strict 8-neighborhood maxima above threshold
    std::vector<ImageCoord> strict;
    for (int y = 1; y < 159; ++y)
        for (int x = 1; x < 159; ++x) {
            const float v = full(0, y, x);
            bool is_max = v >= 0.1f;
            for (int dy = -1; dy <= 1 && is_max; ++dy)
                for (int dx = -1; dx <= 1 && is_max; ++dx)
                    if (dx || dy) is_max = v > full(0, y + dy, x + dx);
            if (is_max) strict.push_back({double(x), double(y)});
        }
    ASSERT_EQ(strict.size(), 2u);

    const auto cands = find_peaks(full, {});
    ASSERT_EQ(cands.size(), 2u);
    EXPECT_EQ(cands[0].position, (ImageCoord{50.0, 60.0}));
    EXPECT_EQ(cands[1].position, (ImageCoord{90.0, 60.0}));
    EXPECT_EQ(cands[0].position, strict[0]);
    EXPECT_EQ(cands[1].position, strict[1]);
}

TEST(FindPeaks, PlateauYieldsOneCandidate)
{
    Tensor3<float> full(1, 20, 20, 0.0f);
    for (int y = 5; y < 10; ++y)
        for (int x = 7; x < 12; ++x) full(0, y, x) = 0.5f;
    const auto cands = find_peaks(full, {});
    ASSERT_EQ(cands.size(), 1u);
    EXPECT_EQ(cands[0].position, (ImageCoord{7.0, 5.0}));
    EXPECT_EQ(cands[0].score, 0.5);
}

TEST(FindPeaks, ThresholdAndWindow)
{
    Tensor3<float> full(1, 10, 10, 0.0f);
    full(0, 2, 2) = 0.5f;
    full(0, 2, 4) = 0.6f;
    full(0, 8, 8) = 0.05f;
    EXPECT_EQ(find_peaks(full, {}).size(), 2u);
    DecodeConfig wide;
    wide.local_max_window = 5;
    const auto c = find_peaks(full, wide);
    ASSERT_EQ(c.size(), 1u);
    EXPECT_EQ(c[0].position.x, 4.0);
    DecodeConfig bad;
    bad.local_max_window = 4;
    EXPECT_THROW(find_peaks(full, bad), std::invalid_argument);
}

TEST(FindPeaks, InvariantUnderUniformScaling)
{
    const GridSpec spec{160, 160, 4, 3};
    std::vector<Person> ps;
    for (int i = 0; i < 3; ++i) {
        Person p;
        p.keypoints.resize(3);
        for (int c = 0; c < 3; ++c) p.keypoints[c] = ImageCoord{21.5 + 40 * i + 4 * c, 61.5 + 8 * c};
        ps.push_back(p);
    }
    const auto h = encode_heatmaps(ps, spec, {});
    const auto base = find_peaks_sparse(h, {});
    ASSERT_EQ(base.size(), 9u);
    for (float alpha : {1.0f, 0.75f, 0.5f, 0.25f}) {
        auto scaled = h;
        for (auto& v : scaled.values.data()) v *= alpha;
        const auto c = find_peaks_sparse(scaled, {});
        ASSERT_EQ(c.size(), base.size());
        for (std::size_t i = 0; i < c.size(); ++i) {
            EXPECT_EQ(c[i].position, base[i].position);
            EXPECT_NEAR(c[i].score, alpha * base[i].score, 1e-6);
        }
    }
}

TEST(FindPeaksSparse, MatchesDenseRoute)
{
    std::mt19937_64 rng(42);
    int total = 0;
    for (int trial = 0; trial < 60; ++trial) {
        const int stride = 1 + trial % 5;
        const GridSpec spec{70 + 7 * (trial % 9), 50 + 5 * (trial % 7), stride, 2};
        const auto h = random_heatmap(rng, spec, 1 + trial % 4, trial % 3 == 0 ? 0.0 : 0.08);
        DecodeConfig cfg;
        cfg.interpolation = trial % 2 ? Interpolation::bilinear : Interpolation::bicubic;
        cfg.keypoint_threshold = std::array{0.0, 0.05, 0.1, 0.3}[trial % 4];
        cfg.local_max_window = trial % 5 == 0 ? 5 : 3;
        const auto dense = find_peaks(upsample(h, cfg), cfg);
        const auto sparse = find_peaks_sparse(h, cfg, 1 + trial % 3);
        ASSERT_EQ(dense, sparse) << "trial " << trial;
        total += static_cast<int>(dense.size());
    }
    EXPECT_GT(total, 100);
}

TEST(TopK, PerTypeSelection)
{
    std::vector<KeypointCandidate> cands;
    for (int i = 0; i < 5; ++i) cands.push_back({0, {double(i), 0.0}, 0.1 * (i + 1)});
    auto kept = top_k_per_type(cands, 32);
    ASSERT_EQ(kept.size(), 5u);
    EXPECT_EQ(kept[0].score, 0.5);

    cands.clear();
    for (int i = 0; i < 40; ++i) cands.push_back({1, {double(i), 0.0}, (i * 7 % 40) / 40.0});
    kept = top_k_per_type(cands, 32);
    ASSERT_EQ(kept.size(), 32u);
    for (const auto& c : kept) EXPECT_GE(c.score, 8 / 40.0);
    for (std::size_t i = 1; i < kept.size(); ++i) EXPECT_GE(kept[i - 1].score, kept[i].score);
}

TEST(TopK, TiesAtTheCutUsePosition)
{
    std::vector<KeypointCandidate> cands = {
        {0, {5.0, 3.0}, 0.5}, {0, {1.0, 3.0}, 0.5}, {0, {9.0, 1.0}, 0.5}, {0, {0.0, 0.0}, 0.9}};
    const auto kept = top_k_per_type(cands, 3);
    ASSERT_EQ(kept.size(), 3u);
    EXPECT_EQ(kept[0].position, (ImageCoord{0.0, 0.0}));
    EXPECT_EQ(kept[1].position, (ImageCoord{9.0, 1.0}));
    EXPECT_EQ(kept[2].position, (ImageCoord{1.0, 3.0}));
    std::reverse(cands.begin(), cands.end());
    EXPECT_EQ(top_k_per_type(cands, 3), kept);
}

TEST(DecodeWithRefinement, ExactOffsetsRecoverKeypoints)
{
    const GridSpec spec{160, 160, 4, 1};
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> pos(10.0, 150.0);
    for (int i = 0; i < 100; ++i) {
        const ImageCoord p = i < 10 ? ImageCoord{std::round(pos(rng)), std::round(pos(rng))}
                                    : ImageCoord{pos(rng), pos(rng)};
        const std::vector<Person> ps{single(0, p)};
        const auto cands = decode_with_refinement(encode_heatmaps(ps, spec, {}),
                                                  encode_refinement_offsets(ps, spec), {});
        ASSERT_EQ(cands.size(), 1u);
        if (i < 10) {
            EXPECT_EQ(distance(cands[0].position, p), 0.0);
        }
        EXPECT_LT(distance(cands[0].position, p), 1e-6);
    }
}

TEST(DecodeWithRefinement, ZeroOffsetsFallOnCellCenters)
{
    const GridSpec spec{160, 160, 4, 1};
    const std::vector<Person> ps{single(0, {43.9, 19.6})};
    auto ro = encode_refinement_offsets(ps, spec);
    std::fill(ro.values.data().begin(), ro.values.data().end(), 0.0f);
    const auto cands = decode_with_refinement(encode_heatmaps(ps, spec, {}), ro, {});
    ASSERT_EQ(cands.size(), 1u);
    EXPECT_EQ(cands[0].position, (ImageCoord{45.5, 21.5}));
    EXPECT_LE(distance(cands[0].position, {43.9, 19.6}), 2.0 * std::sqrt(2.0));
}

TEST(DecodeWithRefinement, RejectsShapeMismatch)
{
    const GridSpec spec{160, 160, 4, 1};
    const std::vector<Person> ps{single(0, {40.0, 40.0})};
    auto ro = encode_refinement_offsets(ps, GridSpec{164, 160, 4, 1});
    EXPECT_THROW(decode_with_refinement(encode_heatmaps(ps, spec, {}), ro, {}), std::invalid_argument);
}

TEST(Decode, BilinearLessPreciseThanBicubic)
{
    const GridSpec spec{256, 256, 4, 1};
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> pos(16.0, 240.0);
    double cubic = 0.0, linear = 0.0;
    for (int i = 0; i < 100; ++i) {
        const ImageCoord p{pos(rng), pos(rng)};
        const auto h = encode_one(spec, p);
        cubic += distance(decode_keypoints(h, {}).at(0).position, p);
        linear += distance(decode_keypoints(h, bilinear()).at(0).position, p);
    }
    EXPECT_GT(linear, cubic);
}

TEST(Decode, Deterministic)
{
    std::mt19937_64 rng(5);
    const GridSpec spec{200, 160, 4, 17};
    const auto h = random_heatmap(rng, spec, 5, 0.1);
    EXPECT_EQ(decode_keypoints(h, {}, 1), decode_keypoints(h, {}, 4));
    EXPECT_EQ(decode_keypoints(h, {}, 3), decode_keypoints(h, {}, 3));
}
