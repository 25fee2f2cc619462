#include "gsedit/tracing.hpp"

#include "gsedit/errors.hpp"
#include "synthetic.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

namespace gsedit {
namespace {

using testing::axis_camera;
using testing::make_gaussian;

SemanticMask full_mask(const Camera& cam, std::uint8_t value, LabelId label = 1) {
    SemanticMask m;
    m.camera_id = "c";
    m.camera = cam;
    m.masks.emplace(label, BinaryMask(cam.width, cam.height, value));
    return m;
}

TEST(Accumulate, SingleGaussianAllOnes) {
    const Camera cam = axis_camera(17, 17, 20.0);
    GaussianScene scene(0);
    scene.push_back(make_gaussian({0, 0, 2}, 0.1, 0.8, {1, 1, 1}));
    TraceAccumulator acc(1);
    accumulate(acc, scene, full_mask(cam, 1));
    const auto out = render(scene, cam);
    double expected = 0.0;
    std::size_t covered = 0;
    for (int y = 0; y < 17; ++y)
        for (int x = 0; x < 17; ++x) {
            expected += out.alpha.at(x, y);
            covered += out.alpha.at(x, y) > 0.0;
        }
    EXPECT_NEAR(acc.weight(0, 1), expected, 1e-12);
    EXPECT_EQ(acc.counter(0, 1), double(covered));
    const double avg = acc.average(0, 1, TraceAverage::Pixels);
    EXPECT_GT(avg, 0.0);
    EXPECT_LE(avg, 1.0);
    EXPECT_NEAR(acc.average(0, 1, TraceAverage::Coverage), 1.0, 1e-12);
}

TEST(Accumulate, AllZeroMaskCountsButAddsNoWeight) {
    const Camera cam = axis_camera(17, 17, 20.0);
    GaussianScene scene(0);
    scene.push_back(make_gaussian({0, 0, 2}, 0.1, 0.8, {1, 1, 1}));
    TraceAccumulator acc(1);
    accumulate(acc, scene, full_mask(cam, 0));
    EXPECT_EQ(acc.weight(0, 1), 0.0);
    EXPECT_GT(acc.counter(0, 1), 0.0);
}

TEST(Accumulate, OcclusionStackOnePixel) {
    const Camera cam = axis_camera(1, 1, 1.0);
    GaussianScene scene(0);
    scene.push_back(make_gaussian({0, 0, 3}, 0.5, 0.6, {0, 0, 1}));  // back
    scene.push_back(make_gaussian({0, 0, 2}, 0.5, 0.3, {1, 0, 0}));  // front
    TraceAccumulator acc(2);
    accumulate(acc, scene, full_mask(cam, 1));
    // Both centers project to the single pixel center, so alpha = opacity.
    EXPECT_NEAR(acc.weight(1, 1), 0.3, 1e-12);
    EXPECT_NEAR(acc.weight(0, 1), 0.6 * (1.0 - 0.3), 1e-12);
}

TEST(Accumulate, RejectsMaskOfWrongSize) {
    const Camera cam = axis_camera(16, 16, 20.0);
    SemanticMask m = full_mask(cam, 1);
    m.camera_id = "left";
    m.masks.at(1) = BinaryMask(8, 8, 1);
    TraceAccumulator acc(0);
    try {
        accumulate(acc, GaussianScene{}, m);
        FAIL();
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("left"), std::string::npos);
    }
}

TEST(Accumulate, WeightAtMostCounter) {
    auto s = testing::sphere_scene();
    TraceAccumulator acc(s.scene.size());
    for (const auto& m : testing::membership_masks(s)) accumulate(acc, s.scene, m);
    const auto& e = acc.entry(testing::kSphereLabel);
    for (std::size_t i = 0; i < s.scene.size(); ++i) {
        EXPECT_GE(e.weight[i], 0.0);
        EXPECT_LE(e.weight[i], e.coverage[i] + 1e-12);
        EXPECT_LE(e.coverage[i], e.counter[i]);
    }
}

TEST(Accumulate, FullMaskSumEqualsPixelAlpha) {
    auto s = testing::sphere_scene();
    for (const auto& v : s.views) {
        const auto out = render(s.scene, v.camera);
        for (int y = 0; y < out.height(); ++y)
            for (int x = 0; x < out.width(); ++x) {
                double sum = 0.0;
                for (const auto& c : out.contributions_at(x, y)) sum += c.alpha * c.transmittance;
                ASSERT_NEAR(sum, out.alpha.at(x, y), 1e-6);
            }
    }
}

TEST(AssignLabels, StrictThreshold) {
    GaussianScene scene(0);
    scene.push_back(make_gaussian({0, 0, 2}, 0.1, 0.8, {1, 1, 1}));
    scene.push_back(make_gaussian({0, 0, 2}, 0.1, 0.8, {1, 1, 1}));
    scene.push_back(make_gaussian({0, 0, 2}, 0.1, 0.8, {1, 1, 1}), label_bit(1));
    TraceAccumulator acc(3);
    auto& e = acc.entry_for(1);
    e.weight = {0.9, 0.7, 0.0};
    e.counter = {1.0, 1.0, 0.0};
    e.coverage = {1.0, 1.0, 0.0};
    assign_labels(acc, scene, 0.7);
    EXPECT_TRUE(scene.has_label(0, 1));
    EXPECT_FALSE(scene.has_label(1, 1));
    EXPECT_TRUE(scene.has_label(2, 1));  // never rendered: keeps its label
}

TEST(AssignLabels, RejectsThresholdOutsideUnitInterval) {
    GaussianScene scene(0);
    TraceAccumulator acc(0);
    EXPECT_THROW(assign_labels(acc, scene, 1.0), ValidationError);
    EXPECT_THROW(assign_labels(acc, scene, 0.0), ValidationError);
}

TEST(AssignLabels, SphereScene) {
    auto s = testing::sphere_scene();
    ASSERT_EQ(s.scene.size(), 700u);
    testing::trace_sphere(s, 0.7);
    const auto a = testing::label_accuracy(s.scene, s.is_sphere, testing::kSphereLabel);
    EXPECT_GE(a.recall, 0.99);
    EXPECT_LE(a.false_positive_rate, 0.01);
}

TEST(AssignLabels, MonotoneInThreshold) {
    auto s = testing::sphere_scene();
    TraceAccumulator acc(s.scene.size());
    for (const auto& m : testing::membership_masks(s)) accumulate(acc, s.scene, m);
    for (auto mode : {TraceAverage::Coverage, TraceAverage::Pixels}) {
        std::size_t previous = s.scene.size() + 1;
        for (double t = 0.01; t < 1.0; t += 0.07) {
            GaussianScene copy = s.scene;
            assign_labels(acc, copy, t, mode);
            const std::size_t n = copy.label_member_count(testing::kSphereLabel);
            EXPECT_LE(n, previous);
            previous = n;
        }
    }
}

TEST(AssignLabels, AccumulationIsDeterministic) {
    auto s = testing::sphere_scene();
    TraceAccumulator a(s.scene.size()), b(s.scene.size());
    for (const auto& m : testing::membership_masks(s)) {
        accumulate(a, s.scene, m);
        accumulate(b, s.scene, m);
    }
    EXPECT_EQ(a.entry(0).weight, b.entry(0).weight);
    EXPECT_EQ(a.entry(0).coverage, b.entry(0).coverage);
}

TEST(InheritLabels, ChildrenCopyParentRow) {
    GaussianScene scene(0);
    for (int i = 0; i < 4; ++i) scene.push_back(Gaussian{});
    scene.mutable_labels()[0] = label_bit(1);
    const std::vector<std::size_t> kids{1, 2};
    inherit_labels(scene, 0, kids, 3);
    EXPECT_EQ(scene.labels()[1], label_bit(1));
    EXPECT_EQ(scene.labels()[2], label_bit(1));
    EXPECT_EQ(scene.generations()[2], 3);
    const std::vector<std::size_t> kid{0};
    inherit_labels(scene, 3, kid, 4);
    EXPECT_EQ(scene.labels()[0], 0u);
}

TEST(Tracing, LabelMaskFollowsMovedObject) {
    auto s = testing::sphere_scene();
    testing::trace_sphere(s);
    const Camera& cam = s.views[0].camera;
    RenderOptions only;
    only.labels_only = testing::kSphereLabel;
    const auto before = render(s.scene, cam, only);
    for (std::size_t i = 0; i < s.scene.size(); ++i)
        if (s.scene.has_label(i, testing::kSphereLabel)) s.scene[i].position += Vec3(0.0, 0.0, 0.3);
    const auto after = render(s.scene, cam, only);
    const auto centroid_y = [](const Image& alpha) {
        double sum = 0.0, wy = 0.0;
        for (int y = 0; y < alpha.height; ++y)
            for (int x = 0; x < alpha.width; ++x) {
                sum += alpha.at(x, y);
                wy += alpha.at(x, y) * y;
            }
        return wy / sum;
    };
    EXPECT_LT(centroid_y(after.alpha), centroid_y(before.alpha) - 1.0);  // moved up in the image
}

TEST(Backproject, PrincipalPointIdentityPose) {
    const Camera cam = axis_camera(17, 17, 20.0);
    Image depth(17, 17, 1, 2.0), alpha(17, 17, 1, 1.0);
    const Vec3 p = backproject_point({cam.cx(), cam.cy()}, cam, depth, alpha);
    EXPECT_NEAR((p - Vec3(0, 0, 2)).norm(), 0.0, 1e-12);
}

TEST(Backproject, EmptyBackgroundIsAnError) {
    const Camera cam = axis_camera(17, 17, 20.0);
    Image depth(17, 17, 1, 2.0), alpha(17, 17, 1, 0.0);
    EXPECT_THROW(backproject_point({3.5, 3.5}, cam, depth, alpha), ValidationError);
    alpha = Image(17, 17, 1, 0.5);
    EXPECT_THROW(backproject_point({3.5, 3.5}, cam, depth, alpha), ValidationError);
    EXPECT_THROW(backproject_point({-1.0, 3.5}, cam, depth, alpha), ValidationError);
}

TEST(Reproject, PrincipalPointAndBehindCamera) {
    const Camera cam = axis_camera(17, 17, 20.0);
    const std::vector<Vec3> pts{{0, 0, 2}, {0, 0, -2}, {100, 0, 1}};
    const auto out = reproject_points(pts, cam);
    ASSERT_EQ(out.size(), 1u);
    EXPECT_EQ(out[0].point, 0u);
    EXPECT_NEAR(out[0].pixel.x(), cam.cx(), 1e-12);
}

TEST(Reproject, RoundTripThroughRenderedDepth) {
    auto s = testing::sphere_scene();
    const Camera& cam = s.views[2].camera;
    const auto out = render(s.scene, cam);
    int checked = 0;
    for (int y = 4; y < cam.height; y += 9) {
        for (int x = 3; x < cam.width; x += 7) {
            if (out.alpha.at(x, y) <= 0.5) continue;
            const Vec2 click(x + 0.5, y + 0.5);
            const Vec3 world = backproject_point(click, cam, out.depth, out.alpha);
            const std::vector<Vec3> pts{world};
            const auto back = reproject_points(pts, cam);
            ASSERT_EQ(back.size(), 1u);
            EXPECT_LT((back[0].pixel - click).norm(), 0.5);
            ++checked;
        }
    }
    EXPECT_GT(checked, 10);
}

TEST(Reproject, ClickOnSphereLandsOnSphereInOtherView) {
    auto s = testing::sphere_scene();
    const auto out = render(s.scene, s.views[0].camera);
    const auto c = s.views[0].camera.project(s.sphere_center);
    ASSERT_TRUE(c);
    const Vec3 world = backproject_point(*c, s.views[0].camera, out.depth, out.alpha);
    EXPECT_LT(std::abs((world - s.sphere_center).norm() - s.sphere_radius), 0.1);
    const std::vector<Vec3> pts{world};
    const auto other = reproject_points(pts, s.views[3].camera);
    ASSERT_EQ(other.size(), 1u);
    const auto mask = testing::membership_mask(render(s.scene, s.views[3].camera), s.is_sphere);
    EXPECT_TRUE(mask.at(int(other[0].pixel.x()), int(other[0].pixel.y())));
}

TEST(RemoveLabel, LeavesExactlyThePlane) {
    auto s = testing::sphere_scene();
    testing::trace_sphere(s);
    const auto out = remove_label(s.scene, testing::kSphereLabel);
    EXPECT_EQ(out.size(), 500u);
    std::size_t k = 0;
    for (std::size_t i = 0; i < s.scene.size(); ++i)
        if (!s.is_sphere[i]) EXPECT_EQ(out[k++], s.scene[i]);
    EXPECT_EQ(out.label_names().count(testing::kSphereLabel), 0u);
    out.check_invariants();
}

TEST(RemoveLabel, ZeroMembersKeepsRows) {
    auto s = testing::sphere_scene();
    s.scene.set_label_name(5, "ghost");
    const auto out = remove_label(s.scene, 5);
    EXPECT_EQ(out.gaussians(), s.scene.gaussians());
    EXPECT_EQ(out.labels(), s.scene.labels());
    EXPECT_THROW(remove_label(s.scene, 9), ValidationError);
}

TEST(RemoveLabel, MaskedAlphaDropsWhereNothingIsBehind) {
    auto s = testing::sphere_scene();
    testing::trace_sphere(s);
    const auto removed = remove_label(s.scene, testing::kSphereLabel);
    // Low camera: the upper half of the sphere is seen against empty space.
    const Camera cam = Camera::look_at({3.0, 0.4, 1.0}, {0.0, 0.0, 0.9}, Vec3::UnitZ(), 60.0, 64, 64);
    const auto mask = testing::membership_mask(render(s.scene, cam), s.is_sphere);
    const auto after = render(removed, cam);
    // Oracle: a ray that misses the plane's 3-sigma slab footprint cannot pick
    // up any alpha, up to the 2D dilation (a couple of pixels).
    const double half_x = 12 * 0.12 + 3 * 0.075, half_y = 9.5 * 0.12 + 3 * 0.075;
    BinaryMask hits(cam.width, cam.height);
    for (int y = 0; y < cam.height; ++y)
        for (int x = 0; x < cam.width; ++x) {
            const Vec3 o = cam.center();
            const Vec3 d = cam.backproject({x + 0.5, y + 0.5}, 1.0) - o;
            for (double z : {-0.03, 0.03}) {
                const double t = (z - o.z()) / d.z();
                const Vec3 q = o + t * d;
                if (t > 0 && std::abs(q.x()) <= half_x && std::abs(q.y()) <= half_y) hits.at(x, y) = 1;
            }
        }
    const auto near_plane = [&](int x, int y) {
        for (int dy = -3; dy <= 3; ++dy)
            for (int dx = -3; dx <= 3; ++dx) {
                const int u = x + dx, v = y + dy;
                if (u >= 0 && v >= 0 && u < cam.width && v < cam.height && hits.at(u, v)) return true;
            }
        return false;
    };
    std::size_t open = 0;
    for (int y = 0; y < cam.height; ++y)
        for (int x = 0; x < cam.width; ++x) {
            if (!mask.at(x, y) || near_plane(x, y)) continue;
            ++open;
            EXPECT_EQ(after.alpha.at(x, y), 0.0) << x << "," << y;
        }
    EXPECT_GT(open, 50u);
}

TEST(MaskManifest, LoadsAndNamesBadCamera) {
    const auto dir = std::filesystem::temp_directory_path() / "gsedit_manifest_test";
    std::filesystem::create_directories(dir);
    const Camera cam = axis_camera(8, 6, 10.0);
    BinaryMask m(8, 6);
    m.at(2, 3) = 1;
    write_file(dir / "m.png", encode_mask_png(m));
    std::ofstream(dir / "ok.json") << R"({"masks": [{"file": "m.png", "camera": "a", "label": 2, "name": "cup"}]})";
    std::ofstream(dir / "bad.json") << R"({"masks": [{"file": "m.png", "camera": "zz", "label": 2}]})";
    const std::vector<NamedCamera> cams{{"a", cam}};
    std::map<LabelId, std::string> names;
    const auto masks = load_mask_manifest(dir / "ok.json", cams, &names);
    ASSERT_EQ(masks.size(), 1u);
    EXPECT_EQ(masks[0].masks.at(2), m);
    EXPECT_EQ(names.at(2), "cup");
    try {
        load_mask_manifest(dir / "bad.json", cams);
        FAIL();
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("zz"), std::string::npos);
    }
    const std::vector<NamedCamera> small{{"a", axis_camera(4, 4, 10.0)}};
    EXPECT_THROW(load_mask_manifest(dir / "ok.json", small), ValidationError);
}

TEST(PromptExport, JsonShape) {
    const auto j = prompts_to_json({{"v1", PromptPoint{0, {3.5, 4.25}}}});
    EXPECT_EQ(j.dump(), R"([{"pixel":[3.5,4.25],"view_id":"v1"}])");
}

}  // namespace
}  // namespace gsedit
