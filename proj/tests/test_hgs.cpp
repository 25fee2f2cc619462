#include "gsedit/hgs.hpp"

#include "gsedit/errors.hpp"
#include "synthetic.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace gsedit {
namespace {

class ZeroGuidance : public Guidance {
public:
    GuidanceResponse guide(const GuidanceRequest& r) override {
        GuidanceResponse out;
        out.grad = Image(r.rendering.width, r.rendering.height, 3);
        return out;
    }
};

class FailingGuidance : public Guidance {
public:
    GuidanceResponse guide(const GuidanceRequest&) override { throw GuidanceTransportError("down", 3, 503); }
};

std::vector<NamedCamera> ring_cameras(int count, int size = 32) {
    std::vector<NamedCamera> out;
    for (int i = 0; i < count; ++i) {
        const double a = 2.0 * 3.141592653589793 * i / count;
        out.push_back({"c" + std::to_string(i), Camera::look_at({4.0 * std::cos(a), 4.0 * std::sin(a), 1.0},
                                                                 Vec3::Zero(), Vec3::UnitZ(), size, size, size)});
    }
    return out;
}

GaussianScene cloud(std::mt19937_64& rng, int n, int degree = 0) {
    std::normal_distribution<double> nd(0.0, 0.5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    GaussianScene s(degree);
    for (int i = 0; i < n; ++i) {
        Gaussian g = testing::make_gaussian({nd(rng), nd(rng), nd(rng)}, 0.05 + 0.15 * u(rng), 0.3 + 0.6 * u(rng),
                                            {u(rng), u(rng), u(rng)});
        g.rotation = Vec4(nd(rng), nd(rng), nd(rng), nd(rng)).normalized();
        for (int k = 3; k < 3 * sh_coefficient_count(degree); ++k) g.sh[k] = 0.1 * nd(rng);
        s.push_back(g);
    }
    return s;
}

// Elementwise oracle over flattened parameters.
double flat_anchor_loss(const GaussianScene& s, const std::vector<double>& lambda_gen,
                        const std::array<double, 5>& lambda_p) {
    double total = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const Gaussian& a = s[i];
        const Gaussian& b = s.anchors()[i];
        const double l = lambda_gen[s.generations()[i]];
        double x = 0, sc = 0, q = 0, o = 0, c = 0;
        for (int k = 0; k < 3; ++k) x += std::pow(a.position[k] - b.position[k], 2);
        for (int k = 0; k < 3; ++k) sc += std::pow(a.log_scale[k] - b.log_scale[k], 2);
        for (int k = 0; k < 4; ++k) q += std::pow(a.rotation[k] - b.rotation[k], 2);
        o = std::pow(a.opacity - b.opacity, 2);
        for (int k = 0; k < 3 * sh_coefficient_count(s.sh_degree()); ++k) c += std::pow(a.sh[k] - b.sh[k], 2);
        total += l * (lambda_p[0] * x + lambda_p[1] * sc + lambda_p[2] * q + lambda_p[3] * o + lambda_p[4] * c);
    }
    return total;
}

TEST(AnchorLoss, ZeroAtAnchors) {
    std::mt19937_64 rng(1);
    auto s = cloud(rng, 20, 2);
    snapshot_anchors(s);
    const auto l = anchor_loss(s, AnchorSchedule());
    EXPECT_EQ(l.total, 0.0);
    snapshot_anchors(s);
    EXPECT_EQ(anchor_loss(s, AnchorSchedule()).total, 0.0);
}

TEST(AnchorLoss, ScalarDriftOfTwo) {
    GaussianScene s(0);
    s.push_back(Gaussian{});
    snapshot_anchors(s);
    s[0].opacity += 2.0;
    const auto l = anchor_loss(s, AnchorSchedule(1.0, 1.0, 2.0, {1, 1, 1, 1, 1}));
    EXPECT_DOUBLE_EQ(l.per_property[static_cast<int>(Property::Opacity)], 4.0);
    EXPECT_DOUBLE_EQ(l.total, 4.0);
}

TEST(AnchorLoss, RequiresAnchors) {
    GaussianScene s(0);
    s.push_back(Gaussian{});
    EXPECT_THROW(anchor_loss(s, AnchorSchedule()), ValidationError);
}

TEST(AnchorLoss, MatchesElementwiseOracle) {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> nd(0.0, 0.1);
    auto s = cloud(rng, 60, 3);
    for (std::size_t i = 0; i < s.size(); ++i) s.mutable_generations()[i] = static_cast<int>(i % 4);
    snapshot_anchors(s);
    for (auto& g : s.mutable_gaussians())
        for_each_parameter(g, 3, [&](Property, double& v) { v += nd(rng); });
    AnchorSchedule schedule(0.7, 1.3, 2.0, {1.0, 0.9, 0.8, 0.5, 0.1});
    schedule.start(3);
    const std::vector<double> lambda{0.7 * 8, 1.3 * 4, 1.3 * 2, 1.3};
    EXPECT_NEAR(anchor_loss(s, schedule).total, flat_anchor_loss(s, lambda, {1.0, 0.9, 0.8, 0.5, 0.1}), 1e-12);
}

TEST(AnchorLoss, SnapshotThenPositionPerturbation) {
    std::mt19937_64 rng(3);
    auto s = cloud(rng, 10);
    snapshot_anchors(s);
    double expected = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const double d = 0.01 * (i + 1);
        s[i].position.x() += d;
        expected += d * d;
    }
    EXPECT_NEAR(anchor_loss(s, AnchorSchedule()).per_property[0], expected, 1e-15);
}

TEST(Schedule, GrowthRaisesOlderGenerations) {
    AnchorSchedule g2(1.0, 0.5, 2.0), g1(1.0, 0.5, 1.0);
    for (int round = 1; round <= 4; ++round) {
        const auto before2 = g2.lambdas(), before1 = g1.lambdas();
        g2.advance(round);
        g1.advance(round);
        for (int j = 0; j < round; ++j) {
            EXPECT_GT(g2.lambda(j), before2[j]);
            EXPECT_EQ(g1.lambda(j), before1[j]);
        }
        EXPECT_EQ(g2.lambda(round), 0.5);
    }
    EXPECT_EQ(g2.lambda(0), 16.0);
    AnchorSchedule resumed(1.0, 0.5, 2.0);
    resumed.start(4);
    EXPECT_EQ(resumed.lambdas(), g2.lambdas());
}

std::vector<std::size_t> sort_oracle(const std::vector<double>& stat, double percent) {
    std::vector<std::size_t> idx(stat.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return stat[a] > stat[b]; });
    const auto count = static_cast<std::size_t>(std::ceil(percent * stat.size() / 100.0));
    idx.resize(count);
    return idx;
}

TEST(SelectTopPercent, MatchesFullSortIncludingTies) {
    std::mt19937_64 rng(4);
    for (std::size_t n : {10u, 100u, 10000u}) {
        for (double k : {1.0, 5.0, 20.0}) {
            for (bool ties : {false, true}) {
                std::vector<double> stat(n);
                std::uniform_real_distribution<double> u(0.0, 1.0);
                for (auto& v : stat) v = ties ? std::floor(u(rng) * 4.0) : u(rng);
                std::vector<std::size_t> all(n);
                std::iota(all.begin(), all.end(), 0);
                const auto got = select_top_percent(stat, all, k);
                EXPECT_EQ(got, sort_oracle(stat, k)) << n << " " << k;
                EXPECT_EQ(got.size(), static_cast<std::size_t>(std::ceil(k * n / 100.0)));
            }
        }
    }
}

TEST(SelectTopPercent, ExactCountsAndEdgeCases) {
    std::vector<double> stat(100, 1.0);
    std::vector<std::size_t> all(100);
    std::iota(all.begin(), all.end(), 0);
    EXPECT_EQ(select_top_percent(stat, all, 5.0), (std::vector<std::size_t>{0, 1, 2, 3, 4}));
    EXPECT_TRUE(select_top_percent(stat, all, 0.0).empty());
    EXPECT_EQ(select_top_percent(stat, all, 100.0).size(), 100u);
    EXPECT_EQ(select_top_percent(stat, all, 0.5).size(), 1u);
    const std::vector<std::size_t> some{7, 3, 50};
    stat[50] = 2.0;
    EXPECT_EQ(select_top_percent(stat, some, 50.0), (std::vector<std::size_t>{50, 3}));
    EXPECT_THROW(select_top_percent(stat, all, 101.0), ValidationError);
}

EditSession make_session(GaussianScene scene, HgsConfig cfg = {}, std::shared_ptr<Guidance> g = nullptr) {
    if (!g) g = std::make_shared<ZeroGuidance>();
    return EditSession(std::move(scene), ring_cameras(4), g, cfg);
}

TEST(Densify, SelectsExactlyTheTopParents) {
    std::mt19937_64 rng(5);
    HgsConfig cfg;
    cfg.extent = 1.0;
    cfg.clone_scale_fraction = 0.1;  // scales below 0.1 clone, above split
    auto session = make_session(cloud(rng, 100), cfg);
    std::vector<double> stat(100);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& v : stat) v = u(rng);
    session.set_gradient_statistics(stat);
    const auto parents = sort_oracle(stat, 5.0);
    std::size_t clones = 0, splits = 0;
    for (std::size_t p : parents) (session.scene()[p].scale().maxCoeff() <= 0.1 ? clones : splits)++;
    const GaussianScene before = session.scene();
    session.densify();
    const auto& s = session.scene();
    EXPECT_EQ(session.round(), 1);
    EXPECT_EQ(s.size(), 100 + clones + splits);
    std::size_t new_rows = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (session.origins()[i] < 0) {
            ++new_rows;
            EXPECT_EQ(s.generations()[i], 1);
            EXPECT_EQ(session.first_moments()[i].position, Vec3::Zero());
            EXPECT_EQ(session.second_moments()[i].opacity, 0.0);
        } else {
            EXPECT_EQ(s.generations()[i], 0);
            EXPECT_EQ(s[i], before[static_cast<std::size_t>(session.origins()[i])]);
        }
    }
    EXPECT_EQ(new_rows, clones + 2 * splits);
    EXPECT_EQ(anchor_loss(s, session.schedule()).total, 0.0);
    for (double v : session.gradient_statistics()) EXPECT_EQ(v, 0.0);
    EXPECT_EQ(session.schedule().lambda(0), 2.0);
    s.check_invariants();
}

TEST(Densify, SplitChildrenShrinkAndStayNearParent) {
    GaussianScene scene(0);
    scene.push_back(testing::make_gaussian({0, 0, 0}, 0.5, 0.8, {1, 0, 0}), label_bit(2));
    HgsConfig cfg;
    cfg.extent = 1.0;
    cfg.densify_percent = 100.0;
    auto session = make_session(scene, cfg);
    session.set_gradient_statistics({1.0});
    session.densify();
    ASSERT_EQ(session.scene().size(), 2u);
    for (std::size_t i = 0; i < 2; ++i) {
        EXPECT_NEAR(session.scene()[i].scale().x(), 0.5 / 1.6, 1e-12);
        EXPECT_LT(session.scene()[i].position.norm(), 5 * 0.5);
        EXPECT_EQ(session.scene().labels()[i], label_bit(2));
    }
}

TEST(Densify, ZeroPercentOnlyAdvancesRound) {
    std::mt19937_64 rng(6);
    HgsConfig cfg;
    cfg.densify_percent = 0.0;
    auto session = make_session(cloud(rng, 30), cfg);
    const auto before = session.scene();
    session.set_gradient_statistics(std::vector<double>(30, 1.0));
    session.densify();
    EXPECT_EQ(session.scene().gaussians(), before.gaussians());
    EXPECT_EQ(session.round(), 1);
    EXPECT_EQ(session.schedule().lambda(0), 2.0);
}

TEST(Densify, NeedsGradientStatistics) {
    std::mt19937_64 rng(7);
    auto session = make_session(cloud(rng, 5));
    EXPECT_THROW(session.densify(), ValidationError);
}

TEST(Densify, RestrictedToLabel) {
    std::mt19937_64 rng(8);
    auto scene = cloud(rng, 40);
    for (std::size_t i = 0; i < 40; i += 2) scene.mutable_labels()[i] = label_bit(1);
    HgsConfig cfg;
    cfg.restrict_label = 1;
    cfg.densify_percent = 20.0;
    auto session = make_session(scene, cfg);
    std::vector<double> stat(40);
    for (std::size_t i = 0; i < 40; ++i) stat[i] = (i % 2) ? 100.0 : double(i);
    session.set_gradient_statistics(stat);
    session.densify();
    // ceil(20% of 20 labeled) = 4 parents, all labeled; unlabeled rows untouched.
    std::size_t unlabeled = 0;
    for (std::size_t i = 0; i < session.scene().size(); ++i)
        if (!session.scene().has_label(i, 1)) ++unlabeled;
    EXPECT_EQ(unlabeled, 20u);
    std::size_t fresh = 0;
    for (auto o : session.origins()) fresh += o < 0;
    EXPECT_GE(fresh, 4u);
    EXPECT_LE(fresh, 8u);
}

TEST(Densify, LabelsSurviveThreeRoundsOnSphereScene) {
    auto fixture = testing::sphere_scene();
    testing::trace_sphere(fixture);
    HgsConfig cfg;
    cfg.densify_percent = 20.0;
    cfg.extent = 3.0;
    EditSession session(fixture.scene, fixture.views, std::make_shared<ZeroGuidance>(), cfg);
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const auto truth = [](const GaussianScene& s) {
        std::vector<bool> t(s.size());
        for (std::size_t i = 0; i < s.size(); ++i) t[i] = s[i].position.z() > 0.2;
        return t;
    };
    const auto start = testing::label_accuracy(session.scene(), truth(session.scene()), testing::kSphereLabel);
    for (int round = 0; round < 3; ++round) {
        std::vector<double> stat(session.scene().size());
        for (auto& v : stat) v = u(rng);
        session.set_gradient_statistics(stat);
        session.densify();
    }
    EXPECT_GT(session.scene().size(), 700u);
    const auto after = testing::label_accuracy(session.scene(), truth(session.scene()), testing::kSphereLabel);
    EXPECT_EQ(after.recall, start.recall);
    EXPECT_EQ(after.false_positive_rate, start.false_positive_rate);
    for (int g : session.scene().generations()) EXPECT_LE(g, session.round());
}

TEST(Prune, FloorAndLockstep) {
    std::mt19937_64 rng(10);
    auto scene = cloud(rng, 20);
    HgsConfig cfg;
    cfg.prune_opacity = 0.01;
    auto session = make_session(scene, cfg);
    session.prune();
    EXPECT_EQ(session.scene().size(), 20u);

    auto low = scene;
    for (std::size_t i = 0; i < low.size(); i += 3) low[i].opacity = logit(0.001);
    auto s2 = make_session(low, cfg);
    s2.prune();
    EXPECT_EQ(s2.scene().size(), 13u);
    EXPECT_EQ(s2.first_moments().size(), 13u);
    EXPECT_EQ(s2.gradient_statistics().size(), 13u);
    EXPECT_EQ(s2.origins().front(), 1);
    s2.scene().check_invariants();

    cfg.prune_opacity = 0.999;
    auto s3 = make_session(scene, cfg);
    s3.prune();
    EXPECT_TRUE(s3.scene().empty());
    s3.scene().check_invariants();
}

TEST(EditStep, ZeroGuidanceAtAnchorsChangesNothing) {
    std::mt19937_64 rng(11);
    auto scene = cloud(rng, 30, 1);
    HgsConfig cfg;
    cfg.densify_interval = 0;
    auto session = make_session(scene, cfg);
    session.run(20);
    EXPECT_EQ(session.scene().gaussians(), scene.gaussians());
}

TEST(EditStep, GatingKeepsUnlabeledRowsBitIdentical) {
    std::mt19937_64 rng(12);
    auto scene = cloud(rng, 50);
    for (std::size_t i = 0; i < 50; i += 3) scene.mutable_labels()[i] = label_bit(0);
    std::map<std::string, Image> targets;
    for (const auto& c : ring_cameras(4)) targets[c.id] = Image(32, 32, 3, 0.8);
    HgsConfig cfg;
    cfg.restrict_label = 0;
    cfg.densify_interval = 25;
    auto session = make_session(scene, cfg, std::make_shared<TargetImageGuidance>(targets));
    session.run(100);
    const auto& s = session.scene();
    std::size_t moved = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s.has_label(i, 0)) {
            moved += session.origins()[i] >= 0 && !(s[i] == scene[static_cast<std::size_t>(session.origins()[i])]);
            continue;
        }
        ASSERT_GE(session.origins()[i], 0);
        EXPECT_EQ(s[i], scene[static_cast<std::size_t>(session.origins()[i])]);
        EXPECT_EQ(s.generations()[i], 0);
    }
    EXPECT_GT(moved, 0u);
}

TEST(EditStep, TargetGuidanceLossDecreasesOverWindows) {
    std::mt19937_64 rng(13);
    const auto cams = ring_cameras(4);
    auto scene = cloud(rng, 50);
    auto target_scene = scene;
    std::normal_distribution<double> nd(0.0, 1.0);
    for (auto& g : target_scene.mutable_gaussians()) {
        g.position += 0.05 * Vec3(nd(rng), nd(rng), nd(rng));
        for (int c = 0; c < 3; ++c) g.sh[c] += 0.8 * nd(rng);
    }
    std::map<std::string, Image> targets;
    for (const auto& c : cams) targets[c.id] = render(target_scene, c.camera).color;
    HgsConfig cfg;
    cfg.densify_interval = 0;
    cfg.lambda_gen0 = 0.0;
    EditSession session(scene, cams, std::make_shared<TargetImageGuidance>(targets), cfg);
    auto l2 = [&] {
        double sum = 0.0;
        for (const auto& c : cams) {
            const auto out = render(session.scene(), c.camera);
            for (std::size_t i = 0; i < out.color.data.size(); ++i)
                sum += std::pow(out.color.data[i] - targets[c.id].data[i], 2);
        }
        return sum;
    };
    double previous = l2();
    const double first = previous;
    for (int window = 0; window < 15; ++window) {
        session.run(20);
        const double now = l2();
        EXPECT_LT(now, previous) << "window " << window;
        previous = now;
    }
    EXPECT_LT(previous, 0.5 * first);
}

TEST(EditStep, GenerationAndLambdaMonotone) {
    std::mt19937_64 rng(14);
    std::map<std::string, Image> targets;
    for (const auto& c : ring_cameras(4)) targets[c.id] = Image(32, 32, 3, 0.2);
    HgsConfig cfg;
    cfg.densify_interval = 10;
    cfg.densify_percent = 10.0;
    auto session = make_session(cloud(rng, 40), cfg,
                                std::make_shared<NoisyTargetGuidance>(targets, NoiseOptions{0.2, 2.0, 1}));
    std::vector<double> previous = session.schedule().lambdas();
    session.run(50, [&](const StepReport& r) {
        for (int g : session.scene().generations()) EXPECT_LE(g, r.round);
        const auto& now = session.schedule().lambdas();
        for (std::size_t j = 0; j < previous.size(); ++j) EXPECT_GE(now[j], previous[j]);
        previous = now;
        EXPECT_EQ(session.first_moments().size(), session.scene().size());
        return true;
    });
    EXPECT_EQ(session.round(), 5);
}

TEST(EditStep, GuidanceFailureCarriesStepContext) {
    std::mt19937_64 rng(15);
    auto session = make_session(cloud(rng, 5), {}, std::make_shared<FailingGuidance>());
    try {
        session.step();
        FAIL();
    } catch (const GuidanceTransportError& e) {
        EXPECT_EQ(e.attempts(), 3);
        EXPECT_NE(std::string(e.what()).find("step 0"), std::string::npos);
    }
}

TEST(EditStep, ReportJson) {
    std::mt19937_64 rng(16);
    HgsConfig cfg;
    cfg.densify_interval = 1;
    auto session = make_session(cloud(rng, 10), cfg);
    const auto r = session.step();
    const auto j = r.to_json();
    for (const char* key : {"step", "L_edit", "L_anchor_x", "L_anchor_s", "L_anchor_q", "L_anchor_alpha",
                            "L_anchor_c", "n_gaussians", "round"})
        EXPECT_TRUE(j.contains(key)) << key;
    EXPECT_EQ(j["round"], 1);
    EXPECT_EQ(j["step"], 1);
}

TEST(Config, JsonRoundTripAndValidation) {
    HgsConfig c;
    c.densify_percent = 7.5;
    c.restrict_label = 3;
    c.lambda_p[3] = 0.25;
    c.lr.color_rest = 1e-5;
    c.seed = 99;
    const auto back = HgsConfig::from_json(c.to_json());
    EXPECT_EQ(back.to_json(), c.to_json());
    EXPECT_THROW(HgsConfig::from_json({{"densify_pct", 3}}), ValidationError);
    EXPECT_THROW(HgsConfig::from_json({{"growth", 0.5}}), ValidationError);
    EXPECT_THROW(HgsConfig::from_json({{"lambda_p", {{"z", 1}}}}), ValidationError);
    EXPECT_NO_THROW(HgsConfig::from_json({{"guidance", {{"backend", "target"}}}}));
}

}  // namespace
}  // namespace gsedit
