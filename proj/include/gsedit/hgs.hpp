#pragma once

#include "gsedit/camera.hpp"
#include "gsedit/guidance.hpp"
#include "gsedit/rasterizer.hpp"
#include "gsedit/scene.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace gsedit {

struct LearningRates {
    double position = 1.6e-4;  // multiplied by the scene extent
    double scale = 5e-3;
    double rotation = 1e-3;
    double opacity = 5e-2;
    double color = 2.5e-3;        // SH DC
    double color_rest = 1.25e-4;  // higher SH bands
};

/// Editing configuration. JSON keys match the field names; lambda_p uses
/// {"x", "s", "q", "alpha", "c"}, Adam settings live under "adam".
struct HgsConfig {
    int steps = 500;
    int densify_interval = 100;
    double densify_percent = 5.0;
    double prune_opacity = 0.005;
    /// Densified Gaussians whose largest axis is at most this fraction of
    /// the extent are cloned, larger ones are split.
    double clone_scale_fraction = 0.01;
    double lambda_gen0 = 1.0;
    double lambda_new = 1.0;
    double growth = 2.0;
    std::array<double, 5> lambda_p = {1.0, 1.0, 1.0, 0.5, 0.1};
    LearningRates lr;
    /// Scene extent for the position learning rate; 0 derives it from the cameras.
    double extent = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-15;
    std::uint64_t seed = 0;
    std::optional<LabelId> restrict_label;
    /// Render only the restricted label's Gaussians for guidance.
    bool isolate_render = false;
    std::string prompt;

    void validate() const;
    /// Unknown keys are rejected; the "guidance" block is ignored here.
    static HgsConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

/// Per-generation anchor weights lambda_i and per-property weights lambda_P.
class AnchorSchedule {
public:
    AnchorSchedule(double lambda_gen0 = 1.0, double lambda_new = 1.0, double growth = 2.0,
                   std::array<double, 5> lambda_p = {1.0, 1.0, 1.0, 0.5, 0.1});

    /// Weights as if `round` densifications already happened: generation j
    /// gets its base weight times growth^(round - j).
    void start(int round);
    /// One densification: existing weights grow by `growth`; generation
    /// `new_round` starts at the base weight.
    void advance(int new_round);

    double lambda(int generation) const;
    double property_weight(Property p) const { return lambda_p_[static_cast<int>(p)]; }
    const std::vector<double>& lambdas() const { return lambda_; }
    double growth() const { return growth_; }

private:
    double base(int generation) const { return generation == 0 ? lambda_gen0_ : lambda_new_; }
    double lambda_gen0_, lambda_new_, growth_;
    std::array<double, 5> lambda_p_;
    std::vector<double> lambda_;
};

struct AnchorLoss {
    std::array<double, 5> per_property{};  // sum_i lambda_i |P_i - anchor_i|^2
    double total = 0.0;                     // sum_P lambda_P * per_property[P]
};

/// Throws ValidationError when the scene has no anchors.
AnchorLoss anchor_loss(const GaussianScene& scene, const AnchorSchedule& schedule);
/// anchors := current parameters.
void snapshot_anchors(GaussianScene& scene);

/// Indices of the ceil(percent/100 * |eligible|) eligible rows with the
/// largest statistic; ties go to the lower index. Returned in rank order.
std::vector<std::size_t> select_top_percent(std::span<const double> statistic, std::span<const std::size_t> eligible,
                                            double percent);

struct StepReport {
    int step = 0;  // 1-based count of completed steps
    std::string camera;
    double loss_edit = 0.0;
    AnchorLoss anchor;
    std::size_t gaussians = 0;
    int round = 0;
    bool densified = false;
    nlohmann::json to_json() const;
};

/// Hierarchical editing state: scene, optimizer moments, generation round and
/// anchor schedule. Not thread-safe; one control thread per session.
class EditSession {
public:
    EditSession(GaussianScene scene, std::vector<NamedCamera> cameras, std::shared_ptr<Guidance> guidance,
                HgsConfig config);

    const GaussianScene& scene() const { return scene_; }
    GaussianScene take_scene() { return std::move(scene_); }
    const HgsConfig& config() const { return config_; }
    const AnchorSchedule& schedule() const { return schedule_; }
    const std::vector<NamedCamera>& cameras() const { return cameras_; }
    int round() const { return round_; }
    int steps_done() const { return step_; }
    double extent() const { return extent_; }

    void set_guidance(std::shared_ptr<Guidance> guidance) { guidance_ = std::move(guidance); }

    /// Loss masks passed with guidance requests, keyed by camera id.
    void set_request_masks(std::map<std::string, BinaryMask> masks) { request_masks_ = std::move(masks); }

    /// Camera used by step number `step` (0-based); a pure function of the seed.
    std::size_t camera_for_step(int step) const;

    StepReport step();
    /// Runs `steps` steps, calling on_step after each; stops early when it returns false.
    std::vector<StepReport> run(int steps, const std::function<bool(const StepReport&)>& on_step = {});

    /// Split/clone the top-k% by accumulated |dL/dmean2d|, bump the round,
    /// grow the anchor weights and re-snapshot anchors.
    void densify();
    /// Drops Gaussians below the opacity floor (only labeled ones when restricted).
    void prune();

    bool allowed(std::size_t row) const;

    const std::vector<double>& gradient_statistics() const { return grad_stat_; }
    void set_gradient_statistics(std::vector<double> stat);
    const std::vector<Gaussian>& first_moments() const { return m_; }
    const std::vector<Gaussian>& second_moments() const { return v_; }
    /// Row index in the starting scene, or -1 for rows created by densification.
    const std::vector<std::int64_t>& origins() const { return origin_; }

private:
    void keep_rows(const std::vector<bool>& remove);
    double learning_rate(Property p, int k) const;

    GaussianScene scene_;
    std::vector<NamedCamera> cameras_;
    std::shared_ptr<Guidance> guidance_;
    HgsConfig config_;
    AnchorSchedule schedule_;
    std::map<std::string, BinaryMask> request_masks_;
    double extent_ = 1.0;
    int round_ = 0;
    int step_ = 0;
    int adam_step_ = 0;
    int steps_since_densify_ = 0;
    std::vector<Gaussian> m_, v_;
    std::vector<double> grad_stat_;
    std::vector<std::int64_t> origin_;
};

/// 1.1 times the largest distance of a camera center from their mean; 1 when
/// that is zero.
double camera_extent(const std::vector<NamedCamera>& cameras);

}  // namespace gsedit
