#include "gsedit/hgs.hpp"

#include "gsedit/errors.hpp"
#include "gsedit/tracing.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <utility>

namespace gsedit {

using nlohmann::json;

namespace {

constexpr std::array<const char*, 5> kPropertyKeys = {"x", "s", "q", "alpha", "c"};

int property_index(Property p) { return static_cast<int>(p); }

std::uint64_t mix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

/// Visits f(property, k-th scalar within the property, field of each row...) in lockstep.
template <class F, class... Rows>
void for_each_slot(int sh_degree, F&& f, Rows&... rows) {
    for (int i = 0; i < 3; ++i) f(Property::Position, i, rows.position[i]...);
    for (int i = 0; i < 3; ++i) f(Property::Scale, i, rows.log_scale[i]...);
    for (int i = 0; i < 4; ++i) f(Property::Rotation, i, rows.rotation[i]...);
    f(Property::Opacity, 0, rows.opacity...);
    const int n = 3 * sh_coefficient_count(sh_degree);
    for (int i = 0; i < n; ++i) f(Property::Color, i, rows.sh[i]...);
}

template <class F>
auto with_step_context(int step, F&& f) {
    const std::string where = "step " + std::to_string(step) + ": ";
    try {
        return f();
    } catch (const GuidanceTransportError& e) {
        throw GuidanceTransportError(where + e.what(), e.attempts(), e.last_status());
    } catch (const GuidanceSchemaError& e) {
        throw GuidanceSchemaError(where + e.what());
    } catch (const ValidationError& e) {
        throw ValidationError(where + e.what());
    }
}

}  // namespace

void HgsConfig::validate() const {
    if (steps < 0) throw ValidationError("steps must be >= 0");
    if (densify_interval < 0) throw ValidationError("densify_interval must be >= 0");
    if (!(densify_percent >= 0.0 && densify_percent <= 100.0))
        throw ValidationError("densify_percent must be in [0, 100]");
    if (!(prune_opacity >= 0.0 && prune_opacity < 1.0)) throw ValidationError("prune_opacity must be in [0, 1)");
    if (!(lambda_gen0 >= 0.0) || !(lambda_new >= 0.0)) throw ValidationError("anchor weights must be >= 0");
    for (double w : lambda_p)
        if (!(w >= 0.0)) throw ValidationError("lambda_p weights must be >= 0");
    if (!(growth >= 1.0)) throw ValidationError("growth must be >= 1");
    if (!(extent >= 0.0)) throw ValidationError("extent must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(epsilon > 0.0))
        throw ValidationError("invalid Adam settings");
    for (double r : {lr.position, lr.scale, lr.rotation, lr.opacity, lr.color, lr.color_rest})
        if (!(r >= 0.0)) throw ValidationError("learning rates must be >= 0");
    if (restrict_label && (*restrict_label < 0 || *restrict_label >= kMaxLabels))
        throw ValidationError("restrict_label out of range");
}

HgsConfig HgsConfig::from_json(const json& j) {
    if (!j.is_object()) throw ValidationError("config must be a JSON object");
    HgsConfig c;
    try {
        for (const auto& [key, value] : j.items()) {
            if (key == "steps") c.steps = value.get<int>();
            else if (key == "densify_interval") c.densify_interval = value.get<int>();
            else if (key == "densify_percent") c.densify_percent = value.get<double>();
            else if (key == "prune_opacity") c.prune_opacity = value.get<double>();
            else if (key == "clone_scale_fraction") c.clone_scale_fraction = value.get<double>();
            else if (key == "lambda_gen0") c.lambda_gen0 = value.get<double>();
            else if (key == "lambda_new") c.lambda_new = value.get<double>();
            else if (key == "growth") c.growth = value.get<double>();
            else if (key == "extent") c.extent = value.get<double>();
            else if (key == "seed") c.seed = value.get<std::uint64_t>();
            else if (key == "isolate_render") c.isolate_render = value.get<bool>();
            else if (key == "prompt") c.prompt = value.get<std::string>();
            else if (key == "restrict_label") {
                if (value.is_null()) c.restrict_label.reset();
                else c.restrict_label = value.get<int>();
            } else if (key == "lambda_p") {
                for (const auto& [p, w] : value.items()) {
                    auto it = std::find(kPropertyKeys.begin(), kPropertyKeys.end(), p);
                    if (it == kPropertyKeys.end()) throw ValidationError("unknown lambda_p key '" + p + "'");
                    c.lambda_p[it - kPropertyKeys.begin()] = w.get<double>();
                }
            } else if (key == "lr") {
                for (const auto& [p, r] : value.items()) {
                    if (p == "position") c.lr.position = r.get<double>();
                    else if (p == "scale") c.lr.scale = r.get<double>();
                    else if (p == "rotation") c.lr.rotation = r.get<double>();
                    else if (p == "opacity") c.lr.opacity = r.get<double>();
                    else if (p == "color") c.lr.color = r.get<double>();
                    else if (p == "color_rest") c.lr.color_rest = r.get<double>();
                    else throw ValidationError("unknown lr key '" + p + "'");
                }
            } else if (key == "adam") {
                c.beta1 = value.value("beta1", c.beta1);
                c.beta2 = value.value("beta2", c.beta2);
                c.epsilon = value.value("epsilon", c.epsilon);
            } else if (key != "guidance") {
                throw ValidationError("unknown config key '" + key + "'");
            }
        }
    } catch (const json::exception& e) {
        throw ValidationError(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
}

json HgsConfig::to_json() const {
    json lp = json::object();
    for (int i = 0; i < 5; ++i) lp[kPropertyKeys[i]] = lambda_p[i];
    return {{"steps", steps},
            {"densify_interval", densify_interval},
            {"densify_percent", densify_percent},
            {"prune_opacity", prune_opacity},
            {"clone_scale_fraction", clone_scale_fraction},
            {"lambda_gen0", lambda_gen0},
            {"lambda_new", lambda_new},
            {"growth", growth},
            {"lambda_p", lp},
            {"lr",
             {{"position", lr.position},
              {"scale", lr.scale},
              {"rotation", lr.rotation},
              {"opacity", lr.opacity},
              {"color", lr.color},
              {"color_rest", lr.color_rest}}},
            {"extent", extent},
            {"adam", {{"beta1", beta1}, {"beta2", beta2}, {"epsilon", epsilon}}},
            {"seed", seed},
            {"restrict_label", restrict_label ? json(*restrict_label) : json(nullptr)},
            {"isolate_render", isolate_render},
            {"prompt", prompt}};
}

AnchorSchedule::AnchorSchedule(double lambda_gen0, double lambda_new, double growth, std::array<double, 5> lambda_p)
    : lambda_gen0_(lambda_gen0), lambda_new_(lambda_new), growth_(growth), lambda_p_(lambda_p) {
    if (!(growth >= 1.0)) throw ValidationError("anchor growth must be >= 1");
    start(0);
}

void AnchorSchedule::start(int round) {
    lambda_.assign(round + 1, 0.0);
    for (int j = 0; j <= round; ++j) lambda_[j] = base(j) * std::pow(growth_, round - j);
}

void AnchorSchedule::advance(int new_round) {
    for (double& l : lambda_) l *= growth_;
    while (static_cast<int>(lambda_.size()) <= new_round) lambda_.push_back(base(static_cast<int>(lambda_.size())));
}

double AnchorSchedule::lambda(int generation) const {
    if (generation < 0) throw ValidationError("negative generation");
    if (generation >= static_cast<int>(lambda_.size())) return base(generation);
    return lambda_[generation];
}

AnchorLoss anchor_loss(const GaussianScene& scene, const AnchorSchedule& schedule) {
    if (!scene.has_anchors()) throw ValidationError("anchor loss needs anchors");
    AnchorLoss out;
    const auto& anchors = scene.anchors();
    for (std::size_t i = 0; i < scene.size(); ++i) {
        const double lambda = schedule.lambda(scene.generations()[i]);
        std::array<double, 5> sq{};
        for_each_slot(
            scene.sh_degree(),
            [&](Property p, int, const double& a, const double& b) {
                const double d = a - b;
                sq[property_index(p)] += d * d;
            },
            scene[i], anchors[i]);
        for (int p = 0; p < 5; ++p) out.per_property[p] += lambda * sq[p];
    }
    for (Property p : kAllProperties) out.total += schedule.property_weight(p) * out.per_property[property_index(p)];
    return out;
}

void snapshot_anchors(GaussianScene& scene) { scene.set_anchors(scene.gaussians()); }

std::vector<std::size_t> select_top_percent(std::span<const double> statistic, std::span<const std::size_t> eligible,
                                            double percent) {
    if (!(percent >= 0.0 && percent <= 100.0)) throw ValidationError("densify percent must be in [0, 100]");
    const double n = static_cast<double>(eligible.size());
    const auto count = std::min<std::size_t>(eligible.size(), static_cast<std::size_t>(std::ceil(percent * n / 100.0)));
    std::vector<std::size_t> order(eligible.begin(), eligible.end());
    for (std::size_t i : order)
        if (i >= statistic.size()) throw ValidationError("eligible row out of range");
    auto better = [&](std::size_t a, std::size_t b) {
        return statistic[a] > statistic[b] || (statistic[a] == statistic[b] && a < b);
    };
    std::partial_sort(order.begin(), order.begin() + count, order.end(), better);
    order.resize(count);
    return order;
}

json StepReport::to_json() const {
    json j = {{"step", step}, {"camera", camera}, {"L_edit", loss_edit}};
    for (int p = 0; p < 5; ++p) j[std::string("L_anchor_") + kPropertyKeys[p]] = anchor.per_property[p];
    j["L_anchor"] = anchor.total;
    j["n_gaussians"] = gaussians;
    j["round"] = round;
    j["densified"] = densified;
    return j;
}

double camera_extent(const std::vector<NamedCamera>& cameras) {
    if (cameras.empty()) return 1.0;
    Vec3 mean = Vec3::Zero();
    for (const auto& c : cameras) mean += c.camera.center();
    mean /= static_cast<double>(cameras.size());
    double radius = 0.0;
    for (const auto& c : cameras) radius = std::max(radius, (c.camera.center() - mean).norm());
    return radius > 0.0 ? 1.1 * radius : 1.0;
}

EditSession::EditSession(GaussianScene scene, std::vector<NamedCamera> cameras, std::shared_ptr<Guidance> guidance,
                         HgsConfig config)
    : scene_(std::move(scene)), cameras_(std::move(cameras)), guidance_(std::move(guidance)),
      config_(std::move(config)),
      schedule_(config_.lambda_gen0, config_.lambda_new, config_.growth, config_.lambda_p) {
    config_.validate();
    if (cameras_.empty()) throw ValidationError("editing needs at least one camera");
    for (const auto& c : cameras_) c.camera.validate();
    extent_ = config_.extent > 0.0 ? config_.extent : camera_extent(cameras_);
    round_ = std::max(0, scene_.max_generation());
    schedule_.start(round_);
    if (!scene_.has_anchors()) snapshot_anchors(scene_);
    m_.assign(scene_.size(), Gaussian{});
    v_.assign(scene_.size(), Gaussian{});
    for (auto* moments : {&m_, &v_})
        for (auto& g : *moments) g.rotation.setZero();
    grad_stat_.assign(scene_.size(), 0.0);
    origin_.resize(scene_.size());
    for (std::size_t i = 0; i < origin_.size(); ++i) origin_[i] = static_cast<std::int64_t>(i);
}

double EditSession::learning_rate(Property p, int k) const {
    switch (p) {
        case Property::Position: return config_.lr.position * extent_;
        case Property::Scale: return config_.lr.scale;
        case Property::Rotation: return config_.lr.rotation;
        case Property::Opacity: return config_.lr.opacity;
        case Property::Color: return k < 3 ? config_.lr.color : config_.lr.color_rest;
    }
    return 0.0;
}

bool EditSession::allowed(std::size_t row) const {
    return !config_.restrict_label || scene_.has_label(row, *config_.restrict_label);
}

std::size_t EditSession::camera_for_step(int step) const {
    return mix(config_.seed ^ mix(static_cast<std::uint64_t>(step))) % cameras_.size();
}

void EditSession::set_gradient_statistics(std::vector<double> stat) {
    if (stat.size() != scene_.size()) throw ValidationError("gradient statistics size mismatch");
    grad_stat_ = std::move(stat);
    steps_since_densify_ = std::max(steps_since_densify_, 1);
}

StepReport EditSession::step() {
    if (!guidance_) throw ValidationError("no guidance bound to the session");
    const NamedCamera& cam = cameras_[camera_for_step(step_)];
    RenderOptions ro;
    if (config_.restrict_label && config_.isolate_render) ro.labels_only = config_.restrict_label;
    const RenderOutput forward = render(scene_, cam.camera, ro);

    GuidanceRequest request;
    request.rendering = forward.color;
    request.camera_id = cam.id;
    request.prompt = config_.prompt;
    request.step = step_;
    if (auto it = request_masks_.find(cam.id); it != request_masks_.end()) request.mask = it->second;
    const GuidanceResponse response = with_step_context(step_, [&] {
        auto r = guidance_->guide(request);
        validate_response(request, r);
        return r;
    });

    StepReport report;
    report.camera = cam.id;
    report.loss_edit = response.loss;
    report.anchor = anchor_loss(scene_, schedule_);

    SceneGradients grads = render_backward(scene_, cam.camera, forward, response.grad, ro);

    ++adam_step_;
    const double bc1 = 1.0 - std::pow(config_.beta1, adam_step_);
    const double bc2 = 1.0 - std::pow(config_.beta2, adam_step_);
    const auto& anchors = scene_.anchors();
    const int degree = scene_.sh_degree();
    auto gaussians = scene_.mutable_gaussians();
    for (std::size_t i = 0; i < scene_.size(); ++i) {
        if (!allowed(i)) continue;  // gated rows keep parameters and moments
        const double lambda = schedule_.lambda(scene_.generations()[i]);
        for_each_slot(
            degree,
            [&](Property p, int k, double& value, double& m, double& v, const double& anchor, const double& g) {
                double total = g;
                const double w = lambda * schedule_.property_weight(p);
                if (w != 0.0) total += 2.0 * w * (value - anchor);
                m = config_.beta1 * m + (1.0 - config_.beta1) * total;
                v = config_.beta2 * v + (1.0 - config_.beta2) * total * total;
                value -= learning_rate(p, k) * (m / bc1) / (std::sqrt(v / bc2) + config_.epsilon);
            },
            gaussians[i], m_[i], v_[i], anchors[i], std::as_const(grads.params[i]));
        if (grads.visible[i]) grad_stat_[i] += grads.mean2d[i].norm();
    }

    ++step_;
    ++steps_since_densify_;
    if (config_.densify_interval > 0 && step_ % config_.densify_interval == 0) {
        densify();
        prune();
        report.densified = true;
    }
    report.step = step_;
    report.gaussians = scene_.size();
    report.round = round_;
    return report;
}

std::vector<StepReport> EditSession::run(int steps, const std::function<bool(const StepReport&)>& on_step) {
    std::vector<StepReport> out;
    for (int s = 0; s < steps; ++s) {
        out.push_back(step());
        if (on_step && !on_step(out.back())) break;
    }
    return out;
}

void EditSession::keep_rows(const std::vector<bool>& remove) {
    const auto kept = scene_.remove_rows(remove);
    auto pick = [&](auto& rows) {
        std::remove_reference_t<decltype(rows)> out;
        out.reserve(kept.size());
        for (std::size_t k : kept) out.push_back(rows[k]);
        rows = std::move(out);
    };
    pick(m_);
    pick(v_);
    pick(grad_stat_);
    pick(origin_);
}

void EditSession::densify() {
    if (steps_since_densify_ == 0) throw ValidationError("densify needs at least one step of gradient statistics");
    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < scene_.size(); ++i)
        if (allowed(i)) eligible.push_back(i);
    std::vector<std::size_t> chosen = select_top_percent(grad_stat_, eligible, config_.densify_percent);
    std::sort(chosen.begin(), chosen.end());

    ++round_;
    schedule_.advance(round_);

    std::seed_seq seq{static_cast<std::uint32_t>(config_.seed), static_cast<std::uint32_t>(config_.seed >> 32),
                      static_cast<std::uint32_t>(round_)};
    std::mt19937_64 rng(seq);
    std::normal_distribution<double> normal(0.0, 1.0);
    const double clone_limit = config_.clone_scale_fraction * extent_;
    const double shrink = std::log(1.6);

    Gaussian zero_moment;
    zero_moment.rotation.setZero();
    std::vector<bool> remove(scene_.size(), false);
    for (std::size_t parent : chosen) {
        const Gaussian g = scene_[parent];
        std::vector<Gaussian> children;
        if (g.scale().maxCoeff() <= clone_limit) {
            children.push_back(g);
        } else {
            const Mat3 rot = rotation_from_quaternion(g.rotation);
            for (int c = 0; c < 2; ++c) {
                Gaussian child = g;
                const Vec3 local(normal(rng) * g.scale().x(), normal(rng) * g.scale().y(), normal(rng) * g.scale().z());
                child.position = g.position + rot * local;
                child.log_scale = g.log_scale.array() - shrink;
                children.push_back(child);
            }
            remove[parent] = true;
        }
        std::vector<std::size_t> rows;
        for (const Gaussian& child : children) {
            rows.push_back(scene_.size());
            scene_.push_back(child);
            m_.push_back(zero_moment);
            v_.push_back(zero_moment);
            grad_stat_.push_back(0.0);
            origin_.push_back(-1);
        }
        inherit_labels(scene_, parent, rows, round_);
    }
    remove.resize(scene_.size(), false);
    keep_rows(remove);
    snapshot_anchors(scene_);
    std::fill(grad_stat_.begin(), grad_stat_.end(), 0.0);
    steps_since_densify_ = 0;
}

void EditSession::prune() {
    std::vector<bool> remove(scene_.size(), false);
    bool any = false;
    for (std::size_t i = 0; i < scene_.size(); ++i) {
        remove[i] = allowed(i) && scene_[i].activated_opacity() < config_.prune_opacity;
        any |= remove[i];
    }
    if (any) keep_rows(remove);
}

}  // namespace gsedit
