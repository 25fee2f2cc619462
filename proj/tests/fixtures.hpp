#pragma once

// Writes a complete on-disk project for the CLI and service: scene, cameras,
// masks, guidance targets, repaired images and an object to insert.

#include "gsedit/image.hpp"
#include "gsedit/json_io.hpp"
#include "gsedit/ply_io.hpp"
#include "gsedit/rasterizer.hpp"
#include "synthetic.hpp"

#include <json.hpp>

#include <filesystem>

namespace gsedit::testing {

struct ProjectFiles {
    std::filesystem::path dir, scene, cameras, masks, targets, repaired, edit_config, object, insert_mask,
        insert_depth;
    std::string insert_camera = "view0";
};

inline GaussianScene small_sphere_object(int n = 80) {
    GaussianScene obj(0);
    const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
    for (int i = 0; i < n; ++i) {
        const double z = 1.0 - 2.0 * (i + 0.5) / n;
        const double r = std::sqrt(1.0 - z * z);
        const Vec3 nrm(r * std::cos(golden * i), r * std::sin(golden * i), z);
        obj.push_back(disk(nrm, nrm, 0.25, 0.03, 0.95, Vec3(0.2, 0.8, 0.3)));
    }
    return obj;
}

inline ProjectFiles write_project(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir / "masks");
    fs::create_directories(dir / "targets");
    fs::create_directories(dir / "repaired");
    ProjectFiles f;
    f.dir = dir;
    const auto fx = removal_fixture();
    GaussianScene plain = fx.captured.scene;
    for (auto& bits : plain.mutable_labels()) bits = 0;
    plain.erase_label(kSphereLabel);

    f.scene = dir / "scene.ply";
    save_scene(plain, f.scene);
    f.cameras = dir / "cameras.json";
    write_text_file(f.cameras, cameras_to_json(fx.captured.views).dump(2));

    // Masks from the stored scene so they agree with what the CLI loads.
    const GaussianScene stored = load_scene(f.scene);
    nlohmann::json masks = nlohmann::json::array(), targets = nlohmann::json::object(),
                   repaired = nlohmann::json::object();
    GaussianScene blue = stored;
    for (std::size_t i = 0; i < blue.size(); ++i)
        if (fx.captured.is_sphere[i]) blue[i].sh[0] = blue[i].sh[1] = sh_dc_from_color(0.1), blue[i].sh[2] = sh_dc_from_color(0.9);
    for (const auto& v : fx.captured.views) {
        const auto out = render(stored, v.camera);
        const auto png = "masks/" + v.id + ".png";
        write_file(dir / png, encode_mask_png(membership_mask(out, fx.captured.is_sphere)));
        masks.push_back({{"file", png}, {"camera", v.id}, {"label", kSphereLabel}, {"name", "sphere"}});
        const auto tgt = "targets/" + v.id + ".png";
        write_png(dir / tgt, render(blue, v.camera).color);
        targets[v.id] = tgt;
        const auto rep = "repaired/" + v.id + ".png";
        write_png(dir / rep, fx.repaired.at(v.id));
        repaired[v.id] = rep;
    }
    f.masks = dir / "masks.json";
    write_text_file(f.masks, nlohmann::json{{"masks", masks}}.dump(2));
    f.targets = dir / "targets.json";
    write_text_file(f.targets, targets.dump(2));
    f.repaired = dir / "repaired.json";
    write_text_file(f.repaired, repaired.dump(2));
    f.edit_config = dir / "edit.json";
    write_text_file(f.edit_config, nlohmann::json{{"steps", 30},
                                                  {"densify_interval", 10},
                                                  {"restrict_label", kSphereLabel},
                                                  {"guidance", {{"backend", "noisy"},
                                                                {"targets", "targets.json"},
                                                                {"sigma", 0.05},
                                                                {"seed", 3}}}}
                                       .dump(2));

    f.object = dir / "object.ply";
    save_scene(small_sphere_object(), f.object);
    // A 10 px disk on the plane in front of the sphere; estimated depth is an
    // affine distortion of the rendered depth (scale 2, shift 1).
    const auto& view = fx.captured.views[0];
    const auto out = render(stored, view.camera);
    BinaryMask mask(view.camera.width, view.camera.height);
    const auto center = view.camera.project(Vec3(0.9, 0.4, 0.1));
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x)
            if ((Vec2(x + 0.5, y + 0.5) - *center).norm() <= 5.0) mask.at(x, y) = 1;
    Image est(view.camera.width, view.camera.height, 1);
    for (std::size_t i = 0; i < est.data.size(); ++i)
        est.data[i] = out.alpha.data[i] > 0.5 ? (out.depth.data[i] - 1.0) / 2.0 : 0.0;
    f.insert_mask = dir / "insert_mask.png";
    write_file(f.insert_mask, encode_mask_png(mask));
    f.insert_depth = dir / "insert_depth.pfm";
    write_pfm(f.insert_depth, est);
    f.insert_camera = view.id;
    return f;
}

}  // namespace gsedit::testing
