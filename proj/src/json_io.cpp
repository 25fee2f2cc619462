#include "gsedit/json_io.hpp"

#include "gsedit/errors.hpp"
#include "gsedit/image.hpp"

namespace gsedit {

using json = nlohmann::json;

json camera_to_json(const Camera& camera) {
    json k = json::array(), r = json::array();
    for (int i = 0; i < 3; ++i) {
        k.push_back({camera.K(i, 0), camera.K(i, 1), camera.K(i, 2)});
        r.push_back({camera.R(i, 0), camera.R(i, 1), camera.R(i, 2)});
    }
    return {{"K", k},
            {"R", r},
            {"t", {camera.t.x(), camera.t.y(), camera.t.z()}},
            {"w", camera.width},
            {"h", camera.height},
            {"near", camera.near_plane},
            {"far", camera.far_plane}};
}

Camera camera_from_json(const json& j) {
    Camera cam;
    try {
        const auto k = j.at("K").get<std::vector<std::vector<double>>>();
        const auto r = j.at("R").get<std::vector<std::vector<double>>>();
        const auto t = j.at("t").get<std::vector<double>>();
        if (k.size() != 3 || r.size() != 3 || t.size() != 3) throw FormatError("camera: K and R must be 3x3, t a 3-vector");
        for (int i = 0; i < 3; ++i) {
            if (k[i].size() != 3 || r[i].size() != 3) throw FormatError("camera: K and R must be 3x3");
            for (int c = 0; c < 3; ++c) {
                cam.K(i, c) = k[i][c];
                cam.R(i, c) = r[i][c];
            }
            cam.t[i] = t[i];
        }
        cam.width = j.at("w").get<int>();
        cam.height = j.at("h").get<int>();
        cam.near_plane = j.value("near", cam.near_plane);
        cam.far_plane = j.value("far", cam.far_plane);
    } catch (const json::exception& e) {
        throw FormatError(std::string("camera: ") + e.what());
    }
    cam.validate();
    return cam;
}

std::vector<NamedCamera> cameras_from_json(const json& j) {
    if (!j.is_object()) throw FormatError("camera set must be a JSON object keyed by camera id");
    std::vector<NamedCamera> out;
    for (const auto& [id, cam] : j.items()) {
        try {
            out.push_back({id, camera_from_json(cam)});
        } catch (const ValidationError& e) {
            throw ValidationError("camera '" + id + "': " + e.what());
        } catch (const FormatError& e) {
            throw FormatError("camera '" + id + "': " + e.what());
        }
    }
    return out;
}

json cameras_to_json(const std::vector<NamedCamera>& cameras) {
    json j = json::object();
    for (const auto& c : cameras) j[c.id] = camera_to_json(c.camera);
    return j;
}

json load_json_file(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    try {
        return json::parse(bytes.begin(), bytes.end());
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

std::vector<NamedCamera> load_cameras(const std::filesystem::path& path) {
    return cameras_from_json(load_json_file(path));
}

const NamedCamera& find_camera(const std::vector<NamedCamera>& cameras, const std::string& id) {
    for (const auto& c : cameras)
        if (c.id == id) return c;
    throw ValidationError("unknown camera id '" + id + "'");
}

}  // namespace gsedit
