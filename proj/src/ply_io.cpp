#include "gsedit/ply_io.hpp"

#include "gsedit/base64.hpp"
#include "gsedit/errors.hpp"
#include "gsedit/image.hpp"

#include <json.hpp>

#include <bit>
#include <cmath>
#include <map>
#include <optional>
#include <sstream>

namespace gsedit {

namespace {

using json = nlohmann::json;

int rest_count(int degree) { return 3 * sh_coefficient_count(degree) - 3; }

std::vector<std::string> property_order(int degree) {
    std::vector<std::string> names = {"x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"};
    for (int i = 0; i < rest_count(degree); ++i) names.push_back("f_rest_" + std::to_string(i));
    for (const char* n : {"opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"})
        names.emplace_back(n);
    return names;
}

void put_f32(std::vector<std::uint8_t>& out, double v) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>(bits >> (8 * b)));
}

float get_f32(const std::uint8_t* p) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(p[b]) << (8 * b);
    return std::bit_cast<float>(bits);
}

std::size_t type_size(const std::string& type) {
    if (type == "char" || type == "uchar" || type == "int8" || type == "uint8") return 1;
    if (type == "short" || type == "ushort" || type == "int16" || type == "uint16") return 2;
    if (type == "int" || type == "uint" || type == "float" || type == "int32" || type == "uint32" ||
        type == "float32")
        return 4;
    if (type == "double" || type == "float64") return 8;
    return 0;
}

}  // namespace

std::filesystem::path sidecar_path(const std::filesystem::path& ply_path) {
    std::filesystem::path p = ply_path;
    p.replace_extension(".sidecar.json");
    return p;
}

std::vector<std::uint8_t> encode_ply(const GaussianScene& scene) {
    const int degree = scene.sh_degree();
    const int coeffs = sh_coefficient_count(degree);
    std::ostringstream header;
    header << "ply\nformat binary_little_endian 1.0\nelement vertex " << scene.size() << "\n";
    for (const auto& name : property_order(degree)) header << "property float " << name << "\n";
    header << "end_header\n";
    const std::string h = header.str();

    std::vector<std::uint8_t> out(h.begin(), h.end());
    out.reserve(out.size() + scene.size() * property_order(degree).size() * 4);
    for (const Gaussian& g : scene.gaussians()) {
        for (int i = 0; i < 3; ++i) put_f32(out, g.position[i]);
        for (int i = 0; i < 3; ++i) put_f32(out, 0.0);
        for (int c = 0; c < 3; ++c) put_f32(out, g.sh[c]);
        for (int c = 0; c < 3; ++c)
            for (int k = 1; k < coeffs; ++k) put_f32(out, g.sh[3 * k + c]);
        put_f32(out, g.opacity);
        for (int i = 0; i < 3; ++i) put_f32(out, g.log_scale[i]);
        for (int i = 0; i < 4; ++i) put_f32(out, g.rotation[i]);
    }
    return out;
}

GaussianScene decode_ply(std::span<const std::uint8_t> bytes) {
    std::size_t pos = 0;
    auto next_line = [&]() -> std::optional<std::string> {
        if (pos >= bytes.size()) return std::nullopt;
        std::string line;
        while (pos < bytes.size() && bytes[pos] != '\n') line.push_back(static_cast<char>(bytes[pos++]));
        ++pos;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return line;
    };

    if (next_line() != "ply") throw FormatError("PLY: missing 'ply' magic");
    bool format_seen = false;
    bool in_vertex = false;
    bool vertex_seen = false;
    std::size_t vertex_count = 0;
    std::map<std::string, std::size_t> offsets;
    std::size_t stride = 0;
    for (;;) {
        auto line = next_line();
        if (!line) throw FormatError("PLY: header is not terminated by end_header");
        std::istringstream ls(*line);
        std::string keyword;
        ls >> keyword;
        if (keyword == "end_header") break;
        if (keyword.empty() || keyword == "comment" || keyword == "obj_info") continue;
        if (keyword == "format") {
            std::string fmt;
            ls >> fmt;
            if (fmt != "binary_little_endian")
                throw FormatError("PLY: unsupported format '" + fmt + "' (need binary_little_endian)");
            format_seen = true;
        } else if (keyword == "element") {
            std::string name;
            long long count = -1;
            ls >> name >> count;
            if (count < 0) throw FormatError("PLY: bad element count for '" + name + "'");
            if (name == "vertex") {
                if (vertex_seen) throw FormatError("PLY: duplicate vertex element");
                vertex_seen = true;
                in_vertex = true;
                vertex_count = static_cast<std::size_t>(count);
            } else {
                if (!vertex_seen) throw FormatError("PLY: element '" + name + "' precedes the vertex element");
                in_vertex = false;
            }
        } else if (keyword == "property") {
            if (!in_vertex) continue;
            std::string type, name;
            ls >> type >> name;
            if (type == "list") throw FormatError("PLY: list property in vertex element");
            if (name.empty()) throw FormatError("PLY: property line without a name");
            if (offsets.contains(name)) throw FormatError("PLY: duplicate property '" + name + "'");
            const std::size_t size = type_size(type);
            if (size == 0) throw FormatError("PLY: unknown type '" + type + "' for property '" + name + "'");
            const bool used = name == "x" || name == "y" || name == "z" || name.starts_with("f_dc_") ||
                              name.starts_with("f_rest_") || name == "opacity" || name.starts_with("scale_") ||
                              name.starts_with("rot_");
            if (used && type != "float" && type != "float32")
                throw FormatError("PLY: property '" + name + "' must be float, found " + type);
            offsets[name] = stride;
            stride += size;
        } else {
            throw FormatError("PLY: unexpected header keyword '" + keyword + "'");
        }
    }
    if (!format_seen) throw FormatError("PLY: missing format line");
    if (!vertex_seen) throw FormatError("PLY: missing vertex element");

    int rest = 0;
    while (offsets.contains("f_rest_" + std::to_string(rest))) ++rest;
    int degree = -1;
    for (int d = 0; d <= kMaxShDegree; ++d)
        if (rest_count(d) == rest) degree = d;
    if (degree < 0)
        throw FormatError("PLY: property 'f_rest_" + std::to_string(rest) + "' expected; " + std::to_string(rest) +
                          " f_rest properties do not match any SH degree");
    for (const auto& name : property_order(degree)) {
        if (name == "nx" || name == "ny" || name == "nz") continue;
        if (!offsets.contains(name)) throw FormatError("PLY: missing property '" + name + "'");
    }

    if (bytes.size() - std::min(pos, bytes.size()) < vertex_count * stride)
        throw FormatError("PLY: vertex data truncated");

    auto at = [&](const std::uint8_t* row, const std::string& name) { return get_f32(row + offsets.at(name)); };
    const int coeffs = sh_coefficient_count(degree);
    GaussianScene scene(degree);
    for (std::size_t i = 0; i < vertex_count; ++i) {
        const std::uint8_t* row = bytes.data() + pos + i * stride;
        Gaussian g;
        g.position = {at(row, "x"), at(row, "y"), at(row, "z")};
        for (int c = 0; c < 3; ++c) g.sh[c] = at(row, "f_dc_" + std::to_string(c));
        for (int c = 0; c < 3; ++c)
            for (int k = 1; k < coeffs; ++k)
                g.sh[3 * k + c] = at(row, "f_rest_" + std::to_string(c * (coeffs - 1) + (k - 1)));
        g.opacity = at(row, "opacity");
        for (int a = 0; a < 3; ++a) g.log_scale[a] = at(row, "scale_" + std::to_string(a));
        for (int a = 0; a < 4; ++a) g.rotation[a] = at(row, "rot_" + std::to_string(a));
        const double norm = g.rotation.norm();
        if (!(norm > 0.0) || !std::isfinite(norm))
            throw FormatError("PLY: degenerate rotation quaternion at vertex " + std::to_string(i));
        // Float-stored unit quaternions are left untouched so the file round-trips bit-exactly.
        if (std::abs(norm - 1.0) > 1e-6) g.rotation /= norm;
        scene.push_back(g);
    }
    return scene;
}

std::string encode_sidecar(const GaussianScene& scene) {
    json doc;
    json labels = json::object();
    for (const auto& [id, name] : scene.label_names()) {
        const auto members = scene.label_members(id);
        labels[std::to_string(id)] = {{"name", name}, {"members", members}};
    }
    doc["labels"] = labels;
    doc["generations"] = scene.generations();
    if (scene.has_anchors()) {
        std::vector<double> flat;
        for (const Gaussian& a : scene.anchors()) {
            Gaussian copy = a;
            for_each_parameter(copy, scene.sh_degree(), [&](Property, double& v) { flat.push_back(v); });
        }
        doc["anchors"] = base64_encode(pack_f32_le(flat));
    } else {
        doc["anchors"] = nullptr;
    }
    return doc.dump(1);
}

void apply_sidecar(GaussianScene& scene, const std::string& json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::exception& e) {
        throw FormatError(std::string("sidecar: ") + e.what());
    }
    try {
        if (doc.contains("generations")) {
            const auto gens = doc["generations"].get<std::vector<int>>();
            if (gens.size() != scene.size())
                throw ConsistencyError("sidecar lists " + std::to_string(gens.size()) + " generations for " +
                                       std::to_string(scene.size()) + " Gaussians");
            auto dst = scene.mutable_generations();
            for (std::size_t i = 0; i < gens.size(); ++i) {
                if (gens[i] < 0) throw ConsistencyError("sidecar: negative generation");
                dst[i] = gens[i];
            }
        }
        if (doc.contains("labels")) {
            auto rows = scene.mutable_labels();
            for (const auto& [key, entry] : doc["labels"].items()) {
                const int id = std::stoi(key);
                scene.set_label_name(id, entry.value("name", std::string{}));
                for (std::size_t m : entry.value("members", std::vector<std::size_t>{})) {
                    if (m >= scene.size())
                        throw ConsistencyError("sidecar label " + key + " lists member " + std::to_string(m) +
                                               " but the scene has " + std::to_string(scene.size()) +
                                               " Gaussians");
                    rows[m] |= label_bit(id);
                }
            }
        }
        if (doc.contains("anchors") && !doc["anchors"].is_null()) {
            const auto values = unpack_f32_le(base64_decode(doc["anchors"].get<std::string>()));
            const std::size_t per = 11 + 3 * static_cast<std::size_t>(sh_coefficient_count(scene.sh_degree()));
            if (values.size() != per * scene.size())
                throw ConsistencyError("sidecar anchor block holds " + std::to_string(values.size() / per) +
                                       " rows for " + std::to_string(scene.size()) + " Gaussians");
            std::vector<Gaussian> anchors(scene.size());
            std::size_t k = 0;
            for (Gaussian& a : anchors)
                for_each_parameter(a, scene.sh_degree(), [&](Property, double& v) { v = values[k++]; });
            scene.set_anchors(std::move(anchors));
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("sidecar: ") + e.what());
    } catch (const std::invalid_argument&) {
        throw FormatError("sidecar: label ids must be integers");
    }
}

GaussianScene load_scene(const std::filesystem::path& path) {
    GaussianScene scene = decode_ply(read_file(path));
    const auto side = sidecar_path(path);
    if (std::filesystem::exists(side)) {
        const auto bytes = read_file(side);
        apply_sidecar(scene, std::string(bytes.begin(), bytes.end()));
    }
    scene.check_invariants();
    return scene;
}

void save_scene(const GaussianScene& scene, const std::filesystem::path& path) {
    scene.check_invariants();
    write_file(path, encode_ply(scene));
    write_text_file(sidecar_path(path), encode_sidecar(scene));
}

}  // namespace gsedit
