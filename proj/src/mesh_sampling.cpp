#include "gsedit/mesh_sampling.hpp"

#include "gsedit/errors.hpp"
#include "gsedit/knn.hpp"
#include "gsedit/sh.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

namespace gsedit {

Mesh read_obj(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    Mesh mesh;
    std::string line;
    int line_no = 0;
    bool any_color = false;
    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream ss(line);
        std::string tag;
        if (!(ss >> tag)) continue;
        if (tag == "v") {
            Vec3 p;
            if (!(ss >> p.x() >> p.y() >> p.z())) throw FormatError(path.string() + ":" + std::to_string(line_no) + ": bad vertex");
            Vec3 c(0.7, 0.7, 0.7);
            if (ss >> c.x() >> c.y() >> c.z()) any_color = true;
            mesh.vertices.push_back(p);
            mesh.colors.push_back(c);
        } else if (tag == "f") {
            std::vector<std::uint32_t> idx;
            std::string tok;
            while (ss >> tok) {
                const long v = std::stol(tok.substr(0, tok.find('/')));
                const long resolved = v < 0 ? static_cast<long>(mesh.vertices.size()) + v : v - 1;
                if (resolved < 0 || resolved >= static_cast<long>(mesh.vertices.size()))
                    throw FormatError(path.string() + ":" + std::to_string(line_no) + ": face index out of range");
                idx.push_back(static_cast<std::uint32_t>(resolved));
            }
            if (idx.size() < 3) throw FormatError(path.string() + ":" + std::to_string(line_no) + ": face needs 3 vertices");
            for (std::size_t k = 1; k + 1 < idx.size(); ++k) mesh.faces.push_back({idx[0], idx[k], idx[k + 1]});
        }
    }
    if (!any_color) mesh.colors.clear();
    return mesh;
}

GaussianScene sample_mesh(const Mesh& mesh, const MeshSamplingOptions& options) {
    if (mesh.faces.empty()) throw ValidationError("mesh has no faces");
    if (options.count == 0) throw ValidationError("sample count must be positive");
    if (!mesh.colors.empty() && mesh.colors.size() != mesh.vertices.size())
        throw ValidationError("mesh colors must match vertices");

    std::vector<Vec3> verts = mesh.vertices;
    if (options.normalize) {
        Vec3 c = Vec3::Zero();
        for (const auto& v : verts) c += v;
        c /= static_cast<double>(verts.size());
        double r = 0;
        for (const auto& v : verts) r = std::max(r, (v - c).norm());
        if (!(r > 0)) throw ValidationError("mesh is degenerate");
        for (auto& v : verts) v = (v - c) / r;
    }

    std::vector<double> area(mesh.faces.size());
    for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
        const auto& [a, b, c] = mesh.faces[f];
        area[f] = 0.5 * (verts[b] - verts[a]).cross(verts[c] - verts[a]).norm();
    }
    std::mt19937_64 rng(options.seed);
    std::discrete_distribution<std::size_t> pick(area.begin(), area.end());
    std::uniform_real_distribution<double> u(0.0, 1.0);

    std::vector<Vec3> points(options.count), colors(options.count);
    for (std::size_t i = 0; i < options.count; ++i) {
        const auto& [a, b, c] = mesh.faces[pick(rng)];
        double r1 = std::sqrt(u(rng)), r2 = u(rng);
        const double wa = 1 - r1, wb = r1 * (1 - r2), wc = r1 * r2;
        points[i] = wa * verts[a] + wb * verts[b] + wc * verts[c];
        colors[i] = mesh.colors.empty() ? Vec3(0.7, 0.7, 0.7)
                                        : Vec3(wa * mesh.colors[a] + wb * mesh.colors[b] + wc * mesh.colors[c]);
    }

    const KdTree tree(points);
    const std::size_t k = std::min(options.neighbors + 1, points.size());
    GaussianScene out(0);
    for (std::size_t i = 0; i < points.size(); ++i) {
        double spacing = 0;
        std::size_t used = 0;
        for (std::size_t j : tree.nearest(points[i], k)) {
            if (j == i) continue;
            spacing += (points[j] - points[i]).norm();
            ++used;
        }
        spacing = used ? spacing / static_cast<double>(used) : 1.0;
        if (!(spacing > 0)) spacing = 1e-3;
        Gaussian g;
        g.position = points[i];
        g.log_scale = Vec3::Constant(std::log(spacing));
        g.opacity = logit(options.opacity);
        for (int ch = 0; ch < 3; ++ch) g.sh[ch] = sh_dc_from_color(std::clamp(colors[i][ch], 0.0, 1.0));
        out.push_back(g);
    }
    return out;
}

}  // namespace gsedit
