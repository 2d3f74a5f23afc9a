#include "tha/render.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <utility>

#include "tha/errors.hpp"

namespace tha {

namespace {

double orient2d(const Eigen::Vector2d& a, const Eigen::Vector2d& b, const Eigen::Vector2d& c) {
    return (b.x() - a.x()) * (c.y() - a.y()) - (b.y() - a.y()) * (c.x() - a.x());
}

// > 0 iff d lies strictly inside the circumcircle of the CCW triangle (a,b,c).
double incircle(const Eigen::Vector2d& a, const Eigen::Vector2d& b, const Eigen::Vector2d& c,
                const Eigen::Vector2d& d) {
    const double ax = a.x() - d.x(), ay = a.y() - d.y();
    const double bx = b.x() - d.x(), by = b.y() - d.y();
    const double cx = c.x() - d.x(), cy = c.y() - d.y();
    const double a2 = ax * ax + ay * ay;
    const double b2 = bx * bx + by * by;
    const double c2 = cx * cx + cy * cy;
    return ax * (by * c2 - b2 * cy) - ay * (bx * c2 - b2 * cx) + a2 * (bx * cy - by * cx);
}

struct Tri {
    int a, b, c;  // oriented CCW over the working vertex list
};

// Convex hull area by monotone chain; used to verify that the triangulation
// covers the hull with no sliver holes.
double convex_hull_area(const Eigen::MatrixX2d& pts) {
    std::vector<Eigen::Vector2d> p(pts.rows());
    for (int i = 0; i < pts.rows(); ++i) p[i] = pts.row(i).transpose();
    std::sort(p.begin(), p.end(), [](const Eigen::Vector2d& u, const Eigen::Vector2d& v) {
        return u.x() < v.x() || (u.x() == v.x() && u.y() < v.y());
    });
    p.erase(std::unique(p.begin(), p.end()), p.end());
    if (p.size() < 3) return 0.0;
    std::vector<Eigen::Vector2d> hull(2 * p.size());
    std::size_t k = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        while (k >= 2 && orient2d(hull[k - 2], hull[k - 1], p[i]) <= 0) --k;
        hull[k++] = p[i];
    }
    for (std::size_t i = p.size() - 1, lo = k + 1; i-- > 0;) {
        while (k >= lo && orient2d(hull[k - 2], hull[k - 1], p[i]) <= 0) --k;
        hull[k++] = p[i];
    }
    hull.resize(k > 0 ? k - 1 : 0);
    double twice = 0.0;
    for (std::size_t i = 0; i < hull.size(); ++i) {
        const Eigen::Vector2d& u = hull[i];
        const Eigen::Vector2d& v = hull[(i + 1) % hull.size()];
        twice += u.x() * v.y() - v.x() * u.y();
    }
    return 0.5 * std::abs(twice);
}

}  // namespace

void PortraitImage::validate() const {
    image.validate();
    if (landmarks.rows() < 3) throw ValidationError("portrait needs at least 3 landmarks");
    for (int i = 0; i < landmarks.rows(); ++i) {
        const double x = landmarks(i, 0), y = landmarks(i, 1);
        if (!std::isfinite(x) || !std::isfinite(y))
            throw ValidationError("portrait landmark is not finite");
        if (x < 0.0 || x > image.width || y < 0.0 || y > image.height)
            throw ValidationError("portrait landmark outside image bounds");
    }
}

namespace {

// One Bowyer-Watson pass with an enclosing triangle scaled by `factor`. The
// enclosing triangle must contain not just the points but every circumcircle
// of the final triangulation; when it is too small, near-collinear hull
// triples lose their sliver triangle. triangulate() verifies coverage and
// retries with a larger factor.
TriangleMesh triangulate_attempt(const Eigen::MatrixX2d& points, double factor) {
    const int n = int(points.rows());
    std::vector<Eigen::Vector2d> v(n + 3);
    for (int i = 0; i < n; ++i) v[i] = points.row(i).transpose();

    const double minx = points.col(0).minCoeff(), maxx = points.col(0).maxCoeff();
    const double miny = points.col(1).minCoeff(), maxy = points.col(1).maxCoeff();
    const double cx = 0.5 * (minx + maxx), cy = 0.5 * (miny + maxy);
    const double m = factor * std::max({maxx - minx, maxy - miny, 1.0});
    v[n] = {cx - 2.0 * m, cy - m};
    v[n + 1] = {cx + 2.0 * m, cy - m};
    v[n + 2] = {cx, cy + 2.0 * m};

    std::vector<Tri> tris{{n, n + 1, n + 2}};
    std::vector<char> bad;
    for (int i = 0; i < n; ++i) {
        bad.assign(tris.size(), 0);
        // Boundary of the cavity: edges used by exactly one bad triangle.
        std::map<std::pair<int, int>, std::pair<int, int>> edges;  // sorted -> (count, first-seen from)
        for (std::size_t t = 0; t < tris.size(); ++t) {
            if (incircle(v[tris[t].a], v[tris[t].b], v[tris[t].c], v[i]) > 0.0) {
                bad[t] = 1;
                const std::array<std::pair<int, int>, 3> es{
                    std::pair{tris[t].a, tris[t].b}, {tris[t].b, tris[t].c}, {tris[t].c, tris[t].a}};
                for (auto [from, to] : es) {
                    auto& slot = edges[std::minmax(from, to)];
                    if (slot.first == 0) slot.second = from;
                    slot.first++;
                }
            }
        }
        if (edges.empty()) continue;  // duplicate of an existing vertex
        std::vector<Tri> next;
        next.reserve(tris.size() + edges.size());
        for (std::size_t t = 0; t < tris.size(); ++t)
            if (!bad[t]) next.push_back(tris[t]);
        for (const auto& [key, info] : edges) {
            if (info.first != 1) continue;
            // Restore the edge's original direction so the new triangle is CCW.
            const int from = info.second;
            const int to = from == key.first ? key.second : key.first;
            next.push_back({i, from, to});
        }
        tris = std::move(next);
    }

    TriangleMesh mesh;
    mesh.vertices = points;
    for (const Tri& t : tris) {
        if (t.a >= n || t.b >= n || t.c >= n) continue;  // touches the enclosing super-triangle
        if (orient2d(v[t.a], v[t.b], v[t.c]) == 0.0) continue;
        std::array<int, 3> idx{t.a, t.b, t.c};
        std::sort(idx.begin(), idx.end());
        mesh.triangles.push_back(idx);
    }
    std::sort(mesh.triangles.begin(), mesh.triangles.end());
    return mesh;
}

}  // namespace

TriangleMesh triangulate(const Eigen::MatrixX2d& points) {
    const int n = int(points.rows());
    if (n < 3) throw TriangulationError("triangulation needs at least 3 points");
    for (int i = 0; i < n; ++i)
        if (!points.row(i).allFinite()) throw TriangulationError("triangulation point not finite");

    const double hull = convex_hull_area(points);
    if (hull == 0.0) throw TriangulationError("points are collinear");

    for (const double factor : {1e2, 1e5, 1e8}) {
        TriangleMesh mesh = triangulate_attempt(points, factor);
        double covered = 0.0;
        for (const auto& t : mesh.triangles) {
            const Eigen::Vector2d a = points.row(t[0]), b = points.row(t[1]),
                                  c = points.row(t[2]);
            covered += 0.5 * std::abs(orient2d(a, b, c));
        }
        if (!mesh.triangles.empty() && covered >= hull * (1.0 - 1e-9)) return mesh;
    }
    throw TriangulationError("triangulation failed to cover the convex hull");
}

Eigen::Vector3d sample_bilinear(const Image& img, double x, double y) {
    const double u = x - 0.5, v = y - 0.5;
    const int x0 = int(std::floor(u)), y0 = int(std::floor(v));
    const double fx = u - x0, fy = v - y0;
    const auto cl = [](int i, int hi) { return std::clamp(i, 0, hi); };
    const int xa = cl(x0, img.width - 1), xb = cl(x0 + 1, img.width - 1);
    const int ya = cl(y0, img.height - 1), yb = cl(y0 + 1, img.height - 1);
    Eigen::Vector3d out;
    for (int c = 0; c < 3; ++c) {
        const double top = (1.0 - fx) * img.at(xa, ya, c) + fx * img.at(xb, ya, c);
        const double bot = (1.0 - fx) * img.at(xa, yb, c) + fx * img.at(xb, yb, c);
        out[c] = (1.0 - fy) * top + fy * bot;
    }
    return out;
}

Image warp_frame(const PortraitImage& src, const TriangleMesh& mesh,
                 const Eigen::MatrixX2d& target_vertices, WarpStats* stats) {
    src.image.validate();
    if (target_vertices.rows() != mesh.vertices.rows())
        throw ValidationError("target vertex count does not match mesh");
    if (!target_vertices.allFinite()) throw ValidationError("target vertices not finite");

    const int w = src.image.width, h = src.image.height;
    Image out = src.image;  // pixels outside every triangle keep the source
    constexpr double kEps = 1e-9;

    for (const auto& tri : mesh.triangles) {
        const Eigen::Vector2d s0 = mesh.vertices.row(tri[0]), s1 = mesh.vertices.row(tri[1]),
                              s2 = mesh.vertices.row(tri[2]);
        const Eigen::Vector2d t0 = target_vertices.row(tri[0]), t1 = target_vertices.row(tri[1]),
                              t2 = target_vertices.row(tri[2]);
        const double det_t = orient2d(t0, t1, t2);
        const double det_s = orient2d(s0, s1, s2);
        if (stats && (det_t * det_s < 0.0 || (det_t == 0.0 && det_s != 0.0)))
            stats->folded_triangles++;
        if (det_t == 0.0) continue;  // collapsed: covers no pixel

        const double minx = std::min({t0.x(), t1.x(), t2.x()});
        const double maxx = std::max({t0.x(), t1.x(), t2.x()});
        const double miny = std::min({t0.y(), t1.y(), t2.y()});
        const double maxy = std::max({t0.y(), t1.y(), t2.y()});
        const int px0 = std::max(0, int(std::floor(minx - 0.5)));
        const int px1 = std::min(w - 1, int(std::ceil(maxx - 0.5)));
        const int py0 = std::max(0, int(std::floor(miny - 0.5)));
        const int py1 = std::min(h - 1, int(std::ceil(maxy - 0.5)));

        for (int y = py0; y <= py1; ++y) {
            for (int x = px0; x <= px1; ++x) {
                const Eigen::Vector2d p(x + 0.5, y + 0.5);
                const double l1 = orient2d(t0, p, t2) / det_t;
                const double l2 = orient2d(t0, t1, p) / det_t;
                const double l0 = 1.0 - l1 - l2;
                if (l0 < -kEps || l1 < -kEps || l2 < -kEps) continue;
                const Eigen::Vector2d sp = l0 * s0 + l1 * s1 + l2 * s2;
                const Eigen::Vector3d rgb = sample_bilinear(src.image, sp.x(), sp.y());
                for (int c = 0; c < 3; ++c)
                    out.at(x, y, c) =
                        std::uint8_t(std::clamp<long>(std::lround(rgb[c]), 0, 255));
            }
        }
    }
    return out;
}

Eigen::MatrixX2d border_anchors(int width, int height) {
    const double w = width, h = height;
    Eigen::MatrixX2d a(8, 2);
    a << 0.0, 0.0, w, 0.0, w, h, 0.0, h,  // corners
        0.5 * w, 0.0, w, 0.5 * h, 0.5 * w, h, 0.0, 0.5 * h;  // edge midpoints
    return a;
}

RenderResult render_animation(const PortraitImage& src, const LandmarkSequence& seq,
                              const std::string& out_dir) {
    src.validate();
    if (src.landmarks.rows() != kNumLandmarks)
        throw ValidationError("animation rendering requires the 68-point landmark set");
    for (const LandmarkFrame& f : seq.frames) f.validate();
    if (seq.fps <= 0.0) throw ValidationError("fps must be positive");

    const Eigen::MatrixX2d anchors = border_anchors(src.image.width, src.image.height);
    Eigen::MatrixX2d verts(kNumLandmarks + 8, 2);
    verts.topRows(kNumLandmarks) = src.landmarks;
    verts.bottomRows(8) = anchors;
    const TriangleMesh mesh = triangulate(verts);

    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec || !std::filesystem::is_directory(out_dir))
        throw IoError("cannot create output directory: " + out_dir);

    RenderResult result;
    result.frame_count = seq.frame_count();
    WarpStats stats;
    Eigen::MatrixX2d target(kNumLandmarks + 8, 2);
    target.bottomRows(8) = anchors;
    for (int t = 0; t < seq.frame_count(); ++t) {
        target.topRows(kNumLandmarks) = seq.frames[t].points.leftCols<2>();
        const Image frame = warp_frame(src, mesh, target, &stats);
        char name[32];
        std::snprintf(name, sizeof(name), "frame_%06d.png", t);
        write_png((std::filesystem::path(out_dir) / name).string(), frame);
    }
    result.folded_triangles = stats.folded_triangles;

    nlohmann::json manifest{{"fps", seq.fps},
                            {"frame_count", result.frame_count},
                            {"width", src.image.width},
                            {"height", src.image.height},
                            {"folded_triangles", result.folded_triangles}};
    const std::string mpath = (std::filesystem::path(out_dir) / "manifest.json").string();
    std::ofstream mf(mpath, std::ios::binary | std::ios::trunc);
    if (!mf) throw IoError("cannot write manifest: " + mpath);
    mf << manifest.dump(2) << '\n';
    if (!mf.good()) throw IoError("error while writing manifest: " + mpath);
    result.manifest_path = mpath;
    return result;
}

}  // namespace tha
