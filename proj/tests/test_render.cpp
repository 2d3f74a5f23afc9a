#include "tha/render.hpp"

#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <set>
#include <vector>

#include "tha/embeddings.hpp"
#include "tha/errors.hpp"
#include "tha/geometry.hpp"
#include "tha/png_io.hpp"
#include "tha/rng.hpp"

using namespace tha;
namespace fs = std::filesystem;

namespace {

Image smooth_image(int w, int h) {
    Image img(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            img.at(x, y, 0) = std::uint8_t(127.5 + 127.0 * std::sin(0.07 * x + 0.011 * y));
            img.at(x, y, 1) = std::uint8_t(127.5 + 127.0 * std::cos(0.05 * y - 0.013 * x));
            img.at(x, y, 2) = std::uint8_t((x * 255) / std::max(1, w - 1));
        }
    return img;
}

// Face landmarks scaled/translated into the middle of a w x h image.
Eigen::MatrixX2d template_pixels(int w, int h) {
    const LandmarkFrame tmpl = standard_template();
    Eigen::MatrixX2d out(kNumLandmarks, 2);
    const double sx = w / 4.0, sy = h / 4.0;
    for (int i = 0; i < kNumLandmarks; ++i) {
        out(i, 0) = tmpl.points(i, 0) * sx + w / 2.0;
        out(i, 1) = tmpl.points(i, 1) * sy + h / 2.0;
    }
    return out;
}

// Independent circumcircle check: no point may lie strictly inside any
// triangle's circumcircle (points on the circle are legal ties).
bool delaunay_oracle(const Eigen::MatrixX2d& pts, const TriangleMesh& mesh) {
    for (const auto& tri : mesh.triangles) {
        const Eigen::Vector2d a = pts.row(tri[0]), b = pts.row(tri[1]), c = pts.row(tri[2]);
        const Eigen::Matrix2d m = (Eigen::Matrix2d() << (b - a).transpose(), (c - a).transpose()).finished();
        const Eigen::Vector2d rhs(0.5 * (b.squaredNorm() - a.squaredNorm()),
                                  0.5 * (c.squaredNorm() - a.squaredNorm()));
        const Eigen::Vector2d center = m.fullPivLu().solve(rhs);
        const double r2 = (a - center).squaredNorm();
        for (int p = 0; p < pts.rows(); ++p) {
            if (p == tri[0] || p == tri[1] || p == tri[2]) continue;
            const double d2 = (pts.row(p).transpose() - center).squaredNorm();
            if (d2 < r2 * (1.0 - 1e-9)) return false;
        }
    }
    return true;
}

double tri_area(const Eigen::Vector2d& a, const Eigen::Vector2d& b, const Eigen::Vector2d& c) {
    return 0.5 * std::abs((b.x() - a.x()) * (c.y() - a.y()) - (b.y() - a.y()) * (c.x() - a.x()));
}

// Monotone-chain convex hull area, written independently of the mesh code.
double hull_area(const Eigen::MatrixX2d& pts) {
    std::vector<Eigen::Vector2d> p(pts.rows());
    for (int i = 0; i < pts.rows(); ++i) p[i] = pts.row(i).transpose();
    std::sort(p.begin(), p.end(), [](const auto& u, const auto& v) {
        return u.x() < v.x() || (u.x() == v.x() && u.y() < v.y());
    });
    auto cross = [](const Eigen::Vector2d& o, const Eigen::Vector2d& u, const Eigen::Vector2d& v) {
        return (u.x() - o.x()) * (v.y() - o.y()) - (u.y() - o.y()) * (v.x() - o.x());
    };
    std::vector<Eigen::Vector2d> hull(2 * p.size());
    std::size_t k = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        while (k >= 2 && cross(hull[k - 2], hull[k - 1], p[i]) <= 0) --k;
        hull[k++] = p[i];
    }
    for (std::size_t i = p.size() - 1, t = k + 1; i-- > 0;) {
        while (k >= t && cross(hull[k - 2], hull[k - 1], p[i]) <= 0) --k;
        hull[k++] = p[i];
    }
    hull.resize(k > 0 ? k - 1 : 0);
    double area = 0.0;
    for (std::size_t i = 0; i < hull.size(); ++i) {
        const auto& u = hull[i];
        const auto& v = hull[(i + 1) % hull.size()];
        area += u.x() * v.y() - v.x() * u.y();
    }
    return 0.5 * std::abs(area);
}

bool point_in_triangle(const Eigen::Vector2d& p, const Eigen::Vector2d& a,
                       const Eigen::Vector2d& b, const Eigen::Vector2d& c) {
    const double det = (b.x() - a.x()) * (c.y() - a.y()) - (b.y() - a.y()) * (c.x() - a.x());
    if (det == 0.0) return false;
    const double l1 = ((p.x() - a.x()) * (c.y() - a.y()) - (p.y() - a.y()) * (c.x() - a.x())) / det;
    const double l2 = ((b.x() - a.x()) * (p.y() - a.y()) - (b.y() - a.y()) * (p.x() - a.x())) / det;
    return l1 >= -1e-9 && l2 >= -1e-9 && 1.0 - l1 - l2 >= -1e-9;
}

bool inside_any_triangle(const Eigen::Vector2d& p, const Eigen::MatrixX2d& verts,
                         const std::vector<std::array<int, 3>>& tris) {
    for (const auto& t : tris)
        if (point_in_triangle(p, verts.row(t[0]), verts.row(t[1]), verts.row(t[2]))) return true;
    return false;
}

// Oracle bilinear sampler, written independently of the library one.
Eigen::Vector3d oracle_bilinear(const Image& img, double x, double y) {
    const double u = x - 0.5, v = y - 0.5;
    const int x0 = int(std::floor(u)), y0 = int(std::floor(v));
    const double fx = u - x0, fy = v - y0;
    Eigen::Vector3d out;
    auto px = [&](int xx, int yy, int c) {
        xx = std::clamp(xx, 0, img.width - 1);
        yy = std::clamp(yy, 0, img.height - 1);
        return double(img.at(xx, yy, c));
    };
    for (int c = 0; c < 3; ++c)
        out[c] = (1 - fy) * ((1 - fx) * px(x0, y0, c) + fx * px(x0 + 1, y0, c)) +
                 fy * ((1 - fx) * px(x0, y0 + 1, c) + fx * px(x0 + 1, y0 + 1, c));
    return out;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(f.good());
    return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("png round trip is lossless") {
    Rng rng(31);
    Image img(37, 23);
    for (auto& b : img.pixels) b = std::uint8_t(rng.below(256));
    const std::string path = "/tmp/tha_png_roundtrip.png";
    write_png(path, img);
    const Image back = read_png(path);
    REQUIRE(back.width == img.width);
    REQUIRE(back.height == img.height);
    CHECK(back.pixels == img.pixels);
}

TEST_CASE("png errors") {
    CHECK_THROWS_AS(read_png("/tmp/tha_png_missing.png"), IoError);
    const std::string bad = "/tmp/tha_png_bad.png";
    std::ofstream(bad) << "definitely not a png";
    CHECK_THROWS_AS(read_png(bad), ParseError);
    Image img(4, 4);
    CHECK_THROWS_AS(write_png("/tmp/no_such_dir_tha/x.png", img), IoError);
}

TEST_CASE("triangulate: three points give one triangle") {
    Eigen::MatrixX2d pts(3, 2);
    pts << 0, 0, 4, 0, 1, 3;
    const TriangleMesh mesh = triangulate(pts);
    REQUIRE(mesh.triangles.size() == 1);
    CHECK(mesh.triangles[0] == std::array<int, 3>{0, 1, 2});
}

TEST_CASE("triangulate: unit square gives two Delaunay triangles") {
    Eigen::MatrixX2d pts(4, 2);
    pts << 0, 0, 1, 0, 1, 1, 0, 1;
    const TriangleMesh mesh = triangulate(pts);
    REQUIRE(mesh.triangles.size() == 2);
    CHECK(delaunay_oracle(pts, mesh));
    // Rerun must give the identical diagonal (deterministic tie-break).
    const TriangleMesh again = triangulate(pts);
    CHECK(again.triangles == mesh.triangles);
}

TEST_CASE("triangulate: random point sets satisfy the circumcircle oracle and cover the hull") {
    Rng rng(77);
    for (int trial = 0; trial < 8; ++trial) {
        const int n = 10 + int(rng.below(40));
        Eigen::MatrixX2d pts(n, 2);
        for (int i = 0; i < n; ++i) {
            pts(i, 0) = rng.uniform(0.0, 100.0);
            pts(i, 1) = rng.uniform(0.0, 80.0);
        }
        const TriangleMesh mesh = triangulate(pts);
        CHECK(delaunay_oracle(pts, mesh));
        double covered = 0.0;
        for (const auto& t : mesh.triangles)
            covered += tri_area(pts.row(t[0]), pts.row(t[1]), pts.row(t[2]));
        CHECK(covered == doctest::Approx(hull_area(pts)).epsilon(1e-9));
    }
}

TEST_CASE("triangulate: 100 random 68-point sets pass the brute-force oracle") {
    Rng rng(4242);
    for (int trial = 0; trial < 100; ++trial) {
        Eigen::MatrixX2d pts(kNumLandmarks, 2);
        for (int i = 0; i < kNumLandmarks; ++i) {
            pts(i, 0) = rng.uniform(-3.0, 3.0);
            pts(i, 1) = rng.uniform(-2.0, 2.0);
        }
        const TriangleMesh mesh = triangulate(pts);
        REQUIRE(!mesh.triangles.empty());
        CHECK(delaunay_oracle(pts, mesh));
    }
}

TEST_CASE("triangulate: degenerate inputs") {
    Eigen::MatrixX2d two(2, 2);
    two << 0, 0, 1, 1;
    CHECK_THROWS_AS(triangulate(two), TriangulationError);

    Eigen::MatrixX2d line(5, 2);
    for (int i = 0; i < 5; ++i) line.row(i) << i * 0.5, i * 1.5;
    CHECK_THROWS_AS(triangulate(line), TriangulationError);
}

TEST_CASE("triangulate: permutation of the input yields the same triangle set") {
    Rng rng(99);
    const int n = 24;
    Eigen::MatrixX2d pts(n, 2);
    for (int i = 0; i < n; ++i) pts.row(i) << rng.uniform(0.0, 10.0), rng.uniform(0.0, 10.0);
    const TriangleMesh base = triangulate(pts);

    std::vector<int> perm(n);
    for (int i = 0; i < n; ++i) perm[i] = i;
    for (int i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
    Eigen::MatrixX2d shuffled(n, 2);
    for (int i = 0; i < n; ++i) shuffled.row(i) = pts.row(perm[i]);
    const TriangleMesh other = triangulate(shuffled);

    std::set<std::array<int, 3>> base_set(base.triangles.begin(), base.triangles.end());
    std::set<std::array<int, 3>> mapped;
    for (const auto& t : other.triangles) {
        std::array<int, 3> m{perm[t[0]], perm[t[1]], perm[t[2]]};
        std::sort(m.begin(), m.end());
        mapped.insert(m);
    }
    CHECK(mapped == base_set);
}

TEST_CASE("warp: identity targets reproduce the source inside the hull") {
    const int w = 120, h = 110;
    PortraitImage src{smooth_image(w, h), template_pixels(w, h)};
    const TriangleMesh mesh = triangulate(src.landmarks);
    WarpStats stats;
    const Image out = warp_frame(src, mesh, src.landmarks, &stats);
    CHECK(stats.folded_triangles == 0);

    double se = 0.0;
    long count = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!inside_any_triangle({x + 0.5, y + 0.5}, src.landmarks, mesh.triangles)) continue;
            for (int c = 0; c < 3; ++c) {
                const double d = double(out.at(x, y, c)) - double(src.image.at(x, y, c));
                se += d * d;
                ++count;
            }
        }
    REQUIRE(count > 1000);
    const double mse = se / count;
    const double psnr = mse == 0.0 ? 99.0 : 10.0 * std::log10(255.0 * 255.0 / mse);
    CHECK(psnr > 40.0);
}

TEST_CASE("warp: integer translation moves hull content exactly") {
    const int w = 64, h = 64, dx = 5, dy = 3;
    Image checker(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) checker.at(x, y, c) = ((x / 8 + y / 8) % 2) ? 255 : 0;

    Eigen::MatrixX2d pts(5, 2);
    pts << 4, 4, 56, 4, 56, 56, 4, 56, 30, 30;
    PortraitImage src{checker, pts};
    const TriangleMesh mesh = triangulate(pts);
    Eigen::MatrixX2d target = pts;
    target.col(0).array() += dx;
    target.col(1).array() += dy;
    const Image out = warp_frame(src, mesh, target);

    int compared = 0;
    for (int y = dy + 6; y < 54 + dy; ++y)
        for (int x = dx + 6; x < 54 + dx; ++x) {
            if (!inside_any_triangle({x + 0.5, y + 0.5}, target, mesh.triangles)) continue;
            for (int c = 0; c < 3; ++c) CHECK(out.at(x, y, c) == checker.at(x - dx, y - dy, c));
            ++compared;
        }
    CHECK(compared > 500);
}

TEST_CASE("warp: triangle scaled about its centroid samples the source centroid") {
    const int w = 96, h = 96;
    PortraitImage src{smooth_image(w, h), Eigen::MatrixX2d(3, 2)};
    src.landmarks << 20, 30, 70, 25, 45, 75;
    const Eigen::RowVector2d centroid = src.landmarks.colwise().mean();
    Eigen::MatrixX2d target = src.landmarks;
    for (int i = 0; i < 3; ++i) target.row(i) = centroid + 2.0 * (src.landmarks.row(i) - centroid);

    const TriangleMesh mesh = triangulate(src.landmarks);
    const Image out = warp_frame(src, mesh, target);

    const int px = int(std::floor(centroid.x())), py = int(std::floor(centroid.y()));
    // The affine map halves the offset between the pixel center and the fixed centroid.
    const double sx = centroid.x() + 0.5 * (px + 0.5 - centroid.x());
    const double sy = centroid.y() + 0.5 * (py + 0.5 - centroid.y());
    const Eigen::Vector3d expect = oracle_bilinear(src.image, sx, sy);
    for (int c = 0; c < 3; ++c)
        CHECK(std::abs(double(out.at(px, py, c)) - expect[c]) <= 1.0);
}

TEST_CASE("warp: global affine motion matches direct affine resampling within 2 LSB") {
    const int w = 128, h = 128;
    PortraitImage src{smooth_image(w, h), template_pixels(w, h)};
    const TriangleMesh mesh = triangulate(src.landmarks);

    Eigen::Matrix2d A;
    const double ang = 0.1;
    A << std::cos(ang), -std::sin(ang), std::sin(ang), std::cos(ang);
    A *= 1.05;
    const Eigen::Vector2d shift(3.5, -2.2);
    const Eigen::Vector2d pivot(w / 2.0, h / 2.0);
    Eigen::MatrixX2d target(src.landmarks.rows(), 2);
    for (int i = 0; i < src.landmarks.rows(); ++i)
        target.row(i) =
            (A * (src.landmarks.row(i).transpose() - pivot) + pivot + shift).transpose();

    const Image out = warp_frame(src, mesh, target);
    const Eigen::Matrix2d Ainv = A.inverse();
    int worst = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const Eigen::Vector2d p(x + 0.5, y + 0.5);
            Eigen::Vector3d expect;
            if (inside_any_triangle(p, target, mesh.triangles)) {
                const Eigen::Vector2d sp = Ainv * (p - pivot - shift) + pivot;
                expect = oracle_bilinear(src.image, sp.x(), sp.y());
            } else {
                expect = {double(src.image.at(x, y, 0)), double(src.image.at(x, y, 1)),
                          double(src.image.at(x, y, 2))};
            }
            for (int c = 0; c < 3; ++c)
                worst = std::max(worst,
                                 int(std::abs(std::lround(expect[c]) - long(out.at(x, y, c)))));
        }
    CHECK(worst <= 2);
}

TEST_CASE("warp: inverted target triangle is rendered and counted") {
    const int w = 48, h = 48;
    PortraitImage src{smooth_image(w, h), Eigen::MatrixX2d(3, 2)};
    src.landmarks << 10, 10, 38, 12, 24, 40;
    const TriangleMesh mesh = triangulate(src.landmarks);

    Eigen::MatrixX2d target = src.landmarks;
    target.row(0).swap(target.row(1));  // flips orientation, same vertex set
    WarpStats stats;
    const Image out = warp_frame(src, mesh, target, &stats);
    CHECK(stats.folded_triangles == 1);
    CHECK(out.width == w);

    Eigen::MatrixX2d collapsed = src.landmarks;
    collapsed.row(1) = collapsed.row(0);
    collapsed.row(2) = collapsed.row(0);
    WarpStats stats2;
    const Image out2 = warp_frame(src, mesh, collapsed, &stats2);
    CHECK(stats2.folded_triangles == 1);
    CHECK(out2.pixels == src.image.pixels);  // covers nothing
}

TEST_CASE("warp: vertex count mismatch is rejected") {
    PortraitImage src{Image(16, 16), Eigen::MatrixX2d(3, 2)};
    src.landmarks << 2, 2, 13, 3, 8, 12;
    const TriangleMesh mesh = triangulate(src.landmarks);
    CHECK_THROWS_AS(warp_frame(src, mesh, Eigen::MatrixX2d(4, 2)), ValidationError);
}

TEST_CASE("render_animation: deterministic frames, manifest, constant sequence") {
    const int w = 72, h = 64;
    PortraitImage src{smooth_image(w, h), template_pixels(w, h)};

    LandmarkSequence seq;
    seq.fps = 25.0;
    LandmarkFrame f;
    f.points.setZero();
    f.points.col(0) = src.landmarks.col(0);
    f.points.col(1) = src.landmarks.col(1);
    seq.frames = {f, f, f};

    const fs::path dir = "/tmp/tha_render_anim";
    fs::remove_all(dir);
    const RenderResult res = render_animation(src, seq, dir.string());
    CHECK(res.frame_count == 3);
    CHECK(res.folded_triangles == 0);

    REQUIRE(fs::exists(dir / "frame_000000.png"));
    REQUIRE(fs::exists(dir / "frame_000002.png"));
    CHECK(!fs::exists(dir / "frame_000003.png"));
    const std::string f0 = slurp(dir / "frame_000000.png");
    CHECK(slurp(dir / "frame_000001.png") == f0);
    CHECK(slurp(dir / "frame_000002.png") == f0);

    // Identity targets: the frame reproduces the portrait byte-for-byte.
    const Image frame0 = read_png((dir / "frame_000000.png").string());
    CHECK(frame0.pixels == src.image.pixels);

    const nlohmann::json manifest = nlohmann::json::parse(slurp(dir / "manifest.json"));
    CHECK(manifest.at("fps").get<double>() == 25.0);
    CHECK(manifest.at("frame_count").get<int>() == 3);
    CHECK(manifest.at("width").get<int>() == w);

    // Re-render must be byte-identical (files and manifest).
    const std::string m0 = slurp(dir / "manifest.json");
    const fs::path dir2 = "/tmp/tha_render_anim_again";
    fs::remove_all(dir2);
    render_animation(src, seq, dir2.string());
    CHECK(slurp(dir2 / "frame_000001.png") == f0);
    CHECK(slurp(dir2 / "manifest.json") == m0);
}

TEST_CASE("render_animation: moving frames differ from the base frame") {
    const int w = 72, h = 64;
    PortraitImage src{smooth_image(w, h), template_pixels(w, h)};

    LandmarkFrame base;
    base.points.setZero();
    base.points.col(0) = src.landmarks.col(0);
    base.points.col(1) = src.landmarks.col(1);
    LandmarkFrame moved = base;
    for (int i = 48; i < 68; ++i) moved.points(i, 1) += 2.5;  // drop the mouth

    LandmarkSequence seq;
    seq.frames = {base, moved};
    const fs::path dir = "/tmp/tha_render_moving";
    fs::remove_all(dir);
    render_animation(src, seq, dir.string());
    CHECK(slurp(dir / "frame_000000.png") != slurp(dir / "frame_000001.png"));
}

TEST_CASE("render_animation: error paths") {
    const int w = 48, h = 48;
    PortraitImage src{smooth_image(w, h), template_pixels(w, h)};
    LandmarkSequence seq;
    LandmarkFrame f;
    f.points.setZero();
    f.points.col(0) = src.landmarks.col(0);
    f.points.col(1) = src.landmarks.col(1);
    seq.frames = {f};

    const fs::path blocker = "/tmp/tha_render_blocker";
    fs::remove_all(blocker);
    std::ofstream(blocker) << "regular file";
    CHECK_THROWS_AS(render_animation(src, seq, (blocker / "out").string()), IoError);

    PortraitImage oob = src;
    oob.landmarks(0, 0) = -5.0;
    CHECK_THROWS_AS(render_animation(oob, seq, "/tmp/tha_render_oob"), ValidationError);
}

TEST_CASE("warp: render time scales linearly in pixel count") {
    auto per_pixel_time = [](int size) {
        PortraitImage src{smooth_image(size, size), template_pixels(size, size)};
        Eigen::MatrixX2d verts(kNumLandmarks + 8, 2);
        verts.topRows(kNumLandmarks) = src.landmarks;
        verts.bottomRows(8) = border_anchors(size, size);
        const TriangleMesh mesh = triangulate(verts);
        Eigen::MatrixX2d target = verts;
        target.topRows(kNumLandmarks).col(1).array() += 1.0;
        warp_frame(src, mesh, target);  // warm up
        double best = 1e300;
        for (int rep = 0; rep < 7; ++rep) {
            const auto t0 = std::chrono::steady_clock::now();
            warp_frame(src, mesh, target);
            const auto t1 = std::chrono::steady_clock::now();
            best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
        }
        return best / (double(size) * size);
    };
    bool ok = false;
    double ratio = 0.0;
    for (int attempt = 0; attempt < 3 && !ok; ++attempt) {
        ratio = per_pixel_time(384) / per_pixel_time(192);
        ok = ratio > 1.0 / 1.3 && ratio < 1.3;
    }
    CHECK_MESSAGE(ok, "per-pixel time ratio ", ratio);
}
