#pragma once

#include <Eigen/Dense>
#include <array>
#include <string>
#include <vector>

#include "tha/geometry.hpp"
#include "tha/png_io.hpp"

namespace tha {

// A source image plus its landmarks in pixel coordinates. Any number of
// landmarks >= 3 is accepted for standalone warping; animation rendering
// requires the full 68-point set.
struct PortraitImage {
    Image image;
    Eigen::MatrixX2d landmarks;

    void validate() const;  // image valid, >= 3 landmarks, all inside bounds
};

// Triangulation over a fixed vertex set. The vertex positions double as
// texture coordinates into the source image. Triangles are stored with
// ascending indices and the list is sorted, so equal inputs always produce
// byte-identical meshes.
struct TriangleMesh {
    Eigen::MatrixX2d vertices;
    std::vector<std::array<int, 3>> triangles;
};

// Delaunay triangulation (Bowyer-Watson, points inserted in index order so
// cocircular ties resolve deterministically). Throws TriangulationError for
// fewer than 3 points or an all-collinear set.
TriangleMesh triangulate(const Eigen::MatrixX2d& points);

struct WarpStats {
    int folded_triangles = 0;  // target triangles whose orientation flipped or collapsed
};

// Warps the source image so the mesh vertices move to target_vertices. Each
// output pixel center covered by a target triangle samples the source via the
// triangle's barycentric map with bilinear filtering (clamp-to-edge); pixels
// outside every triangle keep the source pixel. Inverted target triangles are
// rendered with their own map and counted in stats.
Image warp_frame(const PortraitImage& src, const TriangleMesh& mesh,
                 const Eigen::MatrixX2d& target_vertices, WarpStats* stats = nullptr);

// 8 fixed border anchors (4 corners + 4 edge midpoints) of the continuous
// image rectangle [0,w] x [0,h]; appended to landmarks so the background
// deforms smoothly instead of tearing.
Eigen::MatrixX2d border_anchors(int width, int height);

// Bilinear sample of the source at a continuous position, clamp-to-edge.
Eigen::Vector3d sample_bilinear(const Image& img, double x, double y);

struct RenderResult {
    int frame_count = 0;
    int folded_triangles = 0;
    std::string manifest_path;
};

// Renders one PNG per frame into out_dir as frame_%06d.png plus a
// manifest.json (fps, frame count, image size, fold statistic). The sequence
// must hold 68-point frames already in pixel coordinates; z is dropped.
// Border anchors are appended and held fixed across frames. Deterministic:
// re-rendering produces byte-identical files. Throws IoError when the output
// directory cannot be created or written.
RenderResult render_animation(const PortraitImage& src, const LandmarkSequence& seq,
                              const std::string& out_dir);

}  // namespace tha
