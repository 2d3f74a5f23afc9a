#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "tha/geometry.hpp"

namespace tha {

// Lip-region errors over pose-free sequences. Distances are normalized by the
// clip's maximum reference lip width; areas by the maximum reference inner
// mouth area.
struct LipMetrics {
    double d_ll = 0.0;  // mean jaw+lip landmark distance
    double d_vl = 0.0;  // mean jaw+lip velocity difference
    double d_a = 0.0;   // mean inner-mouth area difference
    double lip_width = 0.0;
    double max_mouth_area = 0.0;
};

// Full-face and head-pose errors over posed sequences. Distances are
// normalized by the clip's maximum reference face width; translations are
// already in face-width units.
struct PoseMetrics {
    double d_l = 0.0;
    double d_v = 0.0;
    double d_rot = 0.0;  // degrees
    double d_pos = 0.0;
    double face_width = 0.0;
};

// Jaw contour plus outer/inner lips: indices 0-16 and 48-67.
const std::vector<int>& jaw_lip_indices();

// Absolute shoelace area of the polygon through the given landmark indices,
// using x/y coordinates.
double polygon_area(const LandmarkFrame& frame, const std::vector<int>& indices);

LipMetrics lip_metrics(const LandmarkSequence& pred, const LandmarkSequence& ref,
                       const PartTopology& topo);

PoseMetrics pose_metrics(const LandmarkSequence& pred, const LandmarkSequence& ref,
                         const LandmarkFrame& tmpl);

struct ClipMetrics {
    std::string clip_id;
    LipMetrics lip;
    PoseMetrics pose;
};

struct MetricReport {
    std::vector<ClipMetrics> clips;
    ClipMetrics aggregate;  // per-clip values averaged across clips
};

MetricReport aggregate_metrics(std::vector<ClipMetrics> clips);

// One line per field, fixed order, one block per clip then the aggregate.
std::string format_report(const MetricReport& report);

}  // namespace tha
