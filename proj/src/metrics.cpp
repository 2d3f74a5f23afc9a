#include "tha/metrics.hpp"

#include <cmath>
#include <sstream>

#include "tha/errors.hpp"

namespace tha {

namespace {

void check_lengths(const LandmarkSequence& pred, const LandmarkSequence& ref) {
    if (pred.frames.size() != ref.frames.size()) {
        throw ValidationError("metric needs equal frame counts, got " +
                              std::to_string(pred.frames.size()) + " vs " +
                              std::to_string(ref.frames.size()));
    }
    if (pred.frames.empty()) {
        throw ValidationError("metric needs at least one frame");
    }
}

std::vector<int> jaw_lip_from(const PartTopology& topo) {
    std::vector<int> idx = topo.part(FacePart::Jaw).indices;
    for (int i : topo.part(FacePart::OuterLip).indices) idx.push_back(i);
    for (int i : topo.part(FacePart::InnerLip).indices) idx.push_back(i);
    return idx;
}

double mean_distance(const LandmarkSequence& pred, const LandmarkSequence& ref,
                     const std::vector<int>& indices) {
    double total = 0.0;
    for (std::size_t t = 0; t < pred.frames.size(); ++t) {
        for (int i : indices) {
            total += (pred.frames[t].points.row(i) - ref.frames[t].points.row(i)).norm();
        }
    }
    return total / (static_cast<double>(pred.frames.size()) * indices.size());
}

double mean_velocity_distance(const LandmarkSequence& pred, const LandmarkSequence& ref,
                              const std::vector<int>& indices) {
    const std::size_t n = pred.frames.size();
    if (n < 2) return 0.0;
    double total = 0.0;
    for (std::size_t t = 0; t + 1 < n; ++t) {
        for (int i : indices) {
            const Eigen::RowVector3d vp =
                pred.frames[t + 1].points.row(i) - pred.frames[t].points.row(i);
            const Eigen::RowVector3d vr =
                ref.frames[t + 1].points.row(i) - ref.frames[t].points.row(i);
            total += (vp - vr).norm();
        }
    }
    return total / (static_cast<double>(n - 1) * indices.size());
}

}  // namespace

const std::vector<int>& jaw_lip_indices() {
    static const std::vector<int> idx = [] {
        std::vector<int> v;
        for (int i = 0; i <= 16; ++i) v.push_back(i);
        for (int i = 48; i <= 67; ++i) v.push_back(i);
        return v;
    }();
    return idx;
}

double polygon_area(const LandmarkFrame& frame, const std::vector<int>& indices) {
    if (indices.size() < 3) {
        throw ValidationError("polygon area needs at least 3 vertices, got " +
                              std::to_string(indices.size()));
    }
    double twice = 0.0;
    for (std::size_t k = 0; k < indices.size(); ++k) {
        const Eigen::RowVector3d a = frame.points.row(indices[k]);
        const Eigen::RowVector3d b = frame.points.row(indices[(k + 1) % indices.size()]);
        twice += a.x() * b.y() - b.x() * a.y();
    }
    return std::abs(twice) / 2.0;
}

LipMetrics lip_metrics(const LandmarkSequence& pred, const LandmarkSequence& ref,
                       const PartTopology& topo) {
    check_lengths(pred, ref);
    const std::vector<int> jl = jaw_lip_from(topo);
    const std::vector<int> inner = topo.part(FacePart::InnerLip).indices;

    LipMetrics m;
    for (const LandmarkFrame& f : ref.frames) {
        m.lip_width = std::max(m.lip_width, (f.points.row(48) - f.points.row(54)).norm());
        m.max_mouth_area = std::max(m.max_mouth_area, polygon_area(f, inner));
    }
    if (m.lip_width <= 0.0) {
        throw MetricError("reference lip width is zero; lip metrics are undefined");
    }
    if (m.max_mouth_area <= 0.0) {
        throw MetricError("reference mouth area is zero; the area metric is undefined");
    }

    m.d_ll = mean_distance(pred, ref, jl) / m.lip_width;
    m.d_vl = mean_velocity_distance(pred, ref, jl) / m.lip_width;

    double area_total = 0.0;
    for (std::size_t t = 0; t < pred.frames.size(); ++t) {
        area_total += std::abs(polygon_area(pred.frames[t], inner) -
                               polygon_area(ref.frames[t], inner));
    }
    m.d_a = area_total / static_cast<double>(pred.frames.size()) / m.max_mouth_area;
    return m;
}

PoseMetrics pose_metrics(const LandmarkSequence& pred, const LandmarkSequence& ref,
                         const LandmarkFrame& tmpl) {
    check_lengths(pred, ref);
    std::vector<int> all(kNumLandmarks);
    for (int i = 0; i < kNumLandmarks; ++i) all[static_cast<std::size_t>(i)] = i;

    PoseMetrics m;
    for (const LandmarkFrame& f : ref.frames) {
        m.face_width = std::max(m.face_width, face_width(f));
    }
    if (m.face_width <= 0.0) {
        throw MetricError("reference face width is zero; pose metrics are undefined");
    }

    m.d_l = mean_distance(pred, ref, all) / m.face_width;
    m.d_v = mean_velocity_distance(pred, ref, all) / m.face_width;

    double rot_total = 0.0;
    double pos_total = 0.0;
    for (std::size_t t = 0; t < pred.frames.size(); ++t) {
        const HeadPose pp = decompose_head_pose(pred.frames[t], tmpl);
        const HeadPose pr = decompose_head_pose(ref.frames[t], tmpl);
        const Eigen::Vector3d de(pp.yaw - pr.yaw, pp.pitch - pr.pitch, pp.roll - pr.roll);
        rot_total += de.norm();
        pos_total += (pp.translation - pr.translation).norm();
    }
    m.d_rot = rot_total / static_cast<double>(pred.frames.size());
    m.d_pos = pos_total / static_cast<double>(pred.frames.size());
    return m;
}

MetricReport aggregate_metrics(std::vector<ClipMetrics> clips) {
    if (clips.empty()) {
        throw ValidationError("cannot aggregate an empty metric list");
    }
    MetricReport report;
    report.aggregate.clip_id = "aggregate";
    const double n = static_cast<double>(clips.size());
    for (const ClipMetrics& c : clips) {
        report.aggregate.lip.d_ll += c.lip.d_ll / n;
        report.aggregate.lip.d_vl += c.lip.d_vl / n;
        report.aggregate.lip.d_a += c.lip.d_a / n;
        report.aggregate.lip.lip_width += c.lip.lip_width / n;
        report.aggregate.lip.max_mouth_area += c.lip.max_mouth_area / n;
        report.aggregate.pose.d_l += c.pose.d_l / n;
        report.aggregate.pose.d_v += c.pose.d_v / n;
        report.aggregate.pose.d_rot += c.pose.d_rot / n;
        report.aggregate.pose.d_pos += c.pose.d_pos / n;
        report.aggregate.pose.face_width += c.pose.face_width / n;
    }
    report.clips = std::move(clips);
    return report;
}

std::string format_report(const MetricReport& report) {
    std::ostringstream out;
    out.precision(6);
    out << std::fixed;
    auto block = [&out](const ClipMetrics& c) {
        out << "clip " << c.clip_id << "\n";
        out << "  d_ll  " << c.lip.d_ll << "\n";
        out << "  d_vl  " << c.lip.d_vl << "\n";
        out << "  d_a   " << c.lip.d_a << "\n";
        out << "  d_l   " << c.pose.d_l << "\n";
        out << "  d_v   " << c.pose.d_v << "\n";
        out << "  d_rot " << c.pose.d_rot << "\n";
        out << "  d_pos " << c.pose.d_pos << "\n";
        out << "  norm_lip_width  " << c.lip.lip_width << "\n";
        out << "  norm_mouth_area " << c.lip.max_mouth_area << "\n";
        out << "  norm_face_width " << c.pose.face_width << "\n";
    };
    for (const ClipMetrics& c : report.clips) block(c);
    block(report.aggregate);
    return out.str();
}

}  // namespace tha
