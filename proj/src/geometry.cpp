#include "tha/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tha/errors.hpp"

namespace tha {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kDegToRad = kPi / 180.0;
constexpr double kRadToDeg = 180.0 / kPi;

}  // namespace

void LandmarkFrame::validate() const {
    if (!points.allFinite()) throw ValidationError("landmark frame contains non-finite coordinates");
}

Eigen::Matrix<double, kFrameDims, 1> LandmarkFrame::flatten() const {
    Eigen::Matrix<double, kFrameDims, 1> v;
    for (int i = 0; i < kNumLandmarks; ++i) v.segment<3>(3 * i) = points.row(i).transpose();
    return v;
}

LandmarkFrame LandmarkFrame::from_flat(const Eigen::Ref<const Eigen::VectorXd>& v) {
    if (v.size() != kFrameDims) throw ValidationError("flattened frame must have 204 values");
    LandmarkFrame f;
    for (int i = 0; i < kNumLandmarks; ++i) f.points.row(i) = v.segment<3>(3 * i).transpose();
    return f;
}

void LandmarkSequence::validate() const {
    if (frames.empty()) throw ValidationError("landmark sequence must be nonempty");
    if (!(fps > 0.0) || !std::isfinite(fps)) throw ValidationError("sequence fps must be positive");
    for (const auto& f : frames) f.validate();
}

void PartTopology::validate() const {
    std::array<int, kNumLandmarks> owner;
    owner.fill(-1);
    for (const auto& p : parts) {
        for (int i : p.indices) {
            if (i < 0 || i >= kNumLandmarks) throw TopologyError("part index out of range");
            if (owner[i] != -1) throw TopologyError("parts must be disjoint");
            owner[i] = static_cast<int>(p.id);
        }
    }
    for (int i = 0; i < kNumLandmarks; ++i) {
        for (int j : neighbors[i]) {
            if (owner[i] == -1 || owner[j] != owner[i])
                throw TopologyError("neighbors must stay within one part");
            if (std::find(neighbors[j].begin(), neighbors[j].end(), i) == neighbors[j].end())
                throw TopologyError("neighbor map must be symmetric");
        }
    }
}

namespace {

PartTopology build_default_topology() {
    PartTopology topo;
    auto make_range = [](int lo, int hi) {
        std::vector<int> v(static_cast<std::size_t>(hi - lo + 1));
        std::iota(v.begin(), v.end(), lo);
        return v;
    };
    topo.parts[0] = {FacePart::Jaw, make_range(0, 16), false};
    topo.parts[1] = {FacePart::RightBrow, make_range(17, 21), false};
    topo.parts[2] = {FacePart::LeftBrow, make_range(22, 26), false};
    topo.parts[3] = {FacePart::Nose, make_range(27, 35), false};
    topo.parts[4] = {FacePart::RightEye, make_range(36, 41), true};
    topo.parts[5] = {FacePart::LeftEye, make_range(42, 47), true};
    topo.parts[6] = {FacePart::OuterLip, make_range(48, 59), true};
    topo.parts[7] = {FacePart::InnerLip, make_range(60, 67), true};

    for (const auto& part : topo.parts) {
        const auto& idx = part.indices;
        const int n = static_cast<int>(idx.size());
        for (int k = 0; k < n; ++k) {
            if (k + 1 < n) {
                topo.neighbors[idx[k]].push_back(idx[k + 1]);
                topo.neighbors[idx[k + 1]].push_back(idx[k]);
            }
        }
        if (part.closed && n > 2) {
            topo.neighbors[idx[n - 1]].push_back(idx[0]);
            topo.neighbors[idx[0]].push_back(idx[n - 1]);
        }
    }
    topo.validate();
    return topo;
}

}  // namespace

const PartTopology& default_topology() {
    static const PartTopology topo = build_default_topology();
    return topo;
}

const std::vector<int>& stable_subset() {
    static const std::vector<int> subset = {0, 16, 27, 28, 29, 30, 31, 32, 33, 34, 35, 36, 39, 42, 45};
    return subset;
}

double face_width(const LandmarkFrame& frame) {
    return (frame.points.row(16) - frame.points.row(0)).norm();
}

Eigen::Vector3d stable_centroid(const LandmarkFrame& frame) {
    Eigen::Vector3d c = Eigen::Vector3d::Zero();
    for (int i : stable_subset()) c += frame.point(i);
    return c / static_cast<double>(stable_subset().size());
}

void HeadPose::validate() const {
    for (double a : {yaw, pitch, roll}) {
        if (!std::isfinite(a) || a <= -180.0 || a > 180.0)
            throw ValidationError("head pose angles must lie in (-180, 180] degrees");
    }
    if (!translation.allFinite()) throw ValidationError("head pose translation must be finite");
}

Eigen::Matrix3d rotation_from_euler(double yaw_deg, double pitch_deg, double roll_deg) {
    const double y = yaw_deg * kDegToRad;
    const double p = pitch_deg * kDegToRad;
    const double r = roll_deg * kDegToRad;
    Eigen::Matrix3d ry, rx, rz;
    ry << std::cos(y), 0, std::sin(y), 0, 1, 0, -std::sin(y), 0, std::cos(y);
    rx << 1, 0, 0, 0, std::cos(p), -std::sin(p), 0, std::sin(p), std::cos(p);
    rz << std::cos(r), -std::sin(r), 0, std::sin(r), std::cos(r), 0, 0, 0, 1;
    return ry * rx * rz;
}

void euler_from_rotation(const Eigen::Matrix3d& r, double& yaw_deg, double& pitch_deg,
                         double& roll_deg) {
    // R = Ry(yaw) Rx(pitch) Rz(roll); R(1,2) = -sin(pitch).
    const double sp = std::clamp(-r(1, 2), -1.0, 1.0);
    pitch_deg = std::asin(sp) * kRadToDeg;
    if (std::abs(sp) < 1.0 - 1e-9) {
        yaw_deg = std::atan2(r(0, 2), r(2, 2)) * kRadToDeg;
        roll_deg = std::atan2(r(1, 0), r(1, 1)) * kRadToDeg;
    } else {
        // Gimbal lock: split arbitrarily, keep roll = 0.
        yaw_deg = std::atan2(-r(2, 0), r(0, 0)) * kRadToDeg;
        roll_deg = 0.0;
    }
}

LandmarkFrame AffineTransform::apply(const LandmarkFrame& f) const {
    LandmarkFrame out;
    out.points = (f.points * linear.transpose()).rowwise() + offset.transpose();
    return out;
}

AffineTransform AffineTransform::inverse() const {
    AffineTransform inv;
    const double det = linear.determinant();
    if (!std::isfinite(det) || std::abs(det) < 1e-14)
        throw RegistrationError("affine transform is not invertible");
    inv.linear = linear.inverse();
    inv.offset = -inv.linear * offset;
    return inv;
}

double AffineTransform::condition() const {
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(linear);
    const double smin = svd.singularValues()(2);
    if (smin <= 0.0) return std::numeric_limits<double>::infinity();
    return svd.singularValues()(0) / smin;
}

Eigen::Matrix<double, kNumLandmarks, 3> laplacian_coords(const LandmarkFrame& frame,
                                                         const PartTopology& topo) {
    Eigen::Matrix<double, kNumLandmarks, 3> out;
    for (int i = 0; i < kNumLandmarks; ++i) {
        const auto& nbrs = topo.neighbors[i];
        if (nbrs.empty())
            throw TopologyError("landmark " + std::to_string(i) + " has no neighbors");
        Eigen::Vector3d mean = Eigen::Vector3d::Zero();
        for (int j : nbrs) mean += frame.point(j);
        mean /= static_cast<double>(nbrs.size());
        out.row(i) = (frame.point(i) - mean).transpose();
    }
    return out;
}

Eigen::MatrixXd laplacian_matrix(const PartTopology& topo) {
    Eigen::MatrixXd k = Eigen::MatrixXd::Identity(kNumLandmarks, kNumLandmarks);
    for (int i = 0; i < kNumLandmarks; ++i) {
        const auto& nbrs = topo.neighbors[i];
        if (nbrs.empty())
            throw TopologyError("landmark " + std::to_string(i) + " has no neighbors");
        const double w = 1.0 / static_cast<double>(nbrs.size());
        for (int j : nbrs) k(i, j) -= w;
    }
    return k;
}

namespace {

// Stacks the stable-subset points of the given frames into source rows X
// (n x 4, homogeneous) and target rows Y (n x 3).
void stack_stable_points(const std::vector<const LandmarkFrame*>& frames, const LandmarkFrame& tmpl,
                         Eigen::MatrixXd& x, Eigen::MatrixXd& y) {
    const auto& subset = stable_subset();
    const int per = static_cast<int>(subset.size());
    const int n = per * static_cast<int>(frames.size());
    x.resize(n, 4);
    y.resize(n, 3);
    int row = 0;
    for (const LandmarkFrame* f : frames) {
        for (int i : subset) {
            x.block<1, 3>(row, 0) = f->points.row(i);
            x(row, 3) = 1.0;
            y.row(row) = tmpl.points.row(i);
            ++row;
        }
    }
}

AffineTransform solve_affine(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
    qr.setThreshold(1e-9);
    if (qr.rank() < 4)
        throw RegistrationError("stable landmarks are degenerate (coplanar or collinear)");
    const Eigen::MatrixXd sol = qr.solve(y);  // 4x3: [A^T; b^T]
    AffineTransform t;
    t.linear = sol.topRows<3>().transpose();
    t.offset = sol.row(3).transpose();
    return t;
}

}  // namespace

RegistrationResult register_to_template(const LandmarkSequence& seq, const LandmarkFrame& tmpl,
                                        RegistrationMode mode) {
    seq.validate();
    tmpl.validate();
    RegistrationResult result;
    result.registered.fps = seq.fps;
    result.registered.frames.reserve(seq.frames.size());
    result.transforms.reserve(seq.frames.size());

    if (mode == RegistrationMode::PerClip) {
        std::vector<const LandmarkFrame*> ptrs;
        for (const auto& f : seq.frames) ptrs.push_back(&f);
        Eigen::MatrixXd x, y;
        stack_stable_points(ptrs, tmpl, x, y);
        const AffineTransform t = solve_affine(x, y);
        for (const auto& f : seq.frames) {
            result.registered.frames.push_back(t.apply(f));
            result.transforms.push_back(t);
        }
        return result;
    }

    for (const auto& f : seq.frames) {
        Eigen::MatrixXd x, y;
        stack_stable_points({&f}, tmpl, x, y);
        const AffineTransform t = solve_affine(x, y);
        result.registered.frames.push_back(t.apply(f));
        result.transforms.push_back(t);
    }
    return result;
}

HeadPose decompose_head_pose(const LandmarkFrame& frame, const LandmarkFrame& tmpl) {
    frame.validate();
    tmpl.validate();
    const auto& subset = stable_subset();
    const Eigen::Vector3d cf = stable_centroid(frame);
    const Eigen::Vector3d ct = stable_centroid(tmpl);

    Eigen::Matrix3d h = Eigen::Matrix3d::Zero();
    for (int i : subset) h += (frame.point(i) - cf) * (tmpl.point(i) - ct).transpose();
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
    if (svd.singularValues()(1) < 1e-12)
        throw PoseError("stable landmarks are degenerate for a rigid fit");
    Eigen::Matrix3d r = svd.matrixU() * svd.matrixV().transpose();
    if (r.determinant() < 0.0) {
        Eigen::Matrix3d u = svd.matrixU();
        u.col(2) *= -1.0;
        r = u * svd.matrixV().transpose();
    }

    const double w = face_width(tmpl);
    if (w < 1e-12) throw PoseError("template face width is degenerate");

    HeadPose pose;
    euler_from_rotation(r, pose.yaw, pose.pitch, pose.roll);
    pose.translation = (cf - ct) / w;
    return pose;
}

LandmarkSequence apply_head_pose(const LandmarkSequence& seq, const std::vector<HeadPose>& poses) {
    seq.validate();
    if (poses.size() != 1 && poses.size() != seq.frames.size())
        throw ValidationError("pose count must be 1 or equal to the frame count");
    for (const auto& p : poses) p.validate();

    const double w = face_width(seq.frames.front());
    LandmarkSequence out;
    out.fps = seq.fps;
    out.frames.reserve(seq.frames.size());
    for (std::size_t t = 0; t < seq.frames.size(); ++t) {
        const HeadPose& pose = poses.size() == 1 ? poses[0] : poses[t];
        const Eigen::Matrix3d r = rotation_from_euler(pose.yaw, pose.pitch, pose.roll);
        const Eigen::Vector3d c = stable_centroid(seq.frames[t]);
        LandmarkFrame f;
        f.points = ((seq.frames[t].points.rowwise() - c.transpose()) * r.transpose()).rowwise() +
                   (c + pose.translation * w).transpose();
        out.frames.push_back(f);
    }
    return out;
}

LandmarkSequence apply_head_pose(const LandmarkSequence& seq, const HeadPose& pose) {
    return apply_head_pose(seq, std::vector<HeadPose>{pose});
}

LandmarkSequence edit_head_pose(const LandmarkSequence& seq, const LandmarkFrame& tmpl,
                                const HeadPose& delta) {
    seq.validate();
    delta.validate();
    const double w = face_width(tmpl);
    LandmarkSequence out;
    out.fps = seq.fps;
    out.frames.reserve(seq.frames.size());
    for (const auto& frame : seq.frames) {
        const HeadPose cur = decompose_head_pose(frame, tmpl);
        const Eigen::Matrix3d r_old = rotation_from_euler(cur.yaw, cur.pitch, cur.roll);
        const Eigen::Matrix3d r_new =
            rotation_from_euler(cur.yaw + delta.yaw, cur.pitch + delta.pitch, cur.roll + delta.roll);
        const Eigen::Matrix3d rel = r_new * r_old.transpose();
        const Eigen::Vector3d c = stable_centroid(frame);
        LandmarkFrame f;
        f.points = ((frame.points.rowwise() - c.transpose()) * rel.transpose()).rowwise() +
                   (c + delta.translation * w).transpose();
        out.frames.push_back(f);
    }
    return out;
}

LandmarkSequence resample(const LandmarkSequence& seq, double target_fps) {
    seq.validate();
    if (!(target_fps > 0.0) || !std::isfinite(target_fps))
        throw ValidationError("target fps must be positive");

    const int n = seq.frame_count();
    const double duration = static_cast<double>(n - 1) / seq.fps;
    const int m = static_cast<int>(std::floor(duration * target_fps + 1e-9)) + 1;

    LandmarkSequence out;
    out.fps = target_fps;
    out.frames.reserve(static_cast<std::size_t>(m));
    for (int j = 0; j < m; ++j) {
        const double u = static_cast<double>(j) * seq.fps / target_fps;
        const int i0 = std::clamp(static_cast<int>(std::floor(u)), 0, n - 1);
        const int i1 = std::min(i0 + 1, n - 1);
        const double a = std::clamp(u - static_cast<double>(i0), 0.0, 1.0);
        LandmarkFrame f;
        f.points = (1.0 - a) * seq.frames[i0].points + a * seq.frames[i1].points;
        out.frames.push_back(f);
    }
    return out;
}

}  // namespace tha
