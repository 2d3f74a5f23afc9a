#pragma once

#include <Eigen/Dense>
#include <array>
#include <string>
#include <vector>

namespace tha {

inline constexpr int kNumLandmarks = 68;
inline constexpr int kFrameDims = kNumLandmarks * 3;  // 204
inline constexpr double kCanonicalFps = 62.5;

// One frame of 68 ordered 3D landmarks. Axes: x right, y down, z toward the
// camera. Units are template-normalized (face width of the standard template
// is 2.0).
struct LandmarkFrame {
    Eigen::Matrix<double, kNumLandmarks, 3> points;

    LandmarkFrame() { points.setZero(); }

    Eigen::Vector3d point(int i) const { return points.row(i).transpose(); }
    void validate() const;  // throws ValidationError on non-finite coords

    // Flattened copy in file order: x0 y0 z0 x1 y1 z1 ...
    Eigen::Matrix<double, kFrameDims, 1> flatten() const;
    static LandmarkFrame from_flat(const Eigen::Ref<const Eigen::VectorXd>& v);
};

struct LandmarkSequence {
    std::vector<LandmarkFrame> frames;
    double fps = kCanonicalFps;

    int frame_count() const { return static_cast<int>(frames.size()); }
    void validate() const;  // nonempty, fps > 0, frames finite
};

// The 8 facial parts. Chains are open polylines, loops close back on their
// first landmark. Laplacian neighborhoods never cross part boundaries.
enum class FacePart { Jaw, RightBrow, LeftBrow, Nose, RightEye, LeftEye, OuterLip, InnerLip };
inline constexpr int kNumFaceParts = 8;

struct PartTopology {
    struct Part {
        FacePart id;
        std::vector<int> indices;  // in drawing order
        bool closed = false;
    };
    std::array<Part, kNumFaceParts> parts;
    std::array<std::vector<int>, kNumLandmarks> neighbors;

    const Part& part(FacePart p) const { return parts[static_cast<int>(p)]; }
    void validate() const;  // disjoint parts, symmetric in-part neighbors
};

// Canonical 68-point split: jaw 0-16, brows 17-21 / 22-26, nose 27-35 (one
// chain), eyes 36-41 / 42-47, outer lip 48-59 and inner lip 60-67 as loops.
const PartTopology& default_topology();

// Landmarks little affected by speech, used for registration and pose fits:
// jaw endpoints, the nose chain, and the four eye corners.
const std::vector<int>& stable_subset();

// Distance between contour landmarks 0 and 16.
double face_width(const LandmarkFrame& frame);

Eigen::Vector3d stable_centroid(const LandmarkFrame& frame);

// Euler angles in degrees, rotation composed as Ry(yaw) * Rx(pitch) * Rz(roll)
// acting on column vectors. Translation is in face-width units.
struct HeadPose {
    double yaw = 0.0;
    double pitch = 0.0;
    double roll = 0.0;
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();

    void validate() const;  // angles in (-180, 180], finite translation
};

Eigen::Matrix3d rotation_from_euler(double yaw_deg, double pitch_deg, double roll_deg);
void euler_from_rotation(const Eigen::Matrix3d& r, double& yaw_deg, double& pitch_deg,
                         double& roll_deg);

struct AffineTransform {
    Eigen::Matrix3d linear = Eigen::Matrix3d::Identity();
    Eigen::Vector3d offset = Eigen::Vector3d::Zero();

    Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return linear * p + offset; }
    LandmarkFrame apply(const LandmarkFrame& f) const;
    AffineTransform inverse() const;
    double condition() const;  // singular-value condition number of linear
};

// Per-landmark graph Laplacian coordinates: p_i minus the mean of its in-part
// neighbors. Invariant under translation, equivariant under rotation.
Eigen::Matrix<double, kNumLandmarks, 3> laplacian_coords(const LandmarkFrame& frame,
                                                         const PartTopology& topo);

// 68x68 matrix K with K*P = laplacian coordinates of P (row-per-landmark
// layout). Shared with the training losses.
Eigen::MatrixXd laplacian_matrix(const PartTopology& topo);

enum class RegistrationMode { PerFrame, PerClip };

struct RegistrationResult {
    LandmarkSequence registered;
    std::vector<AffineTransform> transforms;  // frame -> template space
};

// Least-squares affine fit of the stable subset onto the template. PerClip
// fits one transform over all frames' stable points.
RegistrationResult register_to_template(const LandmarkSequence& seq, const LandmarkFrame& tmpl,
                                        RegistrationMode mode = RegistrationMode::PerFrame);

// Rigid-only fit (orthogonal Procrustes on the stable subset) reported as
// Euler angles and a centroid offset in template face widths.
HeadPose decompose_head_pose(const LandmarkFrame& frame, const LandmarkFrame& tmpl);

// Rigidly transform every frame about its stable-subset centroid. Translation
// is scaled by the face width of the first frame. Pose count must be 1 or
// equal to the frame count.
LandmarkSequence apply_head_pose(const LandmarkSequence& seq, const std::vector<HeadPose>& poses);
LandmarkSequence apply_head_pose(const LandmarkSequence& seq, const HeadPose& pose);

// Re-pose a sequence so the decomposed Euler angles / translation shift by
// exactly `delta` relative to the unedited sequence.
LandmarkSequence edit_head_pose(const LandmarkSequence& seq, const LandmarkFrame& tmpl,
                                const HeadPose& delta);

// Per-landmark linear interpolation in time. The first frame is kept and the
// duration is preserved to within one frame period; out-of-range sample times
// clamp to the endpoints.
LandmarkSequence resample(const LandmarkSequence& seq, double target_fps);

}  // namespace tha
