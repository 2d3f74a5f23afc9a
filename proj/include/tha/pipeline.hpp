#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "tha/content_branch.hpp"
#include "tha/embeddings.hpp"
#include "tha/geometry.hpp"
#include "tha/image_translation.hpp"
#include "tha/metrics.hpp"
#include "tha/render.hpp"
#include "tha/speaker_branch.hpp"
#include "tha/training.hpp"

namespace tha {

// FNV-1a over the file bytes, as 16 lowercase hex digits. Run manifests
// record these so a rerun can prove it consumed the same artifacts.
std::string hash_file_hex(const std::string& path);

struct PoseEditOverride {
    bool enabled = false;
    HeadPose delta;
};

// Everything one animate run needs. Paths named after the CLI flag that
// supplies them; validate() reports the flag so errors are actionable.
struct PipelineConfig {
    std::string portrait_path;            // --portrait, RGB PNG
    std::string portrait_landmarks_path;  // --portrait-landmarks, 68 points in pixels
    std::string content_path;             // --content
    std::string speaker_path;             // --speaker (optional with --no-speaker)
    std::string content_checkpoint;       // --content-ckpt
    std::string speaker_checkpoint;       // --speaker-ckpt (optional with --no-speaker)
    std::string i2i_checkpoint;           // --i2i-ckpt (translate mode only)
    std::string output_dir;               // --out
    std::string mode = "warp";            // --mode: warp | translate
    double fps = 25.0;                    // --fps, output frame rate
    std::uint64_t seed = 1;               // --seed, recorded in the manifest
    bool speaker_branch_enabled = true;   // cleared by --no-speaker
    PoseEditOverride pose_edit;           // --edit-yaw/pitch/roll/dx/dy/dz

    void validate() const;
    nlohmann::json to_json() const;
};

// Inference bundles rebuilt from training checkpoints. q is the rest-face
// template the branch was trained against.
struct ContentModel {
    ContentBranchParams params;
    LandmarkFrame q;
};
struct SpeakerModel {
    SpeakerBranchParams params;
    LandmarkFrame q;
};

ContentModel load_content_model(const std::string& path);
SpeakerModel load_speaker_model(const std::string& path);
I2iParams load_i2i_model(const std::string& path);

// Template-space landmark prediction at the canonical frame rate: content
// positions p_t, plus the speaker-aware residual when speaker is non-null
// (s must then be non-null too).
LandmarkSequence predict_sequence(ContentModel& content, SpeakerModel* speaker,
                                  const ContentEmbedding& a, const SpeakerEmbedding* s);

// 2D map from template space onto portrait pixels: least-squares affine fit
// of the template's stable subset onto the supplied portrait landmarks. A
// plain least-squares fit recovers similarities exactly, including the y
// flip between face-up template coordinates and row-down pixel coordinates.
struct PixelMap {
    Eigen::Matrix2d linear = Eigen::Matrix2d::Identity();
    Eigen::Vector2d offset = Eigen::Vector2d::Zero();

    Eigen::MatrixX2d apply(const LandmarkFrame& frame) const;  // z dropped
};
PixelMap fit_pixel_map(const LandmarkFrame& q, const Eigen::MatrixX2d& portrait_pts);

struct AnimateResult {
    int frame_count = 0;
    int folded_triangles = 0;  // warp mode only
    std::string manifest_path;
    LandmarkSequence predicted;  // final template-space sequence (edited, resampled)
};

// Full pipeline: predict -> resample to cfg.fps -> optional pose edit -> map
// onto the portrait -> render (warp) or rasterize + translate (translate).
// Writes frame_%06d.png, the predicted landmarks, and run_manifest.json into
// cfg.output_dir. Deterministic: equal config produces byte-identical files.
AnimateResult animate(const PipelineConfig& cfg);

// Model variants scored on the synthetic test split. Lip metrics compare
// pose-free registrations; pose metrics compare the raw posed sequences.
struct EvalVariant {
    std::string name;
    MetricReport report;
};

struct EvalResult {
    std::vector<int> test_clips;
    std::vector<EvalVariant> variants;  // full, no_speaker, no_content,
                                        // retrieval_same_id, retrieval_random_id

    const MetricReport& report(const std::string& name) const;
    nlohmann::json to_json() const;
    std::string format() const;  // one format_report block per variant
};

struct EvalOptions {
    std::uint64_t split_seed = 0;     // 0: reuse the content checkpoint's training seed
    std::uint64_t baseline_seed = 1;  // retrieval clip choice
};

EvalResult run_eval(const SynthCorpus& corpus, ContentModel& content, SpeakerModel& speaker,
                    const EvalOptions& opt, std::uint64_t content_train_seed);

// Procedurally painted face portrait for image-translation training: smooth
// color gradients with the landmark wireframe drawn on top.
Image paint_portrait(const Eigen::MatrixX2d& points_px, int resolution);

// Training pairs from one corpus clip, all in a resolution x resolution
// canvas: the portrait is painted at the clip's first frame, targets are the
// portrait warped to frame t, inputs stack portrait planes with frame t's
// landmark raster. Frames are drawn deterministically from seed.
std::vector<I2iPair> build_i2i_pairs(const SynthCorpus& corpus, int clip_index, int n_pairs,
                                     int resolution, std::uint64_t seed);

}  // namespace tha
