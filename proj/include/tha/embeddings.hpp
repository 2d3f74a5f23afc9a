#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "tha/geometry.hpp"
#include "tha/rng.hpp"

namespace tha {

// Per-frame speech-content representation at the canonical 62.5 frames/s.
// Rows are frames.
struct ContentEmbedding {
    Eigen::MatrixXd values;  // T x D
    double frame_rate = kCanonicalFps;

    int frames() const { return static_cast<int>(values.rows()); }
    int dim() const { return static_cast<int>(values.cols()); }
    void validate() const;  // T >= 1, finite
};

// Fixed-length speaker identity vector. `raw` is the 256-dim verification
// embedding (unit norm within 1e-3); `projected` is filled by
// project_speaker and is empty until then.
struct SpeakerEmbedding {
    Eigen::VectorXd raw;        // 256
    Eigen::VectorXd projected;  // 128 once projected, else size 0

    void validate() const;
};

inline constexpr int kSpeakerRawDim = 256;
inline constexpr int kSpeakerProjectedDim = 128;

ContentEmbedding load_content_embedding(const std::string& path);
void save_content_embedding(const std::string& path, const ContentEmbedding& e);
SpeakerEmbedding load_speaker_embedding(const std::string& path);
void save_speaker_embedding(const std::string& path, const SpeakerEmbedding& e);

// projected = w * raw + b with w 128x256.
Eigen::VectorXd project_speaker(const SpeakerEmbedding& s, const Eigen::MatrixXd& w,
                                const Eigen::VectorXd& b);

// Head-motion and expression style of one synthetic speaker. Amplitudes are
// degrees (rotations) or face widths (translation).
struct SpeakerStyle {
    double yaw_amp = 0.0;
    double pitch_amp = 0.0;
    double roll_amp = 0.0;
    double tx_amp = 0.0;
    double ty_amp = 0.0;
    double sway_freq_hz = 1.0;
    double expression_gain = 0.0;
};

struct SynthSpec {
    int n_speakers = 2;
    int clips_per_speaker = 3;
    double duration_s = 5.0;
    int content_dim = 16;
    // Clips shorter than one speaker-branch window are rejected.
    int tau_prime = 256;
    // Global gains; zeroing all three yields constant-template clips.
    double mouth_gain = 1.0;
    double sway_scale = 1.0;
    double expression_scale = 1.0;

    void validate() const;
};

struct SynthClip {
    std::string clip_id;
    int speaker_index = 0;
    ContentEmbedding content;
    SpeakerEmbedding speaker;
    LandmarkSequence landmarks;  // posed (head motion applied)
};

struct SynthCorpus {
    LandmarkFrame template_face;
    std::vector<SynthClip> clips;
    std::vector<SpeakerStyle> styles;  // per speaker
};

// The fixed front-facing rest face all synthetic clips deform. Face width is
// exactly 2 (landmark 0 at x=-1, landmark 16 at x=+1); the stable subset is
// not coplanar so affine registration is well posed.
LandmarkFrame standard_template();

// Deterministic synthetic corpus. Clip k shares one content signal across
// all speakers (lip motion is speaker-independent); head pose and expression
// are driven from that signal through speaker-specific filters, so speakers
// with the same content differ only in pose/expression. Styles alternate
// between a large slow sway and a small fast sway so speaker separation is
// measurable.
SynthCorpus synthesize_corpus(const SynthSpec& spec, std::uint64_t seed);

// Corpus directory layout: manifest.json naming per-clip embedding and
// landmark files plus the shared template.
void save_corpus(const SynthCorpus& corpus, const std::string& dir);
SynthCorpus load_corpus(const std::string& dir);

// FNV-1a over every numeric payload; recorded in checkpoints so a resumed
// run can detect a swapped corpus.
std::uint64_t fingerprint_corpus(const SynthCorpus& corpus);

}  // namespace tha
