#include "tha/embeddings.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "tha/array_io.hpp"
#include "tha/errors.hpp"
#include "tha/landmark_io.hpp"

namespace tha {

namespace {

constexpr double kTau = 6.283185307179586;

double frand_check(double v, const char* what) {
    if (!std::isfinite(v)) throw ValidationError(std::string(what) + " is not finite");
    return v;
}

}  // namespace

void ContentEmbedding::validate() const {
    if (values.rows() < 1) throw ValidationError("content embedding has no frames");
    if (values.cols() < 1) throw ValidationError("content embedding has zero dimension");
    if (!values.allFinite()) throw ValidationError("content embedding contains non-finite values");
    frand_check(frame_rate, "content embedding frame rate");
}

void SpeakerEmbedding::validate() const {
    if (raw.size() != kSpeakerRawDim) {
        throw ValidationError("speaker embedding has length " + std::to_string(raw.size()) +
                              ", expected " + std::to_string(kSpeakerRawDim));
    }
    if (!raw.allFinite()) throw ValidationError("speaker embedding contains non-finite values");
    if (std::abs(raw.norm() - 1.0) > 1e-3) {
        throw ValidationError("speaker embedding norm " + std::to_string(raw.norm()) +
                              " is not unit within 1e-3");
    }
    if (projected.size() != 0 && !projected.allFinite()) {
        throw ValidationError("projected speaker embedding contains non-finite values");
    }
}

ContentEmbedding load_content_embedding(const std::string& path) {
    Array a = load_array(path);
    if (a.dims.size() != 2) {
        throw ParseError("content embedding " + path + ": rank " +
                         std::to_string(a.dims.size()) + ", expected 2 (frames x dim)");
    }
    ContentEmbedding e;
    e.values.resize(a.dims[0], a.dims[1]);
    for (std::int64_t r = 0; r < a.dims[0]; ++r) {
        for (std::int64_t c = 0; c < a.dims[1]; ++c) {
            e.values(r, c) = a.data[static_cast<std::size_t>(r * a.dims[1] + c)];
        }
    }
    e.validate();
    return e;
}

void save_content_embedding(const std::string& path, const ContentEmbedding& e) {
    e.validate();
    Array a;
    a.dtype = Dtype::f32;
    a.dims = {e.values.rows(), e.values.cols()};
    a.data.reserve(static_cast<std::size_t>(e.values.size()));
    for (Eigen::Index r = 0; r < e.values.rows(); ++r) {
        for (Eigen::Index c = 0; c < e.values.cols(); ++c) a.data.push_back(e.values(r, c));
    }
    save_array(path, a);
}

SpeakerEmbedding load_speaker_embedding(const std::string& path) {
    Array a = load_array(path);
    std::int64_t n = a.count();
    if (a.dims.size() != 1 || n != kSpeakerRawDim) {
        throw ParseError("speaker embedding " + path + ": " + std::to_string(n) +
                         " values, expected rank-1 with " + std::to_string(kSpeakerRawDim));
    }
    SpeakerEmbedding s;
    s.raw = Eigen::Map<const Eigen::VectorXd>(a.data.data(), kSpeakerRawDim);
    s.validate();
    return s;
}

void save_speaker_embedding(const std::string& path, const SpeakerEmbedding& e) {
    e.validate();
    Array a;
    a.dtype = Dtype::f32;
    a.dims = {kSpeakerRawDim};
    a.data.assign(e.raw.data(), e.raw.data() + e.raw.size());
    save_array(path, a);
}

Eigen::VectorXd project_speaker(const SpeakerEmbedding& s, const Eigen::MatrixXd& w,
                                const Eigen::VectorXd& b) {
    s.validate();
    if (w.rows() != kSpeakerProjectedDim || w.cols() != kSpeakerRawDim ||
        b.size() != kSpeakerProjectedDim) {
        throw ValidationError("speaker projection weights must be 128x256 with a 128 bias");
    }
    return w * s.raw + b;
}

void SynthSpec::validate() const {
    if (n_speakers < 1) throw ValidationError("synth spec: n_speakers must be >= 1");
    if (clips_per_speaker < 1) throw ValidationError("synth spec: clips_per_speaker must be >= 1");
    if (content_dim < 2) throw ValidationError("synth spec: content_dim must be >= 2");
    if (tau_prime < 1) throw ValidationError("synth spec: tau_prime must be >= 1");
    const double frames = duration_s * kCanonicalFps;
    if (frames < tau_prime) {
        throw ValidationError("synth spec: duration " + std::to_string(duration_s) +
                              "s gives " + std::to_string(static_cast<int>(frames)) +
                              " frames, shorter than one speaker window of " +
                              std::to_string(tau_prime));
    }
}

LandmarkFrame standard_template() {
    LandmarkFrame f;
    auto set = [&](int i, double x, double y, double z) { f.points.row(i) << x, y, z; };

    // Jaw arc, ears at y=0, chin lowest. Width exactly 2.
    for (int i = 0; i <= 16; ++i) {
        const double t = i / 16.0;
        set(i, -std::cos(M_PI * t), 0.88 * std::sin(M_PI * t), -0.18 * std::sin(M_PI * t));
    }
    // Brows.
    for (int k = 0; k < 5; ++k) {
        const double arc = 0.07 * std::sin(M_PI * k / 4.0);
        set(17 + k, -0.78 + 0.14 * k, -0.52 - arc, 0.08);
        set(22 + k, 0.22 + 0.14 * k, -0.52 - arc, 0.08);
    }
    // Nose bridge and base; the tip protrudes so the stable subset spans 3D.
    for (int k = 0; k < 4; ++k) set(27 + k, 0.0, -0.42 + 0.15 * k, 0.14 + 0.08 * k);
    for (int k = 0; k < 5; ++k) {
        const double bump = 1.0 - std::abs(k - 2) / 2.0;
        set(31 + k, -0.16 + 0.08 * k, 0.14 + 0.02 * bump, 0.16 + 0.05 * bump);
    }
    // Eyes as hexagons; 36/39 and 42/45 are the corners at eye-center height.
    const double ex[6] = {-0.15, -0.07, 0.07, 0.15, 0.07, -0.07};
    const double ey[6] = {0.0, -0.05, -0.05, 0.0, 0.05, 0.05};
    for (int k = 0; k < 6; ++k) {
        set(36 + k, -0.45 + ex[k], -0.32 + ey[k], 0.05);
        set(42 + k, 0.45 + ex[k], -0.32 + ey[k], 0.05);
    }
    // Lips: outer ellipse of 12 points, inner of 8, corners at the x extremes.
    for (int k = 0; k < 12; ++k) {
        const double th = M_PI - kTau * k / 12.0;
        const double ry = std::sin(th) >= 0.0 ? 0.10 : 0.16;
        set(48 + k, 0.42 * std::cos(th), 0.52 - ry * std::sin(th), 0.14);
    }
    for (int k = 0; k < 8; ++k) {
        const double th = M_PI - kTau * k / 8.0;
        const double ry = std::sin(th) >= 0.0 ? 0.045 : 0.075;
        set(60 + k, 0.30 * std::cos(th), 0.52 - ry * std::sin(th), 0.13);
    }
    return f;
}

namespace {

// Mouth-opening basis: jaw drop plus lip separation. Never touches the
// stable subset, so registration inverts head pose exactly.
Eigen::Matrix<double, kNumLandmarks, 3> open_basis() {
    Eigen::Matrix<double, kNumLandmarks, 3> b;
    b.setZero();
    for (int i = 4; i <= 12; ++i) b(i, 1) = 0.22 * (1.0 - std::abs(i - 8) / 5.0);
    for (int i = 49; i <= 53; ++i) b(i, 1) = -0.04;
    for (int i = 55; i <= 59; ++i) b(i, 1) = 0.20;
    b(48, 1) = 0.05;
    b(54, 1) = 0.05;
    for (int i = 61; i <= 63; ++i) b(i, 1) = -0.03;
    for (int i = 65; i <= 67; ++i) b(i, 1) = 0.17;
    b(60, 1) = 0.05;
    b(64, 1) = 0.05;
    return b;
}

Eigen::Matrix<double, kNumLandmarks, 3> width_basis() {
    Eigen::Matrix<double, kNumLandmarks, 3> b;
    b.setZero();
    b(48, 0) = -0.08;
    b(54, 0) = 0.08;
    b(60, 0) = -0.06;
    b(64, 0) = 0.06;
    return b;
}

// Brow raise and eyelid motion; avoids the eye corners (stable subset).
Eigen::Matrix<double, kNumLandmarks, 3> expression_basis() {
    Eigen::Matrix<double, kNumLandmarks, 3> b;
    b.setZero();
    for (int i = 17; i <= 26; ++i) b(i, 1) = -0.06;
    for (int i : {37, 38, 43, 44}) b(i, 1) = 0.025;
    for (int i : {40, 41, 46, 47}) b(i, 1) = -0.015;
    return b;
}

std::vector<double> hann_window(int length) {
    std::vector<double> w(static_cast<std::size_t>(length));
    for (int j = 0; j < length; ++j) {
        w[static_cast<std::size_t>(j)] = 0.5 * (1.0 - std::cos(kTau * j / (length - 1)));
    }
    return w;
}

// Hann-windowed cosine filter tap set, normalized to unit L1 so the filtered
// signal keeps the input's amplitude scale.
std::vector<double> sway_kernel(int length, double freq_hz, double phase) {
    std::vector<double> k = hann_window(length);
    double l1 = 0.0;
    for (int j = 0; j < length; ++j) {
        k[static_cast<std::size_t>(j)] *= std::cos(kTau * freq_hz * j / kCanonicalFps + phase);
        l1 += std::abs(k[static_cast<std::size_t>(j)]);
    }
    if (l1 > 0.0) {
        for (double& v : k) v /= l1;
    }
    return k;
}

std::vector<double> smooth_kernel(int length) {
    std::vector<double> k = hann_window(length);
    double sum = 0.0;
    for (double v : k) sum += v;
    for (double& v : k) v /= sum;
    return k;
}

// Anticipatory filtering: out[t] = sum_j k[j] * sig[t+j], clamped at the end.
std::vector<double> filter_forward(const std::vector<double>& sig,
                                   const std::vector<double>& k) {
    const int t_count = static_cast<int>(sig.size());
    std::vector<double> out(sig.size(), 0.0);
    for (int t = 0; t < t_count; ++t) {
        double acc = 0.0;
        for (int j = 0; j < static_cast<int>(k.size()); ++j) {
            acc += k[static_cast<std::size_t>(j)] *
                   sig[static_cast<std::size_t>(std::min(t + j, t_count - 1))];
        }
        out[static_cast<std::size_t>(t)] = acc;
    }
    return out;
}

double snap_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

constexpr int kSwayKernelLen = 24;
constexpr int kExprKernelLen = 16;

}  // namespace

SynthCorpus synthesize_corpus(const SynthSpec& spec, std::uint64_t seed) {
    spec.validate();
    Rng base(seed);

    SynthCorpus corpus;
    corpus.template_face = standard_template();

    // Corpus-level channel mixing: content channels are fixed linear blends
    // of the openness and width signals, shared by every clip so the
    // content-to-lip map is one function.
    Rng mix_rng = base.fork(7);
    Eigen::MatrixXd g(spec.content_dim, 2);
    for (int c = 0; c < 2; ++c) {
        for (int d = 0; d < spec.content_dim; ++d) g(d, c) = mix_rng.gauss();
        g.col(c).normalize();
    }
    g.col(1) *= 0.8;

    struct SpeakerDerived {
        SpeakerStyle style;
        SpeakerEmbedding embedding;
        double phase[5];
        double expr_phase = 0.0;
    };
    std::vector<SpeakerDerived> speakers;
    for (int s = 0; s < spec.n_speakers; ++s) {
        Rng srng = base.fork(0x5000 + static_cast<std::uint64_t>(s));
        SpeakerDerived d;
        const bool big = s % 2 == 0;
        d.style.yaw_amp = big ? 11.0 : 1.6;
        d.style.pitch_amp = big ? 3.5 : 0.6;
        d.style.roll_amp = big ? 2.0 : 0.5;
        d.style.tx_amp = big ? 0.05 : 0.008;
        d.style.ty_amp = big ? 0.03 : 0.005;
        d.style.sway_freq_hz = big ? 0.55 : 1.7;
        d.style.expression_gain = big ? 0.8 : 1.4;
        d.style.yaw_amp *= srng.uniform(0.92, 1.08);
        d.style.pitch_amp *= srng.uniform(0.92, 1.08);
        d.style.roll_amp *= srng.uniform(0.92, 1.08);
        d.style.sway_freq_hz *= srng.uniform(0.95, 1.05);
        for (double& p : d.phase) p = srng.uniform(0.0, kTau);
        d.expr_phase = srng.uniform(0.0, kTau);
        d.embedding.raw.resize(kSpeakerRawDim);
        for (int i = 0; i < kSpeakerRawDim; ++i) d.embedding.raw(i) = srng.gauss();
        d.embedding.raw.normalize();
        for (int i = 0; i < kSpeakerRawDim; ++i) {
            d.embedding.raw(i) = snap_f32(d.embedding.raw(i));
        }
        d.embedding.raw /= d.embedding.raw.norm();
        for (int i = 0; i < kSpeakerRawDim; ++i) {
            d.embedding.raw(i) = snap_f32(d.embedding.raw(i));
        }
        corpus.styles.push_back(d.style);
        speakers.push_back(std::move(d));
    }

    const int t_count = static_cast<int>(std::llround(spec.duration_s * kCanonicalFps));
    const auto b_open = open_basis();
    const auto b_width = width_basis();
    const auto b_expr = expression_basis();

    for (int k = 0; k < spec.clips_per_speaker; ++k) {
        // Content is a function of the clip index only, never the speaker.
        Rng crng = base.fork(0x100000 + static_cast<std::uint64_t>(k));
        const double f1 = crng.uniform(0.7, 1.6);
        const double f2 = crng.uniform(2.2, 4.0);
        const double fw = crng.uniform(0.5, 1.2);
        const double p1 = crng.uniform(0.0, kTau);
        const double p2 = crng.uniform(0.0, kTau);
        const double pw = crng.uniform(0.0, kTau);

        std::vector<double> open(static_cast<std::size_t>(t_count));
        std::vector<double> width(static_cast<std::size_t>(t_count));
        for (int t = 0; t < t_count; ++t) {
            const double ts = t / kCanonicalFps;
            double o = 0.5 + 0.32 * std::sin(kTau * f1 * ts + p1) +
                       0.20 * std::sin(kTau * f2 * ts + p2);
            open[static_cast<std::size_t>(t)] = std::clamp(o, 0.02, 0.98);
            width[static_cast<std::size_t>(t)] = 0.5 + 0.3 * std::sin(kTau * fw * ts + pw);
        }

        ContentEmbedding content;
        content.values.resize(t_count, spec.content_dim);
        for (int t = 0; t < t_count; ++t) {
            for (int d = 0; d < spec.content_dim; ++d) {
                content.values(t, d) =
                    snap_f32(g(d, 0) * (open[static_cast<std::size_t>(t)] - 0.5) +
                             g(d, 1) * (width[static_cast<std::size_t>(t)] - 0.5));
            }
        }

        std::vector<double> centered(static_cast<std::size_t>(t_count));
        for (int t = 0; t < t_count; ++t) {
            centered[static_cast<std::size_t>(t)] = open[static_cast<std::size_t>(t)] - 0.5;
        }

        for (int s = 0; s < spec.n_speakers; ++s) {
            const SpeakerDerived& spk = speakers[static_cast<std::size_t>(s)];

            const auto expr = filter_forward(centered, smooth_kernel(kExprKernelLen));
            std::vector<std::vector<double>> sway(5);
            for (int ch = 0; ch < 5; ++ch) {
                sway[static_cast<std::size_t>(ch)] = filter_forward(
                    centered,
                    sway_kernel(kSwayKernelLen, spk.style.sway_freq_hz, spk.phase[ch]));
            }

            LandmarkSequence registered;
            registered.fps = kCanonicalFps;
            std::vector<HeadPose> poses;
            for (int t = 0; t < t_count; ++t) {
                const std::size_t ti = static_cast<std::size_t>(t);
                LandmarkFrame frame = corpus.template_face;
                frame.points += spec.mouth_gain * (open[ti] * b_open +
                                                   (width[ti] - 0.5) * b_width);
                frame.points += spec.expression_scale * spk.style.expression_gain * expr[ti] *
                                b_expr;
                registered.frames.push_back(frame);

                HeadPose pose;
                pose.yaw = spec.sway_scale * spk.style.yaw_amp * sway[0][ti];
                pose.pitch = spec.sway_scale * spk.style.pitch_amp * sway[1][ti];
                pose.roll = spec.sway_scale * spk.style.roll_amp * sway[2][ti];
                pose.translation << spec.sway_scale * spk.style.tx_amp * sway[3][ti],
                    spec.sway_scale * spk.style.ty_amp * sway[4][ti], 0.0;
                poses.push_back(pose);
            }

            SynthClip clip;
            clip.clip_id = "clip" + std::to_string(k) + "_spk" + std::to_string(s);
            clip.speaker_index = s;
            clip.content = content;
            clip.speaker = spk.embedding;
            clip.landmarks = apply_head_pose(registered, poses);
            corpus.clips.push_back(std::move(clip));
        }
    }
    return corpus;
}

void save_corpus(const SynthCorpus& corpus, const std::string& dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create corpus directory " + dir + ": " + ec.message());

    nlohmann::json manifest;
    manifest["fps"] = kCanonicalFps;
    manifest["template"] = "template.lmk";
    save_template((fs::path(dir) / "template.lmk").string(), corpus.template_face);

    manifest["styles"] = nlohmann::json::array();
    for (const auto& s : corpus.styles) {
        manifest["styles"].push_back({{"yaw_amp", s.yaw_amp},
                                      {"pitch_amp", s.pitch_amp},
                                      {"roll_amp", s.roll_amp},
                                      {"tx_amp", s.tx_amp},
                                      {"ty_amp", s.ty_amp},
                                      {"sway_freq_hz", s.sway_freq_hz},
                                      {"expression_gain", s.expression_gain}});
    }

    manifest["clips"] = nlohmann::json::array();
    std::vector<bool> speaker_saved(corpus.styles.size(), false);
    for (const auto& clip : corpus.clips) {
        const std::string content_file = clip.clip_id + ".content.arr";
        const std::string speaker_file = "spk" + std::to_string(clip.speaker_index) + ".arr";
        const std::string lmk_file = clip.clip_id + ".lmk";
        save_content_embedding((fs::path(dir) / content_file).string(), clip.content);
        const std::size_t si = static_cast<std::size_t>(clip.speaker_index);
        if (si >= speaker_saved.size() || !speaker_saved[si]) {
            save_speaker_embedding((fs::path(dir) / speaker_file).string(), clip.speaker);
            if (si < speaker_saved.size()) speaker_saved[si] = true;
        }
        save_landmarks((fs::path(dir) / lmk_file).string(), clip.landmarks);
        manifest["clips"].push_back({{"clip_id", clip.clip_id},
                                     {"speaker_index", clip.speaker_index},
                                     {"content", content_file},
                                     {"speaker", speaker_file},
                                     {"landmarks", lmk_file}});
    }

    std::ofstream out(fs::path(dir) / "manifest.json");
    if (!out) throw IoError("cannot write corpus manifest in " + dir);
    out << manifest.dump(2) << "\n";
}

SynthCorpus load_corpus(const std::string& dir) {
    namespace fs = std::filesystem;
    const fs::path manifest_path = fs::path(dir) / "manifest.json";
    std::ifstream in(manifest_path);
    if (!in) throw IoError("cannot open corpus manifest " + manifest_path.string());
    nlohmann::json manifest;
    try {
        in >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("corpus manifest " + manifest_path.string() + ": " + e.what());
    }

    SynthCorpus corpus;
    try {
        corpus.template_face =
            load_template((fs::path(dir) / manifest.at("template").get<std::string>()).string());
        for (const auto& s : manifest.at("styles")) {
            SpeakerStyle style;
            style.yaw_amp = s.at("yaw_amp").get<double>();
            style.pitch_amp = s.at("pitch_amp").get<double>();
            style.roll_amp = s.at("roll_amp").get<double>();
            style.tx_amp = s.at("tx_amp").get<double>();
            style.ty_amp = s.at("ty_amp").get<double>();
            style.sway_freq_hz = s.at("sway_freq_hz").get<double>();
            style.expression_gain = s.at("expression_gain").get<double>();
            corpus.styles.push_back(style);
        }
        for (const auto& c : manifest.at("clips")) {
            SynthClip clip;
            clip.clip_id = c.at("clip_id").get<std::string>();
            clip.speaker_index = c.at("speaker_index").get<int>();
            clip.content = load_content_embedding(
                (fs::path(dir) / c.at("content").get<std::string>()).string());
            clip.speaker = load_speaker_embedding(
                (fs::path(dir) / c.at("speaker").get<std::string>()).string());
            clip.landmarks =
                load_landmarks((fs::path(dir) / c.at("landmarks").get<std::string>()).string());
            corpus.clips.push_back(std::move(clip));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("corpus manifest " + manifest_path.string() +
                         ": missing or mistyped field: " + e.what());
    }
    return corpus;
}

namespace {

struct Fnv1a {
    std::uint64_t h = 1469598103934665603ULL;

    void bytes(const void* data, std::size_t n) {
        const unsigned char* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= p[i];
            h *= 1099511628211ULL;
        }
    }
    void f64(double v) { bytes(&v, sizeof v); }
    void i64(std::int64_t v) { bytes(&v, sizeof v); }
};

}  // namespace

std::uint64_t fingerprint_corpus(const SynthCorpus& corpus) {
    Fnv1a f;
    for (int i = 0; i < kNumLandmarks; ++i) {
        for (int c = 0; c < 3; ++c) f.f64(corpus.template_face.points(i, c));
    }
    f.i64(static_cast<std::int64_t>(corpus.clips.size()));
    for (const auto& clip : corpus.clips) {
        f.bytes(clip.clip_id.data(), clip.clip_id.size());
        f.i64(clip.speaker_index);
        f.i64(clip.content.values.rows());
        f.i64(clip.content.values.cols());
        for (Eigen::Index r = 0; r < clip.content.values.rows(); ++r) {
            for (Eigen::Index c = 0; c < clip.content.values.cols(); ++c) {
                f.f64(clip.content.values(r, c));
            }
        }
        for (Eigen::Index i = 0; i < clip.speaker.raw.size(); ++i) f.f64(clip.speaker.raw(i));
        f.i64(clip.landmarks.frame_count());
        for (const auto& frame : clip.landmarks.frames) {
            for (int i = 0; i < kNumLandmarks; ++i) {
                for (int c = 0; c < 3; ++c) f.f64(frame.points(i, c));
            }
        }
    }
    return f.h;
}

}  // namespace tha
