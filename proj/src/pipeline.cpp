#include "tha/pipeline.hpp"

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <utility>

#include "tha/checkpoint.hpp"
#include "tha/errors.hpp"
#include "tha/landmark_io.hpp"
#include "tha/png_io.hpp"
#include "tha/rng.hpp"

namespace tha {

namespace fs = std::filesystem;

namespace {

void require_file(const std::string& path, const std::string& flag, const std::string& what) {
    if (path.empty()) throw ValidationError("missing " + what + ": pass " + flag);
    if (!fs::exists(path)) {
        throw ValidationError(what + " not found at " + path + " (from " + flag + ")");
    }
}

void write_json(const fs::path& path, const nlohmann::json& j) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << j.dump(2) << '\n';
    if (!out) throw IoError("failed while writing " + path.string());
}

LandmarkFrame template_from_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    if (!ckpt.has("template")) {
        throw ParseError("checkpoint " + path + " carries no training template");
    }
    const Eigen::MatrixXd& flat = ckpt.get("template");
    if (flat.rows() != kFrameDims || flat.cols() != 1) {
        throw ParseError("checkpoint " + path + " template has wrong shape");
    }
    return LandmarkFrame::from_flat(flat.col(0));
}

// Shared by warp and translate mode so both output layouts look alike.
void write_frame_manifest(const fs::path& dir, double fps, int frame_count, int width, int height,
                          int folded) {
    write_json(dir / "manifest.json", nlohmann::json{{"fps", fps},
                                                     {"frame_count", frame_count},
                                                     {"width", width},
                                                     {"height", height},
                                                     {"folded_triangles", folded}});
}

Image resize_bilinear(const Image& img, int width, int height) {
    Image out(width, height);
    const double sx = static_cast<double>(img.width) / width;
    const double sy = static_cast<double>(img.height) / height;
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const Eigen::Vector3d v = sample_bilinear(img, (x + 0.5) * sx, (y + 0.5) * sy);
            for (int c = 0; c < 3; ++c) {
                out.at(x, y, c) = static_cast<std::uint8_t>(
                    std::min(255.0, std::max(0.0, std::round(v[c]))));
            }
        }
    }
    return out;
}

std::string frame_name(int index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "frame_%06d.png", index);
    return buf;
}

Eigen::MatrixX2d with_anchors(const Eigen::MatrixX2d& pts, int width, int height) {
    const Eigen::MatrixX2d anchors = border_anchors(width, height);
    Eigen::MatrixX2d all(pts.rows() + anchors.rows(), 2);
    all.topRows(pts.rows()) = pts;
    all.bottomRows(anchors.rows()) = anchors;
    return all;
}

}  // namespace

std::string hash_file_hex(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path + " for hashing");
    std::uint64_t h = 1469598103934665603ull;
    char buf[4096];
    while (in.read(buf, sizeof buf), in.gcount() > 0) {
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 1099511628211ull;
        }
    }
    std::ostringstream out;
    out << std::hex << std::setw(16) << std::setfill('0') << h;
    return out.str();
}

void PipelineConfig::validate() const {
    if (mode != "warp" && mode != "translate") {
        throw ConfigError("unknown mode '" + mode + "': --mode takes warp or translate");
    }
    if (!(fps > 0.0) || !std::isfinite(fps)) {
        throw ConfigError("--fps must be a positive finite rate");
    }
    require_file(portrait_path, "--portrait", "portrait image");
    require_file(portrait_landmarks_path, "--portrait-landmarks", "portrait landmark file");
    require_file(content_path, "--content", "content embedding");
    require_file(content_checkpoint, "--content-ckpt", "content checkpoint");
    if (speaker_branch_enabled) {
        if (speaker_path.empty()) {
            throw ValidationError(
                "speaker-aware mode needs a speaker embedding: pass --speaker "
                "or disable the branch with --no-speaker");
        }
        require_file(speaker_path, "--speaker", "speaker embedding");
        if (speaker_checkpoint.empty()) {
            throw ValidationError(
                "speaker-aware mode needs a trained speaker branch: pass --speaker-ckpt "
                "or disable the branch with --no-speaker");
        }
        require_file(speaker_checkpoint, "--speaker-ckpt", "speaker checkpoint");
    }
    if (mode == "translate") {
        if (i2i_checkpoint.empty()) {
            throw ValidationError(
                "translate mode needs an image-translation checkpoint: pass --i2i-ckpt");
        }
        require_file(i2i_checkpoint, "--i2i-ckpt", "image-translation checkpoint");
    }
    if (output_dir.empty()) throw ValidationError("missing output directory: pass --out");
    if (pose_edit.enabled) pose_edit.delta.validate();
}

nlohmann::json PipelineConfig::to_json() const {
    nlohmann::json j{{"portrait", portrait_path},
                     {"portrait_landmarks", portrait_landmarks_path},
                     {"content", content_path},
                     {"speaker", speaker_path},
                     {"content_ckpt", content_checkpoint},
                     {"speaker_ckpt", speaker_checkpoint},
                     {"i2i_ckpt", i2i_checkpoint},
                     {"out", output_dir},
                     {"mode", mode},
                     {"fps", fps},
                     {"seed", seed},
                     {"speaker_branch", speaker_branch_enabled}};
    j["pose_edit"] = nlohmann::json{{"enabled", pose_edit.enabled},
                                    {"yaw", pose_edit.delta.yaw},
                                    {"pitch", pose_edit.delta.pitch},
                                    {"roll", pose_edit.delta.roll},
                                    {"dx", pose_edit.delta.translation.x()},
                                    {"dy", pose_edit.delta.translation.y()},
                                    {"dz", pose_edit.delta.translation.z()}};
    return j;
}

ContentModel load_content_model(const std::string& path) {
    Checkpoint ckpt = load_checkpoint(path);
    const std::string kind = ckpt.manifest.value("kind", "");
    if (kind != "content") {
        throw ValidationError("checkpoint " + path + " holds a '" + kind +
                              "' model, expected 'content'");
    }
    ContentBranchConfig cfg;
    try {
        cfg = content_config_from_json(ckpt.manifest.at("content_config"));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("checkpoint " + path + ": " + e.what());
    }
    Rng rng(0);
    ContentModel model{ContentBranchParams::create(cfg, rng), template_from_checkpoint(ckpt, path)};
    load_params(ckpt, model.params.params());
    return model;
}

SpeakerModel load_speaker_model(const std::string& path) {
    Checkpoint ckpt = load_checkpoint(path);
    const std::string kind = ckpt.manifest.value("kind", "");
    if (kind != "speaker") {
        throw ValidationError("checkpoint " + path + " holds a '" + kind +
                              "' model, expected 'speaker'");
    }
    SpeakerBranchConfig cfg;
    try {
        cfg = speaker_config_from_json(ckpt.manifest.at("speaker_config"));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("checkpoint " + path + ": " + e.what());
    }
    Rng rng(0);
    SpeakerModel model{SpeakerBranchParams::create(cfg, rng), template_from_checkpoint(ckpt, path)};
    load_params(ckpt, model.params.params());
    return model;
}

I2iParams load_i2i_model(const std::string& path) {
    Checkpoint ckpt = load_checkpoint(path);
    const std::string kind = ckpt.manifest.value("kind", "");
    if (kind != "i2i") {
        throw ValidationError("checkpoint " + path + " holds a '" + kind +
                              "' model, expected 'i2i'");
    }
    I2iConfig cfg;
    try {
        cfg = i2i_config_from_json(ckpt.manifest.at("i2i_config"));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("checkpoint " + path + ": " + e.what());
    }
    Rng rng(0);
    I2iParams params = I2iParams::create(cfg, rng);
    load_params(ckpt, params.params());
    return params;
}

LandmarkSequence predict_sequence(ContentModel& content, SpeakerModel* speaker,
                                  const ContentEmbedding& a, const SpeakerEmbedding* s) {
    a.validate();
    const ContentForwardResult cf = content_forward(a, content.q, content.params);
    if (speaker == nullptr) return cf.sequence;
    if (s == nullptr) {
        throw ValidationError("speaker-aware prediction needs a speaker embedding");
    }
    if ((speaker->q.flatten() - content.q.flatten()).cwiseAbs().maxCoeff() > 1e-9) {
        throw ValidationError(
            "content and speaker checkpoints were trained against different templates");
    }
    const Eigen::VectorXd s128 = speaker->params.project(*s);
    return speaker_forward(a, s128, cf.sequence, speaker->q, speaker->params).sequence;
}

Eigen::MatrixX2d PixelMap::apply(const LandmarkFrame& frame) const {
    Eigen::MatrixX2d out(kNumLandmarks, 2);
    for (int i = 0; i < kNumLandmarks; ++i) {
        out.row(i) = (linear * frame.points.row(i).head<2>().transpose() + offset).transpose();
    }
    return out;
}

PixelMap fit_pixel_map(const LandmarkFrame& q, const Eigen::MatrixX2d& portrait_pts) {
    if (portrait_pts.rows() != kNumLandmarks) {
        throw ValidationError("portrait landmark file must hold all 68 points");
    }
    if (!portrait_pts.allFinite()) throw ValidationError("portrait landmarks are not finite");
    const std::vector<int>& stable = stable_subset();
    const int n = static_cast<int>(stable.size());
    Eigen::MatrixXd lhs(n, 3);
    Eigen::MatrixXd rhs(n, 2);
    for (int k = 0; k < n; ++k) {
        lhs(k, 0) = q.points(stable[static_cast<std::size_t>(k)], 0);
        lhs(k, 1) = q.points(stable[static_cast<std::size_t>(k)], 1);
        lhs(k, 2) = 1.0;
        rhs.row(k) = portrait_pts.row(stable[static_cast<std::size_t>(k)]);
    }
    const Eigen::MatrixXd x = lhs.colPivHouseholderQr().solve(rhs);  // 3x2
    PixelMap map;
    map.linear = x.topRows(2).transpose();
    map.offset = x.row(2).transpose();
    if (std::abs(map.linear.determinant()) < 1e-12) {
        throw RegistrationError("portrait landmarks are degenerate: the template fit collapsed");
    }
    return map;
}

AnimateResult animate(const PipelineConfig& cfg) {
    cfg.validate();

    ContentModel content = load_content_model(cfg.content_checkpoint);
    std::optional<SpeakerModel> speaker;
    std::optional<SpeakerEmbedding> semb;
    if (cfg.speaker_branch_enabled) {
        speaker = load_speaker_model(cfg.speaker_checkpoint);
        semb = load_speaker_embedding(cfg.speaker_path);
    }
    const ContentEmbedding a = load_content_embedding(cfg.content_path);

    LandmarkSequence seq = predict_sequence(content, speaker ? &*speaker : nullptr, a,
                                            semb ? &*semb : nullptr);
    seq = resample(seq, cfg.fps);
    if (cfg.pose_edit.enabled) seq = edit_head_pose(seq, content.q, cfg.pose_edit.delta);

    const Image portrait = read_png(cfg.portrait_path);
    const LandmarkFrame portrait_lmk = load_template(cfg.portrait_landmarks_path);
    const Eigen::MatrixX2d portrait_pts = portrait_lmk.points.leftCols<2>();
    const PixelMap map = fit_pixel_map(content.q, portrait_pts);

    LandmarkSequence pixel_seq;
    pixel_seq.fps = seq.fps;
    pixel_seq.frames.reserve(seq.frames.size());
    for (const LandmarkFrame& f : seq.frames) {
        LandmarkFrame px;
        px.points.leftCols<2>() = map.apply(f);
        px.points.col(2).setZero();
        pixel_seq.frames.push_back(px);
    }

    std::error_code ec;
    fs::create_directories(cfg.output_dir, ec);
    if (ec || !fs::is_directory(cfg.output_dir)) {
        throw IoError("cannot create output directory " + cfg.output_dir);
    }

    AnimateResult result;
    result.predicted = seq;
    result.frame_count = seq.frame_count();

    if (cfg.mode == "warp") {
        const PortraitImage src{portrait, portrait_pts};
        const RenderResult rr = render_animation(src, pixel_seq, cfg.output_dir);
        result.folded_triangles = rr.folded_triangles;
    } else {
        I2iParams i2i = load_i2i_model(cfg.i2i_checkpoint);
        const int res = i2i.cfg.resolution;
        const Image small = resize_bilinear(portrait, res, res);
        const Eigen::MatrixXd portrait_planes = image_to_planes(small);
        const double sx = static_cast<double>(res) / portrait.width;
        const double sy = static_cast<double>(res) / portrait.height;
        for (int t = 0; t < pixel_seq.frame_count(); ++t) {
            Eigen::MatrixX2d pts = pixel_seq.frames[static_cast<std::size_t>(t)]
                                       .points.leftCols<2>();
            pts.col(0) *= sx;
            pts.col(1) *= sy;
            const Image raster = rasterize_landmarks(pts, res);
            Eigen::MatrixXd input(6, portrait_planes.cols());
            input.topRows(3) = portrait_planes;
            input.bottomRows(3) = image_to_planes(raster);
            const Eigen::MatrixXd out = i2i_forward(i2i, input);
            write_png((fs::path(cfg.output_dir) / frame_name(t)).string(),
                      planes_to_image(out, res, res));
        }
        write_frame_manifest(cfg.output_dir, pixel_seq.fps, pixel_seq.frame_count(), res, res, 0);
    }

    save_landmarks((fs::path(cfg.output_dir) / "landmarks.lmk").string(), seq);

    nlohmann::json hashes{{"content-ckpt", hash_file_hex(cfg.content_checkpoint)},
                          {"portrait", hash_file_hex(cfg.portrait_path)},
                          {"portrait-landmarks", hash_file_hex(cfg.portrait_landmarks_path)},
                          {"content", hash_file_hex(cfg.content_path)}};
    if (cfg.speaker_branch_enabled) {
        hashes["speaker-ckpt"] = hash_file_hex(cfg.speaker_checkpoint);
        hashes["speaker"] = hash_file_hex(cfg.speaker_path);
    }
    if (cfg.mode == "translate") hashes["i2i-ckpt"] = hash_file_hex(cfg.i2i_checkpoint);

    const fs::path manifest_path = fs::path(cfg.output_dir) / "run_manifest.json";
    write_json(manifest_path, nlohmann::json{{"command", "animate"},
                                             {"config", cfg.to_json()},
                                             {"seed", cfg.seed},
                                             {"inputs", hashes},
                                             {"frame_count", result.frame_count},
                                             {"folded_triangles", result.folded_triangles}});
    result.manifest_path = manifest_path.string();
    return result;
}

const MetricReport& EvalResult::report(const std::string& name) const {
    for (const EvalVariant& v : variants) {
        if (v.name == name) return v.report;
    }
    throw ValidationError("no evaluation variant named " + name);
}

nlohmann::json EvalResult::to_json() const {
    auto clip_json = [](const ClipMetrics& m) {
        return nlohmann::json{{"clip_id", m.clip_id}, {"d_ll", m.lip.d_ll},
                              {"d_vl", m.lip.d_vl},   {"d_a", m.lip.d_a},
                              {"d_l", m.pose.d_l},    {"d_v", m.pose.d_v},
                              {"d_rot", m.pose.d_rot}, {"d_pos", m.pose.d_pos}};
    };
    nlohmann::json out{{"test_clips", test_clips}};
    out["variants"] = nlohmann::json::object();
    for (const EvalVariant& v : variants) {
        nlohmann::json clips = nlohmann::json::array();
        for (const ClipMetrics& m : v.report.clips) clips.push_back(clip_json(m));
        out["variants"][v.name] = {{"clips", clips}, {"aggregate", clip_json(v.report.aggregate)}};
    }
    return out;
}

std::string EvalResult::format() const {
    std::ostringstream out;
    for (const EvalVariant& v : variants) {
        out << "== " << v.name << " ==\n" << format_report(v.report);
    }
    return out.str();
}

EvalResult run_eval(const SynthCorpus& corpus, ContentModel& content, SpeakerModel& speaker,
                    const EvalOptions& opt, std::uint64_t content_train_seed) {
    if (corpus.clips.empty()) throw ValidationError("evaluation corpus has no clips");
    if ((speaker.q.flatten() - content.q.flatten()).cwiseAbs().maxCoeff() > 1e-9) {
        throw ValidationError(
            "content and speaker checkpoints were trained against different templates");
    }
    const std::uint64_t split_seed = opt.split_seed ? opt.split_seed : content_train_seed;
    const SplitIndices split = split_corpus(static_cast<int>(corpus.clips.size()), split_seed);
    const LandmarkFrame& tmpl = corpus.template_face;
    const PartTopology& topo = default_topology();

    EvalResult result;
    result.test_clips = split.test;
    std::vector<ClipMetrics> full_m, no_speaker_m, no_content_m, same_m, random_m;

    for (const int ci : split.test) {
        const SynthClip& clip = corpus.clips[static_cast<std::size_t>(ci)];
        const LandmarkSequence& gt = clip.landmarks;
        const LandmarkSequence gt_reg = register_to_template(gt, tmpl).registered;

        const ContentForwardResult cf = content_forward(clip.content, content.q, content.params);
        const Eigen::VectorXd s128 = speaker.params.project(clip.speaker);
        const LandmarkSequence full =
            speaker_forward(clip.content, s128, cf.sequence, speaker.q, speaker.params).sequence;

        LandmarkSequence constant_q;
        constant_q.fps = clip.content.frame_rate;
        constant_q.frames.assign(static_cast<std::size_t>(clip.content.frames()), tmpl);
        const LandmarkSequence no_content =
            speaker_forward(clip.content, s128, constant_q, speaker.q, speaker.params).sequence;

        const LandmarkSequence same =
            retrieval_baseline(clip, corpus, RetrievalMode::SameId, opt.baseline_seed);
        const LandmarkSequence random =
            retrieval_baseline(clip, corpus, RetrievalMode::RandomId, opt.baseline_seed);

        const auto score = [&](const LandmarkSequence& pred) {
            ClipMetrics m;
            m.clip_id = clip.clip_id;
            m.lip = lip_metrics(register_to_template(pred, tmpl).registered, gt_reg, topo);
            m.pose = pose_metrics(pred, gt, tmpl);
            return m;
        };
        full_m.push_back(score(full));
        no_speaker_m.push_back(score(cf.sequence));
        no_content_m.push_back(score(no_content));
        same_m.push_back(score(same));
        random_m.push_back(score(random));
    }

    result.variants = {{"full", aggregate_metrics(std::move(full_m))},
                       {"no_speaker", aggregate_metrics(std::move(no_speaker_m))},
                       {"no_content", aggregate_metrics(std::move(no_content_m))},
                       {"retrieval_same_id", aggregate_metrics(std::move(same_m))},
                       {"retrieval_random_id", aggregate_metrics(std::move(random_m))}};
    return result;
}

Image paint_portrait(const Eigen::MatrixX2d& points_px, int resolution) {
    if (resolution <= 0) throw ValidationError("portrait resolution must be positive");
    Image img(resolution, resolution);
    for (int y = 0; y < resolution; ++y) {
        for (int x = 0; x < resolution; ++x) {
            const double u = static_cast<double>(x) / resolution;
            const double v = static_cast<double>(y) / resolution;
            img.at(x, y, 0) = static_cast<std::uint8_t>(110 + 70 * std::sin(6.3 * u + 1.7 * v));
            img.at(x, y, 1) = static_cast<std::uint8_t>(120 + 60 * std::cos(4.1 * v - 2.3 * u));
            img.at(x, y, 2) = static_cast<std::uint8_t>(100 + 80 * std::sin(3.7 * (u + v)));
        }
    }
    const Image wire = rasterize_landmarks(points_px, resolution);
    for (int y = 0; y < resolution; ++y) {
        for (int x = 0; x < resolution; ++x) {
            if (wire.at(x, y, 0) || wire.at(x, y, 1) || wire.at(x, y, 2)) {
                for (int c = 0; c < 3; ++c) img.at(x, y, c) = wire.at(x, y, c);
            }
        }
    }
    return img;
}

std::vector<I2iPair> build_i2i_pairs(const SynthCorpus& corpus, int clip_index, int n_pairs,
                                     int resolution, std::uint64_t seed) {
    if (clip_index < 0 || clip_index >= static_cast<int>(corpus.clips.size())) {
        throw ValidationError("clip index " + std::to_string(clip_index) +
                              " outside the corpus (" + std::to_string(corpus.clips.size()) +
                              " clips)");
    }
    if (n_pairs < 1) throw ValidationError("need at least one training pair");
    if (resolution <= 0) throw ValidationError("pair resolution must be positive");

    const SynthClip& clip = corpus.clips[static_cast<std::size_t>(clip_index)];
    const double scale = resolution / 4.0;
    const double center = resolution / 2.0;
    const auto to_canvas = [&](const LandmarkFrame& f) {
        Eigen::MatrixX2d pts(kNumLandmarks, 2);
        for (int i = 0; i < kNumLandmarks; ++i) {
            pts(i, 0) = f.points(i, 0) * scale + center;
            pts(i, 1) = f.points(i, 1) * scale + center;
        }
        return pts;
    };

    const Eigen::MatrixX2d rest = to_canvas(clip.landmarks.frames.front());
    const Image portrait = paint_portrait(rest, resolution);
    const PortraitImage src{portrait, rest};
    src.validate();
    const Eigen::MatrixX2d rest_all = with_anchors(rest, resolution, resolution);
    const TriangleMesh mesh = triangulate(rest_all);
    const Eigen::MatrixXd portrait_planes = image_to_planes(portrait);

    Rng rng(seed);
    std::vector<I2iPair> pairs;
    pairs.reserve(static_cast<std::size_t>(n_pairs));
    const int n_frames = clip.landmarks.frame_count();
    for (int k = 0; k < n_pairs; ++k) {
        const int t = static_cast<int>(rng.below(static_cast<std::uint64_t>(n_frames)));
        const Eigen::MatrixX2d pts = to_canvas(clip.landmarks.frames[static_cast<std::size_t>(t)]);
        const Image target = warp_frame(src, mesh, with_anchors(pts, resolution, resolution));
        I2iPair pair;
        pair.input.resize(6, portrait_planes.cols());
        pair.input.topRows(3) = portrait_planes;
        pair.input.bottomRows(3) = image_to_planes(rasterize_landmarks(pts, resolution));
        pair.target = image_to_planes(target);
        pairs.push_back(std::move(pair));
    }
    return pairs;
}

}  // namespace tha
