#include "tha/landmark_io.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "tha/errors.hpp"

namespace tha {

namespace {

void append_double(std::string& out, double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    out += buf;
}

}  // namespace

void save_landmarks(const std::string& path, const LandmarkSequence& seq) {
    seq.validate();
    std::string text;
    text.reserve(static_cast<std::size_t>(seq.frame_count()) * kFrameDims * 10);
    text += "lmk 1 ";
    append_double(text, seq.fps);
    text += ' ';
    text += std::to_string(seq.frame_count());
    text += ' ';
    text += std::to_string(kNumLandmarks);
    text += '\n';
    for (const auto& f : seq.frames) {
        for (int i = 0; i < kNumLandmarks; ++i) {
            for (int d = 0; d < 3; ++d) {
                if (i != 0 || d != 0) text += ' ';
                append_double(text, f.points(i, d));
            }
        }
        text += '\n';
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for write: " + path);
    out << text;
    if (!out) throw IoError("landmark write failed: " + path);
}

LandmarkSequence load_landmarks(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);

    std::string header;
    if (!std::getline(in, header)) throw ParseError(path + ": missing header line");
    std::istringstream hdr(header);
    std::string magic;
    int version = 0, n_frames = 0, n_points = 0;
    double fps = 0.0;
    if (!(hdr >> magic >> version >> fps >> n_frames >> n_points) || magic != "lmk")
        throw ParseError(path + ": bad landmark header, expected 'lmk 1 <fps> <n_frames> <n_points>'");
    if (version != 1) throw ParseError(path + ": unsupported landmark file version");
    if (!(fps > 0.0)) throw ParseError(path + ": fps must be positive");
    if (n_frames <= 0) throw ParseError(path + ": n_frames must be positive");
    if (n_points != kNumLandmarks)
        throw ParseError(path + ": n_points must be 68, got " + std::to_string(n_points));

    LandmarkSequence seq;
    seq.fps = fps;
    seq.frames.resize(static_cast<std::size_t>(n_frames));
    for (int t = 0; t < n_frames; ++t) {
        for (int i = 0; i < kNumLandmarks; ++i) {
            for (int d = 0; d < 3; ++d) {
                double v;
                if (!(in >> v))
                    throw ParseError(path + ": truncated frame " + std::to_string(t));
                if (!std::isfinite(v))
                    throw ParseError(path + ": non-finite coordinate in frame " + std::to_string(t));
                seq.frames[static_cast<std::size_t>(t)].points(i, d) = v;
            }
        }
    }
    double extra;
    if (in >> extra) throw ParseError(path + ": trailing values after last frame");
    return seq;
}

void save_template(const std::string& path, const LandmarkFrame& frame) {
    LandmarkSequence seq;
    seq.fps = kCanonicalFps;
    seq.frames.push_back(frame);
    save_landmarks(path, seq);
}

LandmarkFrame load_template(const std::string& path) {
    const LandmarkSequence seq = load_landmarks(path);
    if (seq.frame_count() != 1)
        throw ParseError(path + ": template file must contain exactly one frame");
    return seq.frames.front();
}

}  // namespace tha
