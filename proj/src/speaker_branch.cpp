#include "tha/speaker_branch.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "tha/errors.hpp"

namespace tha {

namespace {

void check_attention(int d_model, int heads, int layers) {
    if (d_model < 1 || heads < 1 || layers < 1) {
        throw ConfigError("attention needs positive width, heads and layer count");
    }
    if (d_model % heads != 0) {
        throw ConfigError("attention heads " + std::to_string(heads) +
                          " must divide model width " + std::to_string(d_model));
    }
}

// Repeat a column vector node across `count` columns.
int repeat_cols(Tape& tape, int col, int count) {
    return tape.matmul(col, tape.constant(Eigen::RowVectorXd::Ones(count)));
}

}  // namespace

void SpeakerBranchConfig::validate() const {
    window.validate();
    if (content_dim < 1 || lstm_hidden < 1 || lstm_layers < 1) {
        throw ConfigError("speaker branch needs positive content/LSTM dimensions");
    }
    check_attention(attn_d_model, attn_heads, attn_layers);
    for (int h : mlp_hidden) {
        if (h < 1) {
            throw ConfigError("speaker MLP hidden sizes must be positive");
        }
    }
}

void DiscriminatorConfig::validate() const {
    if (code_dim < 1) {
        throw ConfigError("discriminator code_dim must be positive");
    }
    check_attention(attn_d_model, attn_heads, attn_layers);
    for (int h : head_hidden) {
        if (h < 1) {
            throw ConfigError("discriminator head hidden sizes must be positive");
        }
    }
}

SpeakerBranchParams SpeakerBranchParams::create(const SpeakerBranchConfig& cfg, Rng& rng) {
    cfg.validate();
    SpeakerBranchParams out;
    out.cfg = cfg;
    out.proj_w = Tensor("speaker/proj/w", kSpeakerProjectedDim, kSpeakerRawDim);
    out.proj_w.value = init_fan_in(rng, kSpeakerProjectedDim, kSpeakerRawDim, kSpeakerRawDim);
    out.proj_b = Tensor("speaker/proj/b", kSpeakerProjectedDim, 1);
    out.lstm = LstmStack::create("speaker/lstm", cfg.content_dim, cfg.lstm_hidden,
                                 cfg.lstm_layers, rng);
    out.attn = AttentionEncoder::create("speaker/attn", cfg.lstm_hidden + kSpeakerProjectedDim,
                                        cfg.attn_d_model, cfg.attn_heads, cfg.attn_layers,
                                        cfg.attn_position_encoding, rng);
    std::vector<int> dims;
    dims.push_back(cfg.attn_d_model + kFrameDims);
    dims.insert(dims.end(), cfg.mlp_hidden.begin(), cfg.mlp_hidden.end());
    dims.push_back(kFrameDims);
    out.mlp = Mlp::create("speaker/mlp", dims, Activation::Tanh, rng);
    return out;
}

std::vector<Tensor*> SpeakerBranchParams::params() {
    std::vector<Tensor*> out = {&proj_w, &proj_b};
    for (Tensor* t : lstm.params()) out.push_back(t);
    for (Tensor* t : attn.params()) out.push_back(t);
    for (Tensor* t : mlp.params()) out.push_back(t);
    return out;
}

Eigen::VectorXd SpeakerBranchParams::project(const SpeakerEmbedding& s) const {
    return project_speaker(s, proj_w.value, proj_b.value.col(0));
}

DiscriminatorParams DiscriminatorParams::create(const DiscriminatorConfig& cfg, Rng& rng) {
    cfg.validate();
    DiscriminatorParams out;
    out.cfg = cfg;
    out.attn = AttentionEncoder::create(
        "discriminator/attn", kFrameDims + cfg.code_dim + kSpeakerProjectedDim, cfg.attn_d_model,
        cfg.attn_heads, cfg.attn_layers, cfg.attn_position_encoding, rng);
    std::vector<int> dims;
    dims.push_back(cfg.attn_d_model);
    dims.insert(dims.end(), cfg.head_hidden.begin(), cfg.head_hidden.end());
    dims.push_back(1);
    out.head = Mlp::create("discriminator/head", dims, Activation::Relu, rng);
    return out;
}

std::vector<Tensor*> DiscriminatorParams::params() {
    std::vector<Tensor*> out = attn.params();
    for (Tensor* t : head.params()) out.push_back(t);
    return out;
}

int speaker_projection_node(Tape& tape, SpeakerBranchParams& params, const Eigen::VectorXd& raw) {
    if (raw.size() != kSpeakerRawDim) {
        throw ValidationError("raw speaker embedding must have 256 values, got " +
                              std::to_string(raw.size()));
    }
    const int w = tape.leaf(params.proj_w);
    const int b = tape.leaf(params.proj_b);
    return tape.add(tape.matmul(w, tape.constant(raw)), b);
}

SpeakerWindowNodes speaker_window_nodes(Tape& tape, SpeakerBranchParams& params,
                                        const Eigen::MatrixXd& a_cols, int win_start,
                                        int s128_node, const Eigen::MatrixXd& p_cols,
                                        const Eigen::VectorXd& q_flat) {
    if (a_cols.rows() != params.cfg.content_dim) {
        throw ConfigError("content embedding dim " + std::to_string(a_cols.rows()) +
                          " does not match configured content_dim " +
                          std::to_string(params.cfg.content_dim));
    }
    if (p_cols.rows() != kFrameDims || p_cols.cols() != a_cols.cols()) {
        throw ValidationError("content positions must be 204 x T matching the embedding");
    }
    const int t_total = static_cast<int>(a_cols.cols());
    const int width = params.cfg.window.tau_prime;
    const int hi_clamp = std::min(win_start + width - 1, t_total - 1);

    std::vector<int> positions(width);
    std::vector<int> hi(width, hi_clamp);
    Eigen::MatrixXd p_window(kFrameDims, width);
    for (int b = 0; b < width; ++b) {
        positions[b] = std::min(win_start + b, t_total - 1);
        p_window.col(b) = p_cols.col(positions[b]);
    }

    SpeakerWindowNodes out;
    const std::vector<int> steps =
        windowed_step_inputs(tape, a_cols, positions, params.cfg.window.tau + 1, hi);
    out.codes = params.lstm.forward_last(tape, steps);
    const int s_rep = repeat_cols(tape, s128_node, width);
    const int h = params.attn.forward(tape, tape.concat_rows({out.codes, s_rep}));
    const int q_rep = tape.constant(q_flat * Eigen::RowVectorXd::Ones(width));
    out.delta = params.mlp.forward(tape, tape.concat_rows({h, q_rep}));
    out.y = tape.add(tape.constant(p_window), out.delta);
    out.valid = std::max(0, std::min(width, t_total - win_start));
    return out;
}

SpeakerForwardResult speaker_forward(const ContentEmbedding& a, const Eigen::VectorXd& s128,
                                     const LandmarkSequence& p, const LandmarkFrame& q,
                                     SpeakerBranchParams& params) {
    a.validate();
    if (s128.size() != kSpeakerProjectedDim) {
        throw ValidationError("speaker embedding must be projected to 128 values first, got " +
                              std::to_string(s128.size()));
    }
    const int t_total = a.frames();
    if (static_cast<int>(p.frames.size()) != t_total) {
        throw ValidationError("content positions have " + std::to_string(p.frames.size()) +
                              " frames but the embedding has " + std::to_string(t_total));
    }

    const Eigen::MatrixXd a_cols = a.values.transpose();
    Eigen::MatrixXd p_cols(kFrameDims, t_total);
    for (int t = 0; t < t_total; ++t) p_cols.col(t) = p.frames[t].flatten();
    const Eigen::VectorXd q_flat = q.flatten();

    SpeakerForwardResult out;
    out.sequence.fps = p.fps;
    out.sequence.frames.reserve(t_total);
    out.codes.resize(params.cfg.lstm_hidden, t_total);

    const int width = params.cfg.window.tau_prime;
    for (int win_start = 0; win_start < t_total; win_start += width) {
        Tape tape;
        const int s_node = tape.constant(s128);
        const SpeakerWindowNodes nodes =
            speaker_window_nodes(tape, params, a_cols, win_start, s_node, p_cols, q_flat);
        const Eigen::MatrixXd& y = tape.value(nodes.y);
        const Eigen::MatrixXd& codes = tape.value(nodes.codes);
        for (int b = 0; b < nodes.valid; ++b) {
            out.sequence.frames.push_back(LandmarkFrame::from_flat(y.col(b)));
            out.codes.col(win_start + b) = codes.col(b);
        }
    }
    return out;
}

int discriminator_node(Tape& tape, DiscriminatorParams& params, int y, int codes, int s128) {
    const int width = static_cast<int>(tape.value(y).cols());
    if (tape.value(codes).cols() != width) {
        throw ValidationError("discriminator codes cover " +
                              std::to_string(tape.value(codes).cols()) + " frames, expected " +
                              std::to_string(width));
    }
    const int s_rep = repeat_cols(tape, s128, width);
    const int h = params.attn.forward(tape, tape.concat_rows({y, codes, s_rep}));
    return params.head.forward(tape, h);
}

RealismScore discriminator_score(const LandmarkSequence& y, const Eigen::MatrixXd& codes,
                                 const Eigen::VectorXd& s128, DiscriminatorParams& params) {
    if (s128.size() != kSpeakerProjectedDim) {
        throw ValidationError("speaker embedding must be projected to 128 values first, got " +
                              std::to_string(s128.size()));
    }
    if (codes.rows() != params.cfg.code_dim) {
        throw ValidationError("discriminator expects codes of width " +
                              std::to_string(params.cfg.code_dim) + ", got " +
                              std::to_string(codes.rows()));
    }
    const int width = static_cast<int>(y.frames.size());
    if (static_cast<int>(codes.cols()) != width) {
        throw ValidationError("discriminator codes cover " + std::to_string(codes.cols()) +
                              " frames, expected " + std::to_string(width));
    }
    Eigen::MatrixXd y_cols(kFrameDims, width);
    for (int t = 0; t < width; ++t) y_cols.col(t) = y.frames[t].flatten();

    Tape tape;
    const int node = discriminator_node(tape, params, tape.constant(y_cols),
                                        tape.constant(codes), tape.constant(s128));
    RealismScore score;
    score.r = tape.value(node).row(0).transpose();
    return score;
}

double lsgan_loss(const RealismScore& r_real, const RealismScore& r_fake) {
    if (r_real.r.size() != r_fake.r.size()) {
        throw ValidationError("realism score lengths differ: " + std::to_string(r_real.r.size()) +
                              " vs " + std::to_string(r_fake.r.size()));
    }
    double total = 0.0;
    for (Eigen::Index t = 0; t < r_real.r.size(); ++t) {
        const double dr = r_real.r(t) - 1.0;
        total += dr * dr + r_fake.r(t) * r_fake.r(t);
    }
    return total;
}

int lsgan_node(Tape& tape, int r_real, int r_fake) {
    const int real_shift = tape.add_scalar(r_real, -1.0);
    const int real_term = tape.sum(tape.hadamard(real_shift, real_shift));
    const int fake_term = tape.sum(tape.hadamard(r_fake, r_fake));
    return tape.add(real_term, fake_term);
}

double generator_loss(const LandmarkSequence& y, const LandmarkSequence& ref,
                      const PartTopology& topo, const RealismScore& r_fake, double lambda_s,
                      double mu_s) {
    double total = content_loss(y, ref, topo, lambda_s);
    for (Eigen::Index t = 0; t < r_fake.r.size(); ++t) {
        const double dr = r_fake.r(t) - 1.0;
        total += mu_s * dr * dr;
    }
    return total;
}

int generator_loss_node(Tape& tape, int y, const Eigen::MatrixXd& ref_cols,
                        const Eigen::MatrixXd& lap_flat, int r_fake, double lambda_s,
                        double mu_s) {
    const int base = content_loss_node(tape, y, ref_cols, lap_flat, lambda_s);
    const int shift = tape.add_scalar(r_fake, -1.0);
    const int gan = tape.sum(tape.hadamard(shift, shift));
    return tape.add(base, tape.scale(gan, mu_s));
}

}  // namespace tha
