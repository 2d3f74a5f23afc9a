#pragma once

#include <Eigen/Dense>
#include <vector>

#include "tha/content_branch.hpp"
#include "tha/embeddings.hpp"
#include "tha/geometry.hpp"
#include "tha/nn.hpp"

namespace tha {

struct SpeakerBranchConfig {
    int content_dim = 64;
    int lstm_hidden = 256;
    int lstm_layers = 3;
    int attn_d_model = 32;
    int attn_heads = 2;
    int attn_layers = 2;
    bool attn_position_encoding = true;
    std::vector<int> mlp_hidden = {512, 256};
    WindowConfig window;

    void validate() const;
};

struct SpeakerBranchParams {
    SpeakerBranchConfig cfg;
    Tensor proj_w;  // 128x256 speaker projection, trained with the branch
    Tensor proj_b;  // 128x1
    LstmStack lstm;
    AttentionEncoder attn;  // per-frame input: codes concat s128
    Mlp mlp;                // input: attention output concat flatten(q)

    static SpeakerBranchParams create(const SpeakerBranchConfig& cfg, Rng& rng);
    std::vector<Tensor*> params();
    Eigen::VectorXd project(const SpeakerEmbedding& s) const;
};

struct DiscriminatorConfig {
    int code_dim = 256;  // width of the generator's per-frame codes
    int attn_d_model = 32;
    int attn_heads = 2;
    int attn_layers = 2;
    bool attn_position_encoding = true;
    std::vector<int> head_hidden = {512, 256};

    void validate() const;
};

struct DiscriminatorParams {
    DiscriminatorConfig cfg;
    AttentionEncoder attn;  // per-frame input: flatten(y) concat codes concat s128
    Mlp head;               // attention output -> one score per frame

    static DiscriminatorParams create(const DiscriminatorConfig& cfg, Rng& rng);
    std::vector<Tensor*> params();
};

struct RealismScore {
    Eigen::VectorXd r;  // one scalar per frame
};

// Projection node W*raw + b with gradients into proj_w/proj_b.
int speaker_projection_node(Tape& tape, SpeakerBranchParams& params, const Eigen::VectorXd& raw);

// One generator window on the tape. Frames beyond the sequence end are padded
// by edge replication; the LSTM lookahead never reads outside the window or
// past the final frame.
struct SpeakerWindowNodes {
    int codes;  // lstm_hidden x tau_prime
    int delta;  // 204 x tau_prime
    int y;      // 204 x tau_prime
    int valid;  // frames of the window that are not padding
};
SpeakerWindowNodes speaker_window_nodes(Tape& tape, SpeakerBranchParams& params,
                                        const Eigen::MatrixXd& a_cols, int win_start,
                                        int s128_node, const Eigen::MatrixXd& p_cols,
                                        const Eigen::VectorXd& q_flat);

struct SpeakerForwardResult {
    LandmarkSequence sequence;  // y_t, padding dropped
    Eigen::MatrixXd codes;      // lstm_hidden x T
};

SpeakerForwardResult speaker_forward(const ContentEmbedding& a, const Eigen::VectorXd& s128,
                                     const LandmarkSequence& p, const LandmarkFrame& q,
                                     SpeakerBranchParams& params);

// Per-frame realism scores over one window: y frames, the generator codes for
// the same window, and the projected speaker embedding.
int discriminator_node(Tape& tape, DiscriminatorParams& params, int y, int codes, int s128);
RealismScore discriminator_score(const LandmarkSequence& y, const Eigen::MatrixXd& codes,
                                 const Eigen::VectorXd& s128, DiscriminatorParams& params);

// sum (r_real - 1)^2 + sum r_fake^2
double lsgan_loss(const RealismScore& r_real, const RealismScore& r_fake);
int lsgan_node(Tape& tape, int r_real, int r_fake);

// position + lambda_s * Laplacian + mu_s * sum (r_fake - 1)^2
double generator_loss(const LandmarkSequence& y, const LandmarkSequence& ref,
                      const PartTopology& topo, const RealismScore& r_fake, double lambda_s = 1.0,
                      double mu_s = 1e-3);
int generator_loss_node(Tape& tape, int y, const Eigen::MatrixXd& ref_cols,
                        const Eigen::MatrixXd& lap_flat, int r_fake, double lambda_s,
                        double mu_s);

}  // namespace tha
