#pragma once

#include <Eigen/Dense>
#include <vector>

#include "tha/embeddings.hpp"
#include "tha/geometry.hpp"
#include "tha/nn.hpp"

namespace tha {

struct WindowConfig {
    int tau = 18;         // content window length
    int tau_prime = 256;  // speaker window length

    void validate() const;  // tau >= 1, tau_prime >= tau
};

struct ContentBranchConfig {
    int content_dim = 64;
    int lstm_hidden = 256;
    int lstm_layers = 3;
    std::vector<int> mlp_hidden = {512, 256};
    WindowConfig window;

    void validate() const;
};

struct ContentBranchParams {
    ContentBranchConfig cfg;
    LstmStack lstm;
    Mlp mlp;

    static ContentBranchParams create(const ContentBranchConfig& cfg, Rng& rng);
    std::vector<Tensor*> params();
};

// Batched window inputs: one (rows x batch) constant node per window step,
// where step k of batch entry b reads column min(positions[b] + k, hi[b]).
// Edge replication at sequence and window boundaries falls out of the clamp.
std::vector<int> windowed_step_inputs(Tape& tape, const Eigen::MatrixXd& cols,
                                      const std::vector<int>& positions, int steps,
                                      const std::vector<int>& hi);

// Absolute landmark positions p_t = q + MLP(c_t, q) for the selected window
// starts, as a (204 x batch) node. a_cols is D x T.
int content_positions_node(Tape& tape, ContentBranchParams& params,
                           const Eigen::MatrixXd& a_cols, const std::vector<int>& positions,
                           const Eigen::VectorXd& q_flat);

struct ContentForwardResult {
    LandmarkSequence sequence;       // p_t, one frame per content frame
    Eigen::MatrixXd codes;           // lstm_hidden x T
};

// Full-sequence inference. Windows are evaluated in fixed-size batches; the
// result is bit-identical to evaluating frames one at a time.
ContentForwardResult content_forward(const ContentEmbedding& a, const LandmarkFrame& q,
                                     ContentBranchParams& params);

// 204x204 operator equal to the 68x68 graph Laplacian acting on each
// coordinate of a flattened frame.
Eigen::MatrixXd laplacian_flat_operator(const PartTopology& topo);

// Position term plus lambda_c times the Laplacian-coordinate term.
double content_loss(const LandmarkSequence& pred, const LandmarkSequence& ref,
                    const PartTopology& topo, double lambda_c = 1.0);

// Same loss over (204 x batch) frame columns, differentiable.
int content_loss_node(Tape& tape, int pred, const Eigen::MatrixXd& ref,
                      const Eigen::MatrixXd& lap_flat, double lambda_c);

}  // namespace tha
