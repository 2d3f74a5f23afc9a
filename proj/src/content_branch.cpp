#include "tha/content_branch.hpp"

#include <algorithm>
#include <string>

#include "tha/errors.hpp"

namespace tha {

namespace {

constexpr int kInferenceBatch = 96;

}  // namespace

void WindowConfig::validate() const {
    if (tau < 1) {
        throw ConfigError("window tau must be >= 1, got " + std::to_string(tau));
    }
    if (tau_prime < tau) {
        throw ConfigError("window tau_prime must be >= tau, got tau_prime=" +
                          std::to_string(tau_prime) + " tau=" + std::to_string(tau));
    }
}

void ContentBranchConfig::validate() const {
    window.validate();
    if (content_dim < 1) {
        throw ConfigError("content_dim must be >= 1, got " + std::to_string(content_dim));
    }
    if (lstm_hidden < 1 || lstm_layers < 1) {
        throw ConfigError("content LSTM needs positive hidden size and layer count");
    }
    for (int h : mlp_hidden) {
        if (h < 1) {
            throw ConfigError("content MLP hidden sizes must be positive");
        }
    }
}

ContentBranchParams ContentBranchParams::create(const ContentBranchConfig& cfg, Rng& rng) {
    cfg.validate();
    ContentBranchParams out;
    out.cfg = cfg;
    out.lstm = LstmStack::create("content/lstm", cfg.content_dim, cfg.lstm_hidden,
                                 cfg.lstm_layers, rng);
    std::vector<int> dims;
    dims.push_back(cfg.lstm_hidden + kFrameDims);
    dims.insert(dims.end(), cfg.mlp_hidden.begin(), cfg.mlp_hidden.end());
    dims.push_back(kFrameDims);
    out.mlp = Mlp::create("content/mlp", dims, Activation::Tanh, rng);
    return out;
}

std::vector<Tensor*> ContentBranchParams::params() {
    std::vector<Tensor*> out = lstm.params();
    std::vector<Tensor*> mp = mlp.params();
    out.insert(out.end(), mp.begin(), mp.end());
    return out;
}

std::vector<int> windowed_step_inputs(Tape& tape, const Eigen::MatrixXd& cols,
                                      const std::vector<int>& positions, int steps,
                                      const std::vector<int>& hi) {
    if (positions.size() != hi.size()) {
        throw std::logic_error("windowed_step_inputs: positions/hi size mismatch");
    }
    const int batch = static_cast<int>(positions.size());
    std::vector<int> nodes;
    nodes.reserve(steps);
    for (int k = 0; k < steps; ++k) {
        Eigen::MatrixXd step(cols.rows(), batch);
        for (int b = 0; b < batch; ++b) {
            const int idx = std::min(positions[b] + k, hi[b]);
            step.col(b) = cols.col(idx);
        }
        nodes.push_back(tape.constant(step));
    }
    return nodes;
}

int content_positions_node(Tape& tape, ContentBranchParams& params,
                           const Eigen::MatrixXd& a_cols, const std::vector<int>& positions,
                           const Eigen::VectorXd& q_flat) {
    if (a_cols.rows() != params.cfg.content_dim) {
        throw ConfigError("content embedding dim " + std::to_string(a_cols.rows()) +
                          " does not match configured content_dim " +
                          std::to_string(params.cfg.content_dim));
    }
    if (q_flat.size() != kFrameDims) {
        throw ValidationError("reference frame must flatten to 204 values, got " +
                              std::to_string(q_flat.size()));
    }
    const int batch = static_cast<int>(positions.size());
    const int t_total = static_cast<int>(a_cols.cols());
    std::vector<int> hi(positions.size(), t_total - 1);
    const std::vector<int> steps =
        windowed_step_inputs(tape, a_cols, positions, params.cfg.window.tau + 1, hi);
    const int codes = params.lstm.forward_last(tape, steps);
    const int q_rep = tape.constant(q_flat * Eigen::RowVectorXd::Ones(batch));
    const int mlp_in = tape.concat_rows({codes, q_rep});
    const int delta = params.mlp.forward(tape, mlp_in);
    return tape.add(delta, q_rep);
}

ContentForwardResult content_forward(const ContentEmbedding& a, const LandmarkFrame& q,
                                     ContentBranchParams& params) {
    a.validate();
    if (a.dim() != params.cfg.content_dim) {
        throw ConfigError("content embedding dim " + std::to_string(a.dim()) +
                          " does not match configured content_dim " +
                          std::to_string(params.cfg.content_dim));
    }
    const int t_total = a.frames();
    const Eigen::MatrixXd a_cols = a.values.transpose();
    const Eigen::VectorXd q_flat = q.flatten();

    ContentForwardResult out;
    out.sequence.fps = a.frame_rate;
    out.sequence.frames.reserve(t_total);
    out.codes.resize(params.cfg.lstm_hidden, t_total);

    for (int start = 0; start < t_total; start += kInferenceBatch) {
        const int count = std::min(kInferenceBatch, t_total - start);
        std::vector<int> positions(count);
        for (int i = 0; i < count; ++i) {
            positions[i] = start + i;
        }
        Tape tape;
        std::vector<int> hi(positions.size(), t_total - 1);
        const std::vector<int> steps =
            windowed_step_inputs(tape, a_cols, positions, params.cfg.window.tau + 1, hi);
        const int codes = params.lstm.forward_last(tape, steps);
        const int q_rep = tape.constant(q_flat * Eigen::RowVectorXd::Ones(count));
        const int mlp_in = tape.concat_rows({codes, q_rep});
        const int delta = params.mlp.forward(tape, mlp_in);
        const Eigen::MatrixXd p = tape.value(delta) + tape.value(q_rep);
        out.codes.middleCols(start, count) = tape.value(codes);
        for (int i = 0; i < count; ++i) {
            out.sequence.frames.push_back(LandmarkFrame::from_flat(p.col(i)));
        }
    }
    return out;
}

Eigen::MatrixXd laplacian_flat_operator(const PartTopology& topo) {
    const Eigen::MatrixXd lap = laplacian_matrix(topo);
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(kFrameDims, kFrameDims);
    for (int i = 0; i < kNumLandmarks; ++i) {
        for (int j = 0; j < kNumLandmarks; ++j) {
            if (lap(i, j) == 0.0) {
                continue;
            }
            for (int c = 0; c < 3; ++c) {
                out(3 * i + c, 3 * j + c) = lap(i, j);
            }
        }
    }
    return out;
}

double content_loss(const LandmarkSequence& pred, const LandmarkSequence& ref,
                    const PartTopology& topo, double lambda_c) {
    if (pred.frames.size() != ref.frames.size()) {
        throw ValidationError("loss needs equal frame counts, got " +
                              std::to_string(pred.frames.size()) + " vs " +
                              std::to_string(ref.frames.size()));
    }
    double position = 0.0;
    double laplacian = 0.0;
    for (std::size_t t = 0; t < pred.frames.size(); ++t) {
        position += (pred.frames[t].points - ref.frames[t].points).squaredNorm();
        const Eigen::MatrixXd lp = laplacian_coords(pred.frames[t], topo);
        const Eigen::MatrixXd lr = laplacian_coords(ref.frames[t], topo);
        laplacian += (lp - lr).squaredNorm();
    }
    return position + lambda_c * laplacian;
}

int content_loss_node(Tape& tape, int pred, const Eigen::MatrixXd& ref,
                      const Eigen::MatrixXd& lap_flat, double lambda_c) {
    const int ref_node = tape.constant(ref);
    const int diff = tape.sub(pred, ref_node);
    const int position = tape.sum(tape.hadamard(diff, diff));
    const int lap_node = tape.constant(lap_flat);
    const int ldiff = tape.matmul(lap_node, diff);
    const int laplacian = tape.sum(tape.hadamard(ldiff, ldiff));
    return tape.add(position, tape.scale(laplacian, lambda_c));
}

}  // namespace tha
