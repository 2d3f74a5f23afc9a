#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "tha/rng.hpp"
#include "tha/tape.hpp"

namespace tha {

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization, matching the
// common dense-layer default.
Eigen::MatrixXd init_fan_in(Rng& rng, Eigen::Index rows, Eigen::Index cols, Eigen::Index fan_in);

// Sinusoidal position encoding, one column per position within a window.
Eigen::MatrixXd sinusoidal_position_encoding(int d_model, int length);

enum class Activation { Tanh, Relu, None };

// Dense stack: dims = {in, hidden..., out}. Hidden layers use `hidden_act`,
// the output layer is linear.
struct Mlp {
    std::vector<Tensor> weights;
    std::vector<Tensor> biases;
    std::vector<int> dims;
    Activation hidden_act = Activation::Tanh;

    static Mlp create(const std::string& prefix, const std::vector<int>& dims, Activation act,
                      Rng& rng);
    int forward(Tape& tape, int x);
    std::vector<Tensor*> params();
};

// Stacked LSTM applied to a window of steps; hidden and cell states start at
// zero for every window. Inputs are one (input_dim x batch) node per step.
struct LstmStack {
    std::vector<Tensor> wx;  // per layer, (4*hidden) x in
    std::vector<Tensor> wh;  // per layer, (4*hidden) x hidden
    std::vector<Tensor> b;   // per layer, (4*hidden) x 1
    int input_dim = 0;
    int hidden = 0;

    static LstmStack create(const std::string& prefix, int input_dim, int hidden, int layers,
                            Rng& rng);
    // Last layer's hidden state after the final step, (hidden x batch).
    int forward_last(Tape& tape, const std::vector<int>& steps);
    // Last layer's hidden state at every step.
    std::vector<int> forward_all(Tape& tape, const std::vector<int>& steps);
    int layer_count() const { return static_cast<int>(wx.size()); }
    std::vector<Tensor*> params();
};

// Self-attention encoder: input embedding to d_model, optional sinusoidal
// position encoding over the window, then post-norm transformer layers whose
// feed-forward inner width equals d_model.
struct AttentionEncoder {
    struct Layer {
        Tensor wq, bq, wk, bk, wv, bv, wo, bo;
        Tensor ln1_g, ln1_b;
        Tensor ff_w1, ff_b1, ff_w2, ff_b2;
        Tensor ln2_g, ln2_b;
    };

    Tensor embed_w, embed_b;
    std::vector<Layer> layers;
    int input_dim = 0;
    int d_model = 0;
    int heads = 0;
    bool use_position_encoding = true;

    static AttentionEncoder create(const std::string& prefix, int input_dim, int d_model,
                                   int heads, int layer_count, bool use_position_encoding,
                                   Rng& rng);
    // x: (input_dim x window) node; returns (d_model x window).
    int forward(Tape& tape, int x);
    std::vector<Tensor*> params();
};

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-6;
};

// Adam with L2 weight decay folded into the gradient. Moment buffers are
// exposed by parameter name so checkpoints can restore them exactly.
class Adam {
public:
    Adam(std::vector<Tensor*> params, AdamConfig cfg);

    // Applies accumulated gradients and clears them.
    void step();

    long step_count() const { return steps_; }
    void set_step_count(long s) { steps_ = s; }
    const std::vector<Tensor*>& params() const { return params_; }
    Eigen::MatrixXd& moment1(std::size_t i) { return m_[i]; }
    Eigen::MatrixXd& moment2(std::size_t i) { return v_[i]; }

private:
    AdamConfig cfg_;
    std::vector<Tensor*> params_;
    std::vector<Eigen::MatrixXd> m_;
    std::vector<Eigen::MatrixXd> v_;
    long steps_ = 0;
};

}  // namespace tha
