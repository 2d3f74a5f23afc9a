#include "tha/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace tha {

Eigen::MatrixXd init_fan_in(Rng& rng, Eigen::Index rows, Eigen::Index cols, Eigen::Index fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index c = 0; c < cols; ++c) {
        for (Eigen::Index r = 0; r < rows; ++r) {
            m(r, c) = rng.uniform(-bound, bound);
        }
    }
    return m;
}

Eigen::MatrixXd sinusoidal_position_encoding(int d_model, int length) {
    Eigen::MatrixXd pe(d_model, length);
    for (int t = 0; t < length; ++t) {
        for (int i = 0; i < d_model; i += 2) {
            const double rate = std::pow(10000.0, static_cast<double>(i) / d_model);
            pe(i, t) = std::sin(t / rate);
            if (i + 1 < d_model) pe(i + 1, t) = std::cos(t / rate);
        }
    }
    return pe;
}

Mlp Mlp::create(const std::string& prefix, const std::vector<int>& dims, Activation act,
                Rng& rng) {
    if (dims.size() < 2) throw std::logic_error("Mlp::create: need at least input and output dim");
    Mlp mlp;
    mlp.dims = dims;
    mlp.hidden_act = act;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        const std::string tag = prefix + "/dense" + std::to_string(l);
        Tensor w(tag + "/w", dims[l + 1], dims[l]);
        w.value = init_fan_in(rng, dims[l + 1], dims[l], dims[l]);
        Tensor bv(tag + "/b", dims[l + 1], 1);
        bv.value = init_fan_in(rng, dims[l + 1], 1, dims[l]);
        mlp.weights.push_back(std::move(w));
        mlp.biases.push_back(std::move(bv));
    }
    return mlp;
}

int Mlp::forward(Tape& tape, int x) {
    int h = x;
    for (std::size_t l = 0; l < weights.size(); ++l) {
        h = tape.add_colvec(tape.matmul(tape.leaf(weights[l]), h), tape.leaf(biases[l]));
        if (l + 1 < weights.size()) {
            switch (hidden_act) {
                case Activation::Tanh: h = tape.tanh_(h); break;
                case Activation::Relu: h = tape.relu(h); break;
                case Activation::None: break;
            }
        }
    }
    return h;
}

std::vector<Tensor*> Mlp::params() {
    std::vector<Tensor*> out;
    for (std::size_t l = 0; l < weights.size(); ++l) {
        out.push_back(&weights[l]);
        out.push_back(&biases[l]);
    }
    return out;
}

LstmStack LstmStack::create(const std::string& prefix, int input_dim, int hidden, int layers,
                            Rng& rng) {
    if (layers < 1) throw std::logic_error("LstmStack::create: need at least one layer");
    LstmStack s;
    s.input_dim = input_dim;
    s.hidden = hidden;
    for (int l = 0; l < layers; ++l) {
        const int in = l == 0 ? input_dim : hidden;
        const std::string tag = prefix + "/lstm" + std::to_string(l);
        Tensor wx(tag + "/wx", 4 * hidden, in);
        wx.value = init_fan_in(rng, 4 * hidden, in, hidden);
        Tensor wh(tag + "/wh", 4 * hidden, hidden);
        wh.value = init_fan_in(rng, 4 * hidden, hidden, hidden);
        Tensor bv(tag + "/b", 4 * hidden, 1);
        bv.value = init_fan_in(rng, 4 * hidden, 1, hidden);
        s.wx.push_back(std::move(wx));
        s.wh.push_back(std::move(wh));
        s.b.push_back(std::move(bv));
    }
    return s;
}

std::vector<int> LstmStack::forward_all(Tape& tape, const std::vector<int>& steps) {
    if (steps.empty()) throw std::logic_error("LstmStack::forward_all: empty window");
    const Eigen::Index batch = tape.value(steps[0]).cols();
    const int layers = layer_count();

    std::vector<int> h(static_cast<std::size_t>(layers));
    std::vector<int> c(static_cast<std::size_t>(layers));
    for (int l = 0; l < layers; ++l) {
        h[static_cast<std::size_t>(l)] = tape.constant(Eigen::MatrixXd::Zero(hidden, batch));
        c[static_cast<std::size_t>(l)] = tape.constant(Eigen::MatrixXd::Zero(hidden, batch));
    }

    std::vector<int> wx_n(static_cast<std::size_t>(layers));
    std::vector<int> wh_n(static_cast<std::size_t>(layers));
    std::vector<int> b_n(static_cast<std::size_t>(layers));
    for (int l = 0; l < layers; ++l) {
        wx_n[static_cast<std::size_t>(l)] = tape.leaf(wx[static_cast<std::size_t>(l)]);
        wh_n[static_cast<std::size_t>(l)] = tape.leaf(wh[static_cast<std::size_t>(l)]);
        b_n[static_cast<std::size_t>(l)] = tape.leaf(b[static_cast<std::size_t>(l)]);
    }

    std::vector<int> out;
    out.reserve(steps.size());
    for (int x : steps) {
        int input = x;
        for (int l = 0; l < layers; ++l) {
            const std::size_t li = static_cast<std::size_t>(l);
            int gates = tape.add_colvec(
                tape.add(tape.matmul(wx_n[li], input), tape.matmul(wh_n[li], h[li])), b_n[li]);
            int gi = tape.sigmoid(tape.slice_rows(gates, 0, hidden));
            int gf = tape.sigmoid(tape.slice_rows(gates, hidden, hidden));
            int gg = tape.tanh_(tape.slice_rows(gates, 2 * hidden, hidden));
            int go = tape.sigmoid(tape.slice_rows(gates, 3 * hidden, hidden));
            c[li] = tape.add(tape.hadamard(gf, c[li]), tape.hadamard(gi, gg));
            h[li] = tape.hadamard(go, tape.tanh_(c[li]));
            input = h[li];
        }
        out.push_back(input);
    }
    return out;
}

int LstmStack::forward_last(Tape& tape, const std::vector<int>& steps) {
    return forward_all(tape, steps).back();
}

std::vector<Tensor*> LstmStack::params() {
    std::vector<Tensor*> out;
    for (std::size_t l = 0; l < wx.size(); ++l) {
        out.push_back(&wx[l]);
        out.push_back(&wh[l]);
        out.push_back(&b[l]);
    }
    return out;
}

AttentionEncoder AttentionEncoder::create(const std::string& prefix, int input_dim, int d_model,
                                          int heads, int layer_count, bool use_position_encoding,
                                          Rng& rng) {
    if (d_model % heads != 0) {
        throw std::logic_error("AttentionEncoder::create: d_model must divide evenly into heads");
    }
    AttentionEncoder enc;
    enc.input_dim = input_dim;
    enc.d_model = d_model;
    enc.heads = heads;
    enc.use_position_encoding = use_position_encoding;

    enc.embed_w = Tensor(prefix + "/embed/w", d_model, input_dim);
    enc.embed_w.value = init_fan_in(rng, d_model, input_dim, input_dim);
    enc.embed_b = Tensor(prefix + "/embed/b", d_model, 1);
    enc.embed_b.value = init_fan_in(rng, d_model, 1, input_dim);

    for (int l = 0; l < layer_count; ++l) {
        const std::string tag = prefix + "/layer" + std::to_string(l);
        Layer lay;
        auto proj = [&](const char* name, Tensor& w, Tensor& b) {
            w = Tensor(tag + "/" + name + "/w", d_model, d_model);
            w.value = init_fan_in(rng, d_model, d_model, d_model);
            b = Tensor(tag + "/" + name + "/b", d_model, 1);
            b.value = init_fan_in(rng, d_model, 1, d_model);
        };
        proj("q", lay.wq, lay.bq);
        proj("k", lay.wk, lay.bk);
        proj("v", lay.wv, lay.bv);
        proj("out", lay.wo, lay.bo);
        proj("ff1", lay.ff_w1, lay.ff_b1);
        proj("ff2", lay.ff_w2, lay.ff_b2);
        lay.ln1_g = Tensor(tag + "/ln1/g", d_model, 1);
        lay.ln1_g.value.setOnes();
        lay.ln1_b = Tensor(tag + "/ln1/b", d_model, 1);
        lay.ln2_g = Tensor(tag + "/ln2/g", d_model, 1);
        lay.ln2_g.value.setOnes();
        lay.ln2_b = Tensor(tag + "/ln2/b", d_model, 1);
        enc.layers.push_back(std::move(lay));
    }
    return enc;
}

int AttentionEncoder::forward(Tape& tape, int x) {
    const Eigen::Index window = tape.value(x).cols();
    int h = tape.add_colvec(tape.matmul(tape.leaf(embed_w), x), tape.leaf(embed_b));
    if (use_position_encoding) {
        h = tape.add(h, tape.constant(sinusoidal_position_encoding(
                            d_model, static_cast<int>(window))));
    }
    const int dh = d_model / heads;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    for (auto& lay : layers) {
        int q = tape.add_colvec(tape.matmul(tape.leaf(lay.wq), h), tape.leaf(lay.bq));
        int k = tape.add_colvec(tape.matmul(tape.leaf(lay.wk), h), tape.leaf(lay.bk));
        int v = tape.add_colvec(tape.matmul(tape.leaf(lay.wv), h), tape.leaf(lay.bv));
        std::vector<int> head_outs;
        head_outs.reserve(static_cast<std::size_t>(heads));
        for (int hi = 0; hi < heads; ++hi) {
            int qh = tape.slice_rows(q, hi * dh, dh);
            int kh = tape.slice_rows(k, hi * dh, dh);
            int vh = tape.slice_rows(v, hi * dh, dh);
            // scores(i, j) = <key_i, query_j>; softmax over keys per query column.
            int scores = tape.scale(tape.matmul(tape.transpose(kh), qh), inv_sqrt_dh);
            int attn = tape.softmax_cols(scores);
            head_outs.push_back(tape.matmul(vh, attn));
        }
        int merged = tape.add_colvec(
            tape.matmul(tape.leaf(lay.wo), tape.concat_rows(head_outs)), tape.leaf(lay.bo));
        h = tape.layernorm_cols(tape.add(h, merged), tape.leaf(lay.ln1_g), tape.leaf(lay.ln1_b));
        int ff = tape.relu(
            tape.add_colvec(tape.matmul(tape.leaf(lay.ff_w1), h), tape.leaf(lay.ff_b1)));
        ff = tape.add_colvec(tape.matmul(tape.leaf(lay.ff_w2), ff), tape.leaf(lay.ff_b2));
        h = tape.layernorm_cols(tape.add(h, ff), tape.leaf(lay.ln2_g), tape.leaf(lay.ln2_b));
    }
    return h;
}

std::vector<Tensor*> AttentionEncoder::params() {
    std::vector<Tensor*> out{&embed_w, &embed_b};
    for (auto& lay : layers) {
        for (Tensor* t : {&lay.wq, &lay.bq, &lay.wk, &lay.bk, &lay.wv, &lay.bv, &lay.wo, &lay.bo,
                          &lay.ln1_g, &lay.ln1_b, &lay.ff_w1, &lay.ff_b1, &lay.ff_w2, &lay.ff_b2,
                          &lay.ln2_g, &lay.ln2_b}) {
            out.push_back(t);
        }
    }
    return out;
}

Adam::Adam(std::vector<Tensor*> params, AdamConfig cfg) : cfg_(cfg), params_(std::move(params)) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const Tensor* t : params_) {
        m_.push_back(Eigen::MatrixXd::Zero(t->value.rows(), t->value.cols()));
        v_.push_back(Eigen::MatrixXd::Zero(t->value.rows(), t->value.cols()));
    }
}

void Adam::step() {
    ++steps_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor& t = *params_[i];
        Eigen::MatrixXd g = t.grad + cfg_.weight_decay * t.value;
        m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
        v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
        Eigen::ArrayXXd mhat = m_[i].array() / bc1;
        Eigen::ArrayXXd vhat = v_[i].array() / bc2;
        t.value.array() -= cfg_.lr * mhat / (vhat.sqrt() + cfg_.eps);
        t.grad.setZero();
    }
}

}  // namespace tha
