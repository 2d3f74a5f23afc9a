#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <vector>

namespace tha {

// Named trainable tensor. Gradients accumulate across backward passes until
// cleared by the optimizer.
struct Tensor {
    std::string name;
    Eigen::MatrixXd value;
    Eigen::MatrixXd grad;

    Tensor() = default;
    Tensor(std::string n, Eigen::Index rows, Eigen::Index cols)
        : name(std::move(n)),
          value(Eigen::MatrixXd::Zero(rows, cols)),
          grad(Eigen::MatrixXd::Zero(rows, cols)) {}

    void zero_grad() { grad.setZero(); }
};

// Reverse-mode autodiff over double-precision matrices. Nodes are created in
// topological order; backward() walks them in reverse. Matrices with spatial
// meaning (conv feature maps) are stored channels x (height*width).
class Tape {
public:
    using Mat = Eigen::MatrixXd;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    int leaf(Tensor& t);
    int constant(Mat m);

    int add(int a, int b);
    int sub(int a, int b);
    int hadamard(int a, int b);
    int matmul(int a, int b);
    int transpose(int a);
    int scale(int a, double s);
    int add_scalar(int a, double s);
    // Broadcast a column vector over every column of a.
    int add_colvec(int a, int v);

    int sigmoid(int a);
    int tanh_(int a);
    int relu(int a);
    int abs_(int a);

    int softmax_cols(int a);
    // Per-column layer normalization with learnable gain/bias column vectors.
    int layernorm_cols(int a, int gamma, int beta, double eps = 1e-5);

    int concat_rows(const std::vector<int>& nodes);
    int slice_rows(int a, int row0, int nrows);

    int sum(int a);  // 1x1

    // 3x3 convolution, zero padding 1, given stride. x is (in_ch) x (h*w),
    // w is (out_ch) x (in_ch*9), bias (out_ch) x 1.
    int conv3x3(int x, int w, int bias, int in_ch, int h, int width, int stride);
    // Nearest-neighbour x2 spatial upsampling of a (ch) x (h*w) map.
    int upsample2(int a, int h, int width);

    // Copies the value and blocks gradient flow.
    int detach(int a) { return constant(nodes_[static_cast<std::size_t>(a)].value); }

    const Mat& value(int a) const { return nodes_[static_cast<std::size_t>(a)].value; }
    Mat& grad(int a) { return nodes_[static_cast<std::size_t>(a)].grad; }

    // Seeds d(loss)/d(loss) = 1 and accumulates into every reachable leaf's
    // Tensor::grad. `loss` must be 1x1.
    void backward(int loss);

    std::size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        Mat value;
        Mat grad;
        std::function<void()> back;  // empty for constants
    };

    int push(Mat value, std::function<void()> back = {});

    std::vector<Node> nodes_;
};

}  // namespace tha
