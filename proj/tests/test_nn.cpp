#include <doctest.h>

#include <cmath>

#include "test_util.hpp"
#include "tha/nn.hpp"

using namespace tha;
using Mat = Eigen::MatrixXd;

namespace {

Mat random_mat(Rng& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
    Mat m(r, c);
    for (Eigen::Index j = 0; j < c; ++j) {
        for (Eigen::Index i = 0; i < r; ++i) m(i, j) = scale * rng.gauss();
    }
    return m;
}

}  // namespace

TEST_CASE("fan-in init is bounded and seed-reproducible") {
    Rng r1(3);
    Rng r2(3);
    Mat a = init_fan_in(r1, 10, 20, 20);
    Mat b = init_fan_in(r2, 10, 20, 20);
    CHECK(a == b);
    CHECK(a.cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(20.0));
    CHECK(a.cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("mlp with zero parameters outputs zero") {
    Rng rng(4);
    Mlp mlp = Mlp::create("m", {6, 8, 5}, Activation::Tanh, rng);
    for (Tensor* t : mlp.params()) t->value.setZero();
    Tape tape;
    int x = tape.constant(random_mat(rng, 6, 3));
    int y = mlp.forward(tape, x);
    CHECK(tape.value(y).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("mlp forward matches a hand-computed two-layer net") {
    Rng rng(5);
    Mlp mlp = Mlp::create("m", {2, 3, 1}, Activation::Tanh, rng);
    Mat x = random_mat(rng, 2, 4);
    Tape tape;
    int y = mlp.forward(tape, tape.constant(x));
    Mat h = (mlp.weights[0].value * x).colwise() + Eigen::VectorXd(mlp.biases[0].value.col(0));
    h = h.array().tanh();
    Mat expect =
        (mlp.weights[1].value * h).colwise() + Eigen::VectorXd(mlp.biases[1].value.col(0));
    CHECK((tape.value(y) - expect).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("mlp gradients match finite differences") {
    Rng rng(6);
    Mlp mlp = Mlp::create("m", {4, 6, 3}, Activation::Tanh, rng);
    Mat x = random_mat(rng, 4, 5);
    Mat w = random_mat(rng, 3, 5);
    auto loss = [&]() {
        Tape t;
        int y = mlp.forward(t, t.constant(x));
        return t.value(t.sum(t.hadamard(y, t.constant(w))))(0, 0);
    };
    auto grads = [&]() {
        for (Tensor* p : mlp.params()) p->zero_grad();
        Tape t;
        int y = mlp.forward(t, t.constant(x));
        t.backward(t.sum(t.hadamard(y, t.constant(w))));
    };
    CHECK(test::fd_max_rel_error(mlp.params(), loss, grads, 1e-5) < 1e-5);
}

TEST_CASE("lstm with zero parameters emits zero codes") {
    Rng rng(7);
    LstmStack lstm = LstmStack::create("l", 3, 4, 2, rng);
    for (Tensor* t : lstm.params()) t->value.setZero();
    Tape tape;
    std::vector<int> steps;
    for (int k = 0; k < 5; ++k) steps.push_back(tape.constant(random_mat(rng, 3, 2)));
    int h = lstm.forward_last(tape, steps);
    CHECK(tape.value(h).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("batched lstm equals per-column evaluation") {
    Rng rng(8);
    LstmStack lstm = LstmStack::create("l", 3, 4, 3, rng);
    const int steps = 6;
    const int batch = 5;
    std::vector<Mat> xs;
    for (int k = 0; k < steps; ++k) xs.push_back(random_mat(rng, 3, batch));

    Tape batched;
    std::vector<int> nodes;
    for (const Mat& m : xs) nodes.push_back(batched.constant(m));
    Mat all = batched.value(lstm.forward_last(batched, nodes));

    for (int b = 0; b < batch; ++b) {
        Tape single;
        std::vector<int> cols;
        for (const Mat& m : xs) cols.push_back(single.constant(m.col(b)));
        Mat one = single.value(lstm.forward_last(single, cols));
        CHECK((one - all.col(b)).cwiseAbs().maxCoeff() < 1e-13);
    }
}

TEST_CASE("lstm state resets between forward calls") {
    Rng rng(9);
    LstmStack lstm = LstmStack::create("l", 2, 3, 2, rng);
    Mat x = random_mat(rng, 2, 1);
    Tape t1;
    Mat a = t1.value(lstm.forward_last(t1, {t1.constant(x)}));
    Tape t2;
    t2.value(lstm.forward_last(t2, {t2.constant(x)}));
    Mat b = t2.value(lstm.forward_last(t2, {t2.constant(x)}));
    CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("lstm gradients match finite differences") {
    Rng rng(10);
    LstmStack lstm = LstmStack::create("l", 3, 4, 2, rng);
    std::vector<Mat> xs;
    for (int k = 0; k < 4; ++k) xs.push_back(random_mat(rng, 3, 2));
    Mat w = random_mat(rng, 4, 2);
    auto build = [&](Tape& t) {
        std::vector<int> nodes;
        for (const Mat& m : xs) nodes.push_back(t.constant(m));
        return t.sum(t.hadamard(lstm.forward_last(t, nodes), t.constant(w)));
    };
    auto loss = [&]() {
        Tape t;
        return t.value(build(t))(0, 0);
    };
    auto grads = [&]() {
        for (Tensor* p : lstm.params()) p->zero_grad();
        Tape t;
        t.backward(build(t));
    };
    CHECK(test::fd_max_rel_error(lstm.params(), loss, grads, 1e-5) < 1e-5);
}

TEST_CASE("sinusoidal position encoding has the standard first column") {
    Mat pe = sinusoidal_position_encoding(8, 5);
    CHECK(pe(0, 0) == doctest::Approx(0.0));
    CHECK(pe(1, 0) == doctest::Approx(1.0));
    CHECK(pe(0, 1) == doctest::Approx(std::sin(1.0)));
    CHECK(pe(1, 1) == doctest::Approx(std::cos(1.0)));
    CHECK(pe(2, 1) == doctest::Approx(std::sin(1.0 / std::pow(10000.0, 2.0 / 8.0))));
    CHECK(pe.cwiseAbs().maxCoeff() <= 1.0);
}

TEST_CASE("attention output shape and determinism") {
    Rng rng(11);
    AttentionEncoder enc = AttentionEncoder::create("a", 5, 8, 2, 2, true, rng);
    Mat x = random_mat(rng, 5, 7);
    Tape t1;
    Mat y1 = t1.value(enc.forward(t1, t1.constant(x)));
    Tape t2;
    Mat y2 = t2.value(enc.forward(t2, t2.constant(x)));
    REQUIRE(y1.rows() == 8);
    REQUIRE(y1.cols() == 7);
    CHECK((y1 - y2).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("without position encoding attention is permutation equivariant") {
    Rng rng(12);
    AttentionEncoder enc = AttentionEncoder::create("a", 4, 8, 2, 2, false, rng);
    const int window = 6;
    Mat x = random_mat(rng, 4, window);
    std::vector<int> perm{3, 0, 5, 1, 4, 2};
    Mat xp(4, window);
    for (int i = 0; i < window; ++i) xp.col(i) = x.col(perm[static_cast<std::size_t>(i)]);

    Tape t1;
    Mat y = t1.value(enc.forward(t1, t1.constant(x)));
    Tape t2;
    Mat yp = t2.value(enc.forward(t2, t2.constant(xp)));
    for (int i = 0; i < window; ++i) {
        CHECK((yp.col(i) - y.col(perm[static_cast<std::size_t>(i)])).cwiseAbs().maxCoeff() <
              1e-12);
    }
}

TEST_CASE("with position encoding permutation equivariance breaks") {
    Rng rng(13);
    AttentionEncoder enc = AttentionEncoder::create("a", 4, 8, 2, 2, true, rng);
    const int window = 5;
    Mat x = random_mat(rng, 4, window);
    Mat xr = x.rowwise().reverse();
    Tape t1;
    Mat y = t1.value(enc.forward(t1, t1.constant(x)));
    Tape t2;
    Mat yr = t2.value(enc.forward(t2, t2.constant(xr)));
    CHECK((yr.col(0) - y.col(window - 1)).cwiseAbs().maxCoeff() > 1e-6);
}

TEST_CASE("attention gradients match finite differences") {
    Rng rng(14);
    AttentionEncoder enc = AttentionEncoder::create("a", 4, 8, 2, 2, true, rng);
    Mat x = random_mat(rng, 4, 5);
    Mat w = random_mat(rng, 8, 5);
    auto loss = [&]() {
        Tape t;
        int y = enc.forward(t, t.constant(x));
        return t.value(t.sum(t.hadamard(y, t.constant(w))))(0, 0);
    };
    auto grads = [&]() {
        for (Tensor* p : enc.params()) p->zero_grad();
        Tape t;
        int y = enc.forward(t, t.constant(x));
        t.backward(t.sum(t.hadamard(y, t.constant(w))));
    };
    CHECK(test::fd_max_rel_error(enc.params(), loss, grads, 1e-5) < 1e-5);
}

TEST_CASE("head count must divide the model width") {
    Rng rng(15);
    CHECK_THROWS_AS(AttentionEncoder::create("a", 4, 9, 2, 1, true, rng), std::logic_error);
}

TEST_CASE("adam matches a hand-computed update on one parameter") {
    Tensor w("w", 1, 1);
    w.value(0, 0) = 1.0;
    AdamConfig cfg;
    cfg.lr = 0.1;
    cfg.weight_decay = 0.0;
    Adam opt({&w}, cfg);

    // Two steps with fixed gradient g = 0.5.
    double m = 0.0;
    double v = 0.0;
    double theta = 1.0;
    for (int step = 1; step <= 2; ++step) {
        w.grad(0, 0) = 0.5;
        opt.step();
        const double g = 0.5;
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        double mhat = m / (1.0 - std::pow(0.9, step));
        double vhat = v / (1.0 - std::pow(0.999, step));
        theta -= 0.1 * mhat / (std::sqrt(vhat) + 1e-8);
        CHECK(w.value(0, 0) == doctest::Approx(theta).epsilon(1e-10));
    }
}

TEST_CASE("adam weight decay adds the L2 pull") {
    Tensor w("w", 1, 1);
    w.value(0, 0) = 2.0;
    AdamConfig cfg;
    cfg.lr = 0.01;
    cfg.weight_decay = 0.1;
    Adam opt({&w}, cfg);
    w.grad(0, 0) = 0.0;
    opt.step();
    // g = 0 + 0.1 * 2.0 = 0.2; first step moves against sign(g).
    const double g = 0.2;
    double mhat = 0.1 * g / (1.0 - 0.9);
    double vhat = 0.001 * g * g / (1.0 - 0.999);
    double expect = 2.0 - 0.01 * mhat / (std::sqrt(vhat) + 1e-8);
    CHECK(w.value(0, 0) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("adam clears gradients after stepping") {
    Rng rng(16);
    Tensor w("w", 2, 2);
    w.value = random_mat(rng, 2, 2);
    Adam opt({&w}, AdamConfig{});
    w.grad.setConstant(1.0);
    opt.step();
    CHECK(w.grad.cwiseAbs().maxCoeff() == 0.0);
    CHECK(opt.step_count() == 1);
}
