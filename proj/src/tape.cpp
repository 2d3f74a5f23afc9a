#include "tha/tape.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>

namespace tha {

namespace {

void check_same_shape(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw std::logic_error(std::string(op) + ": shape mismatch " +
                               std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " vs " +
                               std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
    }
}

}  // namespace

int Tape::push(Mat value, std::function<void()> back) {
    Node n;
    n.grad = Mat::Zero(value.rows(), value.cols());
    n.value = std::move(value);
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

int Tape::leaf(Tensor& t) {
    Tensor* tp = &t;
    int id = push(t.value);
    nodes_[static_cast<std::size_t>(id)].back = [this, id, tp] {
        tp->grad += nodes_[static_cast<std::size_t>(id)].grad;
    };
    return id;
}

int Tape::constant(Mat m) { return push(std::move(m)); }

int Tape::add(int a, int b) {
    auto& na = nodes_[static_cast<std::size_t>(a)];
    auto& nb = nodes_[static_cast<std::size_t>(b)];
    check_same_shape(na.value, nb.value, "add");
    int id = push(na.value + nb.value);
    nodes_[static_cast<std::size_t>(id)].back = [this, id, a, b] {
        const Mat& g = nodes_[static_cast<std::size_t>(id)].grad;
        nodes_[static_cast<std::size_t>(a)].grad += g;
        nodes_[static_cast<std::size_t>(b)].grad += g;
    };
    return id;
}

int Tape::sub(int a, int b) {
    auto& na = nodes_[static_cast<std::size_t>(a)];
    auto& nb = nodes_[static_cast<std::size_t>(b)];
    check_same_shape(na.value, nb.value, "sub");
    int id = push(na.value - nb.value);
    nodes_[static_cast<std::size_t>(id)].back = [this, id, a, b] {
        const Mat& g = nodes_[static_cast<std::size_t>(id)].grad;
        nodes_[static_cast<std::size_t>(a)].grad += g;
        nodes_[static_cast<std::size_t>(b)].grad -= g;
    };
    return id;
}

int Tape::hadamard(int a, int b) {
    auto& na = nodes_[static_cast<std::size_t>(a)];
    auto& nb = nodes_[static_cast<std::size_t>(b)];
    check_same_shape(na.value, nb.value, "hadamard");
    int id = push(na.value.cwiseProduct(nb.value));
    nodes_[static_cast<std::size_t>(id)].back = [this, id, a, b] {
        const Mat& g = nodes_[static_cast<std::size_t>(id)].grad;
        nodes_[static_cast<std::size_t>(a)].grad +=
            g.cwiseProduct(nodes_[static_cast<std::size_t>(b)].value);
        nodes_[static_cast<std::size_t>(b)].grad +=
            g.cwiseProduct(nodes_[static_cast<std::size_t>(a)].value);
    };
    return id;
}

int Tape::matmul(int a, int b) {
    auto& na = nodes_[static_cast<std::size_t>(a)];
    auto& nb = nodes_[static_cast<std::size_t>(b)];
    if (na.value.cols() != nb.value.rows()) {
        throw std::logic_error("matmul: inner dimensions disagree: " +
                               std::to_string(na.value.cols()) + " vs " +
                               std::to_string(nb.value.rows()));
    }
    int id = push(na.value * nb.value);
    nodes_[static_cast<std::size_t>(id)].back = [this, id, a, b] {
        const Mat& g = nodes_[static_cast<std::size_t>(id)].grad;
        nodes_[static_cast<std::size_t>(a)].grad +=
            g * nodes_[static_cast<std::size_t>(b)].value.transpose();
        nodes_[static_cast<std::size_t>(b)].grad +=
            nodes_[static_cast<std::size_t>(a)].value.transpose() * g;
    };
    return id;
}

int Tape::transpose(int a) {
    int id = push(nodes_[static_cast<std::size_t>(a)].value.transpose());
    nodes_[static_cast<std::size_t>(id)].back = [this, id, a] {
        nodes_[static_cast<std::size_t>(a)].grad +=
            nodes_[static_cast<std::size_t>(id)].grad.transpose();
    };
    return id;
}

int Tape::scale(int a, double s) {
    int id = push(nodes_[static_cast<std::size_t>(a)].value * s);
    nodes_[static_cast<std::size_t>(id)].back = [this, id, a, s] {
        nodes_[static_cast<std::size_t>(a)].grad +=
            nodes_[static_cast<std::size_t>(id)].grad * s;
    };
    return id;
}

int Tape::add_scalar(int a, double s) {
    int id = push(nodes_[static_cast<std::size_t>(a)].value.array() + s);
    nodes_[static_cast<std::size_t>(id)].back = [this, id, a] {
        nodes_[static_cast<std::size_t>(a)].grad += nodes_[static_cast<std::size_t>(id)].grad;
    };
    return id;
}

int Tape::add_colvec(int a, int v) {
    auto& na = nodes_[static_cast<std::size_t>(a)];
    auto& nv = nodes_[static_cast<std::size_t>(v)];
    if (nv.value.cols() != 1 || nv.value.rows() != na.value.rows()) {
        throw std::logic_error("add_colvec: vector shape mismatch");
    }
    int id = push(na.value.colwise() + Eigen::VectorXd(nv.value.col(0)));
    nodes_[static_cast<std::size_t>(id)].back = [this, id, a, v] {
        const Mat& g = nodes_[static_cast<std::size_t>(id)].grad;
        nodes_[static_cast<std::size_t>(a)].grad += g;
        nodes_[static_cast<std::size_t>(v)].grad += g.rowwise().sum();
    };
    return id;
}

int Tape::sigmoid(int a) {
    Mat y = nodes_[static_cast<std::size_t>(a)].value.unaryExpr(
        [](double x) { return 1.0 / (1.0 + std::exp(-x)); });
    int id = push(std::move(y));
    nodes_[static_cast<std::size_t>(id)].back = [this, id, a] {
        const Mat& y = nodes_[static_cast<std::size_t>(id)].value;
        nodes_[static_cast<std::size_t>(a)].grad +=
            nodes_[static_cast<std::size_t>(id)].grad.cwiseProduct(
                y.cwiseProduct(Mat::Ones(y.rows(), y.cols()) - y));
    };
    return id;
}

int Tape::tanh_(int a) {
    Mat y = nodes_[static_cast<std::size_t>(a)].value.array().tanh();
    int id = push(std::move(y));
    nodes_[static_cast<std::size_t>(id)].back = [this, id, a] {
        const Mat& y = nodes_[static_cast<std::size_t>(id)].value;
        nodes_[static_cast<std::size_t>(a)].grad +=
            nodes_[static_cast<std::size_t>(id)].grad.cwiseProduct(
                (1.0 - y.array().square()).matrix());
    };
    return id;
}

int Tape::relu(int a) {
    Mat y = nodes_[static_cast<std::size_t>(a)].value.cwiseMax(0.0);
    int id = push(std::move(y));
    nodes_[static_cast<std::size_t>(id)].back = [this, id, a] {
        const Mat& x = nodes_[static_cast<std::size_t>(a)].value;
        nodes_[static_cast<std::size_t>(a)].grad +=
            nodes_[static_cast<std::size_t>(id)].grad.cwiseProduct(
                (x.array() > 0.0).cast<double>().matrix());
    };
    return id;
}

int Tape::abs_(int a) {
    Mat y = nodes_[static_cast<std::size_t>(a)].value.cwiseAbs();
    int id = push(std::move(y));
    nodes_[static_cast<std::size_t>(id)].back = [this, id, a] {
        const Mat& x = nodes_[static_cast<std::size_t>(a)].value;
        nodes_[static_cast<std::size_t>(a)].grad +=
            nodes_[static_cast<std::size_t>(id)].grad.cwiseProduct(
                x.unaryExpr([](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }));
    };
    return id;
}

int Tape::softmax_cols(int a) {
    const Mat& x = nodes_[static_cast<std::size_t>(a)].value;
    Mat y(x.rows(), x.cols());
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
        Eigen::ArrayXd e = (x.col(c).array() - x.col(c).maxCoeff()).exp();
        y.col(c) = e / e.sum();
    }
    int id = push(std::move(y));
    nodes_[static_cast<std::size_t>(id)].back = [this, id, a] {
        const Mat& y = nodes_[static_cast<std::size_t>(id)].value;
        const Mat& g = nodes_[static_cast<std::size_t>(id)].grad;
        Mat& ga = nodes_[static_cast<std::size_t>(a)].grad;
        for (Eigen::Index c = 0; c < y.cols(); ++c) {
            double dot = y.col(c).dot(g.col(c));
            ga.col(c) += y.col(c).cwiseProduct(g.col(c) - Mat::Constant(y.rows(), 1, dot));
        }
    };
    return id;
}

int Tape::layernorm_cols(int a, int gamma, int beta, double eps) {
    const Mat& x = nodes_[static_cast<std::size_t>(a)].value;
    const Mat& gm = nodes_[static_cast<std::size_t>(gamma)].value;
    const Mat& bt = nodes_[static_cast<std::size_t>(beta)].value;
    if (gm.cols() != 1 || bt.cols() != 1 || gm.rows() != x.rows() || bt.rows() != x.rows()) {
        throw std::logic_error("layernorm_cols: gain/bias must be column vectors matching rows");
    }
    const double n = static_cast<double>(x.rows());
    Mat xhat(x.rows(), x.cols());
    Eigen::VectorXd inv_std(x.cols());
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
        double mu = x.col(c).mean();
        double var = (x.col(c).array() - mu).square().sum() / n;
        inv_std(c) = 1.0 / std::sqrt(var + eps);
        xhat.col(c) = (x.col(c).array() - mu) * inv_std(c);
    }
    Mat y = (xhat.array().colwise() * gm.col(0).array()).colwise() + bt.col(0).array();
    int id = push(std::move(y));
    auto xhat_p = std::make_shared<Mat>(std::move(xhat));
    auto inv_p = std::make_shared<Eigen::VectorXd>(std::move(inv_std));
    nodes_[static_cast<std::size_t>(id)].back = [this, id, a, gamma, beta, n, xhat_p, inv_p] {
        const Mat& g = nodes_[static_cast<std::size_t>(id)].grad;
        const Mat& gm = nodes_[static_cast<std::size_t>(gamma)].value;
        Mat& ga = nodes_[static_cast<std::size_t>(a)].grad;
        Mat& gg = nodes_[static_cast<std::size_t>(gamma)].grad;
        Mat& gb = nodes_[static_cast<std::size_t>(beta)].grad;
        gg += g.cwiseProduct(*xhat_p).rowwise().sum();
        gb += g.rowwise().sum();
        for (Eigen::Index c = 0; c < g.cols(); ++c) {
            Eigen::VectorXd dxhat = g.col(c).cwiseProduct(gm.col(0));
            double s1 = dxhat.sum();
            double s2 = dxhat.dot(xhat_p->col(c));
            ga.col(c) += (*inv_p)(c) / n *
                         (n * dxhat.array() - s1 - xhat_p->col(c).array() * s2).matrix();
        }
    };
    return id;
}

int Tape::concat_rows(const std::vector<int>& parts) {
    if (parts.empty()) throw std::logic_error("concat_rows: no inputs");
    Eigen::Index cols = nodes_[static_cast<std::size_t>(parts[0])].value.cols();
    Eigen::Index rows = 0;
    for (int p : parts) {
        const Mat& v = nodes_[static_cast<std::size_t>(p)].value;
        if (v.cols() != cols) throw std::logic_error("concat_rows: column count mismatch");
        rows += v.rows();
    }
    Mat y(rows, cols);
    Eigen::Index r = 0;
    for (int p : parts) {
        const Mat& v = nodes_[static_cast<std::size_t>(p)].value;
        y.middleRows(r, v.rows()) = v;
        r += v.rows();
    }
    int id = push(std::move(y));
    std::vector<int> ps = parts;
    nodes_[static_cast<std::size_t>(id)].back = [this, id, ps] {
        const Mat& g = nodes_[static_cast<std::size_t>(id)].grad;
        Eigen::Index r = 0;
        for (int p : ps) {
            Mat& gp = nodes_[static_cast<std::size_t>(p)].grad;
            gp += g.middleRows(r, gp.rows());
            r += gp.rows();
        }
    };
    return id;
}

int Tape::slice_rows(int a, int row0, int nrows) {
    const Mat& x = nodes_[static_cast<std::size_t>(a)].value;
    if (row0 < 0 || nrows < 0 || row0 + nrows > x.rows()) {
        throw std::logic_error("slice_rows: range out of bounds");
    }
    int id = push(x.middleRows(row0, nrows));
    nodes_[static_cast<std::size_t>(id)].back = [this, id, a, row0, nrows] {
        nodes_[static_cast<std::size_t>(a)].grad.middleRows(row0, nrows) +=
            nodes_[static_cast<std::size_t>(id)].grad;
    };
    return id;
}

int Tape::sum(int a) {
    int id = push(Mat::Constant(1, 1, nodes_[static_cast<std::size_t>(a)].value.sum()));
    nodes_[static_cast<std::size_t>(id)].back = [this, id, a] {
        Mat& ga = nodes_[static_cast<std::size_t>(a)].grad;
        ga.array() += nodes_[static_cast<std::size_t>(id)].grad(0, 0);
    };
    return id;
}

namespace {

// Gathers 3x3 zero-padded patches: output (in_ch*9) x (ho*wo), patch rows
// ordered channel-major then kernel row-major.
Eigen::MatrixXd im2col3(const Eigen::MatrixXd& x, int in_ch, int h, int w, int stride) {
    const int ho = (h - 1) / stride + 1;
    const int wo = (w - 1) / stride + 1;
    Eigen::MatrixXd cols = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(in_ch) * 9,
                                                 static_cast<Eigen::Index>(ho) * wo);
    for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox) {
            const Eigen::Index col = static_cast<Eigen::Index>(oy) * wo + ox;
            for (int ky = 0; ky < 3; ++ky) {
                const int iy = oy * stride + ky - 1;
                if (iy < 0 || iy >= h) continue;
                for (int kx = 0; kx < 3; ++kx) {
                    const int ix = ox * stride + kx - 1;
                    if (ix < 0 || ix >= w) continue;
                    const Eigen::Index src = static_cast<Eigen::Index>(iy) * w + ix;
                    for (int c = 0; c < in_ch; ++c) {
                        cols(static_cast<Eigen::Index>(c) * 9 + ky * 3 + kx, col) = x(c, src);
                    }
                }
            }
        }
    }
    return cols;
}

void col2im3_add(Eigen::MatrixXd& gx, const Eigen::MatrixXd& gcols, int in_ch, int h, int w,
                 int stride) {
    const int ho = (h - 1) / stride + 1;
    const int wo = (w - 1) / stride + 1;
    for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox) {
            const Eigen::Index col = static_cast<Eigen::Index>(oy) * wo + ox;
            for (int ky = 0; ky < 3; ++ky) {
                const int iy = oy * stride + ky - 1;
                if (iy < 0 || iy >= h) continue;
                for (int kx = 0; kx < 3; ++kx) {
                    const int ix = ox * stride + kx - 1;
                    if (ix < 0 || ix >= w) continue;
                    const Eigen::Index src = static_cast<Eigen::Index>(iy) * w + ix;
                    for (int c = 0; c < in_ch; ++c) {
                        gx(c, src) += gcols(static_cast<Eigen::Index>(c) * 9 + ky * 3 + kx, col);
                    }
                }
            }
        }
    }
}

}  // namespace

int Tape::conv3x3(int x, int w, int bias, int in_ch, int h, int width, int stride) {
    const Mat& xv = nodes_[static_cast<std::size_t>(x)].value;
    const Mat& wv = nodes_[static_cast<std::size_t>(w)].value;
    const Mat& bv = nodes_[static_cast<std::size_t>(bias)].value;
    if (xv.rows() != in_ch || xv.cols() != static_cast<Eigen::Index>(h) * width) {
        throw std::logic_error("conv3x3: input shape does not match channel/extent arguments");
    }
    if (wv.cols() != static_cast<Eigen::Index>(in_ch) * 9 || bv.rows() != wv.rows() ||
        bv.cols() != 1) {
        throw std::logic_error("conv3x3: weight/bias shape mismatch");
    }
    if (stride != 1 && stride != 2) throw std::logic_error("conv3x3: stride must be 1 or 2");
    Mat cols = im2col3(xv, in_ch, h, width, stride);
    Mat y = (wv * cols).colwise() + Eigen::VectorXd(bv.col(0));
    int id = push(std::move(y));
    nodes_[static_cast<std::size_t>(id)].back = [this, id, x, w, bias, in_ch, h, width, stride] {
        const Mat& g = nodes_[static_cast<std::size_t>(id)].grad;
        const Mat& xv = nodes_[static_cast<std::size_t>(x)].value;
        const Mat& wv = nodes_[static_cast<std::size_t>(w)].value;
        Mat cols = im2col3(xv, in_ch, h, width, stride);
        nodes_[static_cast<std::size_t>(w)].grad += g * cols.transpose();
        nodes_[static_cast<std::size_t>(bias)].grad += g.rowwise().sum();
        Mat gcols = wv.transpose() * g;
        col2im3_add(nodes_[static_cast<std::size_t>(x)].grad, gcols, in_ch, h, width, stride);
    };
    return id;
}

int Tape::upsample2(int a, int h, int width) {
    const Mat& x = nodes_[static_cast<std::size_t>(a)].value;
    if (x.cols() != static_cast<Eigen::Index>(h) * width) {
        throw std::logic_error("upsample2: input extent mismatch");
    }
    const int h2 = h * 2;
    const int w2 = width * 2;
    Mat y(x.rows(), static_cast<Eigen::Index>(h2) * w2);
    for (int oy = 0; oy < h2; ++oy) {
        for (int ox = 0; ox < w2; ++ox) {
            y.col(static_cast<Eigen::Index>(oy) * w2 + ox) =
                x.col(static_cast<Eigen::Index>(oy / 2) * width + ox / 2);
        }
    }
    int id = push(std::move(y));
    nodes_[static_cast<std::size_t>(id)].back = [this, id, a, h, width, h2, w2] {
        const Mat& g = nodes_[static_cast<std::size_t>(id)].grad;
        Mat& ga = nodes_[static_cast<std::size_t>(a)].grad;
        for (int oy = 0; oy < h2; ++oy) {
            for (int ox = 0; ox < w2; ++ox) {
                ga.col(static_cast<Eigen::Index>(oy / 2) * width + ox / 2) +=
                    g.col(static_cast<Eigen::Index>(oy) * w2 + ox);
            }
        }
    };
    return id;
}

void Tape::backward(int loss) {
    Node& ln = nodes_[static_cast<std::size_t>(loss)];
    if (ln.value.rows() != 1 || ln.value.cols() != 1) {
        throw std::logic_error("backward: loss node must be 1x1");
    }
    ln.grad(0, 0) = 1.0;
    for (int i = loss; i >= 0; --i) {
        Node& n = nodes_[static_cast<std::size_t>(i)];
        if (n.back && n.grad.array().abs().sum() != 0.0) n.back();
    }
}

}  // namespace tha
