#include "tha/image_translation.hpp"

#include <algorithm>
#include <cmath>

#include "tha/errors.hpp"
#include "tha/geometry.hpp"

namespace tha {

namespace {

constexpr std::uint64_t kInitStream = 0x11;
constexpr std::uint64_t kStepStreamBase = 0x1000000;

void plot(Image& img, int x, int y, const std::array<std::uint8_t, 3>& rgb) {
    if (x < 0 || x >= img.width || y < 0 || y >= img.height) return;
    for (int c = 0; c < 3; ++c) img.at(x, y, c) = rgb[c];
}

void draw_segment(Image& img, const Eigen::Vector2d& a, const Eigen::Vector2d& b,
                  const std::array<std::uint8_t, 3>& rgb) {
    const double len = std::max(std::abs(b.x() - a.x()), std::abs(b.y() - a.y()));
    const int steps = std::max(1, int(std::ceil(2.0 * len)));
    for (int s = 0; s <= steps; ++s) {
        const double t = double(s) / steps;
        const Eigen::Vector2d p = (1.0 - t) * a + t * b;
        plot(img, int(std::floor(p.x())), int(std::floor(p.y())), rgb);
    }
}

}  // namespace

const std::array<std::array<std::uint8_t, 3>, 8>& part_palette() {
    static const std::array<std::array<std::uint8_t, 3>, 8> palette{{
        {0, 255, 0},      // jaw
        {255, 128, 0},    // right brow
        {255, 200, 0},    // left brow
        {0, 200, 255},    // nose
        {255, 0, 0},      // right eye
        {255, 0, 255},    // left eye
        {0, 64, 255},     // outer lip
        {255, 255, 0},    // inner lip
    }};
    return palette;
}

Image rasterize_landmarks(const Eigen::MatrixX2d& points, int size) {
    if (points.rows() != kNumLandmarks)
        throw ValidationError("rasterize_landmarks expects 68 points");
    if (!points.allFinite()) throw ValidationError("landmark raster input not finite");
    if (size <= 0) throw ValidationError("raster size must be positive");

    Image img(size, size, 0);
    const PartTopology& topo = default_topology();
    for (int p = 0; p < kNumFaceParts; ++p) {
        const auto& part = topo.parts[std::size_t(p)];
        const auto& rgb = part_palette()[std::size_t(p)];
        const int n = int(part.indices.size());
        const int segs = part.closed ? n : n - 1;
        for (int s = 0; s < segs; ++s) {
            const int i = part.indices[std::size_t(s)];
            const int j = part.indices[std::size_t((s + 1) % n)];
            draw_segment(img, points.row(i).transpose(), points.row(j).transpose(), rgb);
        }
    }
    return img;
}

Eigen::MatrixXd image_to_planes(const Image& img) {
    img.validate();
    const Eigen::Index n = Eigen::Index(img.width) * img.height;
    Eigen::MatrixXd planes(3, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (int c = 0; c < 3; ++c)
            planes(c, i) = double(img.pixels[std::size_t(3 * i + c)]) / 127.5 - 1.0;
    return planes;
}

Image planes_to_image(const Eigen::MatrixXd& planes, int width, int height) {
    if (planes.rows() != 3 || planes.cols() != Eigen::Index(width) * height)
        throw ValidationError("plane matrix does not match image dimensions");
    Image img(width, height);
    for (Eigen::Index i = 0; i < planes.cols(); ++i)
        for (int c = 0; c < 3; ++c) {
            const double v = (std::clamp(planes(c, i), -1.0, 1.0) + 1.0) * 127.5;
            img.pixels[std::size_t(3 * i + c)] = std::uint8_t(std::lround(v));
        }
    return img;
}

void I2iConfig::validate() const {
    if (resolution <= 0 || resolution % 64 != 0)
        throw ConfigError("i2i resolution must be a positive multiple of 64");
    if (base_width <= 0) throw ConfigError("i2i base width must be positive");
    if (lambda_a < 0.0 || !std::isfinite(lambda_a))
        throw ConfigError("i2i perceptual weight must be finite and nonnegative");
}

std::array<int, 6> I2iConfig::widths() const {
    return {base_width, 2 * base_width, 4 * base_width,
            8 * base_width, 8 * base_width, 8 * base_width};
}

namespace {

ConvLayer make_conv(const std::string& name, int out_ch, int in_ch, Rng& rng) {
    ConvLayer layer;
    layer.w = Tensor(name + "/w", out_ch, in_ch * 9);
    layer.w.value = init_fan_in(rng, out_ch, in_ch * 9, in_ch * 9);
    layer.b = Tensor(name + "/b", out_ch, 1);
    return layer;
}

ResidualBlock make_res(const std::string& name, int ch, Rng& rng) {
    return {make_conv(name + "/conv1", ch, ch, rng), make_conv(name + "/conv2", ch, ch, rng)};
}

void collect(std::vector<Tensor*>& out, I2iStage& stage) {
    for (ConvLayer* c : {&stage.conv, &stage.r1.c1, &stage.r1.c2, &stage.r2.c1, &stage.r2.c2}) {
        out.push_back(&c->w);
        out.push_back(&c->b);
    }
}

int res_node(Tape& tape, ResidualBlock& rb, int x, int ch, int ext) {
    int a = tape.relu(x);
    a = tape.conv3x3(a, tape.leaf(rb.c1.w), tape.leaf(rb.c1.b), ch, ext, ext, 1);
    a = tape.relu(a);
    a = tape.conv3x3(a, tape.leaf(rb.c2.w), tape.leaf(rb.c2.b), ch, ext, ext, 1);
    return tape.add(x, a);
}

}  // namespace

I2iParams I2iParams::create(const I2iConfig& cfg, Rng& rng) {
    cfg.validate();
    I2iParams p;
    p.cfg = cfg;
    const std::array<int, 6> w = cfg.widths();
    int in_ch = 6;
    for (int i = 0; i < 6; ++i) {
        const std::string base = "i2i/down" + std::to_string(i);
        p.down[std::size_t(i)].conv = make_conv(base + "/conv", w[std::size_t(i)], in_ch, rng);
        p.down[std::size_t(i)].r1 = make_res(base + "/res0", w[std::size_t(i)], rng);
        p.down[std::size_t(i)].r2 = make_res(base + "/res1", w[std::size_t(i)], rng);
        in_ch = w[std::size_t(i)];
    }
    // Up-stage output channels mirror the encoder; the last maps to RGB.
    const std::array<int, 6> up_out{w[4], w[3], w[2], w[1], w[0], 3};
    int cur = w[5];
    for (int k = 0; k < 6; ++k) {
        const int skip = k == 0 ? 0 : w[std::size_t(5 - k)];
        const std::string base = "i2i/up" + std::to_string(k);
        p.up[std::size_t(k)].conv =
            make_conv(base + "/conv", up_out[std::size_t(k)], cur + skip, rng);
        p.up[std::size_t(k)].r1 = make_res(base + "/res0", up_out[std::size_t(k)], rng);
        p.up[std::size_t(k)].r2 = make_res(base + "/res1", up_out[std::size_t(k)], rng);
        cur = up_out[std::size_t(k)];
    }
    return p;
}

std::vector<Tensor*> I2iParams::params() {
    std::vector<Tensor*> out;
    for (auto& s : down) collect(out, s);
    for (auto& s : up) collect(out, s);
    return out;
}

int i2i_forward_node(Tape& tape, I2iParams& params, int input) {
    params.cfg.validate();
    const int res = params.cfg.resolution;
    const std::array<int, 6> w = params.cfg.widths();
    if (tape.value(input).rows() != 6 ||
        tape.value(input).cols() != Eigen::Index(res) * res)
        throw ValidationError("i2i input must be 6 channels at the configured resolution");

    std::array<int, 6> enc{};
    int cur = input;
    int ext = res;
    int in_ch = 6;
    for (int i = 0; i < 6; ++i) {
        I2iStage& st = params.down[std::size_t(i)];
        cur = tape.conv3x3(cur, tape.leaf(st.conv.w), tape.leaf(st.conv.b), in_ch, ext, ext, 2);
        ext /= 2;
        cur = res_node(tape, st.r1, cur, w[std::size_t(i)], ext);
        cur = res_node(tape, st.r2, cur, w[std::size_t(i)], ext);
        enc[std::size_t(i)] = cur;
        in_ch = w[std::size_t(i)];
    }

    const std::array<int, 6> up_out{w[4], w[3], w[2], w[1], w[0], 3};
    int cur_ch = w[5];
    for (int k = 0; k < 6; ++k) {
        I2iStage& st = params.up[std::size_t(k)];
        int x = cur;
        int ic = cur_ch;
        if (k > 0) {
            x = tape.concat_rows({cur, enc[std::size_t(5 - k)]});
            ic += w[std::size_t(5 - k)];
        }
        x = tape.upsample2(x, ext, ext);
        ext *= 2;
        x = tape.conv3x3(x, tape.leaf(st.conv.w), tape.leaf(st.conv.b), ic, ext, ext, 1);
        x = res_node(tape, st.r1, x, up_out[std::size_t(k)], ext);
        cur = res_node(tape, st.r2, x, up_out[std::size_t(k)], ext);
        cur_ch = up_out[std::size_t(k)];
    }
    return tape.tanh_(cur);
}

Eigen::MatrixXd i2i_forward(I2iParams& params, const Eigen::MatrixXd& input) {
    Tape tape;
    return tape.value(i2i_forward_node(tape, params, tape.constant(input)));
}

PerceptualExtractor PerceptualExtractor::identity() { return {}; }

PerceptualExtractor PerceptualExtractor::create(int width, int depth, Rng& rng) {
    if (width <= 0 || depth < 0) throw ConfigError("perceptual extractor needs width > 0, depth >= 0");
    PerceptualExtractor phi;
    phi.width = width;
    phi.depth = depth;
    int in_ch = 3;
    for (int d = 0; d < depth; ++d) {
        phi.w.push_back(init_fan_in(rng, width, in_ch * 9, in_ch * 9));
        phi.b.push_back(Eigen::VectorXd::Zero(width));
        in_ch = width;
    }
    return phi;
}

namespace {

// Activation nodes of every extractor layer plus their element counts.
std::vector<std::pair<int, Eigen::Index>> phi_nodes(Tape& tape, const PerceptualExtractor& phi,
                                                    int x, int res) {
    std::vector<std::pair<int, Eigen::Index>> acts;
    int cur = x;
    int ext = res;
    int in_ch = 3;
    for (int d = 0; d < phi.depth; ++d) {
        if (ext % 2 != 0) throw ValidationError("perceptual extractor ran out of resolution");
        const int wn = tape.constant(phi.w[std::size_t(d)]);
        const int bn = tape.constant(phi.b[std::size_t(d)]);
        cur = tape.relu(tape.conv3x3(cur, wn, bn, in_ch, ext, ext, 2));
        ext /= 2;
        in_ch = phi.width;
        acts.emplace_back(cur, tape.value(cur).size());
    }
    return acts;
}

}  // namespace

int i2i_loss_node(Tape& tape, int out, const Eigen::MatrixXd& target,
                  const PerceptualExtractor& phi, double lambda_a, int resolution) {
    const Eigen::Index n = Eigen::Index(resolution) * resolution;
    if (tape.value(out).rows() != 3 || tape.value(out).cols() != n)
        throw ValidationError("i2i output must be 3 channels at the stated resolution");
    if (target.rows() != 3 || target.cols() != n)
        throw ValidationError("i2i target must be 3 channels at the stated resolution");

    const int tgt = tape.constant(target);
    int loss = tape.scale(tape.sum(tape.abs_(tape.sub(out, tgt))), 1.0 / double(target.size()));
    if (lambda_a == 0.0) return loss;

    if (phi.depth == 0) {  // identity features: the perceptual term is the pixel term
        return tape.scale(loss, 1.0 + lambda_a);
    }
    const auto fo = phi_nodes(tape, phi, out, resolution);
    const auto ft = phi_nodes(tape, phi, tgt, resolution);
    Eigen::Index count = 0;
    int acc = -1;
    for (std::size_t d = 0; d < fo.size(); ++d) {
        const int diff = tape.sum(tape.abs_(tape.sub(fo[d].first, ft[d].first)));
        acc = acc < 0 ? diff : tape.add(acc, diff);
        count += fo[d].second;
    }
    return tape.add(loss, tape.scale(acc, lambda_a / double(count)));
}

double i2i_loss(const Eigen::MatrixXd& out, const Eigen::MatrixXd& target,
                const PerceptualExtractor& phi, double lambda_a, int resolution) {
    Tape tape;
    return tape.value(i2i_loss_node(tape, tape.constant(out), target, phi, lambda_a, resolution))(
        0, 0);
}

I2iTrainResult train_i2i(const std::vector<I2iPair>& pairs, const I2iConfig& icfg,
                         const TrainConfig& tcfg, const PerceptualExtractor& phi) {
    icfg.validate();
    tcfg.validate();
    if (pairs.empty()) throw ValidationError("i2i training needs at least one pair");
    const Eigen::Index n = Eigen::Index(icfg.resolution) * icfg.resolution;
    for (const I2iPair& p : pairs) {
        if (p.input.rows() != 6 || p.input.cols() != n || p.target.rows() != 3 ||
            p.target.cols() != n)
            throw ValidationError("i2i pair shape does not match the configured resolution");
    }

    Rng base(tcfg.seed);
    Rng init = base.fork(kInitStream);
    I2iTrainResult result{I2iParams::create(icfg, init), {}, 0.0, {}};
    Adam opt(result.params.params(), tcfg.adam());

    const int total = int(pairs.size());
    const int batch = std::min(tcfg.batch_size, total);
    for (int step = 0; step < tcfg.max_steps; ++step) {
        Rng srng = base.fork(kStepStreamBase + std::uint64_t(step));
        std::vector<int> chosen(static_cast<std::size_t>(batch));
        for (int b = 0; b < batch; ++b)
            chosen[std::size_t(b)] = total <= tcfg.batch_size ? b : int(srng.below(total));

        Tape tape;
        int loss = -1;
        for (const int idx : chosen) {
            const int out =
                i2i_forward_node(tape, result.params, tape.constant(pairs[std::size_t(idx)].input));
            const int l = i2i_loss_node(tape, out, pairs[std::size_t(idx)].target, phi,
                                        icfg.lambda_a, icfg.resolution);
            loss = loss < 0 ? l : tape.add(loss, l);
        }
        loss = tape.scale(loss, 1.0 / double(batch));
        const double value = tape.value(loss)(0, 0);
        if (!std::isfinite(value)) throw TrainingError("i2i training diverged");
        result.curve.push_back(value);
        tape.backward(loss);
        opt.step();
    }

    double mae = 0.0;
    for (const I2iPair& p : pairs) {
        const Eigen::MatrixXd out = i2i_forward(result.params, p.input);
        mae += (out - p.target).array().abs().mean();
    }
    result.final_mae = mae / double(total);

    Checkpoint& ckpt = result.checkpoint;
    ckpt.manifest["kind"] = "i2i";
    ckpt.manifest["i2i_config"] = i2i_config_json(icfg);
    ckpt.manifest["train_config"] = tcfg.to_json();
    ckpt.manifest["residual_block"] = "pre-activation";
    ckpt.manifest["steps"] = tcfg.max_steps;
    ckpt.manifest["final_mae"] = result.final_mae;
    store_params(ckpt, result.params.params());
    store_adam(ckpt, opt, "adam");
    return result;
}

nlohmann::json i2i_config_json(const I2iConfig& cfg) {
    return {{"resolution", cfg.resolution},
            {"base_width", cfg.base_width},
            {"lambda_a", cfg.lambda_a}};
}

I2iConfig i2i_config_from_json(const nlohmann::json& j) {
    I2iConfig cfg;
    cfg.resolution = j.at("resolution").get<int>();
    cfg.base_width = j.at("base_width").get<int>();
    cfg.lambda_a = j.at("lambda_a").get<double>();
    cfg.validate();
    return cfg;
}

}  // namespace tha
