#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <vector>

#include "tha/checkpoint.hpp"
#include "tha/nn.hpp"
#include "tha/png_io.hpp"
#include "tha/rng.hpp"
#include "tha/tape.hpp"
#include "tha/training.hpp"

namespace tha {

// Fixed RGB colors for the 8 facial parts (jaw, brows, nose, eyes, lips), in
// PartTopology order.
const std::array<std::array<std::uint8_t, 3>, 8>& part_palette();

// Draws every part's polyline (loops closed back to their first landmark)
// onto a black size x size canvas in topology drawing order. Coordinates are
// continuous pixel positions; off-canvas pixels are clipped away. Purely
// deterministic.
Image rasterize_landmarks(const Eigen::MatrixX2d& points, int size = 256);

// Image <-> (3 x w*h) plane matrix with values in [-1, 1], one row per
// channel, row-major spatial layout. planes_to_image clamps.
Eigen::MatrixXd image_to_planes(const Image& img);
Image planes_to_image(const Eigen::MatrixXd& planes, int width, int height);

struct I2iConfig {
    int resolution = 256;    // positive multiple of 64 (six stride-2 stages)
    int base_width = 64;     // stage widths {1,2,4,8,8,8} * base_width
    double lambda_a = 1.0;   // perceptual term weight in the training loss

    void validate() const;             // throws ConfigError
    std::array<int, 6> widths() const;
};

struct ConvLayer {
    Tensor w;  // out_ch x (in_ch * 9)
    Tensor b;  // out_ch x 1
};

// Pre-activation residual block: x + conv(relu(conv(relu(x)))).
struct ResidualBlock {
    ConvLayer c1, c2;
};

struct I2iStage {
    ConvLayer conv;
    ResidualBlock r1, r2;
};

// Encoder-decoder translator. Six down stages (stride-2 3x3 conv then two
// residual blocks); six up stages (skip-concatenate the same-resolution
// encoder map, nearest x2 upsample, 3x3 conv, two residual blocks; the first
// up stage has no skip partner); final tanh. Input is the 6-channel stack of
// portrait and landmark raster, output 3 channels in [-1, 1].
struct I2iParams {
    I2iConfig cfg;
    std::array<I2iStage, 6> down;
    std::array<I2iStage, 6> up;

    static I2iParams create(const I2iConfig& cfg, Rng& rng);
    std::vector<Tensor*> params();
};

// Frozen random-weight convolutional stack for the perceptual loss term
// (stride-2 conv + relu per layer, activations of every layer compared).
// depth 0 is the identity fallback: features are the raw pixels.
struct PerceptualExtractor {
    int width = 8;
    int depth = 0;
    std::vector<Eigen::MatrixXd> w;  // layer weights, (ch_out) x (ch_in * 9)
    std::vector<Eigen::VectorXd> b;

    static PerceptualExtractor identity();
    static PerceptualExtractor create(int width, int depth, Rng& rng);
};

// input: 6 x resolution^2. Returns a (3 x resolution^2) node in [-1, 1].
int i2i_forward_node(Tape& tape, I2iParams& params, int input);
Eigen::MatrixXd i2i_forward(I2iParams& params, const Eigen::MatrixXd& input);

// mean |out - target| + lambda_a * mean |phi(out) - phi(target)|; the
// perceptual mean runs over the concatenation of all layer activations.
double i2i_loss(const Eigen::MatrixXd& out, const Eigen::MatrixXd& target,
                const PerceptualExtractor& phi, double lambda_a, int resolution);
int i2i_loss_node(Tape& tape, int out, const Eigen::MatrixXd& target,
                  const PerceptualExtractor& phi, double lambda_a, int resolution);

struct I2iPair {
    Eigen::MatrixXd input;   // 6 x res^2
    Eigen::MatrixXd target;  // 3 x res^2
};

struct I2iTrainResult {
    I2iParams params;
    std::vector<double> curve;  // per-step batch loss
    double final_mae = 0.0;     // plain pixel MAE over all pairs after training
    Checkpoint checkpoint;
};

// Adam on i2i_loss over the given pairs (whole set per step when it fits in
// batch_size, deterministic subsample otherwise).
I2iTrainResult train_i2i(const std::vector<I2iPair>& pairs, const I2iConfig& icfg,
                         const TrainConfig& tcfg, const PerceptualExtractor& phi);

nlohmann::json i2i_config_json(const I2iConfig& cfg);
I2iConfig i2i_config_from_json(const nlohmann::json& j);

}  // namespace tha
