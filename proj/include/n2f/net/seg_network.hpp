#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <string>

#include "n2f/core/image.hpp"
#include "n2f/core/rng.hpp"
#include "n2f/labels/label_generation.hpp"

namespace n2f {

// Channels-by-pixels activation block; data(c, y * width + x). 64-bit
// arithmetic throughout; this is the reference path.
struct FeatureMap {
  int height = 0, width = 0, channels = 0;
  Eigen::MatrixXd data;

  static FeatureMap zeros(int h, int w, int c) {
    return {h, w, c, Eigen::MatrixXd::Zero(c, static_cast<Eigen::Index>(h) * w)};
  }
  double at(int c, int y, int x) const { return data(c, static_cast<Eigen::Index>(y) * width + x); }
  double& at(int c, int y, int x) { return data(c, static_cast<Eigen::Index>(y) * width + x); }
};

// RGB in [0, 1] mapped to the network input range [-0.5, 0.5].
FeatureMap to_network_input(const RgbImage& rgb);

struct ConvSpec {
  int in_channels = 0, out_channels = 0;
  int kernel = 3, stride = 1;  // zero padding = kernel / 2
  bool relu = true;
};

struct ConvLayer {
  ConvSpec spec;
  Eigen::MatrixXd weight;  // out_channels x (in_channels * kernel * kernel)
  Eigen::VectorXd bias;    // out_channels
};

// Fixed encoder-decoder classifier:
//   e1: 3->16  3x3 s2 relu        e2: 16->32 3x3 s2 relu   e3: 32->32 3x3 s1 relu
//   d1: 32->16 3x3 s1 relu        d2: up2x, 16->16 3x3 s1 relu
//   d3: up2x, 16->2 1x1 (logits)
// The two fixed bilinear upsamples bring the logits back to input resolution.
struct NetworkParams {
  ConvLayer e1, e2, e3;  // encoder: pretrained offline, frozen online
  ConvLayer d1, d2, d3;  // decoder: updated online

  static NetworkParams architecture();  // correct shapes, zero-filled
  static NetworkParams xavier_initialized(std::uint64_t seed);
  static std::string fingerprint();
  static std::array<const char*, 6> layer_names();

  std::array<ConvLayer*, 6> layers();
  std::array<const ConvLayer*, 6> layers() const;
  std::array<ConvLayer*, 3> encoder() { return {&e1, &e2, &e3}; }
  std::array<ConvLayer*, 3> decoder() { return {&d1, &d2, &d3}; }
};

// acc += scale * g, over every parameter tensor.
void accumulate(NetworkParams& acc, const NetworkParams& g, double scale = 1.0);
void scale_params(NetworkParams& p, double factor);
std::uint64_t params_digest(const NetworkParams& p);  // FNV-1a over parameter bytes

// Intermediate activations, kept so the backward pass can reuse them.
struct ForwardTrace {
  std::array<FeatureMap, 6> layer_in;     // input seen by e1,e2,e3,d1,d2,d3
  std::array<FeatureMap, 6> pre_act;      // conv output before ReLU (pre_act[5] = logits)
  std::array<Eigen::MatrixXd, 6> patches; // im2col of layer_in (empty for 1x1 convs)
};

// Logits (2 channels) at input resolution. Input height/width must be
// divisible by 4.
FeatureMap forward(const NetworkParams& params, const FeatureMap& input,
                   ForwardTrace* trace = nullptr);

struct LossConfig {
  double w_free = 1.0;
  double w_obstacle = 1.0;
};

// Weighted softmax cross-entropy averaged over non-Unknown pixels:
//   L = (1 / n_labeled) * sum_p w[y_p] * -log softmax(logits_p)[y_p]
// An all-Unknown map gives 0 with zero gradient. Dividing by the pixel count
// (not the weight sum) keeps the loss linear in the class weights.
double loss(const FeatureMap& logits, const LabelMap& labels, const LossConfig& cfg);

// dL/dlogits under the same masking and normalization.
Eigen::MatrixXd loss_backward(const FeatureMap& logits, const LabelMap& labels,
                              const LossConfig& cfg, double* loss_out = nullptr);

// Exact analytic gradients of loss(forward(params, input), labels).
NetworkParams backward(const NetworkParams& params, const FeatureMap& input,
                       const LabelMap& labels, const LossConfig& cfg,
                       double* loss_out = nullptr);

enum class TrainScope { All, DecoderOnly };

struct SgdState {
  NetworkParams velocity = NetworkParams::architecture();
};

// v <- momentum * v + g; p <- p - lr * v. Layers outside the scope keep both
// their parameters and their velocity untouched.
void sgd_step(NetworkParams& params, const NetworkParams& grads, double lr, double momentum,
              SgdState& state, TrainScope scope = TrainScope::All);

// Xavier bound a = sqrt(6 / (fan_in + fan_out)); values drawn uniformly from
// [-a, a]. Conv fans are in_channels * k * k and out_channels * k * k.
double xavier_bound(int fan_in, int fan_out);
void xavier_fill(Eigen::Ref<Eigen::MatrixXd> tensor, int fan_in, int fan_out, SeededRng& rng);

// Versioned binary container with an architecture fingerprint; load rejects
// truncation and fingerprint mismatches. See io notes in README.
void save_params(const NetworkParams& params, const std::string& path);
NetworkParams load_params(const std::string& path);

// Standalone layer primitives, shared with the backward pass and the tests.
FeatureMap conv_forward(const ConvLayer& layer, const FeatureMap& in);
FeatureMap upsample2x_bilinear(const FeatureMap& in);
FeatureMap upsample2x_bilinear_backward(const FeatureMap& grad_out, int in_h, int in_w);

}  // namespace n2f
