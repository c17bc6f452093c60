#pragma once

// Small dense feed-forward building blocks shared by the convex network, the
// encoder and the baseline decoder. Inputs are batched column-wise (dim x B).

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cvxrom/types.hpp"

namespace cvxrom {

namespace io {
class BinaryWriter;
class BinaryReader;
} // namespace io

using Rng = std::mt19937_64;
using TensorList = std::vector<std::span<double>>;

enum class Activation : std::uint8_t { identity = 0, softplus = 1, relu = 2, elu = 3, tanh = 4 };

std::string to_string(Activation a);
Activation parse_activation(const std::string& name);

/// Element-wise activation and its derivative with respect to the pre-activation.
/// beta is the softplus sharpness, softplus(x) = log(1 + exp(beta x)) / beta.
Mat activate(Activation a, double beta, const Mat& x);
Mat activate_derivative(Activation a, double beta, const Mat& x);
double activate(Activation a, double beta, double x);
double activate_derivative(Activation a, double beta, double x);

inline std::span<double> as_span(Mat& m) { return {m.data(), static_cast<std::size_t>(m.size())}; }
inline std::span<double> as_span(Vec& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

/// Total number of scalars in a tensor list.
std::size_t tensor_size(const TensorList& tensors);
bool all_finite(const TensorList& tensors);
void set_zero(const TensorList& tensors);

struct DenseLayer {
    Mat W;
    Vec b;
};

/// Plain MLP: hidden layers use `hidden`, the last layer is linear.
struct MlpParams {
    Index input_dim = 0;
    std::vector<DenseLayer> layers;
    Activation hidden = Activation::elu;
    double beta = 10.0;

    Index output_dim() const { return layers.empty() ? input_dim : layers.back().W.rows(); }
    TensorList tensors();
    MlpParams zeros_like() const;
    void validate() const;
};

/// widths lists every layer's output size, the last entry being the output dimension.
/// Weights ~ N(0, 1/fan_in), biases zero.
MlpParams make_mlp(Index input_dim, const std::vector<Index>& widths, Activation hidden, Rng& rng);

struct MlpCache {
    Mat input;
    std::vector<Mat> pre; ///< pre-activations per layer
    std::vector<Mat> out; ///< outputs per layer
};

Mat mlp_forward_batch(const MlpParams& p, const Mat& x, MlpCache* cache = nullptr);
Vec mlp_forward(const MlpParams& p, const Vec& x);
/// d output / d input at a single point (out x in).
Mat mlp_jacobian(const MlpParams& p, const Vec& x);
/// Accumulates parameter gradients of <upstream, forward> into grad; returns the input gradient.
Mat mlp_backward(const MlpParams& p, const MlpCache& cache, const Mat& upstream, MlpParams& grad);

void write_mlp(io::BinaryWriter& w, const MlpParams& p);
MlpParams read_mlp(io::BinaryReader& r);

struct AdamConfig {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Adam over a fixed list of tensors; moments are allocated on the first step.
class Adam {
public:
    explicit Adam(AdamConfig config = {}) : config_(config) {}

    void step(const TensorList& params, const TensorList& grads);
    long steps() const noexcept { return t_; }
    const AdamConfig& config() const noexcept { return config_; }

private:
    AdamConfig config_;
    std::vector<Vec> m_, v_;
    long t_ = 0;
};

} // namespace cvxrom
