#pragma once

#include "cvxrom/nn.hpp"

namespace cvxrom {

/// One ICNN layer: z_{i+1} = g(Wz z_i + Wq q + b). Wz is empty for the first layer.
struct IcnnLayer {
    Mat Wq;
    Mat Wz;
    Vec b;
};

/// Input-convex network R^k -> R^r. Every output coordinate is convex in q as
/// long as all Wz entries are non-negative and the hidden activation is convex
/// and non-decreasing. The output layer is the identity.
struct IcnnParams {
    Index input_dim = 0;
    std::vector<IcnnLayer> layers;
    Activation hidden = Activation::softplus;
    double beta = 10.0;

    Index output_dim() const { return layers.empty() ? 0 : layers.back().Wq.rows(); }
    std::vector<Index> widths() const;
    TensorList tensors();
    IcnnParams zeros_like() const;
    /// Shape, finiteness and sign checks; throws InvalidArgument / DimensionError.
    void validate() const;
    bool feasible() const;
};

struct IcnnInit {
    Activation hidden = Activation::softplus;
    double beta = 10.0;
    /// Wz ~ |N(0, 1)| * wz_scale / fan_in.
    double wz_scale = 1.0;
};

/// Standard initialization: Wq ~ N(0, 1/k), Wz non-negative, b = 0.
IcnnParams make_icnn(Index input_dim, const std::vector<Index>& widths, Rng& rng, const IcnnInit& init = {});

/// Clamps every Wz entry at zero. Idempotent; touches nothing else.
void project_nonneg(IcnnParams& p);

struct IcnnCache {
    Mat input;
    std::vector<Mat> pre;
    std::vector<Mat> out;
};

Mat icnn_forward_batch(const IcnnParams& p, const Mat& q, IcnnCache* cache = nullptr);
Vec icnn_forward(const IcnnParams& p, const Vec& q);
/// r x k Jacobian by forward-mode chain rule.
Mat icnn_jacobian(const IcnnParams& p, const Vec& q);
/// Output value and Jacobian in one pass.
void icnn_forward_jacobian(const IcnnParams& p, const Vec& q, Vec& value, Mat& jacobian);
/// Reverse mode: accumulates d<upstream, f>/dparams into grad, returns d/dq (k x B).
Mat icnn_backward(const IcnnParams& p, const IcnnCache& cache, const Mat& upstream, IcnnParams& grad);
/// Single-sample convenience wrapper around icnn_backward.
Vec icnn_backprop(const IcnnParams& p, const Vec& q, const Vec& upstream, IcnnParams& grad);

void write_icnn(io::BinaryWriter& w, const IcnnParams& p);
IcnnParams read_icnn(io::BinaryReader& r);

} // namespace cvxrom
