#include "cvxrom/nn.hpp"

#include <cmath>

#include "cvxrom/binary_io.hpp"
#include "cvxrom/errors.hpp"

namespace cvxrom {

std::string to_string(Activation a) {
    switch (a) {
    case Activation::identity: return "identity";
    case Activation::softplus: return "softplus";
    case Activation::relu: return "relu";
    case Activation::elu: return "elu";
    case Activation::tanh: return "tanh";
    }
    return "unknown";
}

Activation parse_activation(const std::string& name) {
    if (name == "identity") return Activation::identity;
    if (name == "softplus") return Activation::softplus;
    if (name == "relu") return Activation::relu;
    if (name == "elu") return Activation::elu;
    if (name == "tanh") return Activation::tanh;
    throw InvalidArgument("unknown activation '" + name + "'");
}

double activate(Activation a, double beta, double x) {
    switch (a) {
    case Activation::identity: return x;
    case Activation::softplus: return std::max(x, 0.0) + std::log1p(std::exp(-beta * std::abs(x))) / beta;
    case Activation::relu: return x > 0.0 ? x : 0.0;
    case Activation::elu: return x > 0.0 ? x : std::expm1(x);
    case Activation::tanh: return std::tanh(x);
    }
    return x;
}

double activate_derivative(Activation a, double beta, double x) {
    switch (a) {
    case Activation::identity: return 1.0;
    case Activation::softplus: {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-beta * x));
        const double e = std::exp(beta * x);
        return e / (1.0 + e);
    }
    case Activation::relu: return x > 0.0 ? 1.0 : 0.0;
    case Activation::elu: return x > 0.0 ? 1.0 : std::exp(x);
    case Activation::tanh: {
        const double t = std::tanh(x);
        return 1.0 - t * t;
    }
    }
    return 1.0;
}

Mat activate(Activation a, double beta, const Mat& x) {
    if (a == Activation::identity) return x;
    return x.unaryExpr([a, beta](double v) { return activate(a, beta, v); });
}

Mat activate_derivative(Activation a, double beta, const Mat& x) {
    if (a == Activation::identity) return Mat::Ones(x.rows(), x.cols());
    return x.unaryExpr([a, beta](double v) { return activate_derivative(a, beta, v); });
}

std::size_t tensor_size(const TensorList& tensors) {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.size();
    return n;
}

bool all_finite(const TensorList& tensors) {
    for (const auto& t : tensors)
        for (double v : t)
            if (!std::isfinite(v)) return false;
    return true;
}

void set_zero(const TensorList& tensors) {
    for (const auto& t : tensors) std::fill(t.begin(), t.end(), 0.0);
}

// ---------------------------------------------------------------- MLP

TensorList MlpParams::tensors() {
    TensorList out;
    for (auto& l : layers) {
        out.push_back(as_span(l.W));
        out.push_back(as_span(l.b));
    }
    return out;
}

MlpParams MlpParams::zeros_like() const {
    MlpParams z = *this;
    set_zero(z.tensors());
    return z;
}

void MlpParams::validate() const {
    Index in = input_dim;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        require_dims(layers[i].W.cols() == in, "mlp layer " + std::to_string(i) + " input width mismatch");
        require_dims(layers[i].b.size() == layers[i].W.rows(), "mlp layer " + std::to_string(i) + " bias length mismatch");
        if (!layers[i].W.allFinite() || !layers[i].b.allFinite())
            throw InvalidArgument("mlp layer " + std::to_string(i) + " has non-finite parameters");
        in = layers[i].W.rows();
    }
}

MlpParams make_mlp(Index input_dim, const std::vector<Index>& widths, Activation hidden, Rng& rng) {
    if (input_dim < 1 || widths.empty()) throw InvalidArgument("mlp needs an input and at least one layer");
    MlpParams p;
    p.input_dim = input_dim;
    p.hidden = hidden;
    std::normal_distribution<double> normal(0.0, 1.0);
    Index in = input_dim;
    for (Index w : widths) {
        if (w < 1) throw InvalidArgument("mlp widths must be positive");
        DenseLayer l;
        l.W.resize(w, in);
        const double s = 1.0 / std::sqrt(static_cast<double>(in));
        for (Index j = 0; j < in; ++j)
            for (Index i = 0; i < w; ++i) l.W(i, j) = s * normal(rng);
        l.b = Vec::Zero(w);
        p.layers.push_back(std::move(l));
        in = w;
    }
    return p;
}

Mat mlp_forward_batch(const MlpParams& p, const Mat& x, MlpCache* cache) {
    require_dims(x.rows() == p.input_dim, "mlp input has wrong dimension");
    if (cache) {
        cache->input = x;
        cache->pre.clear();
        cache->out.clear();
    }
    Mat h = x;
    for (std::size_t i = 0; i < p.layers.size(); ++i) {
        const auto& l = p.layers[i];
        Mat a = l.W * h;
        a.colwise() += l.b;
        const bool last = i + 1 == p.layers.size();
        h = last ? a : activate(p.hidden, p.beta, a);
        if (cache) {
            cache->pre.push_back(std::move(a));
            cache->out.push_back(h);
        }
    }
    return h;
}

Vec mlp_forward(const MlpParams& p, const Vec& x) {
    return mlp_forward_batch(p, Mat(x), nullptr).col(0);
}

Mat mlp_jacobian(const MlpParams& p, const Vec& x) {
    require_dims(x.size() == p.input_dim, "mlp input has wrong dimension");
    Mat J = Mat::Identity(p.input_dim, p.input_dim);
    Vec h = x;
    for (std::size_t i = 0; i < p.layers.size(); ++i) {
        const auto& l = p.layers[i];
        const Vec a = l.W * h + l.b;
        J = l.W * J;
        if (i + 1 < p.layers.size()) {
            J = activate_derivative(p.hidden, p.beta, Mat(a)).col(0).asDiagonal() * J;
            h = activate(p.hidden, p.beta, Mat(a)).col(0);
        } else {
            h = a;
        }
    }
    return J;
}

Mat mlp_backward(const MlpParams& p, const MlpCache& cache, const Mat& upstream, MlpParams& grad) {
    require_dims(upstream.rows() == p.output_dim() && upstream.cols() == cache.input.cols(), "mlp upstream shape mismatch");
    Mat d = upstream;
    for (std::size_t ii = p.layers.size(); ii-- > 0;) {
        const auto& l = p.layers[ii];
        if (ii + 1 < p.layers.size()) d.array() *= activate_derivative(p.hidden, p.beta, cache.pre[ii]).array();
        const Mat& below = ii == 0 ? cache.input : cache.out[ii - 1];
        grad.layers[ii].W.noalias() += d * below.transpose();
        grad.layers[ii].b += d.rowwise().sum();
        d = l.W.transpose() * d;
    }
    return d;
}

void write_mlp(io::BinaryWriter& w, const MlpParams& p) {
    w.u64(static_cast<std::uint64_t>(p.input_dim));
    w.u8(static_cast<std::uint8_t>(p.hidden));
    w.f64(p.beta);
    w.u32(static_cast<std::uint32_t>(p.layers.size()));
    for (const auto& l : p.layers) {
        w.matrix(l.W);
        w.vector(l.b);
    }
}

MlpParams read_mlp(io::BinaryReader& r) {
    MlpParams p;
    p.input_dim = static_cast<Index>(r.u64());
    const auto act = r.u8();
    if (act > 4) throw ParseError("unknown activation code " + std::to_string(act));
    p.hidden = static_cast<Activation>(act);
    p.beta = r.f64();
    const auto n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) {
        DenseLayer l;
        l.W = r.matrix();
        l.b = r.vector();
        p.layers.push_back(std::move(l));
    }
    try {
        p.validate();
    } catch (const Error& e) {
        throw ParseError(std::string("invalid mlp parameters: ") + e.what());
    }
    return p;
}

// ---------------------------------------------------------------- Adam

void Adam::step(const TensorList& params, const TensorList& grads) {
    require_dims(params.size() == grads.size(), "adam: parameter and gradient lists differ");
    if (m_.empty()) {
        for (const auto& t : params) {
            m_.push_back(Vec::Zero(static_cast<Index>(t.size())));
            v_.push_back(Vec::Zero(static_cast<Index>(t.size())));
        }
    }
    require_dims(m_.size() == params.size(), "adam: tensor list changed between steps");
    ++t_;
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        require_dims(params[i].size() == grads[i].size() && static_cast<Index>(params[i].size()) == m_[i].size(),
                     "adam: tensor shape changed");
        double* x = params[i].data();
        const double* g = grads[i].data();
        double* m = m_[i].data();
        double* v = v_[i].data();
        for (std::size_t j = 0; j < params[i].size(); ++j) {
            m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * g[j];
            v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * g[j] * g[j];
            x[j] -= config_.learning_rate * (m[j] / c1) / (std::sqrt(v[j] / c2) + config_.epsilon);
        }
    }
}

} // namespace cvxrom
