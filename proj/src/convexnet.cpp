#include "cvxrom/convexnet.hpp"

#include <cmath>

#include "cvxrom/binary_io.hpp"
#include "cvxrom/errors.hpp"

namespace cvxrom {

std::vector<Index> IcnnParams::widths() const {
    std::vector<Index> w;
    for (const auto& l : layers) w.push_back(l.Wq.rows());
    return w;
}

TensorList IcnnParams::tensors() {
    TensorList out;
    for (auto& l : layers) {
        out.push_back(as_span(l.Wq));
        out.push_back(as_span(l.Wz));
        out.push_back(as_span(l.b));
    }
    return out;
}

IcnnParams IcnnParams::zeros_like() const {
    IcnnParams z = *this;
    set_zero(z.tensors());
    return z;
}

void IcnnParams::validate() const {
    if (layers.empty()) throw InvalidArgument("icnn has no layers");
    if (hidden != Activation::softplus && hidden != Activation::relu)
        throw InvalidArgument("icnn hidden activation must be convex and non-decreasing (softplus or relu)");
    if (hidden == Activation::softplus && !(beta > 0.0)) throw InvalidArgument("softplus beta must be positive");
    Index prev = 0;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& l = layers[i];
        const std::string tag = "icnn layer " + std::to_string(i);
        require_dims(l.Wq.cols() == input_dim, tag + ": Wq column count differs from the input dimension");
        require_dims(l.b.size() == l.Wq.rows(), tag + ": bias length mismatch");
        if (i == 0) {
            require_dims(l.Wz.size() == 0, tag + ": first layer must not have a skip weight");
        } else {
            require_dims(l.Wz.rows() == l.Wq.rows() && l.Wz.cols() == prev, tag + ": Wz shape mismatch");
            if ((l.Wz.array() < 0.0).any()) throw InvalidArgument(tag + ": Wz has negative entries");
        }
        if (!l.Wq.allFinite() || !l.Wz.allFinite() || !l.b.allFinite()) throw InvalidArgument(tag + ": non-finite parameters");
        prev = l.Wq.rows();
    }
}

bool IcnnParams::feasible() const {
    try {
        validate();
        return true;
    } catch (const Error&) {
        return false;
    }
}

IcnnParams make_icnn(Index input_dim, const std::vector<Index>& widths, Rng& rng, const IcnnInit& init) {
    if (input_dim < 1 || widths.empty()) throw InvalidArgument("icnn needs an input and at least one layer");
    IcnnParams p;
    p.input_dim = input_dim;
    p.hidden = init.hidden;
    p.beta = init.beta;
    std::normal_distribution<double> normal(0.0, 1.0);
    const double sq = 1.0 / std::sqrt(static_cast<double>(input_dim));
    Index prev = 0;
    for (std::size_t i = 0; i < widths.size(); ++i) {
        const Index w = widths[i];
        if (w < 1) throw InvalidArgument("icnn widths must be positive");
        IcnnLayer l;
        l.Wq.resize(w, input_dim);
        for (Index c = 0; c < input_dim; ++c)
            for (Index r = 0; r < w; ++r) l.Wq(r, c) = sq * normal(rng);
        if (i > 0) {
            l.Wz.resize(w, prev);
            const double sz = init.wz_scale / static_cast<double>(prev);
            for (Index c = 0; c < prev; ++c)
                for (Index r = 0; r < w; ++r) l.Wz(r, c) = sz * std::abs(normal(rng));
        }
        l.b = Vec::Zero(w);
        p.layers.push_back(std::move(l));
        prev = w;
    }
    p.validate();
    return p;
}

void project_nonneg(IcnnParams& p) {
    for (auto& l : p.layers) l.Wz = l.Wz.cwiseMax(0.0);
}

Mat icnn_forward_batch(const IcnnParams& p, const Mat& q, IcnnCache* cache) {
    require_dims(q.rows() == p.input_dim, "icnn input has wrong dimension");
    if (cache) {
        cache->input = q;
        cache->pre.clear();
        cache->out.clear();
    }
    Mat z;
    for (std::size_t i = 0; i < p.layers.size(); ++i) {
        const auto& l = p.layers[i];
        Mat a = l.Wq * q;
        if (i > 0) a.noalias() += l.Wz * z;
        a.colwise() += l.b;
        z = i + 1 == p.layers.size() ? a : activate(p.hidden, p.beta, a);
        if (cache) {
            cache->pre.push_back(std::move(a));
            cache->out.push_back(z);
        }
    }
    return z;
}

Vec icnn_forward(const IcnnParams& p, const Vec& q) {
    require_dims(q.size() == p.input_dim, "icnn input has wrong dimension");
    Vec z;
    for (std::size_t i = 0; i < p.layers.size(); ++i) {
        const auto& l = p.layers[i];
        Vec a = l.Wq * q;
        if (i > 0) a.noalias() += l.Wz * z;
        a += l.b;
        if (i + 1 == p.layers.size()) {
            z = std::move(a);
        } else {
            z.resize(a.size());
            for (Index j = 0; j < a.size(); ++j) z[j] = activate(p.hidden, p.beta, a[j]);
        }
    }
    return z;
}

void icnn_forward_jacobian(const IcnnParams& p, const Vec& q, Vec& value, Mat& jacobian) {
    require_dims(q.size() == p.input_dim, "icnn input has wrong dimension");
    Vec z;
    Mat J;
    for (std::size_t i = 0; i < p.layers.size(); ++i) {
        const auto& l = p.layers[i];
        Vec a = l.Wq * q;
        Mat Ja = l.Wq;
        if (i > 0) {
            a.noalias() += l.Wz * z;
            Ja.noalias() += l.Wz * J;
        }
        a += l.b;
        if (i + 1 == p.layers.size()) {
            z = std::move(a);
            J = std::move(Ja);
        } else {
            z.resize(a.size());
            for (Index j = 0; j < a.size(); ++j) {
                z[j] = activate(p.hidden, p.beta, a[j]);
                Ja.row(j) *= activate_derivative(p.hidden, p.beta, a[j]);
            }
            J = std::move(Ja);
        }
    }
    value = std::move(z);
    jacobian = std::move(J);
}

Mat icnn_jacobian(const IcnnParams& p, const Vec& q) {
    Vec v;
    Mat J;
    icnn_forward_jacobian(p, q, v, J);
    return J;
}

Mat icnn_backward(const IcnnParams& p, const IcnnCache& cache, const Mat& upstream, IcnnParams& grad) {
    require_dims(upstream.rows() == p.output_dim() && upstream.cols() == cache.input.cols(), "icnn upstream shape mismatch");
    require_dims(grad.layers.size() == p.layers.size(), "icnn gradient container shape mismatch");
    Mat dq = Mat::Zero(p.input_dim, upstream.cols());
    Mat d = upstream;
    for (std::size_t ii = p.layers.size(); ii-- > 0;) {
        const auto& l = p.layers[ii];
        if (ii + 1 < p.layers.size()) d.array() *= activate_derivative(p.hidden, p.beta, cache.pre[ii]).array();
        grad.layers[ii].Wq.noalias() += d * cache.input.transpose();
        grad.layers[ii].b += d.rowwise().sum();
        dq.noalias() += l.Wq.transpose() * d;
        if (ii > 0) {
            grad.layers[ii].Wz.noalias() += d * cache.out[ii - 1].transpose();
            d = l.Wz.transpose() * d;
        }
    }
    return dq;
}

Vec icnn_backprop(const IcnnParams& p, const Vec& q, const Vec& upstream, IcnnParams& grad) {
    IcnnCache cache;
    icnn_forward_batch(p, Mat(q), &cache);
    return icnn_backward(p, cache, Mat(upstream), grad).col(0);
}

void write_icnn(io::BinaryWriter& w, const IcnnParams& p) {
    w.u64(static_cast<std::uint64_t>(p.input_dim));
    w.u8(static_cast<std::uint8_t>(p.hidden));
    w.f64(p.beta);
    w.u32(static_cast<std::uint32_t>(p.layers.size()));
    for (const auto& l : p.layers) {
        w.matrix(l.Wq);
        w.matrix(l.Wz);
        w.vector(l.b);
    }
}

IcnnParams read_icnn(io::BinaryReader& r) {
    IcnnParams p;
    p.input_dim = static_cast<Index>(r.u64());
    const auto act = r.u8();
    if (act > 4) throw ParseError("unknown activation code " + std::to_string(act));
    p.hidden = static_cast<Activation>(act);
    p.beta = r.f64();
    const auto n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) {
        IcnnLayer l;
        l.Wq = r.matrix();
        l.Wz = r.matrix();
        l.b = r.vector();
        p.layers.push_back(std::move(l));
    }
    try {
        p.validate();
    } catch (const Error& e) {
        throw ParseError(std::string("invalid icnn parameters: ") + e.what());
    }
    return p;
}

} // namespace cvxrom
