#include "cvxrom/decoder.hpp"

#include <fstream>

#include "cvxrom/binary_io.hpp"
#include "cvxrom/errors.hpp"

namespace cvxrom {

std::string to_string(ModelKind kind) {
    switch (kind) {
    case ModelKind::linear: return "linear";
    case ModelKind::convex_symmetric: return "convex_symmetric";
    case ModelKind::vanilla: return "vanilla";
    case ModelKind::convex_fullspace_ablation: return "convex_fullspace_ablation";
    }
    return "unknown";
}

ModelKind parse_model_kind(const std::string& name) {
    if (name == "linear") return ModelKind::linear;
    if (name == "convex_symmetric") return ModelKind::convex_symmetric;
    if (name == "vanilla") return ModelKind::vanilla;
    if (name == "convex_fullspace_ablation") return ModelKind::convex_fullspace_ablation;
    throw InvalidArgument("unknown model kind '" + name + "'");
}

RowSet vertex_rows(const std::vector<int>& vertices) {
    RowSet rows;
    rows.reserve(3 * vertices.size());
    for (int v : vertices)
        for (int c = 0; c < 3; ++c) rows.push_back(3 * static_cast<Index>(v) + c);
    return rows;
}

namespace {

Mat select_rows(const Mat& m, const RowSet& rows) {
    Mat out(static_cast<Index>(rows.size()), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = m.row(rows[i]);
    return out;
}

Vec select_rows(const Vec& v, const RowSet& rows) {
    Vec out(static_cast<Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) out[static_cast<Index>(i)] = v[rows[i]];
    return out;
}

void check_rows(const RowSet& rows, Index dofs) {
    for (Index r : rows)
        if (r < 0 || r >= dofs) throw InvalidArgument("row index " + std::to_string(r) + " out of range");
}

/// Value and Jacobian of the odd part c(q) - c(-q) of an ICNN.
void odd_icnn(const IcnnParams& c, const Vec& q, Vec& d, Mat& Jd, bool want_jacobian) {
    if (want_jacobian) {
        Vec a, b;
        Mat Ja, Jb;
        icnn_forward_jacobian(c, q, a, Ja);
        icnn_forward_jacobian(c, Vec(-q), b, Jb);
        d = a - b;
        Jd = Ja + Jb;
    } else {
        d = icnn_forward(c, q) - icnn_forward(c, Vec(-q));
    }
}

Mat stack_pm(const Mat& Q) {
    Mat both(Q.rows(), 2 * Q.cols());
    both.leftCols(Q.cols()) = Q;
    both.rightCols(Q.cols()) = -Q;
    return both;
}

} // namespace

// ---------------------------------------------------------------- ReducedModel

void ReducedModel::check_latent(const Vec& q) const {
    require_dims(q.size() == latent_dim(), "latent vector has length " + std::to_string(q.size()) + ", model expects " +
                                               std::to_string(latent_dim()));
}

Vec ReducedModel::decode(const Vec& q) const {
    Vec v;
    evaluate(q, nullptr, &v, nullptr);
    return v;
}

Vec ReducedModel::decode_rows(const Vec& q, const RowSet& rows) const {
    Vec v;
    evaluate(q, &rows, &v, nullptr);
    return v;
}

Mat ReducedModel::jacobian(const Vec& q) const {
    Mat J;
    evaluate(q, nullptr, nullptr, &J);
    return J;
}

Mat ReducedModel::jacobian_rows(const Vec& q, const RowSet& rows) const {
    Mat J;
    evaluate(q, &rows, nullptr, &J);
    return J;
}

// ---------------------------------------------------------------- LinearModel

LinearModel::LinearModel(Mat basis, Mat projection) : B_(std::move(basis)), P_(std::move(projection)) {
    require_dims(P_.rows() == B_.cols() && P_.cols() == B_.rows(), "linear model projection shape mismatch");
}

LinearModel::LinearModel(const PcaBasis& basis, const LumpedMass& mass)
    : LinearModel(basis.B, basis.B.transpose() * mass.diag.asDiagonal()) {
    require_dims(mass.diag.size() == basis.dofs(), "mass and basis dimensions differ");
}

void LinearModel::evaluate(const Vec& q, const RowSet* rows, Vec* value, Mat* jacobian) const {
    check_latent(q);
    if (rows) {
        check_rows(*rows, dofs());
        const Mat Bs = select_rows(B_, *rows);
        if (value) *value = Bs * q;
        if (jacobian) *jacobian = Bs;
    } else {
        if (value) *value = B_ * q;
        if (jacobian) *jacobian = B_;
    }
}

Vec LinearModel::encode(const Vec& u) const {
    require_dims(u.size() == dofs(), "displacement length does not match model");
    return P_ * u;
}

// ---------------------------------------------------------------- encoder

TensorList EncoderParams::tensors() {
    TensorList out{as_span(P)};
    for (auto t : residual.tensors()) out.push_back(t);
    return out;
}

void EncoderParams::validate() const {
    residual.validate();
    require_dims(residual.input_dim == P.rows() && residual.output_dim() == P.rows(), "encoder residual width mismatch");
    if (!P.allFinite()) throw InvalidArgument("encoder projection has non-finite entries");
}

Vec encode(const EncoderParams& enc, const Vec& u) {
    require_dims(u.size() == enc.dofs(), "displacement length does not match encoder");
    const Vec y = enc.P * u;
    return y + mlp_forward(enc.residual, y);
}

Mat encode_batch(const EncoderParams& enc, const Mat& U, EncoderCache* cache) {
    require_dims(U.rows() == enc.dofs(), "snapshot length does not match encoder");
    Mat y = enc.P * U;
    Mat q = y + mlp_forward_batch(enc.residual, y, cache ? &cache->residual : nullptr);
    if (cache) {
        cache->input = U;
        cache->projected = std::move(y);
    }
    return q;
}

void encoder_backward(const EncoderParams& enc, const EncoderCache& cache, const Mat& dQ, EncoderParams& grad) {
    const Mat dy = dQ + mlp_backward(enc.residual, cache.residual, dQ, grad.residual);
    grad.P.noalias() += dy * cache.input.transpose();
}

// ---------------------------------------------------------------- parameter bundles

TensorList DecoderParams::tensors() {
    TensorList out = convex.tensors();
    out.push_back(as_span(W));
    return out;
}

void DecoderParams::validate() const {
    convex.validate();
    require_dims(W.cols() == convex.output_dim(), "decoder W column count differs from the intermediate dimension");
    if (!W.allFinite()) throw InvalidArgument("decoder W has non-finite entries");
}

TensorList VanillaDecoderParams::tensors() {
    TensorList out = mlp.tensors();
    out.push_back(as_span(S));
    out.push_back(as_span(W));
    return out;
}

void VanillaDecoderParams::validate() const {
    mlp.validate();
    require_dims(S.rows() == mlp.output_dim() && S.cols() == mlp.input_dim, "vanilla skip shape mismatch");
    require_dims(W.cols() == mlp.output_dim(), "vanilla W column count mismatch");
    if (!S.allFinite() || !W.allFinite()) throw InvalidArgument("vanilla decoder has non-finite entries");
}

TensorList AblationDecoderParams::tensors() { return convex.tensors(); }

Vec decode(const DecoderParams& dec, const Vec& q) {
    Vec d;
    Mat Jd;
    odd_icnn(dec.convex, q, d, Jd, false);
    return dec.W * d;
}

Mat decode_jacobian(const DecoderParams& dec, const Vec& q) {
    Vec d;
    Mat Jd;
    odd_icnn(dec.convex, q, d, Jd, true);
    return dec.W * Jd;
}

Vec decode_vanilla(const VanillaDecoderParams& dec, const Vec& q) {
    require_dims(q.size() == dec.mlp.input_dim, "latent vector has wrong length");
    return dec.W * (mlp_forward(dec.mlp, q) + dec.S * q);
}

// ---------------------------------------------------------------- TrainableModel

TensorList TrainableModel::tensors() {
    TensorList out = encoder.tensors();
    for (auto t : decoder_tensors()) out.push_back(t);
    return out;
}

std::unique_ptr<TrainableModel> TrainableModel::clone_trainable() const {
    auto m = copy();
    m->metadata = metadata;
    return m;
}

std::unique_ptr<TrainableModel> TrainableModel::zeros_like() const {
    auto m = copy();
    set_zero(m->tensors());
    return m;
}

// ---------------------------------------------------------------- ConvexSymmetricModel

void ConvexSymmetricModel::evaluate(const Vec& q, const RowSet* rows, Vec* value, Mat* jacobian) const {
    check_latent(q);
    Vec d;
    Mat Jd;
    odd_icnn(decoder.convex, q, d, Jd, jacobian != nullptr);
    if (rows) {
        check_rows(*rows, dofs());
        const Mat Ws = select_rows(decoder.W, *rows);
        if (value) *value = Ws * d;
        if (jacobian) *jacobian = Ws * Jd;
    } else {
        if (value) *value = decoder.W * d;
        if (jacobian) *jacobian = decoder.W * Jd;
    }
}

Mat ConvexSymmetricModel::decode_batch(const Mat& Q, DecodeCache* cache) const {
    const Index n = Q.cols();
    const Mat Z = icnn_forward_batch(decoder.convex, stack_pm(Q), cache ? &cache->icnn : nullptr);
    Mat D = Z.leftCols(n) - Z.rightCols(n);
    Mat U = decoder.W * D;
    if (cache) {
        cache->Q = Q;
        cache->hidden = std::move(D);
    }
    return U;
}

Mat ConvexSymmetricModel::decode_backward(const DecodeCache& cache, const Mat& dU, TrainableModel& grad) const {
    auto& g = static_cast<ConvexSymmetricModel&>(grad);
    const Index n = dU.cols();
    g.decoder.W.noalias() += dU * cache.hidden.transpose();
    const Mat dD = decoder.W.transpose() * dU;
    const Mat dQQ = icnn_backward(decoder.convex, cache.icnn, stack_pm(dD), g.decoder.convex);
    return dQQ.leftCols(n) - dQQ.rightCols(n);
}

void ConvexSymmetricModel::validate() const {
    encoder.validate();
    decoder.validate();
    require_dims(encoder.latent_dim() == latent_dim() && encoder.dofs() == dofs(), "encoder and decoder dimensions differ");
}

// ---------------------------------------------------------------- VanillaModel

void VanillaModel::evaluate(const Vec& q, const RowSet* rows, Vec* value, Mat* jacobian) const {
    check_latent(q);
    const Vec h = mlp_forward(decoder.mlp, q) + decoder.S * q;
    Mat Jh;
    if (jacobian) Jh = mlp_jacobian(decoder.mlp, q) + decoder.S;
    if (rows) {
        check_rows(*rows, dofs());
        const Mat Ws = select_rows(decoder.W, *rows);
        if (value) *value = Ws * h;
        if (jacobian) *jacobian = Ws * Jh;
    } else {
        if (value) *value = decoder.W * h;
        if (jacobian) *jacobian = decoder.W * Jh;
    }
}

Mat VanillaModel::decode_batch(const Mat& Q, DecodeCache* cache) const {
    Mat H = mlp_forward_batch(decoder.mlp, Q, cache ? &cache->mlp : nullptr);
    H.noalias() += decoder.S * Q;
    Mat U = decoder.W * H;
    if (cache) {
        cache->Q = Q;
        cache->hidden = std::move(H);
    }
    return U;
}

Mat VanillaModel::decode_backward(const DecodeCache& cache, const Mat& dU, TrainableModel& grad) const {
    auto& g = static_cast<VanillaModel&>(grad);
    g.decoder.W.noalias() += dU * cache.hidden.transpose();
    const Mat dH = decoder.W.transpose() * dU;
    g.decoder.S.noalias() += dH * cache.Q.transpose();
    Mat dQ = mlp_backward(decoder.mlp, cache.mlp, dH, g.decoder.mlp);
    dQ.noalias() += decoder.S.transpose() * dH;
    return dQ;
}

void VanillaModel::validate() const {
    encoder.validate();
    decoder.validate();
    require_dims(encoder.latent_dim() == latent_dim() && encoder.dofs() == dofs(), "encoder and decoder dimensions differ");
}

// ---------------------------------------------------------------- AblationModel

void AblationModel::evaluate(const Vec& q, const RowSet* rows, Vec* value, Mat* jacobian) const {
    check_latent(q);
    Vec d;
    Mat Jd;
    odd_icnn(decoder.convex, q, d, Jd, jacobian != nullptr);
    if (rows) {
        check_rows(*rows, dofs());
        if (value) *value = select_rows(d, *rows);
        if (jacobian) *jacobian = select_rows(Jd, *rows);
    } else {
        if (value) *value = std::move(d);
        if (jacobian) *jacobian = std::move(Jd);
    }
}

Mat AblationModel::decode_batch(const Mat& Q, DecodeCache* cache) const {
    const Index n = Q.cols();
    const Mat Z = icnn_forward_batch(decoder.convex, stack_pm(Q), cache ? &cache->icnn : nullptr);
    if (cache) cache->Q = Q;
    return Z.leftCols(n) - Z.rightCols(n);
}

Mat AblationModel::decode_backward(const DecodeCache& cache, const Mat& dU, TrainableModel& grad) const {
    auto& g = static_cast<AblationModel&>(grad);
    const Index n = dU.cols();
    const Mat dQQ = icnn_backward(decoder.convex, cache.icnn, stack_pm(dU), g.decoder.convex);
    return dQQ.leftCols(n) - dQQ.rightCols(n);
}

void AblationModel::validate() const {
    encoder.validate();
    decoder.validate();
    require_dims(encoder.latent_dim() == latent_dim() && encoder.dofs() == dofs(), "encoder and decoder dimensions differ");
}

// ---------------------------------------------------------------- construction

nlohmann::json ModelSpec::to_json() const {
    return {{"kind", to_string(kind)},          {"k", k},
            {"r", intermediate_dim()},          {"hidden", hidden},
            {"encoder_hidden", encoder_hidden}, {"activation", to_string(activation)},
            {"beta", beta},                     {"pca_init", pca_init},
            {"seed", seed}};
}

namespace {

Mat gaussian(Index rows, Index cols, double scale, Rng& rng) {
    std::normal_distribution<double> nd(0.0, 1.0);
    Mat m(rows, cols);
    for (Index j = 0; j < cols; ++j)
        for (Index i = 0; i < rows; ++i) m(i, j) = scale * nd(rng);
    return m;
}

void require_rank(const PcaBasis& basis, Index needed, const char* what) {
    if (basis.rank() < needed)
        throw RankDeficiencyError(std::string(what) + " needs a basis of rank " + std::to_string(needed) + ", got " +
                                      std::to_string(basis.rank()),
                                  static_cast<int>(basis.rank()));
}

EncoderParams make_encoder(Index k, Index dofs, Index hidden, const PcaBasis* basis, const LumpedMass& mass, Rng& rng) {
    EncoderParams enc;
    if (basis) {
        require_rank(*basis, k, "encoder initialization");
        enc.P = basis->B.leftCols(k).transpose() * mass.diag.asDiagonal();
    } else {
        enc.P = gaussian(k, dofs, 1.0 / std::sqrt(static_cast<double>(dofs)), rng);
    }
    enc.residual = make_mlp(k, {hidden, k}, Activation::elu, rng);
    // With a PCA start the residual begins switched off so g(u) = B_k^T M u exactly.
    if (basis) enc.residual.layers.back().W.setZero();
    return enc;
}

} // namespace

std::unique_ptr<TrainableModel> make_model(const ModelSpec& spec, Index dofs, const PcaBasis* basis,
                                           const LumpedMass& mass) {
    const Index k = spec.k;
    const Index r = spec.intermediate_dim();
    if (k < 1) throw InvalidArgument("latent dimension must be positive");
    if (dofs < 1) throw InvalidArgument("model needs a positive number of dofs");
    if (basis) require_dims(basis->dofs() == dofs && mass.diag.size() == dofs, "basis, mass and dofs disagree");
    const PcaBasis* init_basis = spec.pca_init ? basis : nullptr;
    if (spec.pca_init && !basis) throw InvalidArgument("PCA initialization requested without a basis");

    Rng rng(spec.seed);
    IcnnInit icnn_init;
    icnn_init.hidden = spec.activation;
    icnn_init.beta = spec.beta;

    std::unique_ptr<TrainableModel> model;
    switch (spec.kind) {
    case ModelKind::convex_symmetric: {
        if (r < k) throw InvalidArgument("intermediate dimension r must be at least k");
        auto m = std::make_unique<ConvexSymmetricModel>();
        m->encoder = make_encoder(k, dofs, spec.encoder_hidden, init_basis, mass, rng);
        std::vector<Index> widths = spec.hidden;
        widths.push_back(r);
        m->decoder.convex = make_icnn(k, widths, rng, icnn_init);
        if (init_basis) {
            require_rank(*init_basis, r, "decoder initialization");
            auto& out = m->decoder.convex.layers.back();
            out.Wq = Mat::Identity(r, k);
            if (out.Wz.size() > 0) out.Wz *= 0.1;
            m->decoder.W = 0.5 * init_basis->B.leftCols(r);
        } else {
            m->decoder.W = gaussian(dofs, r, 1.0 / std::sqrt(static_cast<double>(r)), rng);
        }
        model = std::move(m);
        break;
    }
    case ModelKind::vanilla: {
        auto m = std::make_unique<VanillaModel>();
        m->encoder = make_encoder(k, dofs, spec.encoder_hidden, init_basis, mass, rng);
        std::vector<Index> widths = spec.hidden;
        widths.push_back(r);
        m->decoder.mlp = make_mlp(k, widths, Activation::elu, rng);
        if (init_basis) {
            require_rank(*init_basis, r, "decoder initialization");
            m->decoder.mlp.layers.back().W.setZero();
            m->decoder.S = Mat::Identity(r, k);
            m->decoder.W = init_basis->B.leftCols(r);
        } else {
            m->decoder.S = gaussian(r, k, 1.0 / std::sqrt(static_cast<double>(k)), rng);
            m->decoder.W = gaussian(dofs, r, 1.0 / std::sqrt(static_cast<double>(r)), rng);
        }
        model = std::move(m);
        break;
    }
    case ModelKind::convex_fullspace_ablation: {
        auto m = std::make_unique<AblationModel>();
        m->encoder = make_encoder(k, dofs, spec.encoder_hidden, init_basis, mass, rng);
        std::vector<Index> widths = spec.hidden;
        widths.push_back(dofs);
        m->decoder.convex = make_icnn(k, widths, rng, icnn_init);
        model = std::move(m);
        break;
    }
    case ModelKind::linear: throw InvalidArgument("the linear model is built from a PCA basis, not trained");
    }
    model->metadata["model"] = spec.to_json();
    model->metadata["k"] = k;
    model->metadata["r"] = spec.kind == ModelKind::convex_fullspace_ablation ? dofs : r;
    model->metadata["N"] = dofs;
    model->validate();
    return model;
}

std::pair<EncoderParams, DecoderParams> init_from_pca(const PcaBasis& basis, const LumpedMass& mass, Index k, Index r,
                                                      const std::vector<Index>& widths, std::uint64_t seed) {
    ModelSpec spec;
    spec.kind = ModelKind::convex_symmetric;
    spec.k = k;
    spec.r = r;
    spec.hidden = widths;
    spec.seed = seed;
    auto model = make_model(spec, basis.dofs(), &basis, mass);
    auto& m = static_cast<ConvexSymmetricModel&>(*model);
    return {m.encoder, m.decoder};
}

// ---------------------------------------------------------------- checkpoints

void write_model(const ReducedModel& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path);
    io::BinaryWriter w(out, "CKPT");
    w.u8(static_cast<std::uint8_t>(model.kind()));
    w.json(model.metadata);
    if (model.kind() == ModelKind::linear) {
        const auto& m = static_cast<const LinearModel&>(model);
        w.matrix(m.basis());
        w.matrix(m.projection());
        return;
    }
    const auto& t = static_cast<const TrainableModel&>(model);
    w.matrix(t.encoder.P);
    write_mlp(w, t.encoder.residual);
    switch (model.kind()) {
    case ModelKind::convex_symmetric: {
        const auto& m = static_cast<const ConvexSymmetricModel&>(model);
        write_icnn(w, m.decoder.convex);
        w.matrix(m.decoder.W);
        break;
    }
    case ModelKind::vanilla: {
        const auto& m = static_cast<const VanillaModel&>(model);
        write_mlp(w, m.decoder.mlp);
        w.matrix(m.decoder.S);
        w.matrix(m.decoder.W);
        break;
    }
    case ModelKind::convex_fullspace_ablation:
        write_icnn(w, static_cast<const AblationModel&>(model).decoder.convex);
        break;
    case ModelKind::linear: break;
    }
    if (!out) throw Error("failed writing " + path);
}

std::unique_ptr<ReducedModel> read_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open " + path);
    io::BinaryReader r(in, "CKPT");
    const auto code = r.u8();
    if (code > 3) throw ParseError("unknown model kind code " + std::to_string(code));
    const auto kind = static_cast<ModelKind>(code);
    nlohmann::json meta = r.json();
    if (kind == ModelKind::linear) {
        Mat B = r.matrix();
        Mat P = r.matrix();
        auto m = std::make_unique<LinearModel>(std::move(B), std::move(P));
        m->metadata = std::move(meta);
        return m;
    }
    EncoderParams enc;
    enc.P = r.matrix();
    enc.residual = read_mlp(r);
    std::unique_ptr<TrainableModel> model;
    switch (kind) {
    case ModelKind::convex_symmetric: {
        auto m = std::make_unique<ConvexSymmetricModel>();
        m->decoder.convex = read_icnn(r);
        m->decoder.W = r.matrix();
        model = std::move(m);
        break;
    }
    case ModelKind::vanilla: {
        auto m = std::make_unique<VanillaModel>();
        m->decoder.mlp = read_mlp(r);
        m->decoder.S = r.matrix();
        m->decoder.W = r.matrix();
        model = std::move(m);
        break;
    }
    case ModelKind::convex_fullspace_ablation: {
        auto m = std::make_unique<AblationModel>();
        m->decoder.convex = read_icnn(r);
        model = std::move(m);
        break;
    }
    case ModelKind::linear: break;
    }
    model->encoder = std::move(enc);
    model->metadata = std::move(meta);
    try {
        model->validate();
    } catch (const Error& e) {
        throw ParseError(path + ": inconsistent checkpoint: " + e.what());
    }
    return model;
}

std::unique_ptr<TrainableModel> read_trainable(const std::string& path) {
    auto m = read_model(path);
    if (m->kind() == ModelKind::linear) throw InvalidArgument(path + " holds a linear model, which is not trainable");
    return std::unique_ptr<TrainableModel>(static_cast<TrainableModel*>(m.release()));
}

} // namespace cvxrom
