#pragma once

#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cvxrom/convexnet.hpp"
#include "cvxrom/mesh.hpp"
#include "cvxrom/subspace.hpp"

namespace cvxrom {

enum class ModelKind : std::uint8_t { linear = 0, convex_symmetric = 1, vanilla = 2, convex_fullspace_ablation = 3 };

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& name);

using RowSet = std::vector<Index>;

/// Dof indices (3v, 3v+1, 3v+2) for a list of vertices, in the given order.
RowSet vertex_rows(const std::vector<int>& vertices);

/// Latent-space model: a decoder R^k -> R^N (displacement about rest) and an
/// encoder R^N -> R^k.
class ReducedModel {
public:
    virtual ~ReducedModel() = default;

    virtual ModelKind kind() const = 0;
    virtual Index latent_dim() const = 0;
    virtual Index dofs() const = 0;
    virtual std::unique_ptr<ReducedModel> clone() const = 0;

    /// Decoded displacement and/or its Jacobian at q, restricted to `rows` when given.
    virtual void evaluate(const Vec& q, const RowSet* rows, Vec* value, Mat* jacobian) const = 0;
    virtual Vec encode(const Vec& u) const = 0;

    Vec decode(const Vec& q) const;
    Vec decode_rows(const Vec& q, const RowSet& rows) const;
    Mat jacobian(const Vec& q) const;
    Mat jacobian_rows(const Vec& q, const RowSet& rows) const;

    /// Free-form provenance (k, r, N, mesh hash, material, training settings).
    nlohmann::json metadata = nlohmann::json::object();

protected:
    void check_latent(const Vec& q) const;
};

/// u = B q, q = P u with P = B^T M.
class LinearModel final : public ReducedModel {
public:
    LinearModel(Mat basis, Mat projection);
    LinearModel(const PcaBasis& basis, const LumpedMass& mass);

    ModelKind kind() const override { return ModelKind::linear; }
    Index latent_dim() const override { return B_.cols(); }
    Index dofs() const override { return B_.rows(); }
    std::unique_ptr<ReducedModel> clone() const override { return std::make_unique<LinearModel>(*this); }
    void evaluate(const Vec& q, const RowSet* rows, Vec* value, Mat* jacobian) const override;
    Vec encode(const Vec& u) const override;

    const Mat& basis() const noexcept { return B_; }
    const Mat& projection() const noexcept { return P_; }

private:
    Mat B_;
    Mat P_;
};

/// Encoder: a linear projection N -> k followed by a residual MLP on the code,
/// q = y + h(y), y = P u.
struct EncoderParams {
    Mat P;
    MlpParams residual;

    Index latent_dim() const { return P.rows(); }
    Index dofs() const { return P.cols(); }
    TensorList tensors();
    void validate() const;
};

struct EncoderCache {
    Mat input;
    Mat projected;
    MlpCache residual;
};

Vec encode(const EncoderParams& enc, const Vec& u);
Mat encode_batch(const EncoderParams& enc, const Mat& U, EncoderCache* cache = nullptr);
void encoder_backward(const EncoderParams& enc, const EncoderCache& cache, const Mat& dQ, EncoderParams& grad);

/// Symmetric convex decoder: u = W (c(q) - c(-q)) with c an ICNN R^k -> R^r.
struct DecoderParams {
    IcnnParams convex;
    Mat W;

    TensorList tensors();
    void validate() const;
};

/// Baseline decoder: u = W (h(q) + S q) with h an unconstrained MLP R^k -> R^r.
struct VanillaDecoderParams {
    MlpParams mlp;
    Mat S;
    Mat W;

    TensorList tensors();
    void validate() const;
};

/// Ablation: convexity imposed directly on the full-space map, u = c(q) - c(-q), c: R^k -> R^N.
struct AblationDecoderParams {
    IcnnParams convex;

    TensorList tensors();
    void validate() const { convex.validate(); }
};

Vec decode(const DecoderParams& dec, const Vec& q);
Mat decode_jacobian(const DecoderParams& dec, const Vec& q);
Vec decode_vanilla(const VanillaDecoderParams& dec, const Vec& q);

/// Scratch space for batched decoding during training.
struct DecodeCache {
    Mat Q;
    IcnnCache icnn;
    MlpCache mlp;
    Mat hidden;
};

/// An encoder/decoder pair that can be trained on the reconstruction loss.
class TrainableModel : public ReducedModel {
public:
    EncoderParams encoder;

    Vec encode(const Vec& u) const override { return cvxrom::encode(encoder, u); }

    /// Encoder tensors followed by decoder tensors.
    TensorList tensors();
    /// Same dynamic type with every parameter zeroed; used as a gradient container.
    std::unique_ptr<TrainableModel> zeros_like() const;
    std::unique_ptr<TrainableModel> clone_trainable() const;
    std::unique_ptr<ReducedModel> clone() const override { return clone_trainable(); }

    virtual Mat decode_batch(const Mat& Q, DecodeCache* cache = nullptr) const = 0;
    /// Accumulates decoder parameter gradients of <dU, decode> into grad; returns d/dQ.
    virtual Mat decode_backward(const DecodeCache& cache, const Mat& dU, TrainableModel& grad) const = 0;
    /// Re-imposes hard constraints after an optimizer step.
    virtual void project_constraints() {}
    virtual bool constraints_hold() const { return true; }
    virtual void validate() const = 0;

protected:
    virtual TensorList decoder_tensors() = 0;
    virtual std::unique_ptr<TrainableModel> copy() const = 0;
};

class ConvexSymmetricModel final : public TrainableModel {
public:
    DecoderParams decoder;

    ModelKind kind() const override { return ModelKind::convex_symmetric; }
    Index latent_dim() const override { return decoder.convex.input_dim; }
    Index dofs() const override { return decoder.W.rows(); }
    void evaluate(const Vec& q, const RowSet* rows, Vec* value, Mat* jacobian) const override;
    Mat decode_batch(const Mat& Q, DecodeCache* cache = nullptr) const override;
    Mat decode_backward(const DecodeCache& cache, const Mat& dU, TrainableModel& grad) const override;
    void project_constraints() override { project_nonneg(decoder.convex); }
    bool constraints_hold() const override { return decoder.convex.feasible(); }
    void validate() const override;

protected:
    TensorList decoder_tensors() override { return decoder.tensors(); }
    std::unique_ptr<TrainableModel> copy() const override { return std::make_unique<ConvexSymmetricModel>(*this); }
};

class VanillaModel final : public TrainableModel {
public:
    VanillaDecoderParams decoder;

    ModelKind kind() const override { return ModelKind::vanilla; }
    Index latent_dim() const override { return decoder.mlp.input_dim; }
    Index dofs() const override { return decoder.W.rows(); }
    void evaluate(const Vec& q, const RowSet* rows, Vec* value, Mat* jacobian) const override;
    Mat decode_batch(const Mat& Q, DecodeCache* cache = nullptr) const override;
    Mat decode_backward(const DecodeCache& cache, const Mat& dU, TrainableModel& grad) const override;
    void validate() const override;

protected:
    TensorList decoder_tensors() override { return decoder.tensors(); }
    std::unique_ptr<TrainableModel> copy() const override { return std::make_unique<VanillaModel>(*this); }
};

class AblationModel final : public TrainableModel {
public:
    AblationDecoderParams decoder;

    ModelKind kind() const override { return ModelKind::convex_fullspace_ablation; }
    Index latent_dim() const override { return decoder.convex.input_dim; }
    Index dofs() const override { return decoder.convex.output_dim(); }
    void evaluate(const Vec& q, const RowSet* rows, Vec* value, Mat* jacobian) const override;
    Mat decode_batch(const Mat& Q, DecodeCache* cache = nullptr) const override;
    Mat decode_backward(const DecodeCache& cache, const Mat& dU, TrainableModel& grad) const override;
    void project_constraints() override { project_nonneg(decoder.convex); }
    bool constraints_hold() const override { return decoder.convex.feasible(); }
    void validate() const override;

protected:
    TensorList decoder_tensors() override { return decoder.tensors(); }
    std::unique_ptr<TrainableModel> copy() const override { return std::make_unique<AblationModel>(*this); }
};

struct ModelSpec {
    ModelKind kind = ModelKind::convex_symmetric;
    Index k = 4;
    Index r = 0; ///< 0 selects 2k
    std::vector<Index> hidden{64, 64};
    Index encoder_hidden = 128;
    Activation activation = Activation::softplus;
    double beta = 10.0;
    bool pca_init = true;
    std::uint64_t seed = 0;

    Index intermediate_dim() const { return r > 0 ? r : 2 * k; }
    nlohmann::json to_json() const;
};

/// Builds an untrained model. With pca_init the decoder's linear stage starts at
/// B_r / 2 (convex) or B_r (vanilla) and the encoder projection at B_k^T M.
/// Throws RankDeficiencyError if the basis rank is below what the spec needs.
std::unique_ptr<TrainableModel> make_model(const ModelSpec& spec, Index dofs, const PcaBasis* basis,
                                           const LumpedMass& mass);

/// Convenience for the symmetric model: returns the encoder/decoder pair.
std::pair<EncoderParams, DecoderParams> init_from_pca(const PcaBasis& basis, const LumpedMass& mass, Index k, Index r,
                                                      const std::vector<Index>& widths, std::uint64_t seed = 0);

void write_model(const ReducedModel& model, const std::string& path);
std::unique_ptr<ReducedModel> read_model(const std::string& path);
/// As read_model but rejects the (untrainable) linear model.
std::unique_ptr<TrainableModel> read_trainable(const std::string& path);

} // namespace cvxrom
