#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cvxrom/decoder.hpp"
#include "cvxrom/errors.hpp"

namespace cvxrom {

struct TrainConfig {
    int epochs = 50000;
    double learning_rate = 1e-4;
    /// Mini-batch size; 0 or anything >= S means full batch.
    int batch_size = 16;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::uint64_t seed = 0;
    int checkpoint_every = 1000;
    /// Where latest.ckpt / best.ckpt are written; empty disables checkpoint files.
    std::string checkpoint_dir;

    void validate() const;
    nlohmann::json to_json() const;
};

struct EpochRecord {
    int epoch = 0;
    double loss = 0.0;
    double wall_ms = 0.0;
    double grad_norm = 0.0;
};

/// Record 0 is the full-data loss before training; record e (e >= 1) is the
/// sample-weighted mean mini-batch loss seen during epoch e.
struct LossReport {
    std::vector<EpochRecord> history;
    double final_loss = 0.0; ///< full-data loss of the returned model
    double best_loss = 0.0;
    int best_epoch = 0;

    double initial_loss() const { return history.empty() ? final_loss : history.front().loss; }
    void write_csv(const std::string& path) const;
};

/// Thrown when the loss turns non-finite; carries the last model with a finite loss.
class TrainingDiverged : public Error {
public:
    TrainingDiverged(const std::string& what, int epoch, std::shared_ptr<TrainableModel> last_good)
        : Error(what), epoch_(epoch), last_good_(std::move(last_good)) {}
    int epoch() const noexcept { return epoch_; }
    const std::shared_ptr<TrainableModel>& last_good() const noexcept { return last_good_; }

private:
    int epoch_;
    std::shared_ptr<TrainableModel> last_good_;
};

/// (1/|B|) sum_i |f(g(u_i)) - u_i|_M^2 over the batch columns.
double recon_loss(const TrainableModel& model, const Mat& batch, const LumpedMass& mass);
/// Loss and its gradient with respect to every tensor; grad must come from model.zeros_like()
/// and is overwritten.
double recon_loss_gradient(const TrainableModel& model, const Mat& batch, const LumpedMass& mass, TrainableModel& grad);

struct TrainResult {
    std::unique_ptr<TrainableModel> model;
    std::unique_ptr<TrainableModel> best;
    LossReport report;
};

/// Called after every epoch; return false to stop early (used by interactive tools only).
using EpochCallback = std::function<bool(const EpochRecord&)>;

TrainResult train(const TrainConfig& config, const Mat& snapshots, const LumpedMass& mass, const TrainableModel& init,
                  const EpochCallback& on_epoch = {});

// ---------------------------------------------------------------- 2D didactic fit of x^2 + y^2

enum class DidacticKind { icnn, mlp };

struct DidacticConfig {
    int samples = 400;
    int epochs = 4000;
    double learning_rate = 1e-2;
    std::vector<Index> hidden{32, 32};
    Activation mlp_activation = Activation::relu;
    std::uint64_t seed = 0;
    double train_radius = 2.0;
    double outer_radius = 4.0;
    int test_samples = 2000;
};

struct DidacticResult {
    DidacticKind kind = DidacticKind::icnn;
    IcnnParams icnn;
    MlpParams mlp;
    double rmse_disk = 0.0;
    double rmse_annulus = 0.0;
    std::vector<double> loss_history;
    /// Test points in the annulus, used by callers for convexity checks.
    Mat annulus_points;
    Mat disk_points;

    double predict(double x, double y) const;
};

DidacticResult fit_didactic_2d(DidacticKind kind, const DidacticConfig& config = {});

} // namespace cvxrom
