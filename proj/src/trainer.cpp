#include "cvxrom/trainer.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>

namespace cvxrom {

void TrainConfig::validate() const {
    if (epochs < 0) throw InvalidArgument("epochs must be non-negative");
    if (!(learning_rate > 0.0)) throw InvalidArgument("learning rate must be positive");
    if (batch_size < 0) throw InvalidArgument("batch size must be non-negative");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw InvalidArgument("adam betas must lie in [0, 1)");
    if (!(epsilon > 0.0)) throw InvalidArgument("adam epsilon must be positive");
    if (checkpoint_every < 0) throw InvalidArgument("checkpoint interval must be non-negative");
}

nlohmann::json TrainConfig::to_json() const {
    return {{"epochs", epochs},     {"learning_rate", learning_rate}, {"batch_size", batch_size},
            {"beta1", beta1},       {"beta2", beta2},                 {"epsilon", epsilon},
            {"seed", seed},         {"checkpoint_every", checkpoint_every}};
}

void LossReport::write_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path);
    out.precision(17);
    out << "epoch,loss,wall_ms\n";
    for (const auto& r : history) out << r.epoch << ',' << r.loss << ',' << r.wall_ms << '\n';
}

double recon_loss(const TrainableModel& model, const Mat& batch, const LumpedMass& mass) {
    require_dims(batch.rows() == model.dofs() && mass.diag.size() == model.dofs(), "batch, mass and model dimensions differ");
    if (batch.cols() == 0) throw InvalidArgument("empty batch");
    const Mat R = model.decode_batch(encode_batch(model.encoder, batch)) - batch;
    return (R.array().square().colwise() * mass.diag.array()).sum() / static_cast<double>(batch.cols());
}

double recon_loss_gradient(const TrainableModel& model, const Mat& batch, const LumpedMass& mass, TrainableModel& grad) {
    require_dims(batch.rows() == model.dofs() && mass.diag.size() == model.dofs(), "batch, mass and model dimensions differ");
    if (batch.cols() == 0) throw InvalidArgument("empty batch");
    const double inv_b = 1.0 / static_cast<double>(batch.cols());
    EncoderCache ec;
    DecodeCache dc;
    const Mat Q = encode_batch(model.encoder, batch, &ec);
    const Mat R = model.decode_batch(Q, &dc) - batch;
    const double loss = (R.array().square().colwise() * mass.diag.array()).sum() * inv_b;
    const Mat dU = (2.0 * inv_b) * (mass.diag.asDiagonal() * R);
    set_zero(grad.tensors());
    const Mat dQ = model.decode_backward(dc, dU, grad);
    encoder_backward(model.encoder, ec, dQ, grad.encoder);
    return loss;
}

namespace {

void copy_tensors(TrainableModel& dst, TrainableModel& src) {
    const TensorList d = dst.tensors(), s = src.tensors();
    for (std::size_t i = 0; i < d.size(); ++i) std::copy(s[i].begin(), s[i].end(), d[i].begin());
}

double tensor_norm(const TensorList& tensors) {
    double s = 0.0;
    for (const auto& t : tensors)
        for (double v : t) s += v * v;
    return std::sqrt(s);
}

} // namespace

TrainResult train(const TrainConfig& config, const Mat& snapshots, const LumpedMass& mass, const TrainableModel& init,
                  const EpochCallback& on_epoch) {
    config.validate();
    init.validate();
    require_dims(snapshots.rows() == init.dofs(), "snapshot length does not match the model");
    require_dims(mass.diag.size() == init.dofs(), "mass length does not match the model");
    const Index S = snapshots.cols();
    if (S < 1) throw InvalidArgument("training needs at least one snapshot");
    if (!snapshots.allFinite()) throw InvalidArgument("snapshots contain non-finite values");

    const auto t0 = std::chrono::steady_clock::now();
    const auto elapsed_ms = [&] {
        return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    };

    TrainResult result;
    result.model = init.clone_trainable();
    auto& model = *result.model;
    if (config.epochs > 0) model.project_constraints();
    auto grad = model.zeros_like();
    auto last_good = model.clone_trainable();
    result.best = model.clone_trainable();

    LossReport& report = result.report;
    const double initial = recon_loss(model, snapshots, mass);
    if (!std::isfinite(initial)) throw InvalidArgument("initial loss is not finite");
    report.history.push_back({0, initial, elapsed_ms(), 0.0});
    report.best_loss = initial;
    report.best_epoch = 0;

    const Index batch = (config.batch_size <= 0 || config.batch_size >= S) ? S : config.batch_size;
    Adam adam(AdamConfig{config.learning_rate, config.beta1, config.beta2, config.epsilon});
    Rng rng(config.seed);
    std::vector<Index> order(static_cast<std::size_t>(S));
    std::iota(order.begin(), order.end(), Index{0});
    Mat batch_data(snapshots.rows(), batch);

    const auto write_checkpoints = [&] {
        if (config.checkpoint_dir.empty()) return;
        std::filesystem::create_directories(config.checkpoint_dir);
        write_model(model, (std::filesystem::path(config.checkpoint_dir) / "latest.ckpt").string());
        write_model(*result.best, (std::filesystem::path(config.checkpoint_dir) / "best.ckpt").string());
    };

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        if (batch < S) std::shuffle(order.begin(), order.end(), rng);
        double sum = 0.0;
        double gnorm = 0.0;
        for (Index start = 0; start < S; start += batch) {
            const Index n = std::min(batch, S - start);
            if (n != batch_data.cols()) batch_data.resize(snapshots.rows(), n);
            for (Index j = 0; j < n; ++j) batch_data.col(j) = snapshots.col(order[static_cast<std::size_t>(start + j)]);
            const double loss = recon_loss_gradient(model, batch_data, mass, *grad);
            const TensorList g = grad->tensors();
            if (!std::isfinite(loss) || !all_finite(g))
                throw TrainingDiverged("training loss became non-finite at epoch " + std::to_string(epoch), epoch,
                                       std::shared_ptr<TrainableModel>(last_good.release()));
            adam.step(model.tensors(), g);
            model.project_constraints();
            sum += loss * static_cast<double>(n);
            gnorm = tensor_norm(g);
        }
        const EpochRecord rec{epoch, sum / static_cast<double>(S), elapsed_ms(), gnorm};
        if (!std::isfinite(rec.loss) || !all_finite(model.tensors()))
            throw TrainingDiverged("model parameters became non-finite at epoch " + std::to_string(epoch), epoch,
                                   std::shared_ptr<TrainableModel>(last_good.release()));
        report.history.push_back(rec);
        copy_tensors(*last_good, model);
        if (rec.loss < report.best_loss) {
            report.best_loss = rec.loss;
            report.best_epoch = epoch;
            copy_tensors(*result.best, model);
        }
        if (config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0) {
            if (!model.constraints_hold()) throw Error("model constraints violated at epoch " + std::to_string(epoch));
            write_checkpoints();
        }
        if (on_epoch && !on_epoch(rec)) break;
    }
    report.final_loss = recon_loss(model, snapshots, mass);
    if (config.epochs > 0) write_checkpoints();
    return result;
}

// ---------------------------------------------------------------- didactic 2D

double DidacticResult::predict(double x, double y) const {
    const Vec p = Eigen::Vector2d(x, y);
    return kind == DidacticKind::icnn ? icnn_forward(icnn, p)[0] : mlp_forward(mlp, p)[0];
}

namespace {

Mat sample_annulus(int n, double r0, double r1, Rng& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Mat pts(2, n);
    for (int i = 0; i < n; ++i) {
        const double r = std::sqrt(r0 * r0 + (r1 * r1 - r0 * r0) * u(rng));
        const double th = 2.0 * std::numbers::pi * u(rng);
        pts(0, i) = r * std::cos(th);
        pts(1, i) = r * std::sin(th);
    }
    return pts;
}

Vec paraboloid(const Mat& pts) { return pts.colwise().squaredNorm().transpose(); }

} // namespace

DidacticResult fit_didactic_2d(DidacticKind kind, const DidacticConfig& cfg) {
    if (cfg.samples < 1 || cfg.epochs < 0 || !(cfg.learning_rate > 0.0)) throw InvalidArgument("invalid didactic config");
    Rng rng(cfg.seed);
    DidacticResult res;
    res.kind = kind;
    std::vector<Index> widths = cfg.hidden;
    widths.push_back(1);
    if (kind == DidacticKind::icnn)
        res.icnn = make_icnn(2, widths, rng);
    else
        res.mlp = make_mlp(2, widths, cfg.mlp_activation, rng);

    const Mat X = sample_annulus(cfg.samples, 0.0, cfg.train_radius, rng);
    const Vec z = paraboloid(X);
    Adam adam(AdamConfig{cfg.learning_rate});
    IcnnParams gi = res.icnn.zeros_like();
    MlpParams gm = res.mlp.zeros_like();
    const double inv_n = 1.0 / static_cast<double>(cfg.samples);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        double loss = 0.0;
        if (kind == DidacticKind::icnn) {
            IcnnCache cache;
            const Vec pred = icnn_forward_batch(res.icnn, X, &cache).row(0).transpose();
            const Vec r = pred - z;
            loss = r.squaredNorm() * inv_n;
            set_zero(gi.tensors());
            icnn_backward(res.icnn, cache, (2.0 * inv_n) * r.transpose(), gi);
            adam.step(res.icnn.tensors(), gi.tensors());
            project_nonneg(res.icnn);
        } else {
            MlpCache cache;
            const Vec pred = mlp_forward_batch(res.mlp, X, &cache).row(0).transpose();
            const Vec r = pred - z;
            loss = r.squaredNorm() * inv_n;
            set_zero(gm.tensors());
            mlp_backward(res.mlp, cache, (2.0 * inv_n) * r.transpose(), gm);
            adam.step(res.mlp.tensors(), gm.tensors());
        }
        if (!std::isfinite(loss)) throw Error("didactic fit diverged at epoch " + std::to_string(epoch));
        res.loss_history.push_back(loss);
    }

    Rng test_rng(cfg.seed + 1);
    res.disk_points = sample_annulus(cfg.test_samples, 0.0, cfg.train_radius, test_rng);
    res.annulus_points = sample_annulus(cfg.test_samples, cfg.train_radius, cfg.outer_radius, test_rng);
    const auto rmse = [&](const Mat& pts) {
        double s = 0.0;
        for (Index i = 0; i < pts.cols(); ++i) {
            const double e = res.predict(pts(0, i), pts(1, i)) - pts.col(i).squaredNorm();
            s += e * e;
        }
        return std::sqrt(s / static_cast<double>(pts.cols()));
    };
    res.rmse_disk = rmse(res.disk_points);
    res.rmse_annulus = rmse(res.annulus_points);
    return res;
}

} // namespace cvxrom
