#include "cvxrom/bench.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "cvxrom/errors.hpp"

namespace cvxrom {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

std::string num(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

double mean(const std::vector<double>& v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double variance(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return s / static_cast<double>(v.size());
}

double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

bool non_increasing(const std::vector<double>& v) {
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[i - 1]) return false;
    return true;
}

std::uint64_t mix_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) {
    std::seed_seq seq{static_cast<std::uint32_t>(base), static_cast<std::uint32_t>(base >> 32), static_cast<std::uint32_t>(a),
                      static_cast<std::uint32_t>(b)};
    std::uint32_t words[2];
    seq.generate(words, words + 2);
    return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

struct Setup {
    TetMesh mesh;
    Material material;
    LumpedMass mass;
    BoundaryCondition bc;
};

Setup make_setup(const BenchFixture& fx) {
    Setup s{fx.mesh(), fx.material(), {}, {}};
    s.mass = lump_mass(s.mesh);
    s.bc = fx.scenario(Vec3::Zero()).boundary(s.mesh);
    return s;
}

Vec top_force(const BenchFixture& fx, const Setup& s, const Vec3& f) {
    return fx.scenario(f).external_force(s.mesh, s.mass.diag, 0.0);
}

SnapshotSet trajectory(const BenchFixture& fx, const Setup& s, const Vec3& f, int steps, int stride) {
    return generate_snapshots(s.mesh, s.material, fx.scenario(f), s.bc, fx.dt, steps, stride);
}

Vec3 compression(const BenchFixture& fx) { return Vec3(0.0, -fx.load, 0.0); }
Vec3 stretching(const BenchFixture& fx) { return Vec3(0.0, fx.load, 0.0); }
/// Lateral top load giving a tip deflection comparable to the axial cases.
Vec3 bending(const BenchFixture& fx) { return Vec3(fx.load / 30.0, 0.0, 0.0); }

struct Method {
    std::string label;
    std::shared_ptr<const ReducedModel> model;
};

struct Methods {
    PcaBasis basis;
    std::vector<Method> all; ///< linear, vanilla, convex_symmetric
};

struct MethodOptions {
    Index linear_k;
    Index k;
    Index r;
    bool pca_init = true;
};

ModelSpec spec_for(const BenchFixture& fx, ModelKind kind, Index k, Index r, bool pca_init, std::uint64_t seed) {
    ModelSpec spec;
    spec.kind = kind;
    spec.k = k;
    spec.r = r;
    spec.hidden = fx.hidden;
    spec.encoder_hidden = fx.encoder_hidden;
    spec.pca_init = pca_init;
    spec.seed = seed;
    return spec;
}

TrainConfig train_config(const BenchFixture& fx, std::uint64_t seed) {
    TrainConfig cfg;
    cfg.epochs = fx.epochs;
    cfg.learning_rate = fx.learning_rate;
    cfg.batch_size = fx.batch_size;
    cfg.seed = seed;
    cfg.checkpoint_every = 0;
    return cfg;
}

std::vector<double> loss_series(const LossReport& rep) {
    std::vector<double> out;
    out.reserve(rep.history.size());
    for (const auto& r : rep.history) out.push_back(r.loss);
    return out;
}

std::shared_ptr<TrainableModel> train_one(const BenchFixture& fx, const Setup& s, const SnapshotSet& snaps, const ModelSpec& spec,
                                          const PcaBasis* basis, ExperimentReport& rep) {
    const auto init = make_model(spec, s.mesh.dofs(), spec.pca_init ? basis : nullptr, s.mass);
    const auto t0 = Clock::now();
    TrainResult res = train(train_config(fx, spec.seed), snaps.U, s.mass, *init);
    const std::string label = to_string(spec.kind);
    rep.timing["train_ms"][label] = ms_since(t0);
    rep.series[label]["train_loss"] = loss_series(res.report);
    rep.scalars[label]["final_loss"] = res.report.final_loss;
    return std::shared_ptr<TrainableModel>(std::move(res.model));
}

Methods train_methods(const BenchFixture& fx, const Setup& s, const SnapshotSet& snaps, const MethodOptions& opt,
                      ExperimentReport& rep) {
    Methods m;
    const Index need = opt.pca_init ? std::max(opt.linear_k, opt.r) : opt.linear_k;
    m.basis = compute_pca(snaps, s.mass, need);
    auto linear = std::make_shared<LinearModel>(m.basis.truncated(opt.linear_k), s.mass);
    {
        Mat codes = encode_all(*linear, snaps.U);
        double loss = 0.0;
        for (Index c = 0; c < snaps.count(); ++c) {
            const Vec d = linear->decode(codes.col(c)) - snaps.U.col(c);
            loss += d.dot(s.mass.diag.cwiseProduct(d));
        }
        rep.scalars["linear"]["final_loss"] = loss / static_cast<double>(snaps.count());
    }
    m.all.push_back({"linear", linear});
    for (ModelKind kind : {ModelKind::vanilla, ModelKind::convex_symmetric}) {
        const ModelSpec spec = spec_for(fx, kind, opt.k, opt.r, opt.pca_init, fx.seed);
        m.all.push_back({to_string(kind), train_one(fx, s, snaps, spec, &m.basis, rep)});
    }
    return m;
}

RelaxTrajectory relax(const Setup& s, const ReducedModel& model, const Vec& f_ext, const Vec& q0, int iterations,
                      std::optional<CubatureSet> cubature = std::nullopt) {
    ReducedObjective obj(s.mesh, s.material, model, std::move(cubature));
    if (f_ext.size() > 0) obj.set_external_force(f_ext);
    return quasi_static_relax(obj, q0, iterations);
}

/// Objective value of the full-space static solution under f_ext.
double full_static_objective(const Setup& s, const Vec& f_ext, Vec* u_out = nullptr) {
    NewtonConfig cfg;
    cfg.max_iterations = 200;
    const Vec u = solve_static(s.mesh, s.material, s.bc, f_ext, cfg);
    if (u_out) *u_out = u;
    return total_energy(s.mesh, u, s.material) - f_ext.dot(u);
}

Vec coordinate_rms(const Mat& codes) {
    Vec rms(codes.rows());
    for (Index i = 0; i < codes.rows(); ++i) rms[i] = std::sqrt(codes.row(i).squaredNorm() / static_cast<double>(codes.cols()));
    return rms;
}

double tip_displacement(const Setup& s, const Vec& u, int axis) {
    const auto [lo, hi] = s.mesh.bounds();
    double sum = 0.0;
    int n = 0;
    for (int v = 0; v < s.mesh.num_vertices(); ++v)
        if (s.mesh.rest_vertex(v).y() >= hi.y() - 1e-9) {
            sum += u[3 * v + axis];
            ++n;
        }
    return n ? sum / n : 0.0;
}

} // namespace

// ---------------------------------------------------------------- fixture

TetMesh BenchFixture::mesh() const { return make_bar_mesh(nx, ny, nz, dims, density); }

Material BenchFixture::material() const { return Material::from_young_poisson(youngs_modulus, poisson_ratio); }

ForceScenario BenchFixture::scenario(const Vec3& f) const {
    std::string text = "name column\nfix y <= 0\n";
    if (f.squaredNorm() > 0.0)
        text += "force 0 inf y >= " + num(dims.y()) + " " + num(f.x()) + " " + num(f.y()) + " " + num(f.z()) + "\n";
    return parse_scenario(text, "<fixture>");
}

nlohmann::json BenchFixture::to_json() const {
    return {{"nx", nx},
            {"ny", ny},
            {"nz", nz},
            {"dims", {dims.x(), dims.y(), dims.z()}},
            {"density", density},
            {"youngs_modulus", youngs_modulus},
            {"poisson_ratio", poisson_ratio},
            {"dt", dt},
            {"steps", steps},
            {"stride", stride},
            {"load", load},
            {"linear_k", linear_k},
            {"k", k},
            {"r", r},
            {"hidden", hidden},
            {"encoder_hidden", encoder_hidden},
            {"epochs", epochs},
            {"learning_rate", learning_rate},
            {"batch_size", batch_size},
            {"trials", trials},
            {"relax_iterations", relax_iterations},
            {"seed", seed}};
}

BenchFixture BenchFixture::from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ParseError("fixture must be a JSON object");
    BenchFixture f;
    const nlohmann::json defaults = f.to_json();
    for (const auto& [key, value] : j.items())
        if (!defaults.contains(key)) throw ParseError("unknown fixture key '" + key + "'");
    try {
        const auto get = [&](const char* key, auto& out) {
            if (j.contains(key)) out = j.at(key).get<std::remove_reference_t<decltype(out)>>();
        };
        get("nx", f.nx);
        get("ny", f.ny);
        get("nz", f.nz);
        if (j.contains("dims")) {
            const auto d = j.at("dims").get<std::vector<double>>();
            if (d.size() != 3) throw ParseError("fixture dims must have 3 entries");
            f.dims = Vec3(d[0], d[1], d[2]);
        }
        get("density", f.density);
        get("youngs_modulus", f.youngs_modulus);
        get("poisson_ratio", f.poisson_ratio);
        get("dt", f.dt);
        get("steps", f.steps);
        get("stride", f.stride);
        get("load", f.load);
        get("linear_k", f.linear_k);
        get("k", f.k);
        get("r", f.r);
        get("hidden", f.hidden);
        get("encoder_hidden", f.encoder_hidden);
        get("epochs", f.epochs);
        get("learning_rate", f.learning_rate);
        get("batch_size", f.batch_size);
        get("trials", f.trials);
        get("relax_iterations", f.relax_iterations);
        get("seed", f.seed);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed fixture: ") + e.what());
    }
    f.validate();
    return f;
}

void BenchFixture::validate() const {
    if (nx < 1 || ny < 1 || nz < 1) throw InvalidArgument("fixture cell counts must be >= 1");
    if (!(dims.array() > 0.0).all()) throw InvalidArgument("fixture dims must be positive");
    if (!(dt > 0.0) || steps < 1 || stride < 1 || steps / stride < 2) throw InvalidArgument("fixture time stepping is invalid");
    if (linear_k < 1 || k < 1 || r < k) throw InvalidArgument("fixture latent sizes need 1 <= k <= r");
    if (epochs < 0 || !(learning_rate > 0.0) || batch_size < 0) throw InvalidArgument("fixture training settings are invalid");
    if (trials < 1 || relax_iterations < 1) throw InvalidArgument("fixture trial counts must be positive");
}

// ---------------------------------------------------------------- report

void ExperimentReport::validate() const {
    for (const auto& [method, named] : series)
        for (const auto& [name, values] : named)
            for (double v : values)
                if (!std::isfinite(v)) throw Error("series " + method + "/" + name + " of " + id + " is not finite");
    for (const auto& [method, named] : scalars)
        for (const auto& [name, v] : named)
            if (!std::isfinite(v)) throw Error("scalar " + method + "/" + name + " of " + id + " is not finite");
}

nlohmann::json ExperimentReport::to_json() const {
    return {{"id", id}, {"config", config}, {"seeds", seeds}, {"scalars", scalars}, {"series", series}, {"timing", timing}};
}

void ExperimentReport::write(const std::string& dir) const {
    std::filesystem::create_directories(dir);
    {
        std::ofstream out(std::filesystem::path(dir) / "report.json");
        if (!out) throw Error("cannot write " + dir + "/report.json");
        out << to_json().dump(2) << "\n";
    }
    for (const auto& [method, named] : series)
        for (const auto& [name, values] : named) {
            const auto path = std::filesystem::path(dir) / (method + "_" + name + ".csv");
            std::ofstream out(path);
            if (!out) throw Error("cannot write " + path.string());
            out.precision(17);
            out << "index,value\n";
            for (std::size_t i = 0; i < values.size(); ++i) out << i << "," << values[i] << "\n";
        }
}

double ExperimentReport::scalar(const std::string& method, const std::string& name) const {
    const auto m = scalars.find(method);
    if (m == scalars.end() || !m->second.count(name)) throw InvalidArgument("report " + id + " has no scalar " + method + "/" + name);
    return m->second.at(name);
}

const std::vector<double>& ExperimentReport::values(const std::string& method, const std::string& name) const {
    const auto m = series.find(method);
    if (m == series.end() || !m->second.count(name)) throw InvalidArgument("report " + id + " has no series " + method + "/" + name);
    return m->second.at(name);
}

// ---------------------------------------------------------------- helpers

void parallel_for(int n, const std::function<void(int)>& body) {
    const int workers = std::max(1, std::min<int>(n, static_cast<int>(std::thread::hardware_concurrency())));
    if (workers <= 1) {
        for (int i = 0; i < n; ++i) body(i);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (int i = next++; i < n; i = next++) {
                try {
                    body(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    pool.clear();
    if (error) std::rethrow_exception(error);
}

double inversion_deviation(const ReducedModel& model, const Mat& codes, const LumpedMass& mass) {
    if (codes.cols() == 0) throw InvalidArgument("no latent codes");
    double sum = 0.0;
    for (Index c = 0; c < codes.cols(); ++c) {
        const Vec q = codes.col(c);
        const Vec d = model.decode(-q) + model.decode(q);
        sum += std::sqrt(d.dot(mass.diag.cwiseProduct(d)));
    }
    return sum / static_cast<double>(codes.cols());
}

Mat encode_all(const ReducedModel& model, const Mat& U) {
    Mat codes(model.latent_dim(), U.cols());
    for (Index c = 0; c < U.cols(); ++c) codes.col(c) = model.encode(U.col(c));
    return codes;
}

// ---------------------------------------------------------------- experiments

ExperimentReport run_direction_generalization(const BenchFixture& fx) {
    fx.validate();
    ExperimentReport rep;
    rep.id = "direction";
    rep.config = fx.to_json();
    rep.seeds = {fx.seed};
    const Setup s = make_setup(fx);
    const SnapshotSet snaps = trajectory(fx, s, compression(fx), fx.steps, fx.stride);
    const Methods m = train_methods(fx, s, snaps, {fx.linear_k, fx.k, fx.r}, rep);

    const Vec f_test = top_force(fx, s, stretching(fx));
    Vec u_ref;
    const double e_min = full_static_objective(s, f_test, &u_ref);
    const double e_rest = rest_energy(s.mesh, s.material);
    rep.scalars["full"]["tip_displacement"] = tip_displacement(s, u_ref, 1);
    rep.scalars["full"]["objective"] = e_min;
    for (const auto& [label, model] : m.all) {
        const Mat codes = encode_all(*model, snaps.U);
        rep.scalars[label]["inversion_deviation"] = inversion_deviation(*model, codes, s.mass);
        const RelaxTrajectory t = relax(s, *model, f_test, Vec::Zero(model->latent_dim()), fx.relax_iterations);
        std::vector<double> normalized;
        for (double e : t.energy) normalized.push_back((e - e_min) / (e_rest - e_min));
        rep.series[label]["energy"] = t.energy;
        rep.series[label]["normalized_energy"] = normalized;
        const Vec u = model->decode(t.q.back());
        rep.scalars[label]["final_normalized_energy"] = normalized.back();
        rep.scalars[label]["tip_displacement"] = tip_displacement(s, u, 1);
        const Vec d = u - u_ref;
        rep.scalars[label]["shape_error"] = std::sqrt(d.dot(s.mass.diag.cwiseProduct(d)) / u_ref.dot(s.mass.diag.cwiseProduct(u_ref)));
    }
    rep.validate();
    return rep;
}

ExperimentReport run_magnitude_generalization(const BenchFixture& fx) {
    fx.validate();
    ExperimentReport rep;
    rep.id = "magnitude";
    rep.config = fx.to_json();
    rep.seeds = {fx.seed};
    const Setup s = make_setup(fx);
    const SnapshotSet snaps = trajectory(fx, s, stretching(fx), fx.steps, fx.stride);
    const Methods m = train_methods(fx, s, snaps, {fx.linear_k, fx.k, fx.r}, rep);

    const Vec f_test = top_force(fx, s, 3.0 * stretching(fx));
    const double e_min = full_static_objective(s, f_test);
    const double e_rest = rest_energy(s.mesh, s.material);
    rep.scalars["full"]["objective"] = e_min;
    for (const auto& [label, model] : m.all) {
        const RelaxTrajectory t = relax(s, *model, f_test, Vec::Zero(model->latent_dim()), fx.relax_iterations);
        std::vector<double> normalized;
        for (double e : t.energy) normalized.push_back((e - e_min) / (e_rest - e_min));
        rep.series[label]["normalized_energy"] = normalized;
        rep.scalars[label]["start"] = normalized.front();
        rep.scalars[label]["plateau"] = normalized.back();
        rep.scalars[label]["monotone"] = non_increasing(normalized) ? 1.0 : 0.0;
        rep.scalars[label]["iterations"] = static_cast<double>(t.report.iterations);
    }
    rep.validate();
    return rep;
}

namespace {

struct BendData {
    Setup setup;
    SnapshotSet snaps;
};

BendData bend_data(const BenchFixture& fx) {
    BendData d{make_setup(fx), {}};
    d.snaps = trajectory(fx, d.setup, bending(fx), fx.steps, fx.stride);
    return d;
}

} // namespace

ExperimentReport run_cubature_robustness(const BenchFixture& fx) {
    fx.validate();
    ExperimentReport rep;
    rep.id = "cubature";
    rep.config = fx.to_json();
    const BendData data = bend_data(fx);
    const Setup& s = data.setup;
    const Methods m = train_methods(fx, s, data.snaps, {fx.linear_k, fx.k, fx.r}, rep);

    constexpr int kMaxCount = 5;
    for (const auto& [label, model] : m.all) {
        const Vec spread = coordinate_rms(encode_all(*model, data.snaps.U));
        const auto* linear = dynamic_cast<const LinearModel*>(model.get());
        std::vector<double> means, variances;
        for (int count = 1; count <= kMaxCount; ++count) {
            std::vector<double> norms(static_cast<std::size_t>(fx.trials));
            parallel_for(fx.trials, [&](int t) {
                const std::uint64_t seed = mix_seed(fx.seed, static_cast<std::uint64_t>(count), static_cast<std::uint64_t>(t));
                const CubatureSet cub = select_random_cubature(s.mesh, count, seed);
                Rng rng(seed + 1);
                std::normal_distribution<double> nd;
                Vec q0(model->latent_dim());
                for (Index i = 0; i < q0.size(); ++i) q0[i] = spread[i] * nd(rng);
                Vec q;
                if (linear) {
                    q = linear_nullspace_solve(*linear, s.mesh, s.material, cub, q0).q;
                } else {
                    const RelaxTrajectory tr = relax(s, *model, Vec(), q0, fx.relax_iterations, cub);
                    q = tr.q.back();
                }
                norms[static_cast<std::size_t>(t)] = model->decode(q).norm();
            });
            rep.series[label]["final_norm_count" + std::to_string(count)] = norms;
            means.push_back(mean(norms));
            variances.push_back(variance(norms));
        }
        rep.series[label]["mean_norm"] = means;
        rep.series[label]["variance_norm"] = variances;
        rep.scalars[label]["max_mean_norm"] = *std::max_element(means.begin(), means.end());
    }
    for (int count = 1; count <= kMaxCount; ++count)
        for (int t = 0; t < fx.trials; ++t)
            rep.seeds.push_back(mix_seed(fx.seed, static_cast<std::uint64_t>(count), static_cast<std::uint64_t>(t)));
    rep.validate();
    return rep;
}

ExperimentReport run_sparse_keyframes(const BenchFixture& fx) {
    fx.validate();
    ExperimentReport rep;
    rep.id = "keyframes";
    rep.config = fx.to_json();
    rep.seeds = {fx.seed};
    const Setup s = make_setup(fx);
    constexpr int kFrames = 5;
    const int stride = std::max(1, fx.steps / kFrames);
    const SnapshotSet snaps = trajectory(fx, s, compression(fx) + bending(fx), stride * kFrames, stride);
    if (snaps.count() != kFrames) throw InvalidArgument("keyframe experiment needs exactly 5 snapshots");

    // Five frames cannot seed a rank-16 PCA layer, so the networks use standard initialization here.
    constexpr Index kLinear = 5, kLatent = 8;
    const Methods m = train_methods(fx, s, snaps, {kLinear, kLatent, 2 * kLatent, false}, rep);
    const double e_rest = rest_energy(s.mesh, s.material);
    constexpr int kSamples = 50;
    constexpr double kNoise = 15.0;
    for (const auto& [label, model] : m.all) {
        const Mat codes = encode_all(*model, snaps.U);
        std::vector<double> errors;
        for (Index c = 0; c < snaps.count(); ++c) {
            const Vec d = model->decode(codes.col(c)) - snaps.U.col(c);
            const Vec& u = snaps.U.col(c);
            errors.push_back(std::sqrt(d.dot(s.mass.diag.cwiseProduct(d)) / u.dot(s.mass.diag.cwiseProduct(u))));
        }
        rep.series[label]["recon_error"] = errors;
        rep.scalars[label]["mean_recon_error"] = mean(errors);
        Rng rng(mix_seed(fx.seed, 9));
        std::normal_distribution<double> nd(0.0, kNoise);
        std::vector<double> energies;
        for (int i = 0; i < kSamples; ++i) {
            Vec q = codes.col(i % kFrames);
            for (Index j = 0; j < q.size(); ++j) q[j] += nd(rng);
            energies.push_back(total_energy(s.mesh, model->decode(q), s.material) - e_rest);
        }
        rep.series[label]["perturbed_energy"] = energies;
        rep.scalars[label]["median_perturbed_energy"] = median(energies);
    }
    rep.validate();
    return rep;
}

ExperimentReport run_convergence_profile(const BenchFixture& fx) {
    fx.validate();
    ExperimentReport rep;
    rep.id = "convergence";
    rep.config = fx.to_json();
    rep.seeds = {fx.seed};
    const BendData data = bend_data(fx);
    const Setup& s = data.setup;
    const Methods m = train_methods(fx, s, data.snaps, {fx.linear_k, fx.k, fx.r}, rep);
    const double e_rest = rest_energy(s.mesh, s.material);
    const int trials = std::min(fx.trials, 20);
    const std::size_t length = static_cast<std::size_t>(fx.relax_iterations) + 1;

    for (const auto& [label, model] : m.all) {
        const Mat codes = encode_all(*model, data.snaps.U);
        std::vector<std::vector<double>> curves(static_cast<std::size_t>(trials));
        std::vector<double> per_iteration_ms(static_cast<std::size_t>(trials));
        Rng pick(mix_seed(fx.seed, 17));
        std::vector<Index> starts;
        for (int t = 0; t < trials; ++t)
            starts.push_back(std::uniform_int_distribution<Index>(0, codes.cols() - 1)(pick));
        parallel_for(trials, [&](int t) {
            const Vec q0 = codes.col(starts[static_cast<std::size_t>(t)]);
            const auto t0 = Clock::now();
            const RelaxTrajectory tr = relax(s, *model, Vec(), q0, fx.relax_iterations);
            per_iteration_ms[static_cast<std::size_t>(t)] = ms_since(t0) / std::max<std::size_t>(1, tr.energy.size());
            const double e0 = tr.energy.front() - e_rest;
            auto& c = curves[static_cast<std::size_t>(t)];
            for (double e : tr.energy) c.push_back(e0 > 0.0 ? (e - e_rest) / e0 : 0.0);
            c.resize(length, c.back());
        });
        std::vector<double> mean_curve(length), var_curve(length), finals;
        for (std::size_t i = 0; i < length; ++i) {
            std::vector<double> col;
            for (const auto& c : curves) col.push_back(c[i]);
            mean_curve[i] = mean(col);
            var_curve[i] = variance(col);
        }
        for (const auto& c : curves) finals.push_back(c.back());
        rep.series[label]["mean_normalized_energy"] = mean_curve;
        rep.series[label]["variance_normalized_energy"] = var_curve;
        rep.series[label]["final_normalized_energy"] = finals;
        rep.scalars[label]["max_final_normalized_energy"] = *std::max_element(finals.begin(), finals.end());
        rep.timing["iteration_ms"][label] = mean(per_iteration_ms);
    }

    // Per-iteration cost of the linear model against its dimension.
    const Index widest = std::min<Index>(20, std::min(data.snaps.dofs(), data.snaps.count()));
    const PcaBasis wide = compute_pca(data.snaps, s.mass, widest);
    for (Index k : {5, 10, 20}) {
        if (k > widest) continue;
        const LinearModel lin(wide.truncated(k), s.mass);
        const ReducedObjective obj(s.mesh, s.material, lin);
        const Vec q = encode_all(lin, data.snaps.U).col(data.snaps.count() - 1);
        Vec g;
        Mat H;
        std::vector<double> samples;
        for (int rep_i = 0; rep_i < 7; ++rep_i) {
            const auto t0 = Clock::now();
            for (int i = 0; i < 20; ++i) {
                obj.evaluate(q, &g, &H);
                const Vec step = H.llt().solve(g);
                (void)step;
            }
            samples.push_back(ms_since(t0) / 20.0);
        }
        rep.timing["linear_iteration_ms"][std::to_string(k)] = median(samples);
    }
    rep.validate();
    return rep;
}

ExperimentReport run_training_comparison(const BenchFixture& fx) {
    fx.validate();
    ExperimentReport rep;
    rep.id = "training";
    rep.config = fx.to_json();
    rep.seeds = {fx.seed};
    const Setup s = make_setup(fx);
    const SnapshotSet snaps = trajectory(fx, s, compression(fx), fx.steps, fx.stride);
    const PcaBasis basis = compute_pca(snaps, s.mass, fx.r);
    train_one(fx, s, snaps, spec_for(fx, ModelKind::convex_symmetric, fx.k, fx.r, true, fx.seed), &basis, rep);
    train_one(fx, s, snaps, spec_for(fx, ModelKind::convex_fullspace_ablation, fx.k, fx.r, false, fx.seed), nullptr, rep);
    rep.validate();
    return rep;
}

ExperimentReport run_didactic2d(const BenchFixture& fx) {
    ExperimentReport rep;
    rep.id = "didactic2d";
    DidacticConfig cfg;
    cfg.seed = fx.seed;
    rep.config = {{"samples", cfg.samples},           {"epochs", cfg.epochs},
                  {"learning_rate", cfg.learning_rate}, {"hidden", cfg.hidden},
                  {"mlp_activation", to_string(cfg.mlp_activation)},
                  {"train_radius", cfg.train_radius}, {"outer_radius", cfg.outer_radius},
                  {"seed", cfg.seed}};
    rep.seeds = {cfg.seed};
    for (DidacticKind kind : {DidacticKind::icnn, DidacticKind::mlp}) {
        const std::string label = kind == DidacticKind::icnn ? "icnn" : "mlp";
        const auto t0 = Clock::now();
        const DidacticResult r = fit_didactic_2d(kind, cfg);
        rep.timing["fit_ms"][label] = ms_since(t0);
        rep.series[label]["loss"] = r.loss_history;
        rep.scalars[label]["rmse_disk"] = r.rmse_disk;
        rep.scalars[label]["rmse_annulus"] = r.rmse_annulus;
        // Midpoint convexity on random annulus pairs.
        Rng rng(mix_seed(fx.seed, 33));
        std::uniform_int_distribution<Index> pick(0, r.annulus_points.cols() - 1);
        std::uniform_real_distribution<double> lam(0.0, 1.0);
        int violations = 0;
        double worst = 0.0;
        for (int i = 0; i < 1000; ++i) {
            const Vec a = r.annulus_points.col(pick(rng)), b = r.annulus_points.col(pick(rng));
            const double l = lam(rng);
            const Vec c = l * a + (1.0 - l) * b;
            const double gap = r.predict(c[0], c[1]) - (l * r.predict(a[0], a[1]) + (1.0 - l) * r.predict(b[0], b[1]));
            worst = std::max(worst, gap);
            if (gap > 1e-9) ++violations;
        }
        rep.scalars[label]["convexity_violations"] = violations;
        rep.scalars[label]["worst_convexity_gap"] = worst;
    }
    rep.validate();
    return rep;
}

ExperimentReport run_realtime(const BenchFixture& fx, const RealtimeConfig& rc) {
    ExperimentReport rep;
    rep.id = "realtime";
    rep.config = {{"nx", rc.nx}, {"ny", rc.ny}, {"nz", rc.nz}, {"dims", {rc.dims.x(), rc.dims.y(), rc.dims.z()}},
                  {"k", rc.k},   {"r", rc.r},   {"cubature", rc.cubature}, {"steps", rc.steps}, {"dt", rc.dt}};
    rep.seeds = {fx.seed};
    BenchFixture big = fx;
    big.nx = rc.nx;
    big.ny = rc.ny;
    big.nz = rc.nz;
    big.dims = rc.dims;
    const BendData data = bend_data(big);
    const Setup& s = data.setup;
    if (rc.cubature > s.mesh.num_elements()) throw InvalidArgument("realtime mesh has fewer elements than the cubature count");
    const PcaBasis basis = compute_pca(data.snaps, s.mass, rc.r);
    ModelSpec spec = spec_for(fx, ModelKind::convex_symmetric, rc.k, rc.r, true, fx.seed);
    const auto model = make_model(spec, s.mesh.dofs(), &basis, s.mass);
    ReducedObjective obj(s.mesh, s.material, *model, select_random_cubature(s.mesh, rc.cubature, fx.seed));
    const auto [lo, hi] = s.mesh.bounds();
    int grab = 0;
    for (int v = 0; v < s.mesh.num_vertices(); ++v)
        if (s.mesh.rest_vertex(v).y() > s.mesh.rest_vertex(grab).y()) grab = v;
    obj.set_springs({{grab, s.mesh.rest_vertex(grab) + Vec3(0.1 * (hi.y() - lo.y()), 0.0, 0.0), 1e3}});
    ReducedState state = ReducedState::rest(rc.k);
    std::vector<double> step_ms, q_norm;
    for (int i = 0; i < rc.steps; ++i) {
        const auto t0 = Clock::now();
        state = step_reduced(state, rc.dt, obj);
        step_ms.push_back(ms_since(t0));
        q_norm.push_back(state.q.norm());
    }
    rep.series["convex_symmetric"]["q_norm"] = q_norm;
    rep.timing["step_ms"] = step_ms;
    rep.timing["median_step_ms"] = median(step_ms);
    rep.scalars["convex_symmetric"]["median_step_ms"] = median(step_ms);
    rep.scalars["convex_symmetric"]["elements"] = s.mesh.num_elements();
    rep.validate();
    return rep;
}

std::vector<std::string> experiment_ids() {
    return {"direction", "magnitude", "cubature", "keyframes", "convergence", "training", "didactic2d", "realtime"};
}

ExperimentReport run_experiment(const std::string& id, const BenchFixture& fixture) {
    if (id == "direction") return run_direction_generalization(fixture);
    if (id == "magnitude") return run_magnitude_generalization(fixture);
    if (id == "cubature") return run_cubature_robustness(fixture);
    if (id == "keyframes") return run_sparse_keyframes(fixture);
    if (id == "convergence") return run_convergence_profile(fixture);
    if (id == "training") return run_training_comparison(fixture);
    if (id == "didactic2d") return run_didactic2d(fixture);
    if (id == "realtime") return run_realtime(fixture);
    throw InvalidArgument("unknown experiment '" + id + "'");
}

} // namespace cvxrom
