#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

#include <CLI11.hpp>

#include "cvxrom/bench.hpp"
#include "cvxrom/errors.hpp"
#include "cvxrom/fullsolver.hpp"
#include "cvxrom/scenario.hpp"
#include "cvxrom/simserver.hpp"
#include "cvxrom/subspace.hpp"
#include "run_config.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cvxrom;
using cvxrom::cli::RunConfig;

namespace {

struct Paths {
    std::string mesh, data, scenario, model, out, record = "trajectory.csv", config;
    std::vector<std::string> forces;
    std::string experiment;
};

/// --config must be applied before flags are bound, so it is located by hand.
std::string find_config(int argc, char** argv) {
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--config" && i + 1 < argc) return argv[i + 1];
        if (a.rfind("--config=", 0) == 0) return a.substr(9);
    }
    return {};
}

void write_json(const fs::path& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out << std::setw(2) << j << "\n";
}

fs::path prepare_out(const std::string& dir, const RunConfig& cfg, const std::string& command) {
    if (dir.empty()) throw InvalidArgument("--out is required");
    fs::create_directories(dir);
    json snapshot = cfg.to_json();
    snapshot["command"] = command;
    write_json(fs::path(dir) / "config.json", snapshot);
    return fs::path(dir);
}

TetMesh load(const std::string& path, const RunConfig& cfg) {
    if (path.empty()) throw InvalidArgument("--mesh is required");
    return load_mesh(path, cfg.density);
}

Vec3 dims_of(const std::vector<double>& d) { return Vec3(d[0], d[1], d[2]); }

Material material_for(const ReducedModel& model, const RunConfig& cfg, bool explicit_material) {
    if (!explicit_material && model.metadata.contains("material")) {
        const json& m = model.metadata.at("material");
        return Material::from_young_poisson(m.at("youngs_modulus").get<double>(), m.at("poisson_ratio").get<double>());
    }
    return cfg.material();
}

json material_json(const Material& m) { return {{"youngs_modulus", m.youngs_modulus}, {"poisson_ratio", m.poisson_ratio}}; }

std::optional<CubatureSet> cubature_of(const TetMesh& mesh, const RunConfig& cfg) {
    if (cfg.cubature <= 0) return std::nullopt;
    return select_random_cubature(mesh, cfg.cubature, cfg.seed);
}

int cmd_gen_bar(const RunConfig& cfg, const Paths& p, int nx, int ny, int nz, const std::vector<double>& dims) {
    if (p.out.empty()) throw InvalidArgument("--out is required");
    const TetMesh mesh = make_bar_mesh(nx, ny, nz, dims_of(dims), cfg.density);
    if (fs::path(p.out).has_parent_path()) fs::create_directories(fs::path(p.out).parent_path());
    if (detect_mesh_format(p.out) == MeshFormat::native)
        write_native_mesh(mesh, p.out);
    else
        write_node_ele(mesh, p.out);
    std::cout << "wrote " << mesh.num_vertices() << " vertices, " << mesh.num_elements() << " tets to " << p.out << "\n";
    return 0;
}

int cmd_mesh_info(const RunConfig& cfg, const Paths& p) {
    const TetMesh mesh = load(p.mesh, cfg);
    const auto [lo, hi] = mesh.bounds();
    const json info = {{"vertices", mesh.num_vertices()},
                       {"tets", mesh.num_elements()},
                       {"dofs", mesh.dofs()},
                       {"boundary_faces", boundary_faces(mesh).size()},
                       {"volume", mesh.total_volume()},
                       {"mass", lump_mass(mesh).total()},
                       {"bbox_min", {lo.x(), lo.y(), lo.z()}},
                       {"bbox_max", {hi.x(), hi.y(), hi.z()}},
                       {"hash", mesh.hash()}};
    std::cout << std::setw(2) << info << "\n";
    return 0;
}

int cmd_gen_data(const RunConfig& cfg, const Paths& p) {
    const TetMesh mesh = load(p.mesh, cfg);
    if (p.scenario.empty()) throw InvalidArgument("--scenario is required");
    const ForceScenario sc = load_scenario(p.scenario);
    sc.validate(mesh);
    const fs::path out = prepare_out(p.out, cfg, "gen-data");
    SnapshotSet snaps = generate_snapshots(mesh, cfg.material(), sc, sc.boundary(mesh), cfg.data_dt, cfg.data_steps, cfg.data_stride);
    snaps.metadata["mesh"] = p.mesh;
    snaps.metadata["mesh_hash"] = mesh.hash();
    snaps.metadata["scenario"] = sc.to_text();
    write_snapshots(snaps, (out / "snapshots.bin").string());
    double peak = 0.0;
    for (Index c = 0; c < snaps.count(); ++c) peak = std::max(peak, snaps.U.col(c).cwiseAbs().maxCoeff());
    write_json(out / "summary.json", {{"snapshots", snaps.count()}, {"dofs", snaps.dofs()}, {"max_abs_displacement", peak}});
    std::cout << "wrote " << snaps.count() << " snapshots to " << (out / "snapshots.bin").string() << "\n";
    return 0;
}

SnapshotSet load_data(const std::string& path) {
    if (path.empty()) throw InvalidArgument("--data is required");
    return read_snapshots(fs::is_directory(path) ? (fs::path(path) / "snapshots.bin").string() : path);
}

void check_data_mesh(const SnapshotSet& snaps, const TetMesh& mesh) {
    require_dims(snaps.dofs() == mesh.dofs(), "snapshots have " + std::to_string(snaps.dofs()) + " dofs but the mesh has " +
                                                  std::to_string(mesh.dofs()));
    if (snaps.metadata.contains("mesh_hash") && snaps.metadata["mesh_hash"] != mesh.hash())
        throw InvalidArgument("snapshots were generated on a different mesh");
}

int cmd_pca(const RunConfig& cfg, const Paths& p) {
    const TetMesh mesh = load(p.mesh, cfg);
    const SnapshotSet snaps = load_data(p.data);
    check_data_mesh(snaps, mesh);
    const fs::path out = prepare_out(p.out, cfg, "pca");
    const LumpedMass mass = lump_mass(mesh);
    const PcaBasis basis = compute_pca(snaps, mass, cfg.k);
    write_basis(basis, (out / "basis.bin").string());
    LinearModel model(basis, mass);
    model.metadata["mesh_hash"] = mesh.hash();
    model.metadata["material"] = material_json(cfg.material());
    write_model(model, (out / "model.ckpt").string());
    write_json(out / "summary.json",
               {{"k", basis.rank()},
                {"singular_values", std::vector<double>(basis.singular_values.data(), basis.singular_values.data() + basis.rank())},
                {"projection_error", projection_error(basis, mass, snaps.U)}});
    std::cout << "wrote rank-" << basis.rank() << " basis to " << out.string() << "\n";
    return 0;
}

int cmd_train(const RunConfig& cfg, const Paths& p) {
    const TetMesh mesh = load(p.mesh, cfg);
    const SnapshotSet snaps = load_data(p.data);
    check_data_mesh(snaps, mesh);
    const LumpedMass mass = lump_mass(mesh);
    const ModelSpec spec = cfg.model_spec();
    const fs::path out = prepare_out(p.out, cfg, "train");
    const json meta = {{"mesh_hash", mesh.hash()}, {"material", material_json(cfg.material())}, {"seed", cfg.seed}};
    if (spec.kind == ModelKind::linear) {
        LinearModel model(compute_pca(snaps, mass, spec.k), mass);
        for (const auto& [key, value] : meta.items()) model.metadata[key] = value;
        write_model(model, (out / "model.ckpt").string());
        std::cout << "linear model needs no training; wrote " << (out / "model.ckpt").string() << "\n";
        return 0;
    }
    const Index rank = spec.kind == ModelKind::convex_fullspace_ablation ? spec.k : std::max(spec.k, spec.intermediate_dim());
    std::optional<PcaBasis> basis;
    if (spec.pca_init) basis = compute_pca(snaps, mass, rank);
    const auto init = make_model(spec, mesh.dofs(), basis ? &*basis : nullptr, mass);
    TrainConfig tc = cfg.training;
    tc.seed = cfg.seed;
    tc.checkpoint_dir = out.string();
    const int every = std::max(1, tc.epochs / 10);
    TrainResult result = train(tc, snaps.U, mass, *init, [&](const EpochRecord& r) {
        if (r.epoch % every == 0) std::cerr << "epoch " << r.epoch << " loss " << r.loss << "\n";
        return true;
    });
    for (const auto& [key, value] : meta.items()) result.model->metadata[key] = value;
    write_model(*result.model, (out / "model.ckpt").string());
    result.report.write_csv((out / "loss.csv").string());
    write_json(out / "summary.json", {{"initial_loss", result.report.initial_loss()},
                                      {"final_loss", result.report.final_loss},
                                      {"best_loss", result.report.best_loss},
                                      {"best_epoch", result.report.best_epoch}});
    std::cout << "final loss " << result.report.final_loss << "; wrote " << (out / "model.ckpt").string() << "\n";
    return 0;
}

std::shared_ptr<const ReducedModel> load_model(const std::string& path, const TetMesh& mesh) {
    if (path.empty()) throw InvalidArgument("--model is required");
    std::shared_ptr<const ReducedModel> model = read_model(fs::is_directory(path) ? (fs::path(path) / "model.ckpt").string() : path);
    require_dims(model->dofs() == mesh.dofs(), "checkpoint has " + std::to_string(model->dofs()) + " dofs but the mesh has " +
                                                   std::to_string(mesh.dofs()));
    if (model->metadata.contains("mesh_hash") && model->metadata["mesh_hash"] != mesh.hash())
        throw InvalidArgument("checkpoint was trained on a different mesh");
    return model;
}

int cmd_simulate(const RunConfig& cfg, const Paths& p, bool explicit_material) {
    const TetMesh mesh = load(p.mesh, cfg);
    const auto model = load_model(p.model, mesh);
    const Material mat = material_for(*model, cfg, explicit_material);
    ForceScenario sc;
    if (!p.scenario.empty()) {
        sc = load_scenario(p.scenario);
        sc.validate(mesh);
    }
    const fs::path out = prepare_out(p.out, cfg, "simulate");
    const LumpedMass mass = lump_mass(mesh);
    ReducedObjective obj(mesh, mat, *model, cubature_of(mesh, cfg));
    ReducedState state = ReducedState::rest(model->latent_dim());
    std::ofstream csv(out / fs::path(p.record).filename());
    csv << "step,time,elastic_energy,displacement_norm";
    for (Index i = 0; i < model->latent_dim(); ++i) csv << ",q" << i;
    csv << "\n" << std::setprecision(17);
    std::vector<double> ms;
    for (int step = 0; step < cfg.sim_steps; ++step) {
        obj.set_external_force(sc.external_force(mesh, mass.diag, state.time));
        const auto t0 = std::chrono::steady_clock::now();
        state = step_reduced(state, cfg.sim_dt, obj, cfg.solver);
        ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
        const Vec u = model->decode(state.q);
        csv << step + 1 << "," << state.time << "," << total_energy(mesh, u, mat) << "," << std::sqrt(u.dot(mass.diag.asDiagonal() * u));
        for (Index i = 0; i < state.q.size(); ++i) csv << "," << state.q[i];
        csv << "\n";
    }
    std::sort(ms.begin(), ms.end());
    write_json(out / "summary.json", {{"steps", cfg.sim_steps},
                                      {"final_time", state.time},
                                      {"final_q", std::vector<double>(state.q.data(), state.q.data() + state.q.size())},
                                      {"median_step_ms", ms.empty() ? 0.0 : ms[ms.size() / 2]}});
    std::cout << "simulated " << cfg.sim_steps << " steps; wrote " << (out / fs::path(p.record).filename()).string() << "\n";
    return 0;
}

int cmd_relax(const RunConfig& cfg, const Paths& p, bool explicit_material) {
    const TetMesh mesh = load(p.mesh, cfg);
    const auto model = load_model(p.model, mesh);
    const Material mat = material_for(*model, cfg, explicit_material);
    Vec f = Vec::Zero(mesh.dofs());
    for (const auto& spec : p.forces) {
        const ForceEntry e = parse_force_spec(spec);
        const auto verts = e.selector.resolve(mesh);
        if (verts.empty()) throw InvalidArgument("force '" + spec + "' selects no vertices");
        for (const int v : verts) f.segment<3>(3 * v) += e.force;
    }
    const fs::path out = prepare_out(p.out, cfg, "relax");
    ReducedObjective obj(mesh, mat, *model, cubature_of(mesh, cfg));
    obj.set_external_force(f);
    const RelaxTrajectory traj = quasi_static_relax(obj, Vec::Zero(model->latent_dim()), cfg.relax_iterations, cfg.solver);
    std::ofstream csv(out / "relax.csv");
    csv << "iteration,energy\n" << std::setprecision(17);
    for (std::size_t i = 0; i < traj.energy.size(); ++i) csv << i << "," << traj.energy[i] << "\n";
    const Vec& q = traj.q.back();
    const Vec u = model->decode(q);
    write_json(out / "report.json", {{"energy", traj.energy.back()},
                                     {"iterations", traj.report.iterations},
                                     {"converged", traj.report.converged},
                                     {"stop_reason", traj.report.stop_reason},
                                     {"q", std::vector<double>(q.data(), q.data() + q.size())},
                                     {"max_abs_displacement", u.size() ? u.cwiseAbs().maxCoeff() : 0.0}});
    std::cout << "relaxed in " << traj.report.iterations << " iterations (" << traj.report.stop_reason << "), energy "
              << traj.energy.back() << "\n";
    return 0;
}

int cmd_bench(const RunConfig& cfg, const Paths& p) {
    std::vector<std::string> ids;
    if (p.experiment == "all")
        ids = experiment_ids();
    else
        ids = {p.experiment};
    const fs::path out = prepare_out(p.out, cfg, "bench " + p.experiment);
    BenchFixture fixture = cfg.bench;
    fixture.seed = cfg.seed;
    for (const auto& id : ids) {
        const ExperimentReport rep = run_experiment(id, fixture);
        const fs::path dir = ids.size() == 1 ? out : out / id;
        rep.write(dir.string());
        std::cout << id << "\n";
        for (const auto& [method, values] : rep.scalars)
            for (const auto& [name, v] : values) std::cout << "  " << method << "." << name << " = " << v << "\n";
    }
    return 0;
}

int cmd_serve(const RunConfig& cfg, const Paths& p, bool explicit_material) {
    auto mesh = std::make_shared<const TetMesh>(load(p.mesh, cfg));
    const auto model = load_model(p.model, *mesh);
    ServerConfig sc;
    sc.address = cfg.address;
    if (cfg.port < 0 || cfg.port > 65535) throw InvalidArgument("port out of range");
    sc.port = static_cast<std::uint16_t>(cfg.port);
    sc.max_frame_rate = cfg.max_frame_rate;
    sc.session.dt = cfg.sim_dt;
    sc.session.cubature = cfg.cubature;
    sc.session.seed = cfg.seed;
    sc.session.drag_stiffness = cfg.drag_stiffness;
    sc.session.solver = cfg.solver;
    SimServer server(mesh, material_for(*model, cfg, explicit_material), model, sc);
    const std::uint16_t port = server.start();
    std::cout << "listening on ws://" << sc.address << ":" << port << "/sim" << std::endl;
    server.wait();
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    RunConfig cfg;
    bool explicit_material = false;
    try {
        const std::string config = find_config(argc, argv);
        if (!config.empty()) {
            cfg = RunConfig::load(config);
            std::ifstream in(config);
            explicit_material = json::parse(in, nullptr, true, true).contains("material");
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }

    CLI::App app{"Reduced-order deformable simulation with symmetric convex decoders"};
    app.require_subcommand(1);
    app.fallthrough();
    Paths p;
    app.add_option("--config", p.config, "JSON run configuration (flags override it)");
    app.add_option("--seed", cfg.seed, "Global random seed")->capture_default_str();
    auto* young = app.add_option("--young", cfg.youngs_modulus, "Young's modulus (Pa)")->capture_default_str();
    auto* poisson = app.add_option("--poisson", cfg.poisson_ratio, "Poisson ratio")->capture_default_str();
    app.add_option("--density", cfg.density, "Density (kg/m^3)")->capture_default_str();

    auto* mesh_cmd = app.add_subcommand("mesh", "Mesh generation and inspection");
    mesh_cmd->require_subcommand(1);
    int nx = 4, ny = 1, nz = 1;
    std::vector<double> dims{1.0, 0.25, 0.25};
    auto* gen_bar = mesh_cmd->add_subcommand("gen-bar", "Write a regular tetrahedral bar");
    gen_bar->add_option("--nx", nx)->capture_default_str()->check(CLI::PositiveNumber);
    gen_bar->add_option("--ny", ny)->capture_default_str()->check(CLI::PositiveNumber);
    gen_bar->add_option("--nz", nz)->capture_default_str()->check(CLI::PositiveNumber);
    gen_bar->add_option("--dims", dims, "Extent x,y,z")->delimiter(',')->expected(3)->capture_default_str();
    gen_bar->add_option("--out", p.out, "Output path (.cvxm or node/ele stem)")->required();
    auto* info = mesh_cmd->add_subcommand("info", "Print mesh statistics as JSON");
    info->add_option("path", p.mesh, "Mesh path or builtin spec")->required();

    auto* gen_data = app.add_subcommand("gen-data", "Full-space snapshot generation");
    gen_data->add_option("--mesh", p.mesh)->required();
    gen_data->add_option("--scenario", p.scenario, "Force scenario file")->required();
    gen_data->add_option("--dt", cfg.data_dt)->capture_default_str();
    gen_data->add_option("--steps", cfg.data_steps)->capture_default_str();
    gen_data->add_option("--stride", cfg.data_stride)->capture_default_str();
    gen_data->add_option("--out", p.out, "Output directory")->required();

    auto* pca = app.add_subcommand("pca", "Mass-weighted PCA basis and linear model");
    pca->add_option("--data", p.data, "snapshots.bin or its directory")->required();
    pca->add_option("--mesh", p.mesh)->required();
    pca->add_option("--k", cfg.k)->capture_default_str();
    pca->add_option("--out", p.out)->required();

    auto* train_cmd = app.add_subcommand("train", "Train a reduced model");
    train_cmd->add_option("--data", p.data, "snapshots.bin or its directory")->required();
    train_cmd->add_option("--mesh", p.mesh)->required();
    train_cmd->add_option("--model", cfg.model_kind, "convex_symmetric | vanilla | convex_fullspace_ablation | linear")
        ->capture_default_str();
    train_cmd->add_option("--k", cfg.k)->capture_default_str();
    train_cmd->add_option("--r", cfg.r, "Intermediate width (0 = 2k)")->capture_default_str();
    train_cmd->add_option("--epochs", cfg.training.epochs)->capture_default_str();
    train_cmd->add_option("--lr", cfg.training.learning_rate)->capture_default_str();
    train_cmd->add_option("--batch", cfg.training.batch_size)->capture_default_str();
    train_cmd->add_option("--out", p.out)->required();

    auto* simulate = app.add_subcommand("simulate", "Reduced implicit Euler under a force scenario");
    simulate->add_option("--model", p.model, "Checkpoint or training directory")->required();
    simulate->add_option("--mesh", p.mesh)->required();
    simulate->add_option("--scenario", p.scenario);
    simulate->add_option("--dt", cfg.sim_dt)->capture_default_str();
    simulate->add_option("--steps", cfg.sim_steps)->capture_default_str();
    simulate->add_option("--cubature", cfg.cubature, "Random cubature elements (0 = all)")->capture_default_str();
    simulate->add_option("--record", p.record, "CSV file name inside --out")->capture_default_str();
    simulate->add_option("--out", p.out)->required();

    auto* relax = app.add_subcommand("relax", "Quasi-static relaxation under a constant load");
    relax->add_option("--model", p.model, "Checkpoint or training directory")->required();
    relax->add_option("--mesh", p.mesh)->required();
    relax->add_option("--force", p.forces, "<selector>:fx,fy,fz, repeatable");
    relax->add_option("--iterations", cfg.relax_iterations)->capture_default_str();
    relax->add_option("--cubature", cfg.cubature)->capture_default_str();
    relax->add_option("--out", p.out)->required();

    auto* bench = app.add_subcommand("bench", "Run a benchmark experiment");
    std::string ids = "all";
    for (const auto& id : experiment_ids()) ids += " | " + id;
    bench->add_option("experiment", p.experiment, ids)->required();
    bench->add_option("--out", p.out)->required();

    auto* serve = app.add_subcommand("serve", "WebSocket simulation server at /sim");
    serve->add_option("--model", p.model, "Checkpoint or training directory")->required();
    serve->add_option("--mesh", p.mesh)->required();
    serve->add_option("--address", cfg.address)->capture_default_str();
    serve->add_option("--port", cfg.port)->capture_default_str();
    serve->add_option("--dt", cfg.sim_dt)->capture_default_str();
    serve->add_option("--cubature", cfg.cubature)->capture_default_str();
    serve->add_option("--drag-stiffness", cfg.drag_stiffness)->capture_default_str();
    serve->add_option("--max-frame-rate", cfg.max_frame_rate)->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }
    explicit_material = explicit_material || young->count() > 0 || poisson->count() > 0;

    try {
        if (*gen_bar) return cmd_gen_bar(cfg, p, nx, ny, nz, dims);
        if (*info) return cmd_mesh_info(cfg, p);
        if (*gen_data) return cmd_gen_data(cfg, p);
        if (*pca) return cmd_pca(cfg, p);
        if (*train_cmd) return cmd_train(cfg, p);
        if (*simulate) return cmd_simulate(cfg, p, explicit_material);
        if (*relax) return cmd_relax(cfg, p, explicit_material);
        if (*bench) return cmd_bench(cfg, p);
        if (*serve) return cmd_serve(cfg, p, explicit_material);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
