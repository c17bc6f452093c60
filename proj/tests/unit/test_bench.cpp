#include <gtest/gtest.h>

#include <atomic>
#include <filesystem>
#include <fstream>

#include "../support/fd.hpp"
#include "cvxrom/bench.hpp"
#include "cvxrom/errors.hpp"

using namespace cvxrom;
using namespace cvxrom::testing;

namespace {

BenchFixture tiny() {
    BenchFixture f;
    f.nx = 1;
    f.ny = 3;
    f.nz = 1;
    f.dims = Vec3(0.25, 0.75, 0.25);
    f.steps = 20;
    f.stride = 2;
    f.k = 2;
    f.r = 4;
    f.linear_k = 2;
    f.hidden = {8, 8};
    f.encoder_hidden = 8;
    f.epochs = 30;
    f.trials = 3;
    f.relax_iterations = 20;
    f.seed = 4;
    return f;
}

} // namespace

TEST(BenchFixture, JsonRoundTripAndUnknownKeys) {
    const BenchFixture f = tiny();
    const BenchFixture g = BenchFixture::from_json(f.to_json());
    EXPECT_EQ(g.to_json(), f.to_json());
    nlohmann::json j = f.to_json();
    j["epochz"] = 3;
    EXPECT_THROW(BenchFixture::from_json(j), ParseError);
    EXPECT_THROW(BenchFixture::from_json({{"k", "four"}}), ParseError);
    EXPECT_THROW(BenchFixture::from_json({{"k", 5}, {"r", 4}}), InvalidArgument);
    EXPECT_EQ(BenchFixture::from_json(nlohmann::json::object()).to_json(), BenchFixture{}.to_json());
}

TEST(Bench, InversionDeviationByModelKind) {
    const BenchFixture f = tiny();
    const TetMesh mesh = f.mesh();
    const LumpedMass mass = lump_mass(mesh);
    Rng rng(1);
    Mat U(mesh.dofs(), 6);
    for (Index c = 0; c < 6; ++c) U.col(c) = random_vec(mesh.dofs(), rng, 0.01);
    const PcaBasis basis = compute_pca(U, mass, 4);
    const LinearModel lin(basis.truncated(2), mass);
    EXPECT_EQ(inversion_deviation(lin, encode_all(lin, U), mass), 0.0);
    ModelSpec spec;
    spec.k = 2;
    spec.r = 4;
    spec.hidden = {8};
    spec.encoder_hidden = 8;
    const auto convex = make_model(spec, mesh.dofs(), &basis, mass);
    EXPECT_EQ(inversion_deviation(*convex, encode_all(*convex, U), mass), 0.0);
    spec.kind = ModelKind::vanilla;
    spec.pca_init = false;
    const auto vanilla = make_model(spec, mesh.dofs(), nullptr, mass);
    EXPECT_GT(inversion_deviation(*vanilla, encode_all(*vanilla, U), mass), 0.0);
    EXPECT_THROW(inversion_deviation(lin, Mat(2, 0), mass), InvalidArgument);
}

TEST(Bench, ParallelForVisitsEveryIndexOnceAndRethrows) {
    std::vector<std::atomic<int>> hits(257);
    parallel_for(257, [&](int i) { hits[static_cast<std::size_t>(i)]++; });
    for (const auto& h : hits) EXPECT_EQ(h.load(), 1);
    EXPECT_THROW(parallel_for(10, [](int i) {
                     if (i == 7) throw InvalidArgument("boom");
                 }),
                 InvalidArgument);
    parallel_for(0, [](int) { FAIL(); });
}

TEST(Bench, ReportValidationAndFiles) {
    ExperimentReport rep;
    rep.id = "unit";
    rep.series["linear"]["energy"] = {3.0, 2.0, 1.0};
    rep.scalars["linear"]["final"] = 1.0;
    EXPECT_NO_THROW(rep.validate());
    EXPECT_EQ(rep.scalar("linear", "final"), 1.0);
    EXPECT_THROW(rep.scalar("vanilla", "final"), InvalidArgument);
    const auto dir = std::filesystem::temp_directory_path() / "cvxrom_bench_report";
    std::filesystem::remove_all(dir);
    rep.write(dir.string());
    std::ifstream csv(dir / "linear_energy.csv");
    std::string header, first;
    std::getline(csv, header);
    std::getline(csv, first);
    EXPECT_EQ(header, "index,value");
    EXPECT_EQ(first, "0,3");
    std::ifstream js(dir / "report.json");
    EXPECT_EQ(nlohmann::json::parse(js)["id"], "unit");
    rep.series["linear"]["energy"].push_back(NAN);
    EXPECT_THROW(rep.validate(), Error);
}

TEST(Bench, UnknownExperimentRejected) { EXPECT_THROW(run_experiment("nope", tiny()), InvalidArgument); }

TEST(Bench, DirectionExperimentOnTinyFixtureIsReproducible) {
    const BenchFixture f = tiny();
    const ExperimentReport a = run_direction_generalization(f);
    const ExperimentReport b = run_direction_generalization(f);
    EXPECT_EQ(a.series, b.series);
    EXPECT_EQ(a.scalars, b.scalars);
    EXPECT_EQ(a.scalar("linear", "inversion_deviation"), 0.0);
    EXPECT_EQ(a.scalar("convex_symmetric", "inversion_deviation"), 0.0);
    EXPECT_GT(a.scalar("vanilla", "inversion_deviation"), 0.0);
    for (const char* m : {"linear", "vanilla", "convex_symmetric"}) {
        const auto& e = a.values(m, "energy");
        for (std::size_t i = 1; i < e.size(); ++i) EXPECT_LE(e[i], e[i - 1]) << m;
    }
}

TEST(Bench, MagnitudeExperimentSharedStart) {
    const ExperimentReport rep = run_magnitude_generalization(tiny());
    EXPECT_NEAR(rep.scalar("linear", "start"), 1.0, 1e-12);
    EXPECT_NEAR(rep.scalar("convex_symmetric", "start"), 1.0, 1e-12);
    for (const char* m : {"linear", "vanilla", "convex_symmetric"}) EXPECT_EQ(rep.scalar(m, "monotone"), 1.0) << m;
}

TEST(Bench, CubatureExperimentLinearReturnsToRest) {
    BenchFixture f = tiny();
    const ExperimentReport rep = run_cubature_robustness(f);
    EXPECT_EQ(rep.values("linear", "mean_norm").size(), 5u);
    EXPECT_LT(rep.scalar("linear", "max_mean_norm"), 1e-6);
    EXPECT_EQ(rep.seeds.size(), 15u);
}

TEST(Bench, KeyframesLinearReconstructsExactly) {
    BenchFixture f = tiny();
    f.steps = 10;
    const ExperimentReport rep = run_sparse_keyframes(f);
    EXPECT_LT(rep.scalar("linear", "mean_recon_error"), 1e-10);
    EXPECT_EQ(rep.values("vanilla", "perturbed_energy").size(), 50u);
}

TEST(Bench, ConvergenceCurvesStartAtOne) {
    const ExperimentReport rep = run_convergence_profile(tiny());
    for (const char* m : {"linear", "vanilla", "convex_symmetric"}) {
        const auto& c = rep.values(m, "mean_normalized_energy");
        EXPECT_NEAR(c.front(), 1.0, 1e-12) << m;
        EXPECT_EQ(c.size(), 21u);
    }
}
