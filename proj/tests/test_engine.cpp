#include "doctest.h"

#include "paro/engine.hpp"
#include "paro/tensor_file.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace paro;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng) {
    Matrix m(r, c);
    for (float& v : m.values()) v = static_cast<float>(rng.normal());
    return m;
}

TransformBundle random_bundle(std::size_t channels, std::size_t g, std::size_t K, Rng& rng) {
    TransformBundle b = make_bundle(channels, {g, K, g / 2}, rng);
    std::vector<float> angles(b.angle_count());
    for (float& a : angles) a = static_cast<float>(rng.uniform(-3.1, 3.1));
    b.set_flat_angles(angles);
    for (float& a : b.alpha) a = static_cast<float>(std::exp(rng.uniform(-1.0, 1.0)));
    return b;
}

struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const char* name) : path(std::filesystem::temp_directory_path() / name) {
        std::filesystem::remove_all(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
};

// Small trained model shared by the deployment tests.
struct Trained {
    std::vector<ToyDecoderLayer> fp;
    QuantizedModel q;
    CalibrationSet calib;

    Trained() {
        OutlierModelSpec ms;
        ms.dim = 64;
        ms.hidden = 96;
        ms.outlier_channels = 2;
        fp = gen_synthetic_model(ms);
        calib = gen_calibration(ms.dim, {8, 2, 8, 1});
        TrainConfig tc;
        tc.epochs_per_stage = 1;
        tc.batch_size = 4;
        q = quantize_model(fp, calib, {4, 32}, {32, 4, 16}, tc);
    }
};

const Trained& trained() {
    static const Trained t;
    return t;
}

}  // namespace

TEST_CASE("Fused.MatchesReferenceAcrossShapes") {
    Rng rng(11);
    for (std::size_t g : {32u, 128u})
        for (std::size_t K : {1u, 4u, 8u})
            for (std::size_t tokens : {1u, 7u, 64u})
                for (std::size_t channels : {2 * g, 2 * g + g / 2}) {
                    const TransformBundle b = random_bundle(channels, g, K, rng);
                    const Matrix x = random_matrix(tokens, channels, rng);
                    const Matrix ref = apply_inverse_to_activations(x, b);
                    INFO("g=" << g << " K=" << K << " tokens=" << tokens << " channels=" << channels);
                    CHECK_LE(max_abs_diff(fused_inverse_transform(x, b), ref), 1e-5f);
                }
}

TEST_CASE("Fused.ExampleShape") {
    Rng rng(12);
    const TransformBundle b = random_bundle(256, 128, 8, rng);
    const Matrix x = random_matrix(64, 256, rng);
    CHECK_LE(max_abs_diff(fused_inverse_transform(x, b), apply_inverse_to_activations(x, b)), 1e-5f);
}

TEST_CASE("Fused.IdentityBundleCopies") {
    Rng rng(13);
    const Matrix x = random_matrix(37, 160, rng);
    const Matrix y = fused_inverse_transform(x, identity_bundle(160, 64));
    CHECK_EQ(y.values(), x.values());
}

TEST_CASE("Fused.ReusesOutputStorage") {
    Rng rng(14);
    const TransformBundle b = random_bundle(128, 64, 4, rng);
    const FusedPlan plan = FusedPlan::build(b);
    Matrix out;
    for (int i = 0; i < 2; ++i) {
        const Matrix x = random_matrix(20, 128, rng);
        fused_inverse_transform_into(x, plan, out);
        CHECK_EQ(out.values(), fused_inverse_transform(x, plan).values());
    }
}

TEST_CASE("Fused.DimensionMismatchThrows") {
    Rng rng(15);
    const Matrix x = random_matrix(4, 100, rng);
    CHECK_THROWS_AS(fused_inverse_transform(x, identity_bundle(128, 64)), std::invalid_argument);
}

TEST_CASE("Deploy.ModeEquivalencePerLayer") {
    const auto& t = trained();
    const DeployedModel d = deploy(t.q.layers);
    Rng rng(16);
    for (std::size_t l = 0; l < d.layers.size(); ++l) {
        DeployedModel single;
        single.layers = {d.layers[l]};
        const Matrix x = random_matrix(16, 64, rng);
        const Matrix ref = layer_forward(t.q.layers[l], x);
        CHECK_LE(max_abs_diff(quantized_forward(single, x), ref), 1e-4f * std::max(1.0f, max_abs(ref)));
    }
}

TEST_CASE("Deploy.RejectsUncalibratedLayers") {
    const auto& t = trained();
    std::vector<QuantLayer> layers = t.q.layers;
    layers[0].up.mode = WeightMode::Dynamic;
    CHECK_THROWS_AS(deploy(layers), std::invalid_argument);
    layers = t.q.layers;
    layers[1].down.params.zeros(0, 0) += 0.5f;
    CHECK_THROWS_AS(deploy(layers), std::invalid_argument);
}

TEST_CASE("Deploy.SixteenBitIdentityMatchesFloat") {
    OutlierModelSpec ms;
    ms.outlier_gain = 1.0f;
    const auto fp = gen_synthetic_model(ms);
    const DeployedModel d = deploy(quantize_model_rtn(fp, {16, 128}));
    Rng rng(17);
    const Matrix x = random_matrix(24, ms.dim, rng);
    CHECK_LE(max_abs_diff(quantized_forward(d, x), model_forward(fp, x)), 1e-3f);
}

TEST_CASE("Deploy.PeakDequantBufferPerLinear") {
    const auto& t = trained();
    const DeployedModel d = deploy(t.q.layers);
    const Matrix x = t.calib.val[0];
    for (const DeployedLinear* lin : {&d.layers[0].up, &d.layers[0].down}) {
        ForwardStats stats;
        const Matrix in = lin == &d.layers[0].up ? x : Matrix(x.rows(), lin->weight.rows);
        deployed_linear_forward(*lin, in, &stats);
        CHECK_EQ(stats.linears, 1u);
        CHECK_GT(stats.peak_dequant_floats, 0u);
        CHECK_LE(stats.peak_dequant_floats, lin->weight.params.layout.group_size * lin->weight.cols);
    }
}

TEST_CASE("Deploy.NoFloatWeightsInRunDirectory") {
    const auto& t = trained();
    TempDir dir("paro_test_deployed_scan");
    save_deployed(dir.path, deploy(t.q.layers));
    for (const auto& entry : std::filesystem::directory_iterator(dir.path)) {
        if (entry.path().extension() != ".pqt") continue;
        const TensorFile f = load_tensors(entry.path());
        for (const auto& tensor : f.tensors) CHECK_NE(tensor.role, "weight");
    }
}

TEST_CASE("Deploy.SaveLoadRoundTrip") {
    const auto& t = trained();
    const DeployedModel d = deploy(t.q.layers);
    TempDir dir("paro_test_deployed");
    save_deployed(dir.path, d);
    const DeployedModel back = load_deployed(dir.path);
    REQUIRE_EQ(back.layers.size(), d.layers.size());
    for (std::size_t l = 0; l < d.layers.size(); ++l) {
        CHECK_EQ(back.layers[l].up.weight.codes, d.layers[l].up.weight.codes);
        CHECK_EQ(back.layers[l].down.bundle.alpha, d.layers[l].down.bundle.alpha);
        CHECK_EQ(back.layers[l].residual, d.layers[l].residual);
    }
    const Matrix x = t.calib.val[1];
    CHECK_EQ(quantized_forward(back, x).values(), quantized_forward(d, x).values());
}

TEST_CASE("Deploy.LoadRejectsBrokenDirectories") {
    const auto& t = trained();
    TempDir dir("paro_test_deployed_bad");
    CHECK_THROWS_AS(load_deployed(dir.path), FormatError);
    save_deployed(dir.path, deploy(t.q.layers));
    {
        std::fstream f(dir.path / "layer0.up.pqt", std::ios::in | std::ios::out | std::ios::binary);
        f.put('X');
    }
    CHECK_THROWS_AS(load_deployed(dir.path), FormatError);
    save_deployed(dir.path, deploy(t.q.layers));
    std::ofstream(dir.path / "model.json") << R"({"format": "other", "num_layers": 2, "dim": 64})";
    CHECK_THROWS_AS(load_deployed(dir.path), FormatError);
}

TEST_CASE("Bench.RowsAndCsvRoundTrip") {
    BenchConfig cfg;
    cfg.dims = {64, 128, 96};
    cfg.rotations = {1, 2};
    cfg.tokens = 8;
    cfg.repeats = 2;
    cfg.group_size = 32;
    const auto rows = bench_transforms(cfg);
    // Two pairwise rows per n; hadamard only for powers of two.
    REQUIRE_EQ(rows.size(), 8u);
    for (const auto& r : rows) {
        CHECK_GT(r.seconds, 0.0);
        CHECK(std::isfinite(r.elements_per_second));
    }
    std::ostringstream out;
    write_bench_csv(out, rows);
    std::istringstream in(out.str());
    std::string line;
    std::getline(in, line);
    CHECK_EQ(line, "kind,n,K,tokens,seconds,elements_per_second");
    for (const auto& r : rows) {
        REQUIRE(std::getline(in, line));
        std::istringstream fields(line);
        std::string kind, n, K, tokens, seconds, eps;
        std::getline(fields, kind, ',');
        std::getline(fields, n, ',');
        std::getline(fields, K, ',');
        std::getline(fields, tokens, ',');
        std::getline(fields, seconds, ',');
        std::getline(fields, eps);
        CHECK_EQ(kind, r.kind);
        CHECK_EQ(std::stoul(n), r.n);
        CHECK_EQ(std::stoul(K), r.K);
        CHECK_EQ(std::stoul(tokens), r.tokens);
        CHECK_EQ(std::stod(seconds), r.seconds);
        CHECK_EQ(std::stod(eps), r.elements_per_second);
    }
    CHECK_FALSE(std::getline(in, line));
}
