#include "doctest.h"

#include "paro/calibrate.hpp"
#include "paro/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

using namespace paro;

namespace {

std::vector<double> row_norms(const Matrix& w) {
    std::vector<double> out;
    for (std::size_t r = 0; r < w.rows(); ++r) {
        double s = 0.0;
        for (float v : w.row(r)) s += static_cast<double>(v) * v;
        out.push_back(std::sqrt(s));
    }
    return out;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
}

struct Small {
    RunConfig cfg;
    std::vector<ToyDecoderLayer> model;
    CalibrationSet calib;

    explicit Small(int bits = 4, std::size_t layers = 2, std::size_t epochs = 3) {
        cfg.model.num_layers = layers;
        cfg.model.dim = 32;
        cfg.model.hidden = 64;
        cfg.model.outlier_channels = 2;
        cfg.model.outlier_gain = 50.0f;
        cfg.calibration.train_samples = 16;
        cfg.calibration.val_samples = 4;
        cfg.calibration.seq_len = 8;
        cfg.quant = {bits, 32};
        cfg.transform = {32, 4, 16};
        cfg.train.epochs_per_stage = epochs;
        cfg.train.batch_size = 4;
        model = gen_synthetic_model(cfg.model);
        calib = gen_calibration(cfg.model.dim, cfg.calibration);
    }

    QuantizedModel run() const {
        return quantize_model(model, calib, cfg.quant, cfg.transform, cfg.train);
    }
};

bool same_bits(const Matrix& a, const Matrix& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() && a.values() == b.values();
}

}  // namespace

TEST_CASE("Synthetic.UnitGainHasNoOutlierRows") {
    Rng rng(3);
    const auto norms = row_norms(gen_outlier_weight(128, 256, 4, 1.0f, rng));
    const double med = median(norms);
    for (double n : norms) CHECK_LT(n, 3.0 * med);
}

TEST_CASE("Synthetic.GainInflatesExactlyTheOutlierRows") {
    Rng rng(4);
    const auto norms = row_norms(gen_outlier_weight(128, 256, 4, 50.0f, rng));
    const double med = median(norms);
    const auto big = std::count_if(norms.begin(), norms.end(), [&](double n) { return n >= 10.0 * med; });
    CHECK_EQ(big, 4);
}

TEST_CASE("Synthetic.ModelIsSeedDeterministic") {
    OutlierModelSpec spec;
    spec.dim = 16;
    spec.hidden = 24;
    const auto a = gen_synthetic_model(spec), b = gen_synthetic_model(spec);
    REQUIRE_EQ(a.size(), 2u);
    for (std::size_t l = 0; l < a.size(); ++l) {
        CHECK(same_bits(a[l].up_weight, b[l].up_weight));
        CHECK(same_bits(a[l].down_weight, b[l].down_weight));
        CHECK_EQ(a[l].up_bias, b[l].up_bias);
    }
    spec.seed = 1;
    CHECK_FALSE(same_bits(gen_synthetic_model(spec)[0].up_weight, a[0].up_weight));
}

TEST_CASE("Synthetic.CalibrationShapesAndDisjointStreams") {
    CalibrationSpec spec{5, 3, 7, 9};
    const auto c = gen_calibration(12, spec);
    REQUIRE_EQ(c.train.size(), 5u);
    REQUIRE_EQ(c.val.size(), 3u);
    CHECK_EQ(c.train[0].rows(), 7u);
    CHECK_EQ(c.train[0].cols(), 12u);
    CHECK_FALSE(same_bits(c.train[0], c.val[0]));
    CHECK(same_bits(gen_calibration(12, spec).val[2], c.val[2]));
}

TEST_CASE("Synthetic.InvalidSpecsRejected") {
    OutlierModelSpec spec;
    spec.num_layers = 0;
    CHECK_THROWS_AS(gen_synthetic_model(spec), std::invalid_argument);
    CHECK_THROWS_AS(gen_calibration(8, CalibrationSpec{0, 1, 4, 0}), std::invalid_argument);
}

TEST_CASE("RunConfig.JsonRoundTrip") {
    RunConfig c;
    c.model.dim = 64;
    c.quant.bits = 3;
    c.train.lr_angles = 0.02;
    c.train.propagate_quantized_inputs = false;
    nlohmann::json j;
    to_json(j, c);
    const RunConfig back = run_config_from_json(j);
    CHECK_EQ(back.model.dim, 64u);
    CHECK_EQ(back.quant.bits, 3);
    CHECK_EQ(back.train.lr_angles, 0.02);
    CHECK_FALSE(back.train.propagate_quantized_inputs);
    CHECK_EQ(back.transform.group_size, back.quant.group_size);
}

TEST_CASE("RunConfig.MissingKeysKeepDefaults") {
    const RunConfig c = run_config_from_json(nlohmann::json::parse(R"({"quant": {"bits": 8}})"));
    CHECK_EQ(c.quant.bits, 8);
    CHECK_EQ(c.model.dim, 128u);
    CHECK_EQ(c.train.epochs_per_stage, 10u);
    CHECK_EQ(c.calibration.train_samples, 256u);
}

TEST_CASE("RunConfig.StrictValidation") {
    using nlohmann::json;
    CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"modle": {}})")), std::invalid_argument);
    CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"train": {"epochs": 3}})")), std::invalid_argument);
    CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"quant": {"bits": 1}})")), std::invalid_argument);
    CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"quant": {"bits": "four"}})")), std::invalid_argument);
    CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"train": {"batch_size": 0}})")), std::invalid_argument);
    CHECK_THROWS_AS(run_config_from_json(json::parse("[1, 2]")), std::invalid_argument);
}

TEST_CASE("FpModel.SaveLoadBitExact") {
    OutlierModelSpec spec;
    spec.dim = 16;
    spec.hidden = 24;
    auto model = gen_synthetic_model(spec);
    model[1].residual = false;
    const auto path = std::filesystem::temp_directory_path() / "paro_test_fp_model.pqt";
    save_fp_model(path, model);
    const auto back = load_fp_model(path);
    std::filesystem::remove(path);
    REQUIRE_EQ(back.size(), model.size());
    for (std::size_t l = 0; l < model.size(); ++l) {
        CHECK(same_bits(back[l].up_weight, model[l].up_weight));
        CHECK(same_bits(back[l].down_weight, model[l].down_weight));
        CHECK_EQ(back[l].up_bias, model[l].up_bias);
        CHECK_EQ(back[l].down_bias, model[l].down_bias);
        CHECK_EQ(back[l].residual, model[l].residual);
    }
}

TEST_CASE("OptimizeLayer.SixteenBitIsANoOp") {
    // Grid error shrinks by 2^-12 from 4 to 16 bits, so the loss by ~4^-12.
    const double coarse = Small(4, 1, 0).run().reports[0].stage1.init_val;
    const Small s(16, 1, 2);
    const auto q = s.run();
    const auto& r = q.reports[0];
    CHECK_LE(r.stage1.init_val, 1e-6 * coarse);
    CHECK_LE(r.stage1.init_val - r.stage1.best_val, 1e-6 * coarse);
    CHECK_LE(r.stage2.best_val, 1e-6 * coarse);
    const Matrix fp = s.model[0].forward(s.calib.val[0]);
    CHECK_LT(max_abs_diff(layer_forward(q.layers[0], s.calib.val[0]), fp), 1e-2f * std::max(1.0f, max_abs(fp)));
}

TEST_CASE("OptimizeLayer.StageOneReducesLossOnOutlierLayer") {
    const Small s(4, 1, 5);
    const auto r = s.run().reports[0];
    CHECK_LE(r.stage1.final_train, 0.7 * r.stage1.init_train);
}

TEST_CASE("OptimizeLayer.BestSnapshotSelection") {
    const Small s(4, 2, 3);
    for (const auto& r : s.run().reports) {
        CHECK_LE(r.stage2.best_val, r.stage1.best_val);
        for (const StageReport* st : {&r.stage1, &r.stage2}) {
            REQUIRE_EQ(st->val_loss.size(), 3u);
            double best = st->init_val;
            for (double v : st->val_loss) best = std::min(best, v);
            CHECK_EQ(st->best_val, best);
            CHECK_LE(st->best_val, st->init_val);
        }
    }
}

TEST_CASE("OptimizeLayer.ResultIsDeployable") {
    const Small s(4, 1, 1);
    const auto q = s.run();
    for (const QuantLinear* lin : {&q.layers[0].up, &q.layers[0].down}) {
        CHECK(lin->mode == WeightMode::Static);
        for (float z : lin->params.zeros.values()) CHECK_EQ(z, std::nearbyint(z));
    }
}

TEST_CASE("OptimizeLayer.NonFiniteLossAborts") {
    Small s(4, 1, 1);
    s.calib.train[0](0, 0) = std::nanf("");
    CHECK_THROWS_AS(s.run(), std::runtime_error);
}

TEST_CASE("QuantizeModel.SingleLayerMatchesOptimizeLayer") {
    const Small s(4, 1, 2);
    const auto q = s.run();
    std::vector<Matrix> y, yv;
    for (const auto& m : s.calib.train) y.push_back(s.model[0].forward(m));
    for (const auto& m : s.calib.val) yv.push_back(s.model[0].forward(m));
    const QuantLayer direct = optimize_layer(s.model[0], {&s.calib.train, &y, &s.calib.val, &yv}, s.cfg.quant,
                                             s.cfg.transform, s.cfg.train, 0);
    CHECK(same_bits(direct.up.weight, q.layers[0].up.weight));
    CHECK(same_bits(direct.down.weight, q.layers[0].down.weight));
    CHECK(same_bits(direct.up.params.scales, q.layers[0].up.params.scales));
    CHECK_EQ(direct.up.bundle.alpha, q.layers[0].up.bundle.alpha);
}

TEST_CASE("QuantizeModel.SecondLayerSeesQuantizedInputs") {
    const Small s(4, 2, 1);
    const auto q = s.run();
    // X' of layer 2 is the quantized layer-1 output; X is the FP output.
    const Matrix x_fp = s.model[0].forward(s.calib.train[0]);
    const Matrix x_q = layer_forward(q.layers[0], s.calib.train[0]);
    CHECK_GT(max_abs_diff(x_fp, x_q), 1e-3f);
}

TEST_CASE("QuantizeModel.EightBitSanityBound") {
    // Default model shape and training schedule on a reduced calibration set.
    RunConfig cfg;
    cfg.quant.bits = 8;
    cfg.calibration = {32, 8, 16, 1};
    cfg.train.batch_size = 8;
    const auto model = gen_synthetic_model(cfg.model);
    const auto calib = gen_calibration(cfg.model.dim, cfg.calibration);
    const auto q = quantize_model(model, calib, cfg.quant, cfg.transform, cfg.train);
    double mse = 0.0, mean = 0.0, sq = 0.0;
    std::size_t n = 0;
    for (const auto& x : calib.val) {
        const Matrix ref = model_forward(model, x);
        mse += mean_squared_error(quant_model_forward(q.layers, x), ref) * static_cast<double>(ref.size());
        for (float v : ref.values()) {
            mean += v;
            sq += static_cast<double>(v) * v;
        }
        n += ref.size();
    }
    mse /= static_cast<double>(n);
    mean /= static_cast<double>(n);
    const double var = sq / static_cast<double>(n) - mean * mean;
    CHECK_LE(mse, 1e-4 * var);
}

TEST_CASE("QuantizeModel.DeterministicAcrossThreadCounts") {
    const Small s(4, 2, 2);
    set_thread_count(1);
    const auto a = s.run();
    const auto b = s.run();
    set_thread_count(3);
    const auto c = s.run();
    set_thread_count(0);
    for (std::size_t l = 0; l < 2; ++l) {
        CHECK(same_bits(a.layers[l].up.weight, b.layers[l].up.weight));
        CHECK(same_bits(a.layers[l].down.params.scales, b.layers[l].down.params.scales));
        CHECK(same_bits(a.layers[l].up.weight, c.layers[l].up.weight));
        CHECK_EQ(a.reports[l].stage2.best_val, c.reports[l].stage2.best_val);
    }
}

TEST_CASE("QuantizeModel.RtnBaselineUsesIdentityTransforms") {
    const Small s(4, 2, 1);
    const auto rtn = quantize_model_rtn(s.model, s.cfg.quant);
    const Matrix x = s.calib.val[0];
    const Matrix w = s.model[0].up_weight;
    CHECK(same_bits(rtn[0].up.weight, w));
    CHECK(same_bits(rtn[0].up.effective_weight(), fake_quant(w, rtn_params(w, s.cfg.quant))));
    CHECK_LT(max_abs_diff(quant_model_forward(rtn, x), model_forward(s.model, x)),
             max_abs(model_forward(s.model, x)));
}
