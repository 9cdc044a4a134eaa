#include "paro/calibrate.hpp"

#include "paro/grad.hpp"
#include "paro/parallel.hpp"
#include "paro/tensor_file.hpp"

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <numeric>
#include <set>
#include <stdexcept>
#include <string>

namespace paro {

namespace {

void require(bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument(what);
}

Matrix gather(const std::vector<Matrix>& samples, std::span<const std::size_t> idx) {
    std::vector<Matrix> parts;
    parts.reserve(idx.size());
    for (std::size_t i : idx) parts.push_back(samples[i]);
    return vstack(parts);
}

// Per-chunk gradient sums, reduced in chunk order.
struct GradSums {
    double loss = 0.0;
    std::vector<double> up_alpha, up_angles, down_alpha, down_angles;
    std::vector<double> up_w, down_w, up_s, down_s, up_z, down_z;

    static void add(std::vector<double>& dst, const std::vector<double>& src) {
        if (src.empty()) return;
        if (dst.empty()) dst.assign(src.size(), 0.0);
        for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
    }
    static void add(std::vector<double>& dst, const Matrix& src) {
        if (src.empty()) return;
        if (dst.empty()) dst.assign(src.size(), 0.0);
        for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src.values()[i];
    }
    void merge(const GradSums& o) {
        loss += o.loss;
        add(up_alpha, o.up_alpha);
        add(up_angles, o.up_angles);
        add(down_alpha, o.down_alpha);
        add(down_angles, o.down_angles);
        add(up_w, o.up_w);
        add(down_w, o.down_w);
        add(up_s, o.up_s);
        add(down_s, o.down_s);
        add(up_z, o.up_z);
        add(down_z, o.down_z);
    }
};

GradSums batch_gradients(const QuantLayer& layer, const LayerData& data, std::span<const std::size_t> batch,
                         std::size_t chunk_samples, const GradRequest& req) {
    const std::size_t chunks = (batch.size() + chunk_samples - 1) / chunk_samples;
    std::size_t total = 0;
    for (std::size_t i : batch) total += (*data.labels)[i].size();
    std::vector<GradSums> partial(chunks);
    parallel_for(chunks, [&](std::size_t begin, std::size_t end) {
        for (std::size_t c = begin; c < end; ++c) {
            const auto idx = batch.subspan(c * chunk_samples, std::min(chunk_samples, batch.size() - c * chunk_samples));
            const Matrix x = gather(*data.inputs, idx);
            const Matrix y = gather(*data.labels, idx);
            LayerTape tape;
            const Matrix pred = layer_forward(layer, x, &tape);
            LossResult l = huber_loss(pred, y);
            const double weight = static_cast<double>(y.size()) / static_cast<double>(total);
            for (float& g : l.grad.values()) g = static_cast<float>(g * weight);
            const LayerGrads g = layer_backward(layer, tape, l.grad, req);
            GradSums& s = partial[c];
            s.loss = l.loss * weight;
            if (req.transform) {
                s.up_alpha = g.up.transform.alpha;
                s.up_angles = g.up.transform.angles;
                s.down_alpha = g.down.transform.alpha;
                s.down_angles = g.down.transform.angles;
            }
            if (req.weight) {
                GradSums::add(s.up_w, g.up.weight);
                GradSums::add(s.down_w, g.down.weight);
            }
            if (req.quant_params) {
                GradSums::add(s.up_s, g.up.scales);
                GradSums::add(s.down_s, g.down.scales);
                GradSums::add(s.up_z, g.up.zeros);
                GradSums::add(s.down_z, g.down.zeros);
            }
        }
    });
    GradSums sum;
    for (const GradSums& p : partial) sum.merge(p);
    return sum;
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, Rng rng) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    rng_shuffle(std::span<std::size_t>(order), rng);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t b = 0; b < n; b += batch_size)
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(b),
                             order.begin() + static_cast<std::ptrdiff_t>(std::min(n, b + batch_size)));
    return batches;
}

void check_finite(double loss, std::size_t stage, std::size_t epoch) {
    if (!std::isfinite(loss))
        throw std::runtime_error("non-finite loss in stage " + std::to_string(stage) + ", epoch " +
                                 std::to_string(epoch + 1));
}

struct Adam {
    AdamWState state;
    double lr;
    Adam(std::size_t n, double learning_rate) : state(n), lr(learning_rate) {}
};

void stage_one(QuantLayer& layer, const LayerData& data, const TrainConfig& cfg, Rng rng, StageReport& rep) {
    Adam up_alpha(layer.up.bundle.alpha.size(), cfg.lr_alpha);
    Adam up_angles(layer.up.bundle.angle_count(), cfg.lr_angles);
    Adam down_alpha(layer.down.bundle.alpha.size(), cfg.lr_alpha);
    Adam down_angles(layer.down.bundle.angle_count(), cfg.lr_angles);
    const std::size_t n = data.inputs->size();
    const std::size_t per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
    const std::uint64_t total = std::max<std::uint64_t>(1, cfg.epochs_per_stage * per_epoch);

    rep.init_train = dataset_loss(layer, *data.inputs, *data.labels);
    rep.init_val = dataset_loss(layer, *data.val_inputs, *data.val_labels);
    check_finite(rep.init_val, 1, 0);
    rep.best_val = rep.init_val;
    QuantLayer best = layer;

    auto update_alpha = [&](TransformBundle& b, Adam& a, const std::vector<double>& g, double scale) {
        adamw_step(b.alpha, g, a.state, a.lr * scale, cfg.adamw);
        for (float& v : b.alpha) v = std::max(v, 1e-4f);
    };
    auto update_angles = [&](TransformBundle& b, Adam& a, const std::vector<double>& g, double scale) {
        if (g.empty()) return;
        std::vector<float> angles = b.flat_angles();
        adamw_step(angles, g, a.state, a.lr * scale, cfg.adamw);
        b.set_flat_angles(angles);
    };

    std::uint64_t step = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs_per_stage; ++epoch) {
        double epoch_loss = 0.0;
        const auto batches = epoch_batches(n, cfg.batch_size, rng.fork(epoch));
        for (const auto& batch : batches) {
            const GradSums g = batch_gradients(layer, data, batch, cfg.chunk_samples, {true, false, false, false});
            check_finite(g.loss, 1, epoch);
            epoch_loss += g.loss;
            // Learning rates are relative to the schedule's base of 1.
            const double scale = cosine_lr(step++, {1.0, total});
            update_alpha(layer.up.bundle, up_alpha, g.up_alpha, scale);
            update_angles(layer.up.bundle, up_angles, g.up_angles, scale);
            update_alpha(layer.down.bundle, down_alpha, g.down_alpha, scale);
            update_angles(layer.down.bundle, down_angles, g.down_angles, scale);
        }
        rep.train_loss.push_back(epoch_loss / static_cast<double>(batches.size()));
        const double val = dataset_loss(layer, *data.val_inputs, *data.val_labels);
        check_finite(val, 1, epoch);
        rep.val_loss.push_back(val);
        if (val < rep.best_val) {
            rep.best_val = val;
            rep.best_epoch = epoch + 1;
            best = layer;
        }
    }
    layer = std::move(best);
    rep.final_train = dataset_loss(layer, *data.inputs, *data.labels);
}

QuantLayer rounded(const QuantLayer& layer) {
    QuantLayer r = layer;
    round_zero_points(r.up.params);
    round_zero_points(r.down.params);
    return r;
}

void stage_two(QuantLayer& layer, const LayerData& data, const TrainConfig& cfg, Rng rng, StageReport& rep) {
    layer.up.fold();
    layer.down.fold();
    Adam up_w(layer.up.weight.size(), cfg.lr_weights), down_w(layer.down.weight.size(), cfg.lr_weights);
    Adam up_s(layer.up.params.scales.size(), cfg.lr_scales), down_s(layer.down.params.scales.size(), cfg.lr_scales);
    Adam up_z(layer.up.params.zeros.size(), cfg.lr_zeros), down_z(layer.down.params.zeros.size(), cfg.lr_zeros);
    const std::size_t n = data.inputs->size();
    const std::size_t per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
    const std::uint64_t total = std::max<std::uint64_t>(1, cfg.epochs_per_stage * per_epoch);

    rep.init_train = dataset_loss(layer, *data.inputs, *data.labels);
    rep.init_val = dataset_loss(layer, *data.val_inputs, *data.val_labels);
    check_finite(rep.init_val, 2, 0);
    rep.best_val = rep.init_val;
    QuantLayer best = rounded(layer);

    auto update = [&](Matrix& m, Adam& a, const std::vector<double>& g, double scale) {
        adamw_step(m.values(), g, a.state, a.lr * scale, cfg.adamw);
    };
    const float qmax = layer.up.spec.max_code();
    auto clamp_params = [&](QuantParams& p) {
        for (float& s : p.scales.values()) s = std::max(s, kMinScale);
        for (float& z : p.zeros.values()) z = std::clamp(z, 0.0f, qmax);
    };

    std::uint64_t step = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs_per_stage; ++epoch) {
        double epoch_loss = 0.0;
        const auto batches = epoch_batches(n, cfg.batch_size, rng.fork(epoch));
        for (const auto& batch : batches) {
            const GradSums g = batch_gradients(layer, data, batch, cfg.chunk_samples, {false, true, true, false});
            check_finite(g.loss, 2, epoch);
            epoch_loss += g.loss;
            const double scale = cosine_lr(step++, {1.0, total});
            update(layer.up.weight, up_w, g.up_w, scale);
            update(layer.down.weight, down_w, g.down_w, scale);
            update(layer.up.params.scales, up_s, g.up_s, scale);
            update(layer.down.params.scales, down_s, g.down_s, scale);
            update(layer.up.params.zeros, up_z, g.up_z, scale);
            update(layer.down.params.zeros, down_z, g.down_z, scale);
            clamp_params(layer.up.params);
            clamp_params(layer.down.params);
        }
        rep.train_loss.push_back(epoch_loss / static_cast<double>(batches.size()));
        // Selection uses the deployable snapshot (integer zero points).
        QuantLayer candidate = rounded(layer);
        const double val = dataset_loss(candidate, *data.val_inputs, *data.val_labels);
        check_finite(val, 2, epoch);
        rep.val_loss.push_back(val);
        if (val < rep.best_val) {
            rep.best_val = val;
            rep.best_epoch = epoch + 1;
            best = std::move(candidate);
        }
    }
    layer = std::move(best);
    rep.final_train = dataset_loss(layer, *data.inputs, *data.labels);
}

void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed, const std::string& section) {
    if (!j.is_object()) throw std::invalid_argument("config section '" + section + "' must be an object");
    for (const auto& item : j.items()) {
        bool known = false;
        for (const char* k : allowed) known = known || item.key() == k;
        if (!known) throw std::invalid_argument("unknown config key '" + section + "." + item.key() + "'");
    }
}

template <typename T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

void OutlierModelSpec::validate() const {
    require(num_layers >= 1, "model needs at least one layer");
    require(dim >= 2 && hidden >= 2, "model dimensions must be >= 2");
    require(outlier_channels < dim && outlier_channels < hidden, "outlier channels must be fewer than the input dimension");
    require(outlier_gain > 0.0f && std::isfinite(outlier_gain), "outlier gain must be positive");
}

void CalibrationSpec::validate() const {
    require(train_samples >= 1 && val_samples >= 1, "calibration needs training and validation samples");
    require(seq_len >= 1, "sequence length must be positive");
}

void TrainConfig::validate() const {
    require(batch_size >= 1 && chunk_samples >= 1, "batch and chunk sizes must be positive");
    for (double lr : {lr_angles, lr_alpha, lr_weights, lr_scales, lr_zeros})
        require(lr >= 0.0 && std::isfinite(lr), "learning rates must be finite and non-negative");
}

Matrix gen_outlier_weight(std::size_t d_in, std::size_t d_out, std::size_t outliers, float gain, Rng& rng) {
    Matrix w(d_in, d_out);
    const double sd = 1.0 / std::sqrt(static_cast<double>(d_in));
    for (float& v : w.values()) v = static_cast<float>(sd * rng.normal());
    std::vector<std::size_t> rows(d_in);
    std::iota(rows.begin(), rows.end(), 0);
    rng_shuffle(std::span<std::size_t>(rows), rng);
    for (std::size_t k = 0; k < std::min(outliers, d_in); ++k)
        for (float& v : w.row(rows[k])) v *= gain;
    return w;
}

std::vector<ToyDecoderLayer> gen_synthetic_model(const OutlierModelSpec& spec) {
    spec.validate();
    const Rng base(spec.seed);
    std::vector<ToyDecoderLayer> layers;
    for (std::size_t l = 0; l < spec.num_layers; ++l) {
        Rng rng = base.fork(l);
        ToyDecoderLayer layer;
        layer.up_weight = gen_outlier_weight(spec.dim, spec.hidden, spec.outlier_channels, spec.outlier_gain, rng);
        layer.down_weight = gen_outlier_weight(spec.hidden, spec.dim, spec.outlier_channels, spec.outlier_gain, rng);
        if (spec.bias) {
            layer.up_bias.resize(spec.hidden);
            layer.down_bias.resize(spec.dim);
            for (float& b : layer.up_bias) b = static_cast<float>(0.1 * rng.normal());
            for (float& b : layer.down_bias) b = static_cast<float>(0.1 * rng.normal());
        }
        layer.residual = true;
        layers.push_back(std::move(layer));
    }
    return layers;
}

Matrix model_forward(const std::vector<ToyDecoderLayer>& layers, const Matrix& x) {
    Matrix h = x;
    for (const auto& l : layers) h = l.forward(h);
    return h;
}

CalibrationSet gen_calibration(std::size_t dim, const CalibrationSpec& spec) {
    spec.validate();
    const Rng base(spec.seed);
    auto draw = [&](std::size_t count, Rng rng) {
        std::vector<Matrix> out;
        for (std::size_t i = 0; i < count; ++i) {
            Matrix m(spec.seq_len, dim);
            for (float& v : m.values()) v = static_cast<float>(rng.normal());
            out.push_back(std::move(m));
        }
        return out;
    };
    return {draw(spec.train_samples, base.fork(0)), draw(spec.val_samples, base.fork(1))};
}

double dataset_loss(const QuantLayer& layer, const std::vector<Matrix>& inputs, const std::vector<Matrix>& labels) {
    if (inputs.size() != labels.size()) throw std::invalid_argument("inputs and labels differ in count");
    if (inputs.empty()) return 0.0;
    std::vector<double> losses(inputs.size());
    parallel_for(inputs.size(), [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) losses[i] = huber_value(layer_forward(layer, inputs[i]), labels[i]);
    });
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        sum += losses[i] * static_cast<double>(labels[i].size());
        count += labels[i].size();
    }
    return sum / static_cast<double>(count);
}

QuantLayer optimize_layer(const ToyDecoderLayer& layer, const LayerData& data, const QuantSpec& spec,
                          const TransformConfig& transform, const TrainConfig& config, std::uint64_t layer_seed,
                          LayerReport* report) {
    config.validate();
    if (!data.inputs || !data.labels || !data.val_inputs || !data.val_labels)
        throw std::invalid_argument("optimize_layer: missing calibration streams");
    if (data.inputs->size() != data.labels->size() || data.inputs->empty())
        throw std::invalid_argument("optimize_layer: training inputs and labels must be non-empty and paired");
    const Rng rng = Rng(config.seed).fork(layer_seed);
    Rng up_rng = rng.fork(101), down_rng = rng.fork(102);
    TransformConfig up_cfg = transform, down_cfg = transform;
    up_cfg.group_size = down_cfg.group_size = spec.group_size;
    QuantLayer q = make_quant_layer(layer, make_bundle(layer.dim(), up_cfg, up_rng),
                                    make_bundle(layer.hidden(), down_cfg, down_rng), spec);
    LayerReport local;
    LayerReport& rep = report ? *report : local;
    stage_one(q, data, config, rng.fork(1), rep.stage1);
    stage_two(q, data, config, rng.fork(2), rep.stage2);
    return q;
}

QuantizedModel quantize_model(const std::vector<ToyDecoderLayer>& layers, const CalibrationSet& calib,
                              const QuantSpec& spec, const TransformConfig& transform, const TrainConfig& config,
                              const ProgressFn& progress) {
    QuantizedModel model;
    std::vector<Matrix> x = calib.train, xq = calib.train;
    std::vector<Matrix> xv = calib.val, xvq = calib.val;
    auto forward_all = [](const auto& fn, const std::vector<Matrix>& in) {
        std::vector<Matrix> out(in.size());
        parallel_for(in.size(), [&](std::size_t b, std::size_t e) {
            for (std::size_t i = b; i < e; ++i) out[i] = fn(in[i]);
        });
        return out;
    };
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const ToyDecoderLayer& fl = layers[l];
        auto fp = [&](const Matrix& m) { return fl.forward(m); };
        const std::vector<Matrix> y = forward_all(fp, x);
        const std::vector<Matrix> yv = forward_all(fp, xv);
        LayerReport rep;
        QuantLayer q = optimize_layer(fl, {&xq, &y, &xvq, &yv}, spec, transform, config, l, &rep);
        if (progress)
            progress("layer " + std::to_string(l) + ": stage1 val " + std::to_string(rep.stage1.init_val) + " -> " +
                     std::to_string(rep.stage1.best_val) + ", stage2 val " + std::to_string(rep.stage2.best_val));
        if (l + 1 < layers.size()) {
            auto qf = [&](const Matrix& m) { return layer_forward(q, m); };
            xq = forward_all(qf, config.propagate_quantized_inputs ? xq : x);
            xvq = forward_all(qf, config.propagate_quantized_inputs ? xvq : xv);
            x = y;
            xv = yv;
        }
        model.layers.push_back(std::move(q));
        model.reports.push_back(std::move(rep));
    }
    return model;
}

std::vector<QuantLayer> quantize_model_rtn(const std::vector<ToyDecoderLayer>& layers, const QuantSpec& spec) {
    std::vector<QuantLayer> out;
    for (const auto& l : layers) {
        QuantLayer q = make_quant_layer(l, identity_bundle(l.dim(), spec.group_size),
                                        identity_bundle(l.hidden(), spec.group_size), spec);
        q.up.fold();
        q.down.fold();
        out.push_back(std::move(q));
    }
    return out;
}

Matrix quant_model_forward(const std::vector<QuantLayer>& layers, const Matrix& x) {
    Matrix h = x;
    for (const auto& l : layers) h = layer_forward(l, h);
    return h;
}

void save_fp_model(const std::filesystem::path& path, const std::vector<ToyDecoderLayer>& layers) {
    TensorFile f;
    nlohmann::ordered_json residual = nlohmann::ordered_json::array();
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        f.add(make_tensor(p + "up_weight", "weight", layers[l].up_weight));
        f.add(make_tensor(p + "down_weight", "weight", layers[l].down_weight));
        if (!layers[l].up_bias.empty())
            f.add({p + "up_bias", "bias", {static_cast<std::int64_t>(layers[l].up_bias.size())}, layers[l].up_bias});
        if (!layers[l].down_bias.empty())
            f.add({p + "down_bias", "bias", {static_cast<std::int64_t>(layers[l].down_bias.size())},
                   layers[l].down_bias});
        residual.push_back(layers[l].residual);
    }
    f.fields["num_layers"] = layers.size();
    f.fields["residual"] = residual;
    save_tensors(path, f);
}

std::vector<ToyDecoderLayer> load_fp_model(const std::filesystem::path& path) {
    const TensorFile f = load_tensors(path);
    std::vector<ToyDecoderLayer> layers;
    try {
        const auto n = f.fields.at("num_layers").get<std::size_t>();
        for (std::size_t l = 0; l < n; ++l) {
            const std::string p = "layer" + std::to_string(l) + ".";
            ToyDecoderLayer layer;
            layer.up_weight = f.matrix(p + "up_weight");
            layer.down_weight = f.matrix(p + "down_weight");
            auto bias = [&](const std::string& name) {
                const Tensor* t = f.find(name);
                if (!t) return std::vector<float>{};
                const auto* v = std::get_if<std::vector<float>>(&t->data);
                if (!v) throw FormatError("bias '" + name + "' must be f32");
                return *v;
            };
            layer.up_bias = bias(p + "up_bias");
            layer.down_bias = bias(p + "down_bias");
            layer.residual = f.fields.at("residual").at(l).get<bool>();
            layer.validate();
            layers.push_back(std::move(layer));
        }
    } catch (const FormatError&) {
        throw;
    } catch (const std::exception& e) {
        throw FormatError(std::string("invalid model file: ") + e.what());
    }
    return layers;
}

void to_json(nlohmann::json& j, const RunConfig& c) {
    j = {{"model",
          {{"num_layers", c.model.num_layers},
           {"dim", c.model.dim},
           {"hidden", c.model.hidden},
           {"outlier_channels", c.model.outlier_channels},
           {"outlier_gain", c.model.outlier_gain},
           {"bias", c.model.bias},
           {"seed", c.model.seed}}},
         {"calibration",
          {{"train_samples", c.calibration.train_samples},
           {"val_samples", c.calibration.val_samples},
           {"seq_len", c.calibration.seq_len},
           {"seed", c.calibration.seed}}},
         {"quant", {{"bits", c.quant.bits}, {"group_size", c.quant.group_size}}},
         {"transform", {{"rotations", c.transform.rotations}, {"pairs_per_rotation", c.transform.pairs_per_rotation}}},
         {"train",
          {{"epochs_per_stage", c.train.epochs_per_stage},
           {"batch_size", c.train.batch_size},
           {"chunk_samples", c.train.chunk_samples},
           {"lr_angles", c.train.lr_angles},
           {"lr_alpha", c.train.lr_alpha},
           {"lr_weights", c.train.lr_weights},
           {"lr_scales", c.train.lr_scales},
           {"lr_zeros", c.train.lr_zeros},
           {"propagate_quantized_inputs", c.train.propagate_quantized_inputs},
           {"seed", c.train.seed}}}};
}

RunConfig run_config_from_json(const nlohmann::json& j) {
    RunConfig c;
    check_keys(j, {"model", "calibration", "quant", "transform", "train"}, "config");
    try {
        if (j.contains("model")) {
            const auto& m = j.at("model");
            check_keys(m, {"num_layers", "dim", "hidden", "outlier_channels", "outlier_gain", "bias", "seed"}, "model");
            read_opt(m, "num_layers", c.model.num_layers);
            read_opt(m, "dim", c.model.dim);
            read_opt(m, "hidden", c.model.hidden);
            read_opt(m, "outlier_channels", c.model.outlier_channels);
            read_opt(m, "outlier_gain", c.model.outlier_gain);
            read_opt(m, "bias", c.model.bias);
            read_opt(m, "seed", c.model.seed);
        }
        if (j.contains("calibration")) {
            const auto& m = j.at("calibration");
            check_keys(m, {"train_samples", "val_samples", "seq_len", "seed"}, "calibration");
            read_opt(m, "train_samples", c.calibration.train_samples);
            read_opt(m, "val_samples", c.calibration.val_samples);
            read_opt(m, "seq_len", c.calibration.seq_len);
            read_opt(m, "seed", c.calibration.seed);
        }
        if (j.contains("quant")) {
            const auto& m = j.at("quant");
            check_keys(m, {"bits", "group_size"}, "quant");
            read_opt(m, "bits", c.quant.bits);
            read_opt(m, "group_size", c.quant.group_size);
        }
        if (j.contains("transform")) {
            const auto& m = j.at("transform");
            check_keys(m, {"rotations", "pairs_per_rotation"}, "transform");
            read_opt(m, "rotations", c.transform.rotations);
            read_opt(m, "pairs_per_rotation", c.transform.pairs_per_rotation);
        }
        if (j.contains("train")) {
            const auto& m = j.at("train");
            check_keys(m,
                       {"epochs_per_stage", "batch_size", "chunk_samples", "lr_angles", "lr_alpha", "lr_weights",
                        "lr_scales", "lr_zeros", "propagate_quantized_inputs", "seed"},
                       "train");
            read_opt(m, "epochs_per_stage", c.train.epochs_per_stage);
            read_opt(m, "batch_size", c.train.batch_size);
            read_opt(m, "chunk_samples", c.train.chunk_samples);
            read_opt(m, "lr_angles", c.train.lr_angles);
            read_opt(m, "lr_alpha", c.train.lr_alpha);
            read_opt(m, "lr_weights", c.train.lr_weights);
            read_opt(m, "lr_scales", c.train.lr_scales);
            read_opt(m, "lr_zeros", c.train.lr_zeros);
            read_opt(m, "propagate_quantized_inputs", c.train.propagate_quantized_inputs);
            read_opt(m, "seed", c.train.seed);
        }
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("config type error: ") + e.what());
    }
    c.transform.group_size = c.quant.group_size;
    c.model.validate();
    c.calibration.validate();
    c.quant.validate();
    c.train.validate();
    require(c.transform.rotations >= 1, "transform.rotations must be >= 1");
    require(c.transform.pairs_per_rotation >= 1 && c.transform.pairs_per_rotation <= c.quant.group_size / 2,
            "transform.pairs_per_rotation must be in [1, group_size / 2]");
    return c;
}

nlohmann::json report_to_json(const std::vector<LayerReport>& reports) {
    nlohmann::json out = nlohmann::json::array();
    auto stage = [](const StageReport& s) {
        return nlohmann::json{{"init_train", s.init_train}, {"final_train", s.final_train}, {"init_val", s.init_val}, {"best_val", s.best_val},
                              {"best_epoch", s.best_epoch}, {"train_loss", s.train_loss}, {"val_loss", s.val_loss}};
    };
    for (const auto& r : reports) out.push_back({{"stage1", stage(r.stage1)}, {"stage2", stage(r.stage2)}});
    return out;
}

}  // namespace paro
