#include "paro/engine.hpp"

#include "paro/baselines.hpp"
#include "paro/parallel.hpp"
#include "paro/tensor_file.hpp"

#include <Eigen/Core>

#if defined(__AVX512F__)
#include <immintrin.h>
#endif

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>

namespace paro {

namespace {

constexpr std::size_t kTokenTile = 16;

using RowMajor = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

DeployedLinear deploy_linear(const QuantLinear& lin) {
    if (lin.mode != WeightMode::Static) throw std::invalid_argument("deploy requires calibrated (static) layers");
    for (float z : lin.params.zeros.values())
        if (z != std::nearbyint(z)) throw std::invalid_argument("deploy requires integer zero points");
    return {quantize_matrix(lin.weight, lin.params), lin.bundle, lin.bias};
}

void save_linear(const std::filesystem::path& path, const DeployedLinear& lin, bool residual) {
    TensorFile f;
    write_bundle(f, lin.bundle, "transform.");
    write_quantized(f, lin.weight, "weight.");
    if (!lin.bias.empty()) f.add({"bias", "bias", {static_cast<std::int64_t>(lin.bias.size())}, lin.bias});
    f.fields["residual"] = residual;
    save_tensors(path, f);
}

DeployedLinear load_linear(const std::filesystem::path& path, bool* residual) {
    const TensorFile f = load_tensors(path);
    DeployedLinear lin;
    lin.bundle = read_bundle(f, "transform.");
    lin.weight = read_quantized(f, "weight.");
    if (const Tensor* b = f.find("bias")) {
        const auto* v = std::get_if<std::vector<float>>(&b->data);
        if (!v) throw FormatError("bias must be f32");
        lin.bias = *v;
    }
    try {
        *residual = f.fields.at("residual").get<bool>();
    } catch (const std::exception& e) {
        throw FormatError(std::string("missing residual flag: ") + e.what());
    }
    return lin;
}

void check_linear(const DeployedLinear& lin) {
    if (lin.bundle.channels() != lin.weight.rows) throw FormatError("bundle does not match weight rows");
    if (lin.weight.params.spec.group_size != lin.bundle.config.group_size)
        throw FormatError("quantization and transform group sizes differ");
    if (!lin.bias.empty() && lin.bias.size() != lin.weight.cols) throw FormatError("bias length mismatch");
}

// Transposed tile: buf[c * kTokenTile + t] holds channel c of token t.
void rotate_tile(float* buf, const FusedPlan::Group& grp) {
    const std::size_t pairs = grp.i.size();
    for (std::size_t k = 0; k < pairs; ++k) {
        float* __restrict ri = buf + grp.i[k] * kTokenTile;
        float* __restrict rj = buf + grp.j[k] * kTokenTile;
        const float c = grp.cos[k], s = grp.sin[k];
        for (std::size_t t = 0; t < kTokenTile; ++t) {
            const float a = ri[t], b = rj[t];
            ri[t] = c * a - s * b;
            rj[t] = s * a + c * b;
        }
    }
}

void rotate_row(float* v, const FusedPlan::Group& grp) {
    const std::size_t pairs = grp.i.size();
    for (std::size_t k = 0; k < pairs; ++k) {
        const float a = v[grp.i[k]], b = v[grp.j[k]];
        const float c = grp.cos[k], s = grp.sin[k];
        v[grp.i[k]] = c * a - s * b;
        v[grp.j[k]] = s * a + c * b;
    }
}

#if defined(__AVX512F__)
void transpose16(__m512 r[16]) {
    __m512 t[16];
    for (int k = 0; k < 8; ++k) {
        t[2 * k] = _mm512_unpacklo_ps(r[2 * k], r[2 * k + 1]);
        t[2 * k + 1] = _mm512_unpackhi_ps(r[2 * k], r[2 * k + 1]);
    }
    for (int k = 0; k < 4; ++k) {
        const __m512d a = _mm512_castps_pd(t[4 * k]), b = _mm512_castps_pd(t[4 * k + 2]);
        const __m512d c = _mm512_castps_pd(t[4 * k + 1]), d = _mm512_castps_pd(t[4 * k + 3]);
        r[4 * k] = _mm512_castpd_ps(_mm512_unpacklo_pd(a, b));
        r[4 * k + 1] = _mm512_castpd_ps(_mm512_unpackhi_pd(a, b));
        r[4 * k + 2] = _mm512_castpd_ps(_mm512_unpacklo_pd(c, d));
        r[4 * k + 3] = _mm512_castpd_ps(_mm512_unpackhi_pd(c, d));
    }
    for (int h = 0; h < 2; ++h)
        for (int k = 0; k < 4; ++k) {
            t[8 * h + k] = _mm512_shuffle_f32x4(r[8 * h + k], r[8 * h + 4 + k], 0x88);
            t[8 * h + 4 + k] = _mm512_shuffle_f32x4(r[8 * h + k], r[8 * h + 4 + k], 0xdd);
        }
    for (int k = 0; k < 8; ++k) {
        r[k] = _mm512_shuffle_f32x4(t[k], t[8 + k], 0x88);
        r[8 + k] = _mm512_shuffle_f32x4(t[k], t[8 + k], 0xdd);
    }
}
#endif

// Full tile of kTokenTile tokens: scale, transpose into buf.
void load_tile(const float* src, std::size_t ld, const float* inv_alpha, std::size_t n, float* buf) {
    std::size_t c = 0;
#if defined(__AVX512F__)
    static_assert(kTokenTile == 16);
    for (; c + 16 <= n; c += 16) {
        __m512 r[16];
        const __m512 ia = _mm512_loadu_ps(inv_alpha + c);
        for (int t = 0; t < 16; ++t) r[t] = _mm512_mul_ps(_mm512_loadu_ps(src + t * ld + c), ia);
        transpose16(r);
        for (int k = 0; k < 16; ++k) _mm512_storeu_ps(buf + (c + k) * kTokenTile, r[k]);
    }
#endif
    for (; c < n; ++c)
        for (std::size_t t = 0; t < kTokenTile; ++t) buf[c * kTokenTile + t] = src[t * ld + c] * inv_alpha[c];
}

void store_tile(const float* buf, std::size_t n, float* dst, std::size_t ld) {
    std::size_t c = 0;
#if defined(__AVX512F__)
    for (; c + 16 <= n; c += 16) {
        __m512 r[16];
        for (int k = 0; k < 16; ++k) r[k] = _mm512_loadu_ps(buf + (c + k) * kTokenTile);
        transpose16(r);
        for (int t = 0; t < 16; ++t) _mm512_storeu_ps(dst + t * ld + c, r[t]);
    }
#endif
    for (; c < n; ++c)
        for (std::size_t t = 0; t < kTokenTile; ++t) dst[t * ld + c] = buf[c * kTokenTile + t];
}

// Every case runs once per round, each timed call preceded by an untimed
// warm-up call; the median over rounds is reported. Interleaving spreads
// transient machine noise across all cases instead of one.
std::vector<double> interleaved_medians(std::size_t rounds, const std::vector<std::function<void()>>& cases) {
    std::vector<std::vector<double>> t(cases.size());
    for (std::size_t r = 0; r < std::max<std::size_t>(rounds, 1); ++r)
        for (std::size_t c = 0; c < cases.size(); ++c) {
            cases[c]();
            const auto t0 = std::chrono::steady_clock::now();
            cases[c]();
            t[c].push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
        }
    std::vector<double> out;
    for (auto& v : t) {
        std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2), v.end());
        out.push_back(v[v.size() / 2]);
    }
    return out;
}

}  // namespace

void DeployedModel::validate() const {
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto& L = layers[l];
        check_linear(L.up);
        check_linear(L.down);
        if (L.up.weight.cols != L.down.weight.rows) throw FormatError("layer " + std::to_string(l) + " dims do not chain");
        if (L.residual && L.down.weight.cols != L.up.weight.rows)
            throw FormatError("layer " + std::to_string(l) + " residual needs D -> D");
        if (l > 0 && layers[l - 1].down.weight.cols != L.up.weight.rows)
            throw FormatError("layer " + std::to_string(l) + " input does not match the previous output");
    }
}

DeployedModel deploy(const std::vector<QuantLayer>& layers) {
    DeployedModel m;
    for (const auto& l : layers) m.layers.push_back({deploy_linear(l.up), deploy_linear(l.down), l.residual});
    m.validate();
    return m;
}

void save_deployed(const std::filesystem::path& dir, const DeployedModel& model) {
    std::filesystem::create_directories(dir);
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        const std::string p = "layer" + std::to_string(l);
        save_linear(dir / (p + ".up.pqt"), model.layers[l].up, model.layers[l].residual);
        save_linear(dir / (p + ".down.pqt"), model.layers[l].down, model.layers[l].residual);
    }
    nlohmann::ordered_json manifest{{"format", "paro-deployed"}, {"num_layers", model.layers.size()},
                                    {"dim", model.dim()}};
    std::ofstream out(dir / "model.json");
    out << manifest.dump(2) << '\n';
    if (!out) throw std::runtime_error("cannot write " + (dir / "model.json").string());
}

DeployedModel load_deployed(const std::filesystem::path& dir) {
    std::ifstream in(dir / "model.json");
    if (!in) throw FormatError("missing " + (dir / "model.json").string());
    std::size_t n = 0;
    try {
        const auto manifest = nlohmann::json::parse(in);
        if (manifest.at("format").get<std::string>() != "paro-deployed") throw FormatError("unknown model format");
        n = manifest.at("num_layers").get<std::size_t>();
    } catch (const FormatError&) {
        throw;
    } catch (const std::exception& e) {
        throw FormatError(std::string("invalid model.json: ") + e.what());
    }
    DeployedModel m;
    for (std::size_t l = 0; l < n; ++l) {
        const std::string p = "layer" + std::to_string(l);
        DeployedLayer layer;
        bool r_up = true, r_down = true;
        layer.up = load_linear(dir / (p + ".up.pqt"), &r_up);
        layer.down = load_linear(dir / (p + ".down.pqt"), &r_down);
        if (r_up != r_down) throw FormatError(p + ": residual flags disagree");
        layer.residual = r_up;
        m.layers.push_back(std::move(layer));
    }
    m.validate();
    return m;
}

FusedPlan FusedPlan::build(const TransformBundle& bundle) {
    FusedPlan plan;
    plan.channels = bundle.channels();
    plan.layout = bundle.layout;
    plan.inv_alpha.resize(bundle.alpha.size());
    for (std::size_t c = 0; c < bundle.alpha.size(); ++c) plan.inv_alpha[c] = 1.0f / bundle.alpha[c];
    plan.groups.resize(bundle.groups.size());
    for (std::size_t g = 0; g < bundle.groups.size(); ++g) {
        auto& grp = plan.groups[g];
        for (const auto& rot : bundle.groups[g])
            for (std::size_t k = 0; k < rot.pairs.size(); ++k) {
                grp.i.push_back(static_cast<std::uint16_t>(rot.pairs[k].i));
                grp.j.push_back(static_cast<std::uint16_t>(rot.pairs[k].j));
                grp.cos.push_back(std::cos(rot.angles[k]));
                grp.sin.push_back(std::sin(rot.angles[k]));
            }
    }
    return plan;
}

void fused_inverse_transform_into(const Matrix& x, const FusedPlan& plan, Matrix& out) {
    if (x.cols() != plan.channels) throw std::invalid_argument("activation columns do not match the transform");
    const std::size_t T = x.rows();
    const std::size_t D = x.cols();
    if (out.rows() != T || out.cols() != D) out = Matrix(T, D);
    const std::size_t tiles = (T + kTokenTile - 1) / kTokenTile;
    const std::size_t G = plan.layout.num_groups;
    parallel_for(tiles * G, [&](std::size_t begin, std::size_t end) {
        std::vector<float> buf(plan.layout.group_size * kTokenTile);
        for (std::size_t task = begin; task < end; ++task) {
            const std::size_t tile = task / G, g = task % G;
            const std::size_t t0 = tile * kTokenTile, tb = std::min(kTokenTile, T - t0);
            const std::size_t c0 = plan.layout.begin(g), n = plan.layout.live_size(g);
            const auto& grp = plan.groups[g];
            if (tb < kTokenTile) {
                // Ragged tail (and single-token decode): row at a time.
                for (std::size_t t = t0; t < t0 + tb; ++t) {
                    const float* src = x.data() + t * D + c0;
                    float* dst = out.data() + t * D + c0;
                    for (std::size_t c = 0; c < n; ++c) dst[c] = src[c] * plan.inv_alpha[c0 + c];
                    rotate_row(dst, grp);
                }
                continue;
            }
            load_tile(x.data() + t0 * D + c0, D, plan.inv_alpha.data() + c0, n, buf.data());
            rotate_tile(buf.data(), grp);
            store_tile(buf.data(), n, out.data() + t0 * D + c0, D);
        }
    });
}

Matrix fused_inverse_transform(const Matrix& x, const FusedPlan& plan) {
    Matrix out;
    fused_inverse_transform_into(x, plan, out);
    return out;
}

Matrix fused_inverse_transform(const Matrix& x, const TransformBundle& bundle) {
    return fused_inverse_transform(x, FusedPlan::build(bundle));
}

Matrix deployed_linear_forward(const DeployedLinear& lin, const Matrix& x, ForwardStats* stats) {
    const QuantizedTensor& q = lin.weight;
    if (x.cols() != q.rows) throw std::invalid_argument("input width does not match the linear");
    const Matrix xt = fused_inverse_transform(x, lin.bundle);
    const std::size_t T = x.rows(), D_out = q.cols;
    const GroupLayout& layout = q.params.layout;
    Matrix y(T, D_out);
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t c = 0; c < D_out && !lin.bias.empty(); ++c) y(t, c) = lin.bias[c];
    Eigen::Map<RowMajor> ym(y.data(), static_cast<Eigen::Index>(T), static_cast<Eigen::Index>(D_out));

    const std::size_t cols_per_task = 64;
    const std::size_t col_tasks = (D_out + cols_per_task - 1) / cols_per_task;
    std::vector<std::size_t> peak(col_tasks, 0);
    parallel_for(col_tasks, [&](std::size_t begin, std::size_t end) {
        std::vector<float> buf;
        for (std::size_t task = begin; task < end; ++task) {
            const std::size_t cb = task * cols_per_task, cn = std::min(cols_per_task, D_out - cb);
            for (std::size_t g = 0; g < layout.num_groups; ++g) {
                const std::size_t r0 = layout.begin(g), n = layout.live_size(g);
                buf.resize(n * cn);
                peak[task] = std::max(peak[task], buf.size());
                for (std::size_t c = 0; c < cn; ++c) {
                    const GroupParams gp = q.params.at(g, cb + c);
                    for (std::size_t r = 0; r < n; ++r) buf[r * cn + c] = dequantize_value(q.code(r0 + r, cb + c), gp);
                }
                Eigen::Map<const RowMajor, 0, Eigen::OuterStride<>> xb(
                    xt.data() + r0, static_cast<Eigen::Index>(T), static_cast<Eigen::Index>(n),
                    Eigen::OuterStride<>(static_cast<Eigen::Index>(q.rows)));
                Eigen::Map<const RowMajor> wb(buf.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cn));
                ym.middleCols(static_cast<Eigen::Index>(cb), static_cast<Eigen::Index>(cn)).noalias() += xb * wb;
            }
        }
    });
    if (stats) {
        ++stats->linears;
        for (std::size_t p : peak) stats->peak_dequant_floats = std::max(stats->peak_dequant_floats, p);
    }
    return y;
}

Matrix quantized_forward(const DeployedModel& model, const Matrix& x, ForwardStats* stats) {
    Matrix h = x;
    for (const auto& layer : model.layers) {
        Matrix a = deployed_linear_forward(layer.up, h, stats);
        for (float& v : a.values()) v = silu(v);
        Matrix y = deployed_linear_forward(layer.down, a, stats);
        if (layer.residual) {
            if (y.cols() != h.cols()) throw std::invalid_argument("residual shape mismatch");
            for (std::size_t i = 0; i < y.size(); ++i) y.values()[i] += h.values()[i];
        }
        h = std::move(y);
    }
    return h;
}

EvalReport evaluate_model(const std::vector<ToyDecoderLayer>& fp, const DeployedModel& deployed,
                          const QuantSpec& spec, const std::vector<Matrix>& inputs) {
    if (fp.size() != deployed.layers.size()) throw std::invalid_argument("FP and deployed models differ in depth");
    if (inputs.empty()) throw std::invalid_argument("no evaluation inputs");
    const std::vector<QuantLayer> rtn = quantize_model_rtn(fp, spec);
    EvalReport r;
    double sum = 0.0, sq = 0.0;
    std::size_t n = 0;
    for (const Matrix& x : inputs) {
        const Matrix ref = model_forward(fp, x);
        const double count = static_cast<double>(ref.size());
        r.mse_quantized += mean_squared_error(quantized_forward(deployed, x), ref) * count;
        r.mse_rtn += mean_squared_error(quant_model_forward(rtn, x), ref) * count;
        for (float v : ref.values()) {
            sum += v;
            sq += static_cast<double>(v) * v;
        }
        n += ref.size();
        r.tokens += x.rows();
    }
    r.samples = inputs.size();
    const double total = static_cast<double>(n);
    r.mse_quantized /= total;
    r.mse_rtn /= total;
    r.signal_variance = sq / total - (sum / total) * (sum / total);
    return r;
}

nlohmann::json eval_to_json(const EvalReport& r) {
    return {{"samples", r.samples},
            {"tokens", r.tokens},
            {"mse", {{"quantized", r.mse_quantized}, {"rtn", r.mse_rtn}}},
            {"signal_variance", r.signal_variance},
            {"relative_mse", {{"quantized", r.mse_quantized / r.signal_variance}, {"rtn", r.mse_rtn / r.signal_variance}}},
            {"quantized_le_rtn", r.mse_quantized <= r.mse_rtn}};
}

std::vector<BenchRow> bench_transforms(const BenchConfig& cfg) {
    struct Case {
        BenchRow row;
        Matrix x, out;
        FusedPlan plan;
        std::optional<HadamardOp> hadamard;
    };
    std::vector<Case> cases;
    Rng rng(cfg.seed);
    for (std::size_t n : cfg.dims) {
        Matrix x(cfg.tokens, n);
        for (float& v : x.values()) v = static_cast<float>(rng.normal());
        for (std::size_t K : cfg.rotations) {
            Rng brng = rng.fork(n * 1000 + K);
            TransformBundle b = make_bundle(n, {cfg.group_size, K, cfg.group_size / 2}, brng);
            std::vector<float> angles(b.angle_count());
            for (float& a : angles) a = static_cast<float>(brng.uniform(-1.0, 1.0));
            b.set_flat_angles(angles);
            cases.push_back({{"pairwise", n, K, cfg.tokens}, x, Matrix(cfg.tokens, n), FusedPlan::build(b), {}});
        }
        if (cfg.include_hadamard && is_power_of_two(n)) {
            Rng hrng = rng.fork(n);
            cases.push_back({{"hadamard", n, 0, cfg.tokens}, x, Matrix(cfg.tokens, n), {}, HadamardOp::random(n, hrng)});
        }
    }
    std::vector<std::function<void()>> fns;
    for (Case& c : cases) {
        if (c.hadamard)
            fns.push_back([&c] {
                std::copy(c.x.values().begin(), c.x.values().end(), c.out.values().begin());
                for (std::size_t t = 0; t < c.out.rows(); ++t) c.hadamard->apply(c.out.row(t));
            });
        else
            fns.push_back([&c] { fused_inverse_transform_into(c.x, c.plan, c.out); });
    }
    const std::vector<double> secs = interleaved_medians(cfg.repeats, fns);
    std::vector<BenchRow> rows;
    for (std::size_t i = 0; i < cases.size(); ++i) {
        BenchRow r = cases[i].row;
        r.seconds = secs[i];
        r.elements_per_second = static_cast<double>(r.tokens) * static_cast<double>(r.n) / r.seconds;
        rows.push_back(r);
    }
    return rows;
}

void write_bench_csv(std::ostream& out, std::span<const BenchRow> rows) {
    out << "kind,n,K,tokens,seconds,elements_per_second\n";
    out.precision(std::numeric_limits<double>::max_digits10);
    for (const BenchRow& r : rows)
        out << r.kind << ',' << r.n << ',' << r.K << ',' << r.tokens << ',' << r.seconds << ',' << r.elements_per_second
            << '\n';
}

}  // namespace paro
