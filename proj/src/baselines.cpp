#include "paro/baselines.hpp"

#include "paro/calibrate.hpp"

#include "paro/grad.hpp"
#include "paro/layer.hpp"
#include "paro/optim.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace paro {

namespace {

using MatD = Eigen::MatrixXd;

MatD to_eigen(const Matrix& m) {
    MatD out(m.rows(), m.cols());
    for (std::size_t r = 0; r < m.rows(); ++r)
        for (std::size_t c = 0; c < m.cols(); ++c) out(r, c) = m(r, c);
    return out;
}

Matrix from_eigen(const MatD& m) {
    Matrix out(static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) out(r, c) = static_cast<float>(m(r, c));
    return out;
}

MatD expm(const MatD& a) {
    const double norm = a.cwiseAbs().colwise().sum().maxCoeff();
    int squarings = 0;
    while (norm / std::ldexp(1.0, squarings) > 0.5) ++squarings;
    const MatD b = a / std::ldexp(1.0, squarings);
    MatD result = MatD::Identity(a.rows(), a.cols());
    MatD term = result;
    for (int k = 1; k <= 18; ++k) {
        term = (term * b) / static_cast<double>(k);
        result += term;
    }
    for (int i = 0; i < squarings; ++i) result = result * result;
    return result;
}

MatD skew_from_upper(const Matrix& u) {
    if (u.rows() != u.cols()) throw std::invalid_argument("U must be square");
    const auto n = static_cast<Eigen::Index>(u.rows());
    MatD a = MatD::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j) {
            a(i, j) = u(i, j);
            a(j, i) = -u(i, j);
        }
    return a;
}

// Loss and gradient of the dynamic-RTN output error under a dense transform R:
// W' = R W, X' = X R^T.
struct DenseEval {
    double loss = 0.0;
    Matrix grad_r;
};

DenseEval dense_transform_loss(const Matrix& r, const Matrix& w, const Matrix& x, const Matrix& target,
                               const QuantSpec& spec, bool want_grad) {
    const Matrix wt = matmul(r, w);
    const Matrix xt = matmul_nt(x, r);
    const QuantParams params = rtn_params(wt, spec);
    const Matrix wq = fake_quant(wt, params);
    const Matrix y = matmul(xt, wq);
    LossResult l = huber_loss(y, target);
    DenseEval e;
    e.loss = l.loss;
    if (!want_grad) return e;
    const Matrix d_wq = matmul_tn(xt, l.grad);
    const Matrix d_wt = dynamic_fake_quant_backward(wt, params, d_wq);
    const Matrix d_xt = matmul_nt(l.grad, wq);
    e.grad_r = matmul_nt(d_wt, w);
    const Matrix from_x = matmul_tn(d_xt, x);
    for (std::size_t i = 0; i < e.grad_r.size(); ++i) e.grad_r.values()[i] += from_x.values()[i];
    return e;
}

Matrix pad_rows(const Matrix& w, std::size_t rows) {
    Matrix out(rows, w.cols());
    std::copy(w.values().begin(), w.values().end(), out.values().begin());
    return out;
}

Matrix pad_cols(const Matrix& x, std::size_t cols) {
    Matrix out(x.rows(), cols);
    for (std::size_t t = 0; t < x.rows(); ++t) std::copy(x.row(t).begin(), x.row(t).end(), out.row(t).begin());
    return out;
}

void record(LossCurve& curve, double loss) {
    curve.loss.push_back(loss);
    curve.best.push_back(curve.best.empty() ? loss : std::min(curve.best.back(), loss));
}

LossCurve run_none(const Matrix& w, const Matrix& x, const Matrix& target, const CompareConfig& cfg) {
    LossCurve curve{TransformKind::None, {}, {}};
    const double loss = huber_value(matmul(x, fake_quant(w, rtn_params(w, cfg.spec))), target);
    for (std::size_t t = 0; t <= cfg.steps; ++t) record(curve, loss);
    return curve;
}

LossCurve run_hadamard(const Matrix& w, const Matrix& x, const Matrix& target, const CompareConfig& cfg) {
    LossCurve curve{TransformKind::RandomHadamard, {}, {}};
    const std::size_t n = next_power_of_two(w.rows());
    const Matrix wp = pad_rows(w, n);
    const Matrix xp = pad_cols(x, n);
    const Rng base(cfg.seed);
    double total = 0.0;
    for (std::size_t s = 0; s < cfg.hadamard_seeds; ++s) {
        Rng rng = base.fork(0x4841u + s);
        const HadamardOp h = HadamardOp::random(n, rng);
        const Matrix r = h.apply_to_weights(Matrix::identity(n));
        total += dense_transform_loss(r, wp, xp, target, cfg.spec, false).loss;
    }
    const double mean = total / static_cast<double>(std::max<std::size_t>(cfg.hadamard_seeds, 1));
    for (std::size_t t = 0; t <= cfg.steps; ++t) record(curve, mean);
    return curve;
}

LossCurve run_full_rotation(const Matrix& w, const Matrix& x, const Matrix& target, const CompareConfig& cfg) {
    LossCurve curve{TransformKind::FullRotation, {}, {}};
    const std::size_t d = w.rows();
    const std::size_t block = std::min(cfg.full_rotation_block, d);
    if (block < 2) throw std::invalid_argument("full rotation block must be >= 2");
    std::vector<std::size_t> starts;
    for (std::size_t b = 0; b < d; b += block) starts.push_back(b);
    auto block_size = [&](std::size_t i) { return std::min(block, d - starts[i]); };

    // Strictly upper entries of each block's U, flattened block by block.
    std::size_t count = 0;
    for (std::size_t i = 0; i < starts.size(); ++i) count += block_size(i) * (block_size(i) - 1) / 2;
    ParamGroup u(ParamKind::SkewU, std::vector<float>(count, 0.0f), cfg.lr_full_rotation);

    auto unpack = [&](std::size_t bi, std::size_t offset) {
        const std::size_t n = block_size(bi);
        Matrix ub(n, n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) ub(i, j) = u.values[offset++];
        return ub;
    };

    for (std::size_t step = 0; step <= cfg.steps; ++step) {
        Matrix r(d, d);
        std::vector<Matrix> ublocks;
        std::size_t offset = 0;
        for (std::size_t bi = 0; bi < starts.size(); ++bi) {
            const std::size_t n = block_size(bi);
            ublocks.push_back(unpack(bi, offset));
            offset += n * (n - 1) / 2;
            const Matrix rb = skew_to_orthogonal(ublocks.back());
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < n; ++j) r(starts[bi] + i, starts[bi] + j) = rb(i, j);
        }
        const bool last = step == cfg.steps;
        const DenseEval e = dense_transform_loss(r, w, x, target, cfg.spec, !last);
        if (!std::isfinite(e.loss)) throw std::runtime_error("full rotation: non-finite loss");
        record(curve, e.loss);
        if (last) break;
        std::vector<double> grad(count);
        offset = 0;
        for (std::size_t bi = 0; bi < starts.size(); ++bi) {
            const std::size_t n = block_size(bi);
            Matrix gb(n, n);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < n; ++j) gb(i, j) = e.grad_r(starts[bi] + i, starts[bi] + j);
            const Matrix gu = skew_to_orthogonal_backward(ublocks[bi], gb);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = i + 1; j < n; ++j) grad[offset++] = gu(i, j);
        }
        adamw_step(u.values, grad, u.state, u.lr);
    }
    return curve;
}

TransformBundle top_pairs_bundle(const Matrix& w, const CompareConfig& cfg) {
    TransformBundle b = identity_bundle(w.rows(), cfg.spec.group_size);
    std::vector<std::vector<Pair>> chosen(b.layout.num_groups);
    std::size_t most = 0;
    for (std::size_t g = 0; g < b.layout.num_groups; ++g) {
        const Matrix rows = w.row_block(b.layout.begin(g), b.layout.live_size(g));
        const auto ranked = rank_pairs_by_magnitude(rows);
        chosen[g] = top_fraction(ranked, cfg.top_fraction);
        most = std::max(most, chosen[g].size());
    }
    b.config.rotations = most;
    b.config.pairs_per_rotation = 1;
    for (std::size_t g = 0; g < b.layout.num_groups; ++g) {
        b.groups[g].assign(most, IndependentRotation{});
        for (std::size_t k = 0; k < chosen[g].size(); ++k) b.groups[g][k] = {{chosen[g][k]}, {0.0f}};
    }
    return b;
}

LossCurve run_bundle_kind(TransformKind kind, const Matrix& w, const Matrix& x, const Matrix& target,
                          const CompareConfig& cfg) {
    LossCurve curve{kind, {}, {}};
    Rng rng = Rng(cfg.seed).fork(0x5041u);
    TransformBundle bundle;
    switch (kind) {
        case TransformKind::ScalingOnly: bundle = identity_bundle(w.rows(), cfg.spec.group_size); break;
        case TransformKind::TopPairs: bundle = top_pairs_bundle(w, cfg); break;
        default:
            bundle = make_bundle(w.rows(), {cfg.spec.group_size, cfg.rotations, cfg.pairs_per_rotation}, rng);
            break;
    }
    const bool train_alpha = kind == TransformKind::ScalingOnly || kind == TransformKind::ScaledPairwise;
    const bool train_angles = kind != TransformKind::ScalingOnly;
    QuantLinear lin = QuantLinear::make(w, {}, std::move(bundle), cfg.spec);
    ParamGroup alpha(ParamKind::Alpha, lin.bundle.alpha, cfg.lr_other);
    ParamGroup angles(ParamKind::Angles, lin.bundle.flat_angles(), cfg.lr_other);

    for (std::size_t step = 0; step <= cfg.steps; ++step) {
        LinearTape tape;
        const Matrix y = linear_forward(lin, x, &tape);
        LossResult l = huber_loss(y, target);
        if (!std::isfinite(l.loss)) throw std::runtime_error(std::string(to_string(kind)) + ": non-finite loss");
        record(curve, l.loss);
        if (step == cfg.steps) break;
        const LinearGrads g = linear_backward(lin, tape, l.grad, {true, false, false, false});
        if (train_alpha) {
            adamw_step(alpha.values, g.transform.alpha, alpha.state, alpha.lr);
            // Keep the scaling strictly positive.
            for (float& a : alpha.values) a = std::max(a, 1e-4f);
            lin.bundle.alpha = alpha.values;
        }
        if (train_angles && !angles.values.empty()) {
            adamw_step(angles.values, g.transform.angles, angles.state, angles.lr);
            lin.bundle.set_flat_angles(angles.values);
        }
    }
    return curve;
}

}  // namespace

bool is_power_of_two(std::size_t n) noexcept { return n != 0 && (n & (n - 1)) == 0; }

std::size_t next_power_of_two(std::size_t n) noexcept {
    std::size_t p = 1;
    while (p < n) p <<= 1;
    return p;
}

void fwht(std::span<float> v) {
    const std::size_t n = v.size();
    if (!is_power_of_two(n)) throw std::invalid_argument("fwht length must be a power of two");
    for (std::size_t h = 1; h < n; h <<= 1)
        for (std::size_t i = 0; i < n; i += 2 * h)
            for (std::size_t j = i; j < i + h; ++j) {
                const float a = v[j], b = v[j + h];
                v[j] = a + b;
                v[j + h] = a - b;
            }
}

std::vector<float> fwht(std::vector<float> v) {
    fwht(std::span<float>(v));
    return v;
}

HadamardOp HadamardOp::random(std::size_t n, Rng& rng) {
    if (!is_power_of_two(n)) throw std::invalid_argument("Hadamard dimension must be a power of two");
    HadamardOp h;
    h.n = n;
    h.signs.resize(n);
    for (float& s : h.signs) s = (rng.next_u64() >> 63) ? -1.0f : 1.0f;
    return h;
}

void HadamardOp::apply(std::span<float> v) const {
    if (v.size() != n) throw std::invalid_argument("Hadamard length mismatch");
    for (std::size_t i = 0; i < n; ++i) v[i] *= signs[i];
    fwht(v);
    const float norm = 1.0f / std::sqrt(static_cast<float>(n));
    for (float& x : v) x *= norm;
}

Matrix HadamardOp::apply_to_weights(const Matrix& w) const {
    if (w.rows() != n) throw std::invalid_argument("Hadamard row count mismatch");
    Matrix out = w.transposed();
    for (std::size_t c = 0; c < out.rows(); ++c) apply(out.row(c));
    return out.transposed();
}

Matrix HadamardOp::apply_to_activations(const Matrix& x) const {
    if (x.cols() != n) throw std::invalid_argument("Hadamard column count mismatch");
    Matrix out = x;
    for (std::size_t t = 0; t < out.rows(); ++t) apply(out.row(t));
    return out;
}

Matrix skew_to_orthogonal(const Matrix& u) { return from_eigen(expm(skew_from_upper(u))); }

Matrix skew_to_orthogonal_backward(const Matrix& u, const Matrix& grad_r) {
    const MatD a = skew_from_upper(u);
    const auto n = a.rows();
    if (grad_r.rows() != u.rows() || grad_r.cols() != u.cols())
        throw std::invalid_argument("gradient shape does not match U");
    MatD g = to_eigen(grad_r);
    // The derivative is linear in g; normalizing keeps the squaring count tied to A.
    const double gnorm = g.cwiseAbs().colwise().sum().maxCoeff();
    if (gnorm == 0.0) return Matrix(u.rows(), u.cols());
    g /= gnorm;
    MatD m = MatD::Zero(2 * n, 2 * n);
    m.topLeftCorner(n, n) = a.transpose();
    m.bottomRightCorner(n, n) = a.transpose();
    m.topRightCorner(n, n) = g;
    const MatD da = expm(m).topRightCorner(n, n) * gnorm;
    Matrix out(u.rows(), u.cols());
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j) out(i, j) = static_cast<float>(da(i, j) - da(j, i));
    return out;
}

std::vector<Pair> rank_pairs_by_magnitude(const Matrix& w_group) {
    const std::size_t g = w_group.rows();
    std::vector<double> norms(g);
    for (std::size_t r = 0; r < g; ++r) {
        double s = 0.0;
        for (float v : w_group.row(r)) s += static_cast<double>(v) * v;
        norms[r] = std::sqrt(s);
    }
    std::vector<Pair> pairs;
    pairs.reserve(g * (g - 1) / 2);
    for (std::size_t i = 0; i < g; ++i)
        for (std::size_t j = i + 1; j < g; ++j)
            pairs.push_back({static_cast<std::int32_t>(i), static_cast<std::int32_t>(j)});
    std::stable_sort(pairs.begin(), pairs.end(), [&](const Pair& a, const Pair& b) {
        return std::fabs(norms[a.i] - norms[a.j]) > std::fabs(norms[b.i] - norms[b.j]);
    });
    return pairs;
}

std::vector<Pair> top_fraction(std::span<const Pair> ranked, double fraction) {
    const auto n = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(ranked.size())));
    return {ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(std::min(n, ranked.size()))};
}

std::string_view to_string(TransformKind kind) noexcept {
    switch (kind) {
        case TransformKind::None: return "none";
        case TransformKind::ScalingOnly: return "scaling";
        case TransformKind::FullRotation: return "full_rotation";
        case TransformKind::RandomHadamard: return "hadamard";
        case TransformKind::IndependentRotations: return "independent_rotations";
        case TransformKind::ScaledPairwise: return "scaled_pairwise";
        case TransformKind::TopPairs: return "top_pairs";
    }
    return "unknown";
}

std::vector<TransformKind> all_transform_kinds() {
    return {TransformKind::None,         TransformKind::ScalingOnly,          TransformKind::FullRotation,
            TransformKind::RandomHadamard, TransformKind::IndependentRotations, TransformKind::ScaledPairwise,
            TransformKind::TopPairs};
}

std::optional<TransformKind> parse_transform_kind(std::string_view name) noexcept {
    for (TransformKind k : all_transform_kinds())
        if (to_string(k) == name) return k;
    return std::nullopt;
}

std::vector<LossCurve> compare_transforms(const Matrix& w, const Matrix& x, std::span<const TransformKind> kinds,
                                          const CompareConfig& cfg) {
    cfg.spec.validate();
    if (x.cols() != w.rows()) throw std::invalid_argument("calibration rows must have D_in columns");
    const Matrix target = matmul(x, w);
    std::vector<LossCurve> curves;
    for (TransformKind kind : kinds) {
        switch (kind) {
            case TransformKind::None: curves.push_back(run_none(w, x, target, cfg)); break;
            case TransformKind::RandomHadamard: curves.push_back(run_hadamard(w, x, target, cfg)); break;
            case TransformKind::FullRotation: curves.push_back(run_full_rotation(w, x, target, cfg)); break;
            default: curves.push_back(run_bundle_kind(kind, w, x, target, cfg)); break;
        }
    }
    return curves;
}

void write_curves_csv(std::ostream& out, std::span<const LossCurve> curves, std::uint64_t seed) {
    out << "kind,step,loss,seed\n";
    out.precision(std::numeric_limits<double>::max_digits10);
    for (const LossCurve& c : curves)
        for (std::size_t t = 0; t < c.best.size(); ++t)
            out << to_string(c.kind) << ',' << t << ',' << c.best[t] << ',' << seed << '\n';
}

CompareRun compare_run_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw std::invalid_argument("compare config must be a JSON object");
    CompareRun r;
    CompareConfig& c = r.config;
    try {
        for (const auto& item : j.items()) {
            const std::string& k = item.key();
            const auto& v = item.value();
            if (k == "d_in") r.d_in = v.get<std::size_t>();
            else if (k == "d_out") r.d_out = v.get<std::size_t>();
            else if (k == "rows") r.rows = v.get<std::size_t>();
            else if (k == "outlier_channels") r.outlier_channels = v.get<std::size_t>();
            else if (k == "outlier_gain") r.outlier_gain = v.get<float>();
            else if (k == "bits") c.spec.bits = v.get<int>();
            else if (k == "group_size") c.spec.group_size = v.get<std::size_t>();
            else if (k == "steps") c.steps = v.get<std::size_t>();
            else if (k == "rotations") c.rotations = v.get<std::size_t>();
            else if (k == "pairs_per_rotation") c.pairs_per_rotation = v.get<std::size_t>();
            else if (k == "full_rotation_block") c.full_rotation_block = v.get<std::size_t>();
            else if (k == "hadamard_seeds") c.hadamard_seeds = v.get<std::size_t>();
            else if (k == "top_fraction") c.top_fraction = v.get<double>();
            else if (k == "lr_full_rotation") c.lr_full_rotation = v.get<double>();
            else if (k == "lr_other") c.lr_other = v.get<double>();
            else if (k == "seed") c.seed = v.get<std::uint64_t>();
            else if (k == "kinds") {
                r.kinds.clear();
                for (const auto& name : v) {
                    const auto kind = parse_transform_kind(name.get<std::string>());
                    if (!kind) throw std::invalid_argument("unknown transform kind '" + name.get<std::string>() + "'");
                    r.kinds.push_back(*kind);
                }
            } else {
                throw std::invalid_argument("unknown compare config key '" + k + "'");
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("invalid compare config: ") + e.what());
    }
    c.spec.validate();
    if (r.d_in < 2 || r.d_out < 1 || r.rows < 1) throw std::invalid_argument("compare dimensions must be positive");
    if (r.outlier_channels >= r.d_in) throw std::invalid_argument("outlier channels must be fewer than d_in");
    if (!(r.outlier_gain > 0.0f)) throw std::invalid_argument("outlier gain must be positive");
    if (c.full_rotation_block < 2) throw std::invalid_argument("full rotation block must be >= 2");
    if (c.hadamard_seeds < 1) throw std::invalid_argument("hadamard_seeds must be >= 1");
    if (!(c.top_fraction > 0.0 && c.top_fraction <= 1.0)) throw std::invalid_argument("top_fraction must be in (0, 1]");
    if (r.kinds.empty()) throw std::invalid_argument("no transform kinds selected");
    return r;
}

std::vector<LossCurve> run_comparison(const CompareRun& run) {
    Rng rng(run.config.seed);
    const Matrix w = gen_outlier_weight(run.d_in, run.d_out, run.outlier_channels, run.outlier_gain, rng);
    Matrix x(run.rows, run.d_in);
    for (float& v : x.values()) v = static_cast<float>(rng.normal());
    return compare_transforms(w, x, run.kinds, run.config);
}

}  // namespace paro
