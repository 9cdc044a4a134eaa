#include "paro/transform.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>
#include <string>

namespace paro {

namespace {

void fail(const std::string& what) { throw std::invalid_argument(what); }

}  // namespace

bool IndependentRotation::is_independent(std::size_t live_channels) const noexcept {
    std::vector<bool> used(live_channels, false);
    for (const Pair& p : pairs) {
        if (p.i < 0 || p.i >= p.j || static_cast<std::size_t>(p.j) >= live_channels) return false;
        if (used[p.i] || used[p.j]) return false;
        used[p.i] = used[p.j] = true;
    }
    return true;
}

std::size_t TransformBundle::angle_count() const noexcept {
    std::size_t n = 0;
    for (const auto& group : groups)
        for (const auto& rot : group) n += rot.angles.size();
    return n;
}

std::vector<float> TransformBundle::flat_angles() const {
    std::vector<float> out;
    out.reserve(angle_count());
    for (const auto& group : groups)
        for (const auto& rot : group) out.insert(out.end(), rot.angles.begin(), rot.angles.end());
    return out;
}

void TransformBundle::set_flat_angles(std::span<const float> angles) {
    if (angles.size() != angle_count()) fail("angle vector length does not match the bundle");
    std::size_t k = 0;
    for (auto& group : groups)
        for (auto& rot : group)
            for (float& a : rot.angles) a = angles[k++];
}

void TransformBundle::validate() const {
    if (layout != make_group_layout(alpha.size(), config.group_size))
        fail("bundle layout does not match its channel count");
    for (float a : alpha)
        if (!(a > 0.0f) || !std::isfinite(a)) fail("alpha must be positive and finite");
    if (groups.size() != layout.num_groups) fail("bundle group count mismatch");
    for (std::size_t g = 0; g < groups.size(); ++g) {
        if (groups[g].size() != config.rotations) fail("group " + std::to_string(g) + " rotation count mismatch");
        std::set<Pair> seen;
        for (const auto& rot : groups[g]) {
            if (rot.angles.size() != rot.pairs.size()) fail("angle count differs from pair count");
            if (rot.pairs.size() > config.pairs_per_rotation) fail("rotation holds more than N pairs");
            if (!rot.is_independent(layout.live_size(g)))
                fail("group " + std::to_string(g) + " has a rotation with overlapping or invalid pairs");
            for (const Pair& p : rot.pairs)
                if (!seen.insert(p).second) fail("pair repeated across rotations of group " + std::to_string(g));
        }
    }
}

std::vector<std::vector<Pair>> select_pairs(std::size_t g, std::size_t K, std::size_t N, Rng& rng) {
    if (g < 2 || K < 1 || N < 1 || N > g / 2)
        fail("select_pairs needs g >= 2, K >= 1, 1 <= N <= g/2");
    std::vector<Pair> candidates;
    candidates.reserve(g * (g - 1) / 2);
    for (std::size_t i = 0; i < g; ++i)
        for (std::size_t j = i + 1; j < g; ++j)
            candidates.push_back({static_cast<std::int32_t>(i), static_cast<std::int32_t>(j)});
    rng_shuffle(std::span<Pair>(candidates), rng);

    // available[i * g + j]: pair not taken by any earlier rotation.
    std::vector<std::uint8_t> available(g * g, 1);
    std::vector<std::vector<Pair>> rotations(K);
    std::vector<std::uint8_t> channel_free(g);
    for (auto& chosen : rotations) {
        std::fill(channel_free.begin(), channel_free.end(), 1);
        for (const Pair& p : candidates) {
            if (chosen.size() == N) break;
            if (!available[p.i * g + p.j] || !channel_free[p.i] || !channel_free[p.j]) continue;
            chosen.push_back(p);
            channel_free[p.i] = channel_free[p.j] = 0;
            available[p.i * g + p.j] = 0;
        }
    }
    return rotations;
}

TransformBundle make_bundle(std::size_t channels, const TransformConfig& config, Rng& rng) {
    TransformBundle b = identity_bundle(channels, config.group_size);
    b.config = config;
    for (std::size_t g = 0; g < b.layout.num_groups; ++g) {
        const std::size_t live = b.layout.live_size(g);
        auto& rots = b.groups[g];
        rots.assign(config.rotations, {});
        if (live < 2 || config.rotations == 0) continue;
        const std::size_t n = std::min(config.pairs_per_rotation, live / 2);
        auto lists = select_pairs(live, config.rotations, n, rng);
        for (std::size_t t = 0; t < config.rotations; ++t) {
            rots[t].pairs = std::move(lists[t]);
            rots[t].angles.assign(rots[t].pairs.size(), 0.0f);
        }
    }
    return b;
}

TransformBundle identity_bundle(std::size_t channels, std::size_t group_size) {
    TransformBundle b;
    b.config = {group_size, 0, group_size / 2};
    b.layout = make_group_layout(channels, group_size);
    b.alpha.assign(channels, 1.0f);
    b.groups.assign(b.layout.num_groups, {});
    return b;
}

void apply_givens_rows(Matrix& m, std::size_t first_row, Pair pair, float theta) noexcept {
    const float c = std::cos(theta);
    const float s = std::sin(theta);
    float* ri = m.row(first_row + pair.i).data();
    float* rj = m.row(first_row + pair.j).data();
    for (std::size_t k = 0; k < m.cols(); ++k) {
        const float a = ri[k];
        const float b = rj[k];
        ri[k] = c * a - s * b;
        rj[k] = s * a + c * b;
    }
}

void apply_givens_cols(Matrix& m, std::size_t first_col, Pair pair, float theta) noexcept {
    const float c = std::cos(theta);
    const float s = std::sin(theta);
    const std::size_t ci = first_col + pair.i;
    const std::size_t cj = first_col + pair.j;
    for (std::size_t t = 0; t < m.rows(); ++t) {
        const float a = m(t, ci);
        const float b = m(t, cj);
        m(t, ci) = c * a - s * b;
        m(t, cj) = s * a + c * b;
    }
}

Matrix apply_bundle_to_weights(const Matrix& w, const TransformBundle& bundle) {
    if (w.rows() != bundle.channels())
        throw std::invalid_argument("weight rows do not match the bundle channel count");
    Matrix out = w;
    for (std::size_t r = 0; r < out.rows(); ++r)
        for (float& v : out.row(r)) v *= bundle.alpha[r];
    for (std::size_t g = 0; g < bundle.groups.size(); ++g) {
        const std::size_t first = bundle.layout.begin(g);
        for (const auto& rot : bundle.groups[g])
            for (std::size_t k = 0; k < rot.pairs.size(); ++k)
                apply_givens_rows(out, first, rot.pairs[k], rot.angles[k]);
    }
    return out;
}

Matrix apply_inverse_to_activations(const Matrix& x, const TransformBundle& bundle) {
    if (x.cols() != bundle.channels())
        throw std::invalid_argument("activation columns do not match the bundle channel count");
    Matrix out = x;
    for (std::size_t t = 0; t < out.rows(); ++t) {
        auto row = out.row(t);
        for (std::size_t c = 0; c < row.size(); ++c) row[c] /= bundle.alpha[c];
    }
    for (std::size_t g = 0; g < bundle.groups.size(); ++g) {
        const std::size_t first = bundle.layout.begin(g);
        for (const auto& rot : bundle.groups[g])
            for (std::size_t k = 0; k < rot.pairs.size(); ++k)
                apply_givens_cols(out, first, rot.pairs[k], rot.angles[k]);
    }
    return out;
}

Matrix materialize(const TransformBundle& bundle, std::size_t group) {
    if (group >= bundle.layout.num_groups) throw std::out_of_range("group index out of range");
    const std::size_t first = bundle.layout.begin(group);
    const std::size_t n = bundle.layout.live_size(group);
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = bundle.alpha[first + i];
    for (const auto& rot : bundle.groups[group])
        for (std::size_t k = 0; k < rot.pairs.size(); ++k) apply_givens_rows(m, 0, rot.pairs[k], rot.angles[k]);
    return m;
}

void write_bundle(TensorFile& file, const TransformBundle& bundle, std::string_view prefix) {
    bundle.validate();
    const std::string p(prefix);
    const std::size_t G = bundle.layout.num_groups;
    const std::size_t K = bundle.config.rotations;
    const std::size_t N = bundle.config.pairs_per_rotation;
    std::vector<std::int32_t> pairs(G * K * N * 2, -1);
    std::vector<float> angles(G * K * N, 0.0f);
    for (std::size_t g = 0; g < G; ++g)
        for (std::size_t t = 0; t < K; ++t) {
            const auto& rot = bundle.groups[g][t];
            for (std::size_t k = 0; k < rot.pairs.size(); ++k) {
                const std::size_t slot = (g * K + t) * N + k;
                pairs[2 * slot] = rot.pairs[k].i;
                pairs[2 * slot + 1] = rot.pairs[k].j;
                angles[slot] = rot.angles[k];
            }
        }
    const auto i64 = [](std::size_t v) { return static_cast<std::int64_t>(v); };
    file.add({p + "alpha", "alpha", {i64(bundle.alpha.size())}, bundle.alpha});
    file.add({p + "pairs", "pairs", {i64(G), i64(K), i64(N), 2}, std::move(pairs)});
    file.add({p + "angles", "angles", {i64(G), i64(K), i64(N)}, std::move(angles)});
    file.fields["g"] = bundle.config.group_size;
    file.fields["K"] = K;
    file.fields["N"] = N;
    file.fields["D_in"] = bundle.alpha.size();
    file.fields["num_groups"] = G;
}

TransformBundle read_bundle(const TensorFile& file, std::string_view prefix) {
    const std::string p(prefix);
    TransformBundle b;
    std::size_t d_in = 0;
    std::size_t num_groups = 0;
    try {
        b.config.group_size = file.fields.at("g").get<std::size_t>();
        b.config.rotations = file.fields.at("K").get<std::size_t>();
        b.config.pairs_per_rotation = file.fields.at("N").get<std::size_t>();
        d_in = file.fields.at("D_in").get<std::size_t>();
        num_groups = file.fields.at("num_groups").get<std::size_t>();
        b.layout = make_group_layout(d_in, b.config.group_size);
    } catch (const std::exception& e) {
        throw FormatError(std::string("invalid bundle header: ") + e.what());
    }
    if (num_groups != b.layout.num_groups) throw FormatError("num_groups inconsistent with D_in and g");
    const std::size_t G = num_groups;
    const std::size_t K = b.config.rotations;
    const std::size_t N = b.config.pairs_per_rotation;

    const Tensor& alpha = file.at(p + "alpha");
    const Tensor& pairs = file.at(p + "pairs");
    const Tensor& angles = file.at(p + "angles");
    const auto* alpha_v = std::get_if<std::vector<float>>(&alpha.data);
    const auto* pairs_v = std::get_if<std::vector<std::int32_t>>(&pairs.data);
    const auto* angles_v = std::get_if<std::vector<float>>(&angles.data);
    if (!alpha_v || !pairs_v || !angles_v) throw FormatError("bundle tensors have wrong dtypes");
    const auto i64 = [](std::size_t v) { return static_cast<std::int64_t>(v); };
    if (alpha.shape != std::vector<std::int64_t>{i64(d_in)} ||
        pairs.shape != std::vector<std::int64_t>{i64(G), i64(K), i64(N), 2} ||
        angles.shape != std::vector<std::int64_t>{i64(G), i64(K), i64(N)})
        throw FormatError("bundle tensor shapes do not match the header");

    b.alpha = *alpha_v;
    b.groups.assign(G, std::vector<IndependentRotation>(K));
    for (std::size_t g = 0; g < G; ++g)
        for (std::size_t t = 0; t < K; ++t) {
            auto& rot = b.groups[g][t];
            bool ended = false;
            for (std::size_t k = 0; k < N; ++k) {
                const std::size_t slot = (g * K + t) * N + k;
                const std::int32_t i = (*pairs_v)[2 * slot];
                const std::int32_t j = (*pairs_v)[2 * slot + 1];
                if (i == -1 && j == -1) {
                    ended = true;
                    continue;
                }
                if (ended) throw FormatError("pair after padding in a rotation");
                rot.pairs.push_back({i, j});
                rot.angles.push_back((*angles_v)[slot]);
            }
        }
    try {
        b.validate();
    } catch (const std::invalid_argument& e) {
        throw FormatError(std::string("bundle invariant violated: ") + e.what());
    }
    return b;
}

void bundle_save(const std::filesystem::path& path, const TransformBundle& bundle) {
    TensorFile file;
    write_bundle(file, bundle);
    save_tensors(path, file);
}

TransformBundle bundle_load(const std::filesystem::path& path) { return read_bundle(load_tensors(path)); }

}  // namespace paro
