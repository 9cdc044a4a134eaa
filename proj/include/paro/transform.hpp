#pragma once

// Scaled pairwise rotation.
//
// A weight W (D_in x D_out) is transformed as
//     T(W) = R_K ... R_2 R_1 diag(alpha) W
// where each R_t is an independent rotation: a set of Givens rotations on
// disjoint channel pairs of one channel group. Rotation t = 1 acts first.
// Activations take the exact inverse so that (X T^-1)(T W) = X W:
//     X T^-1 = X diag(alpha)^-1 R_1^T R_2^T ... R_K^T.

#include "paro/rng.hpp"
#include "paro/tensor.hpp"
#include "paro/tensor_file.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

namespace paro {

/// Group-local channel pair, i < j.
struct Pair {
    std::int32_t i = 0;
    std::int32_t j = 0;
    friend auto operator<=>(const Pair&, const Pair&) = default;
};

struct IndependentRotation {
    std::vector<Pair> pairs;
    std::vector<float> angles;  // radians, one per pair

    /// No channel appears in two pairs, all indices < live_channels, i < j.
    bool is_independent(std::size_t live_channels) const noexcept;
};

struct TransformConfig {
    std::size_t group_size = 128;
    std::size_t rotations = 8;       // K
    std::size_t pairs_per_rotation = 64;  // N
};

struct TransformBundle {
    TransformConfig config;
    GroupLayout layout;
    std::vector<float> alpha;                              // one per input channel
    std::vector<std::vector<IndependentRotation>> groups;  // [group][rotation]

    std::size_t channels() const noexcept { return alpha.size(); }
    std::size_t angle_count() const noexcept;
    std::vector<float> flat_angles() const;  // group-major, then rotation, then pair
    void set_flat_angles(std::span<const float> angles);

    /// Throws std::invalid_argument describing the first violated invariant.
    void validate() const;
};

/// Greedy selection of independent pairs for K rotations of a g-channel group.
/// All g(g-1)/2 pairs are shuffled once; each rotation takes the next pairs
/// whose channels are still free in this rotation and which no earlier
/// rotation used, stopping at N. Later rotations may end up short.
std::vector<std::vector<Pair>> select_pairs(std::size_t g, std::size_t K, std::size_t N, Rng& rng);

/// alpha = 1, theta = 0 with pairs drawn per group by select_pairs.
TransformBundle make_bundle(std::size_t channels, const TransformConfig& config, Rng& rng);
/// alpha = 1 and no rotations.
TransformBundle identity_bundle(std::size_t channels, std::size_t group_size);

/// Row update of rows (first_row + i, first_row + j):
///   r_i' = cos * r_i - sin * r_j,  r_j' = sin * r_i + cos * r_j
void apply_givens_rows(Matrix& m, std::size_t first_row, Pair pair, float theta) noexcept;
/// Same update on columns of an activation matrix: x_i' = cos x_i - sin x_j, ...
void apply_givens_cols(Matrix& m, std::size_t first_col, Pair pair, float theta) noexcept;

Matrix apply_bundle_to_weights(const Matrix& w, const TransformBundle& bundle);
Matrix apply_inverse_to_activations(const Matrix& x, const TransformBundle& bundle);

/// Dense (R_K ... R_1) diag(alpha_group) for one group.
Matrix materialize(const TransformBundle& bundle, std::size_t group);

// Serialization: tensors "<prefix>alpha" [f32; D_in], "<prefix>pairs"
// [i32; num_groups x K x N x 2, -1 padding], "<prefix>angles" [f32; num_groups x K x N]
// plus header fields g, K, N, D_in, num_groups.
void write_bundle(TensorFile& file, const TransformBundle& bundle, std::string_view prefix = "");
/// Throws FormatError on malformed data or invariant violations.
TransformBundle read_bundle(const TensorFile& file, std::string_view prefix = "");

void bundle_save(const std::filesystem::path& path, const TransformBundle& bundle);
TransformBundle bundle_load(const std::filesystem::path& path);

}  // namespace paro
