#include "paro/rng.hpp"
#include "paro/tensor.hpp"

#include "doctest.h"

#include <cmath>

using namespace paro;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng) {
    Matrix m(r, c);
    for (float& v : m.values()) v = static_cast<float>(rng.normal());
    return m;
}

}  // namespace

TEST_CASE("GroupLayout.SingleFullGroup") {
    Matrix m(128, 4);
    GroupLayout layout;
    auto views = partition_groups(m, 128, &layout);
    REQUIRE_EQ(views.size(), 1u);
    CHECK_EQ(layout.num_groups, 1u);
    CHECK_FALSE(layout.padded);
    CHECK_EQ(views[0].live_rows, 128u);
}

TEST_CASE("GroupLayout.ExactDivision") {
    Matrix m(4, 3);
    GroupLayout layout;
    auto views = partition_groups(m, 2, &layout);
    REQUIRE_EQ(views.size(), 2u);
    CHECK_FALSE(layout.padded);
    CHECK_EQ(views[0].first_row, 0u);
    CHECK_EQ(views[1].first_row, 2u);
    CHECK_EQ(views[1].live_rows, 2u);
}

TEST_CASE("GroupLayout.ShortFinalGroupIsFlagged") {
    Matrix m(5, 2);
    GroupLayout layout;
    auto views = partition_groups(m, 2, &layout);
    REQUIRE_EQ(views.size(), 3u);
    CHECK(layout.padded);
    CHECK_EQ(views[2].live_rows, 1u);
    CHECK_EQ(layout.live_size(2), 1u);
}

TEST_CASE("GroupLayout.RejectsTinyGroups") {
    Matrix m(4, 4);
    CHECK_THROWS_AS(partition_groups(m, 1, nullptr), std::invalid_argument);
    CHECK_THROWS_AS(make_group_layout(4, 0), std::invalid_argument);
}

TEST_CASE("GroupLayout.ViewsReassembleTheMatrix") {
    Rng rng(3);
    for (std::size_t rows : {1u, 2u, 7u, 64u, 130u}) {
        for (std::size_t g : {2u, 3u, 32u, 128u}) {
            const Matrix m = random_matrix(rows, 5, rng);
            std::vector<float> joined;
            for (const auto& v : partition_groups(m, g)) joined.insert(joined.end(), v.data.begin(), v.data.end());
            { INFO(rows << " rows, g=" << g); CHECK_EQ(joined, m.values()); }
        }
    }
}

TEST_CASE("Matrix.ProductsAgreeWithFp64Reference") {
    Rng rng(11);
    const Matrix a = random_matrix(9, 17, rng);
    const Matrix b = random_matrix(17, 5, rng);
    const Matrix ref = matmul_f64(a, b);
    CHECK_LT(max_abs_diff(matmul(a, b), ref), 1e-4f);
    CHECK_LT(max_abs_diff(matmul_tn(a.transposed(), b), ref), 1e-4f);
    CHECK_LT(max_abs_diff(matmul_nt(a, b.transposed()), ref), 1e-4f);
}

TEST_CASE("Matrix.ShapeChecks") {
    CHECK_THROWS_AS(Matrix(2, 2, std::vector<float>(3)), std::invalid_argument);
    CHECK_THROWS_AS(matmul(Matrix(2, 3), Matrix(2, 3)), std::invalid_argument);
}
