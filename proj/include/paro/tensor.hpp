#pragma once

// Dense FP32 matrices and channel-group partitioning.
//
// Weight matrices are stored as (D_in x D_out), so rows index input channels.
// Activation matrices are (T x D_in), so columns index input channels.

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <vector>

namespace paro {

class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, float fill = 0.0f)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<float> data);
    Matrix(std::initializer_list<std::initializer_list<float>> init);

    static Matrix identity(std::size_t n);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    float& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    float operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    std::span<float> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    std::span<const float> row(std::size_t r) const noexcept {
        return {data_.data() + r * cols_, cols_};
    }

    float* data() noexcept { return data_.data(); }
    const float* data() const noexcept { return data_.data(); }
    std::vector<float>& values() noexcept { return data_; }
    const std::vector<float>& values() const noexcept { return data_; }

    /// Copy of rows [begin, begin + count).
    Matrix row_block(std::size_t begin, std::size_t count) const;
    /// Copy of columns [begin, begin + count).
    Matrix col_block(std::size_t begin, std::size_t count) const;
    Matrix transposed() const;

    bool all_finite() const noexcept;

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<float> data_;
};

/// Partition of the channel dimension into consecutive groups of `group_size`.
/// A short final group is processed at its live length and flagged `padded`.
struct GroupLayout {
    std::size_t channels = 0;
    std::size_t group_size = 0;
    std::size_t num_groups = 0;
    bool padded = false;

    std::size_t begin(std::size_t group) const noexcept { return group * group_size; }
    std::size_t live_size(std::size_t group) const noexcept {
        const std::size_t b = begin(group);
        return channels - b < group_size ? channels - b : group_size;
    }

    friend bool operator==(const GroupLayout&, const GroupLayout&) = default;
};

/// Throws std::invalid_argument when group_size < 2.
GroupLayout make_group_layout(std::size_t channels, std::size_t group_size);

/// Rows of `m` (channel dimension of a weight) split by group.
struct GroupView {
    std::size_t group = 0;
    std::size_t first_row = 0;
    std::size_t live_rows = 0;
    std::span<const float> data;  // live_rows * m.cols() values, row-major
};

std::vector<GroupView> partition_groups(const Matrix& m, std::size_t group_size,
                                        GroupLayout* layout = nullptr);

// Dense products, FP32 storage. Backed by Eigen's GEMM.
Matrix matmul(const Matrix& a, const Matrix& b);     // a * b
Matrix matmul_tn(const Matrix& a, const Matrix& b);  // a^T * b
Matrix matmul_nt(const Matrix& a, const Matrix& b);  // a * b^T

/// a * b with FP64 accumulation.
Matrix matmul_f64(const Matrix& a, const Matrix& b);

Matrix vstack(std::span<const Matrix> parts);

float max_abs(const Matrix& m) noexcept;
float max_abs_diff(const Matrix& a, const Matrix& b);
double mean_squared_error(const Matrix& a, const Matrix& b);

}  // namespace paro
