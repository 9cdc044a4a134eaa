#include "paro/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <string>

namespace paro {

namespace {

using RowMajor = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using Map = Eigen::Map<RowMajor>;

ConstMap view(const Matrix& m) {
    return ConstMap(m.data(), static_cast<Eigen::Index>(m.rows()),
                    static_cast<Eigen::Index>(m.cols()));
}

Map view(Matrix& m) {
    return Map(m.data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols()));
}

void require(bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(what);
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<float> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        throw std::invalid_argument("matrix data length " + std::to_string(data_.size()) +
                                    " does not match shape " + std::to_string(rows_) + "x" +
                                    std::to_string(cols_));
    }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<float>> init) {
    rows_ = init.size();
    cols_ = rows_ ? init.begin()->size() : 0;
    data_.reserve(rows_ * cols_);
    for (const auto& r : init) {
        if (r.size() != cols_) throw std::invalid_argument("ragged matrix initializer");
        data_.insert(data_.end(), r.begin(), r.end());
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0f;
    return m;
}

Matrix Matrix::row_block(std::size_t begin, std::size_t count) const {
    require(begin + count <= rows_, "row block out of range");
    Matrix out(count, cols_);
    std::copy_n(data_.data() + begin * cols_, count * cols_, out.data());
    return out;
}

Matrix Matrix::col_block(std::size_t begin, std::size_t count) const {
    require(begin + count <= cols_, "column block out of range");
    Matrix out(rows_, count);
    for (std::size_t r = 0; r < rows_; ++r) {
        std::copy_n(data_.data() + r * cols_ + begin, count, out.data() + r * count);
    }
    return out;
}

Matrix Matrix::transposed() const {
    Matrix out(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r)
        for (std::size_t c = 0; c < cols_; ++c) out(c, r) = (*this)(r, c);
    return out;
}

bool Matrix::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

GroupLayout make_group_layout(std::size_t channels, std::size_t group_size) {
    if (group_size < 2) throw std::invalid_argument("group size must be >= 2");
    GroupLayout layout;
    layout.channels = channels;
    layout.group_size = group_size;
    layout.num_groups = (channels + group_size - 1) / group_size;
    layout.padded = channels % group_size != 0;
    return layout;
}

std::vector<GroupView> partition_groups(const Matrix& m, std::size_t group_size,
                                        GroupLayout* layout_out) {
    const GroupLayout layout = make_group_layout(m.rows(), group_size);
    std::vector<GroupView> views;
    views.reserve(layout.num_groups);
    for (std::size_t g = 0; g < layout.num_groups; ++g) {
        const std::size_t first = layout.begin(g);
        const std::size_t live = layout.live_size(g);
        views.push_back({g, first, live, {m.data() + first * m.cols(), live * m.cols()}});
    }
    if (layout_out) *layout_out = layout;
    return views;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    require(a.cols() == b.rows(), "matmul: inner dimensions differ");
    Matrix out(a.rows(), b.cols());
    view(out).noalias() = view(a) * view(b);
    return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    require(a.rows() == b.rows(), "matmul_tn: row counts differ");
    Matrix out(a.cols(), b.cols());
    view(out).noalias() = view(a).transpose() * view(b);
    return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    require(a.cols() == b.cols(), "matmul_nt: column counts differ");
    Matrix out(a.rows(), b.rows());
    view(out).noalias() = view(a) * view(b).transpose();
    return out;
}

Matrix matmul_f64(const Matrix& a, const Matrix& b) {
    require(a.cols() == b.rows(), "matmul_f64: inner dimensions differ");
    const std::size_t n = b.cols();
    Matrix out(a.rows(), n);
    std::vector<double> acc(n);
    for (std::size_t r = 0; r < a.rows(); ++r) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double x = a(r, k);
            const float* brow = b.data() + k * n;
            for (std::size_t c = 0; c < n; ++c) acc[c] += x * static_cast<double>(brow[c]);
        }
        for (std::size_t c = 0; c < n; ++c) out(r, c) = static_cast<float>(acc[c]);
    }
    return out;
}

Matrix vstack(std::span<const Matrix> parts) {
    if (parts.empty()) return {};
    std::size_t rows = 0;
    const std::size_t cols = parts.front().cols();
    for (const auto& p : parts) {
        require(p.cols() == cols, "vstack: column counts differ");
        rows += p.rows();
    }
    Matrix out(rows, cols);
    float* dst = out.data();
    for (const auto& p : parts) dst = std::copy(p.values().begin(), p.values().end(), dst);
    return out;
}

float max_abs(const Matrix& m) noexcept {
    float best = 0.0f;
    for (float v : m.values()) best = std::max(best, std::fabs(v));
    return best;
}

float max_abs_diff(const Matrix& a, const Matrix& b) {
    require(a.rows() == b.rows() && a.cols() == b.cols(), "max_abs_diff: shape mismatch");
    float best = 0.0f;
    for (std::size_t i = 0; i < a.size(); ++i)
        best = std::max(best, std::fabs(a.values()[i] - b.values()[i]));
    return best;
}

double mean_squared_error(const Matrix& a, const Matrix& b) {
    require(a.rows() == b.rows() && a.cols() == b.cols(), "mean_squared_error: shape mismatch");
    if (a.empty()) return 0.0;
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a.values()[i]) - b.values()[i];
        acc += d * d;
    }
    return acc / static_cast<double>(a.size());
}

}  // namespace paro
