#ifndef ADVCL_TENSOR_HPP
#define ADVCL_TENSOR_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"

namespace advcl {

using Real = double;
using Shape = std::vector<std::size_t>;

[[nodiscard]] inline std::size_t shape_numel(const Shape& shape)
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

[[nodiscard]] inline std::string shape_str(const Shape& shape)
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "," : "") << shape[i];
    }
    os << ']';
    return os.str();
}

// Dense row-major array of Real. Plain value semantics: copies are deep.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, Real fill = Real{0})
        : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

    Tensor(Shape shape, std::vector<Real> data) : shape_(std::move(shape)), data_(std::move(data))
    {
        if (data_.size() != shape_numel(shape_)) {
            throw ValidationError("tensor data size " + std::to_string(data_.size()) +
                                  " does not match shape " + shape_str(shape_));
        }
    }

    [[nodiscard]] static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_); }
    [[nodiscard]] static Tensor scalar(Real v) { return Tensor(Shape{}, std::vector<Real>{v}); }

    [[nodiscard]] const Shape& shape() const noexcept { return shape_; }
    [[nodiscard]] std::size_t rank() const noexcept { return shape_.size(); }
    [[nodiscard]] std::size_t dim(std::size_t i) const { return shape_.at(i); }
    [[nodiscard]] std::size_t numel() const noexcept { return data_.size(); }
    [[nodiscard]] bool empty() const noexcept { return data_.empty(); }

    [[nodiscard]] Real* data() noexcept { return data_.data(); }
    [[nodiscard]] const Real* data() const noexcept { return data_.data(); }
    [[nodiscard]] std::span<Real> values() noexcept { return data_; }
    [[nodiscard]] std::span<const Real> values() const noexcept { return data_; }
    [[nodiscard]] const std::vector<Real>& storage() const noexcept { return data_; }

    Real& operator[](std::size_t i) noexcept { return data_[i]; }
    Real operator[](std::size_t i) const noexcept { return data_[i]; }

    Real& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    [[nodiscard]] Real at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

    Real& at(std::size_t b, std::size_t c, std::size_t h, std::size_t w)
    {
        return data_[((b * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }
    [[nodiscard]] Real at(std::size_t b, std::size_t c, std::size_t h, std::size_t w) const
    {
        return data_[((b * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }

    [[nodiscard]] Real item() const
    {
        if (data_.size() != 1) {
            throw ValidationError("item() on tensor of shape " + shape_str(shape_));
        }
        return data_[0];
    }

    [[nodiscard]] Tensor reshaped(Shape shape) const
    {
        if (shape_numel(shape) != numel()) {
            throw ValidationError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
        }
        return Tensor(std::move(shape), data_);
    }

    [[nodiscard]] bool same_shape(const Tensor& o) const noexcept { return shape_ == o.shape_; }

    [[nodiscard]] bool all_finite() const noexcept
    {
        return std::all_of(data_.begin(), data_.end(), [](Real v) { return std::isfinite(v); });
    }

    [[nodiscard]] Real max_abs() const noexcept
    {
        Real m = 0;
        for (Real v : data_) {
            m = std::max(m, std::abs(v));
        }
        return m;
    }

    [[nodiscard]] Real sum() const noexcept { return std::accumulate(data_.begin(), data_.end(), Real{0}); }

    [[nodiscard]] Real squared_norm() const noexcept
    {
        Real s = 0;
        for (Real v : data_) {
            s += v * v;
        }
        return s;
    }

    void fill(Real v) noexcept { std::fill(data_.begin(), data_.end(), v); }

    // Size of one slice along the leading dimension.
    [[nodiscard]] std::size_t row_size() const { return shape_.empty() || shape_[0] == 0 ? 0 : numel() / shape_[0]; }

    [[nodiscard]] Tensor slice_rows(std::size_t begin, std::size_t end) const
    {
        if (rank() == 0 || begin > end || end > shape_[0]) {
            throw ValidationError("slice_rows out of range on " + shape_str(shape_));
        }
        Shape s = shape_;
        s[0] = end - begin;
        const std::size_t rs = row_size();
        return Tensor(std::move(s), std::vector<Real>(data_.begin() + static_cast<std::ptrdiff_t>(begin * rs),
                                                     data_.begin() + static_cast<std::ptrdiff_t>(end * rs)));
    }

    [[nodiscard]] Tensor gather_rows(std::span<const std::size_t> rows) const
    {
        Shape s = shape_;
        s[0] = rows.size();
        Tensor out(std::move(s));
        const std::size_t rs = row_size();
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (rows[i] >= shape_[0]) {
                throw ValidationError("gather_rows index out of range");
            }
            std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(rows[i] * rs), rs,
                        out.data_.begin() + static_cast<std::ptrdiff_t>(i * rs));
        }
        return out;
    }

    [[nodiscard]] static Tensor concat_rows(std::span<const Tensor> parts)
    {
        if (parts.empty()) {
            throw ValidationError("concat_rows of nothing");
        }
        Shape s = parts.front().shape();
        std::size_t rows = 0;
        for (const auto& p : parts) {
            if (p.rank() != s.size() || !std::equal(p.shape().begin() + 1, p.shape().end(), s.begin() + 1)) {
                throw ValidationError("concat_rows shape mismatch: " + shape_str(p.shape()) + " vs " + shape_str(s));
            }
            rows += p.dim(0);
        }
        s[0] = rows;
        Tensor out(std::move(s));
        auto it = out.data_.begin();
        for (const auto& p : parts) {
            it = std::copy(p.data_.begin(), p.data_.end(), it);
        }
        return out;
    }

    Tensor& operator+=(const Tensor& o)
    {
        check_same(o, "+=");
        for (std::size_t i = 0; i < data_.size(); ++i) {
            data_[i] += o.data_[i];
        }
        return *this;
    }

    Tensor& operator-=(const Tensor& o)
    {
        check_same(o, "-=");
        for (std::size_t i = 0; i < data_.size(); ++i) {
            data_[i] -= o.data_[i];
        }
        return *this;
    }

    Tensor& operator*=(Real s) noexcept
    {
        for (Real& v : data_) {
            v *= s;
        }
        return *this;
    }

    // this += s * o
    Tensor& axpy(Real s, const Tensor& o)
    {
        check_same(o, "axpy");
        for (std::size_t i = 0; i < data_.size(); ++i) {
            data_[i] += s * o.data_[i];
        }
        return *this;
    }

    friend Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
    friend Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
    friend Tensor operator*(Tensor a, Real s) { return a *= s; }
    friend Tensor operator*(Real s, Tensor a) { return a *= s; }

    friend bool operator==(const Tensor& a, const Tensor& b) = default;

private:
    void check_same(const Tensor& o, const char* op) const
    {
        if (shape_ != o.shape_) {
            throw ValidationError(std::string("shape mismatch in ") + op + ": " + shape_str(shape_) + " vs " +
                                  shape_str(o.shape_));
        }
    }

    Shape shape_;
    std::vector<Real> data_;
};

[[nodiscard]] inline Tensor clamp(Tensor t, Real lo, Real hi)
{
    for (Real& v : t.values()) {
        v = std::clamp(v, lo, hi);
    }
    return t;
}

[[nodiscard]] inline Real max_abs_diff(const Tensor& a, const Tensor& b)
{
    if (!a.same_shape(b)) {
        throw ValidationError("max_abs_diff shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    Real m = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        m = std::max(m, std::abs(a[i] - b[i]));
    }
    return m;
}

} // namespace advcl

#endif // ADVCL_TENSOR_HPP
