#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "lporec/errors.hpp"

namespace lporec {

// Dense row-major matrix. Rank is fixed at 2; vectors are 1xN, scalars 1x1.
template <class T>
class Tensor {
public:
    Tensor() = default;
    Tensor(int64_t rows, int64_t cols, T fill = T(0))
        : rows_(rows), cols_(cols), data_(static_cast<size_t>(rows * cols), fill) {
        if (rows < 0 || cols < 0) throw ValidationError("BadShape", "negative dimension");
    }
    static Tensor scalar(T v) {
        Tensor t(1, 1);
        t.data_[0] = v;
        return t;
    }
    static Tensor from_row(std::vector<T> v) {
        Tensor t;
        t.rows_ = 1;
        t.cols_ = static_cast<int64_t>(v.size());
        t.data_ = std::move(v);
        return t;
    }

    int64_t rows() const { return rows_; }
    int64_t cols() const { return cols_; }
    size_t size() const { return data_.size(); }
    bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    T& operator()(int64_t r, int64_t c) { return data_[static_cast<size_t>(r * cols_ + c)]; }
    T operator()(int64_t r, int64_t c) const { return data_[static_cast<size_t>(r * cols_ + c)]; }
    T* row_ptr(int64_t r) { return data_.data() + r * cols_; }
    const T* row_ptr(int64_t r) const { return data_.data() + r * cols_; }
    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& raw() { return data_; }
    const std::vector<T>& raw() const { return data_; }

    T item() const {
        if (size() != 1) throw RuntimeFailure("NotScalar", "item() on non-scalar tensor");
        return data_[0];
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    bool all_finite() const {
        for (T v : data_)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

private:
    int64_t rows_ = 0;
    int64_t cols_ = 0;
    std::vector<T> data_;
};

}  // namespace lporec
