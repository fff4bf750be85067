#pragma once

#include <cassert>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace handleforge {

// Dense row-major matrix of doubles. The numeric workhorse for meshes
// (V x 3), skinning weights (V x K) and network activations. Heavy products
// go through the kernels layer; this type only owns storage and cheap
// elementwise helpers.
class Mat {
public:
    Mat() = default;
    Mat(int rows, int cols) : rows_(rows), cols_(cols), d_(static_cast<size_t>(rows) * cols, 0.0) {
        assert(rows >= 0 && cols >= 0);
    }

    static Mat constant(int rows, int cols, double v) {
        Mat m(rows, cols);
        for (double& x : m.d_) x = v;
        return m;
    }
    static Mat identity(int n) {
        Mat m(n, n);
        for (int i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    size_t size() const { return d_.size(); }
    bool empty() const { return d_.empty(); }

    double& operator()(int r, int c) {
        assert(r >= 0 && r < rows_ && c >= 0 && c < cols_);
        return d_[static_cast<size_t>(r) * cols_ + c];
    }
    double operator()(int r, int c) const {
        assert(r >= 0 && r < rows_ && c >= 0 && c < cols_);
        return d_[static_cast<size_t>(r) * cols_ + c];
    }
    double& operator[](size_t i) { return d_[i]; }
    double operator[](size_t i) const { return d_[i]; }

    double* data() { return d_.data(); }
    const double* data() const { return d_.data(); }
    double* row(int r) { return d_.data() + static_cast<size_t>(r) * cols_; }
    const double* row(int r) const { return d_.data() + static_cast<size_t>(r) * cols_; }

    void fill(double v) {
        for (double& x : d_) x = v;
    }
    void set_zero() { fill(0.0); }

    Mat& operator+=(const Mat& o) {
        require_same_shape(o, "+=");
        for (size_t i = 0; i < d_.size(); ++i) d_[i] += o.d_[i];
        return *this;
    }
    Mat& operator-=(const Mat& o) {
        require_same_shape(o, "-=");
        for (size_t i = 0; i < d_.size(); ++i) d_[i] -= o.d_[i];
        return *this;
    }
    Mat& operator*=(double s) {
        for (double& x : d_) x *= s;
        return *this;
    }

    friend Mat operator+(Mat a, const Mat& b) { return a += b; }
    friend Mat operator-(Mat a, const Mat& b) { return a -= b; }
    friend Mat operator*(Mat a, double s) { return a *= s; }
    friend Mat operator*(double s, Mat a) { return a *= s; }

    bool same_shape(const Mat& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

private:
    void require_same_shape(const Mat& o, const char* op) const {
        if (!same_shape(o))
            throw std::invalid_argument(std::string("Mat shape mismatch in ") + op + ": " +
                                        std::to_string(rows_) + "x" + std::to_string(cols_) + " vs " +
                                        std::to_string(o.rows_) + "x" + std::to_string(o.cols_));
    }

    int rows_ = 0;
    int cols_ = 0;
    std::vector<double> d_;
};

}  // namespace handleforge
