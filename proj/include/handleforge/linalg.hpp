#pragma once

#include <stdexcept>
#include <string>

#include "handleforge/kernels.hpp"
#include "handleforge/mat.hpp"

namespace handleforge {

inline void check_mm(int a, int b, const char* where) {
    if (a != b)
        throw std::invalid_argument(std::string(where) + ": inner dimensions disagree (" +
                                    std::to_string(a) + " vs " + std::to_string(b) + ")");
}

// C = A * B
inline Mat matmul(const Mat& A, const Mat& B) {
    check_mm(A.cols(), B.rows(), "matmul");
    Mat C(A.rows(), B.cols());
    kernels::gemm_nn(A.data(), B.data(), C.data(), A.rows(), A.cols(), B.cols(), false);
    return C;
}

// C = A * B^T
inline Mat matmul_nt(const Mat& A, const Mat& B) {
    check_mm(A.cols(), B.cols(), "matmul_nt");
    Mat C(A.rows(), B.rows());
    kernels::gemm_nt(A.data(), B.data(), C.data(), A.rows(), A.cols(), B.rows(), false);
    return C;
}

// C = A^T * B
inline Mat matmul_tn(const Mat& A, const Mat& B) {
    check_mm(A.rows(), B.rows(), "matmul_tn");
    Mat C(A.cols(), B.cols());
    kernels::gemm_tn(A.data(), B.data(), C.data(), A.cols(), A.rows(), B.cols(), false);
    return C;
}

// C += A^T * B (gradient accumulation)
inline void matmul_tn_acc(const Mat& A, const Mat& B, Mat& C) {
    check_mm(A.rows(), B.rows(), "matmul_tn_acc");
    kernels::gemm_tn(A.data(), B.data(), C.data(), A.cols(), A.rows(), B.cols(), true);
}

inline double frobenius_sq(const Mat& A) { return kernels::sum_squares(A.data(), A.size()); }

}  // namespace handleforge
