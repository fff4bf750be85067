#pragma once

#include <cstddef>
#include <string>

// Arithmetic inner loops, provided as scalar reference kernels plus an AVX2
// variant selected at runtime. All higher-level code calls the dispatching
// front ends; tests compare the backends against each other on random
// instances. Set HANDLEFORGE_KERNEL=scalar|avx2|auto to force a backend.

namespace handleforge::kernels {

enum class Backend { scalar, avx2 };

// Resolved once on first use: env override, then CPU detection.
Backend active();
const char* backend_name(Backend b);
bool avx2_compiled();
bool avx2_supported();

// Each kernel exists in scalar form and, when compiled for x86-64, in an
// AVX2+FMA form. Signatures are identical across backends.
//
// gemm_nn: C (m x n) = A (m x k) * B (k x n)          [+= when accumulate]
// gemm_nt: C (m x n) = A (m x k) * B^T, B is (n x k)
// gemm_tn: C (m x n) = A^T * B, A is (k x m), B (k x n)
struct Ops {
    void (*gemm_nn)(const double* A, const double* B, double* C, int m, int k, int n, bool accumulate);
    void (*gemm_nt)(const double* A, const double* B, double* C, int m, int k, int n, bool accumulate);
    void (*gemm_tn)(const double* A, const double* B, double* C, int m, int k, int n, bool accumulate);
    // y += a * x
    void (*axpy)(double a, const double* x, double* y, size_t n);
    double (*dot)(const double* x, const double* y, size_t n);
    double (*sum_squares)(const double* x, size_t n);
    // Linear blend skinning: out[i] = sum_k w[i,k] * (A_k * v_i + b_k).
    // verts/out are V x 3 row-major, weights V x K, affines K x 12 rows of
    // [R row0, R row1, R row2, b].
    void (*lbs_blend)(const double* verts, int V, const double* weights, int K,
                      const double* affines, double* out);
    // Sum over edges of (|p_i - p_j| - rest_e)^2.
    double (*edge_length_error)(const double* pos, const int* ei, const int* ej,
                                const double* rest, int E);
};

namespace scalar {
extern const Ops ops;
}
#if defined(__x86_64__) || defined(_M_X64)
#define HANDLEFORGE_X86_64 1
namespace avx2 {
extern const Ops ops;
}
#endif

// Active backend's table.
const Ops& ops();

// Convenience front ends.
inline void gemm_nn(const double* A, const double* B, double* C, int m, int k, int n, bool acc = false) {
    ops().gemm_nn(A, B, C, m, k, n, acc);
}
inline void gemm_nt(const double* A, const double* B, double* C, int m, int k, int n, bool acc = false) {
    ops().gemm_nt(A, B, C, m, k, n, acc);
}
inline void gemm_tn(const double* A, const double* B, double* C, int m, int k, int n, bool acc = false) {
    ops().gemm_tn(A, B, C, m, k, n, acc);
}
inline void axpy(double a, const double* x, double* y, size_t n) { ops().axpy(a, x, y, n); }
inline double dot(const double* x, const double* y, size_t n) { return ops().dot(x, y, n); }
inline double sum_squares(const double* x, size_t n) { return ops().sum_squares(x, n); }
inline void lbs_blend(const double* verts, int V, const double* weights, int K,
                      const double* affines, double* out) {
    ops().lbs_blend(verts, V, weights, K, affines, out);
}
inline double edge_length_error(const double* pos, const int* ei, const int* ej,
                                const double* rest, int E) {
    return ops().edge_length_error(pos, ei, ej, rest, E);
}

}  // namespace handleforge::kernels
