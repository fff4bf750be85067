#include "handleforge/kernels.hpp"

#if defined(HANDLEFORGE_X86_64)

#include <immintrin.h>

#include <cmath>
#include <cstring>

// AVX2+FMA kernels. This translation unit is compiled with -mavx2 -mfma and
// is only entered after runtime CPU detection. Results may differ from the
// scalar reference by reassociation/FMA rounding only; equivalence tests pin
// the tolerance.

namespace handleforge::kernels::avx2 {
namespace {

inline double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d swapped = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, swapped));
}

void gemm_nn_impl(const double* A, const double* B, double* C, int m, int k, int n, bool acc) {
    if (!acc) std::memset(C, 0, sizeof(double) * static_cast<size_t>(m) * n);
    for (int i = 0; i < m; ++i) {
        const double* a = A + static_cast<size_t>(i) * k;
        double* c = C + static_cast<size_t>(i) * n;
        for (int l = 0; l < k; ++l) {
            const double av = a[l];
            if (av == 0.0) continue;
            const __m256d va = _mm256_set1_pd(av);
            const double* b = B + static_cast<size_t>(l) * n;
            int j = 0;
            for (; j + 8 <= n; j += 8) {
                __m256d c0 = _mm256_loadu_pd(c + j);
                __m256d c1 = _mm256_loadu_pd(c + j + 4);
                c0 = _mm256_fmadd_pd(va, _mm256_loadu_pd(b + j), c0);
                c1 = _mm256_fmadd_pd(va, _mm256_loadu_pd(b + j + 4), c1);
                _mm256_storeu_pd(c + j, c0);
                _mm256_storeu_pd(c + j + 4, c1);
            }
            for (; j + 4 <= n; j += 4) {
                __m256d c0 = _mm256_loadu_pd(c + j);
                c0 = _mm256_fmadd_pd(va, _mm256_loadu_pd(b + j), c0);
                _mm256_storeu_pd(c + j, c0);
            }
            for (; j < n; ++j) c[j] += av * b[j];
        }
    }
}

void gemm_nt_impl(const double* A, const double* B, double* C, int m, int k, int n, bool acc) {
    for (int i = 0; i < m; ++i) {
        const double* a = A + static_cast<size_t>(i) * k;
        double* c = C + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const double* b = B + static_cast<size_t>(j) * k;
            __m256d s0 = _mm256_setzero_pd();
            __m256d s1 = _mm256_setzero_pd();
            int l = 0;
            for (; l + 8 <= k; l += 8) {
                s0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + l), _mm256_loadu_pd(b + l), s0);
                s1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + l + 4), _mm256_loadu_pd(b + l + 4), s1);
            }
            for (; l + 4 <= k; l += 4)
                s0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + l), _mm256_loadu_pd(b + l), s0);
            double s = hsum(_mm256_add_pd(s0, s1));
            for (; l < k; ++l) s += a[l] * b[l];
            c[j] = acc ? c[j] + s : s;
        }
    }
}

void gemm_tn_impl(const double* A, const double* B, double* C, int m, int k, int n, bool acc) {
    if (!acc) std::memset(C, 0, sizeof(double) * static_cast<size_t>(m) * n);
    for (int l = 0; l < k; ++l) {
        const double* a = A + static_cast<size_t>(l) * m;
        const double* b = B + static_cast<size_t>(l) * n;
        for (int i = 0; i < m; ++i) {
            const double av = a[i];
            if (av == 0.0) continue;
            const __m256d va = _mm256_set1_pd(av);
            double* c = C + static_cast<size_t>(i) * n;
            int j = 0;
            for (; j + 4 <= n; j += 4) {
                __m256d c0 = _mm256_loadu_pd(c + j);
                c0 = _mm256_fmadd_pd(va, _mm256_loadu_pd(b + j), c0);
                _mm256_storeu_pd(c + j, c0);
            }
            for (; j < n; ++j) c[j] += av * b[j];
        }
    }
}

void axpy_impl(double a, const double* x, double* y, size_t n) {
    const __m256d va = _mm256_set1_pd(a);
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d vy = _mm256_loadu_pd(y + i);
        vy = _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), vy);
        _mm256_storeu_pd(y + i, vy);
    }
    for (; i < n; ++i) y[i] += a * x[i];
}

double dot_impl(const double* x, const double* y, size_t n) {
    __m256d s = _mm256_setzero_pd();
    size_t i = 0;
    for (; i + 4 <= n; i += 4)
        s = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), s);
    double r = hsum(s);
    for (; i < n; ++i) r += x[i] * y[i];
    return r;
}

double sum_squares_impl(const double* x, size_t n) {
    __m256d s = _mm256_setzero_pd();
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d v = _mm256_loadu_pd(x + i);
        s = _mm256_fmadd_pd(v, v, s);
    }
    double r = hsum(s);
    for (; i < n; ++i) r += x[i] * x[i];
    return r;
}

// Four vertices per iteration; per-handle weight columns are strided
// gathers, vertex components are transposed on load.
void lbs_blend_impl(const double* verts, int V, const double* weights, int K,
                    const double* affines, double* out) {
    int i = 0;
    for (; i + 4 <= V; i += 4) {
        const double* v0 = verts + 3 * i;
        const __m256d vx = _mm256_set_pd(v0[9], v0[6], v0[3], v0[0]);
        const __m256d vy = _mm256_set_pd(v0[10], v0[7], v0[4], v0[1]);
        const __m256d vz = _mm256_set_pd(v0[11], v0[8], v0[5], v0[2]);
        __m256d ox = _mm256_setzero_pd();
        __m256d oy = _mm256_setzero_pd();
        __m256d oz = _mm256_setzero_pd();
        const double* wrow = weights + static_cast<size_t>(i) * K;
        for (int k = 0; k < K; ++k) {
            const __m256d wk = _mm256_set_pd(wrow[3 * static_cast<size_t>(K) + k],
                                             wrow[2 * static_cast<size_t>(K) + k],
                                             wrow[1 * static_cast<size_t>(K) + k], wrow[k]);
            const double* a = affines + 12 * k;
            __m256d tx = _mm256_fmadd_pd(_mm256_set1_pd(a[0]), vx,
                         _mm256_fmadd_pd(_mm256_set1_pd(a[1]), vy,
                         _mm256_fmadd_pd(_mm256_set1_pd(a[2]), vz, _mm256_set1_pd(a[9]))));
            __m256d ty = _mm256_fmadd_pd(_mm256_set1_pd(a[3]), vx,
                         _mm256_fmadd_pd(_mm256_set1_pd(a[4]), vy,
                         _mm256_fmadd_pd(_mm256_set1_pd(a[5]), vz, _mm256_set1_pd(a[10]))));
            __m256d tz = _mm256_fmadd_pd(_mm256_set1_pd(a[6]), vx,
                         _mm256_fmadd_pd(_mm256_set1_pd(a[7]), vy,
                         _mm256_fmadd_pd(_mm256_set1_pd(a[8]), vz, _mm256_set1_pd(a[11]))));
            ox = _mm256_fmadd_pd(wk, tx, ox);
            oy = _mm256_fmadd_pd(wk, ty, oy);
            oz = _mm256_fmadd_pd(wk, tz, oz);
        }
        alignas(32) double bx[4], by[4], bz[4];
        _mm256_store_pd(bx, ox);
        _mm256_store_pd(by, oy);
        _mm256_store_pd(bz, oz);
        for (int t = 0; t < 4; ++t) {
            out[3 * (i + t) + 0] = bx[t];
            out[3 * (i + t) + 1] = by[t];
            out[3 * (i + t) + 2] = bz[t];
        }
    }
    for (; i < V; ++i) {
        const double vx = verts[3 * i + 0];
        const double vy = verts[3 * i + 1];
        const double vz = verts[3 * i + 2];
        const double* w = weights + static_cast<size_t>(i) * K;
        double ox = 0.0, oy = 0.0, oz = 0.0;
        for (int k = 0; k < K; ++k) {
            const double wk = w[k];
            if (wk == 0.0) continue;
            const double* a = affines + 12 * k;
            ox += wk * (a[0] * vx + a[1] * vy + a[2] * vz + a[9]);
            oy += wk * (a[3] * vx + a[4] * vy + a[5] * vz + a[10]);
            oz += wk * (a[6] * vx + a[7] * vy + a[8] * vz + a[11]);
        }
        out[3 * i + 0] = ox;
        out[3 * i + 1] = oy;
        out[3 * i + 2] = oz;
    }
}

double edge_length_error_impl(const double* pos, const int* ei, const int* ej,
                              const double* rest, int E) {
    __m256d acc = _mm256_setzero_pd();
    int e = 0;
    for (; e + 4 <= E; e += 4) {
        alignas(32) double dx[4], dy[4], dz[4];
        for (int t = 0; t < 4; ++t) {
            const double* p = pos + 3 * ei[e + t];
            const double* q = pos + 3 * ej[e + t];
            dx[t] = p[0] - q[0];
            dy[t] = p[1] - q[1];
            dz[t] = p[2] - q[2];
        }
        __m256d vx = _mm256_load_pd(dx);
        __m256d vy = _mm256_load_pd(dy);
        __m256d vz = _mm256_load_pd(dz);
        __m256d n2 = _mm256_fmadd_pd(vx, vx, _mm256_fmadd_pd(vy, vy, _mm256_mul_pd(vz, vz)));
        __m256d d = _mm256_sub_pd(_mm256_sqrt_pd(n2), _mm256_loadu_pd(rest + e));
        acc = _mm256_fmadd_pd(d, d, acc);
    }
    double s = hsum(acc);
    for (; e < E; ++e) {
        const double* p = pos + 3 * ei[e];
        const double* q = pos + 3 * ej[e];
        const double dx = p[0] - q[0];
        const double dy = p[1] - q[1];
        const double dz = p[2] - q[2];
        const double d = std::sqrt(dx * dx + dy * dy + dz * dz) - rest[e];
        s += d * d;
    }
    return s;
}

}  // namespace

const Ops ops = {
    gemm_nn_impl, gemm_nt_impl, gemm_tn_impl,
    axpy_impl,    dot_impl,     sum_squares_impl,
    lbs_blend_impl, edge_length_error_impl,
};

}  // namespace handleforge::kernels::avx2

#endif  // HANDLEFORGE_X86_64
