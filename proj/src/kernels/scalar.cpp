#include "handleforge/kernels.hpp"

#include <cmath>
#include <cstring>

// Reference kernels. Straight loops, no tricks; these define the semantics
// the vector backends are tested against.

namespace handleforge::kernels::scalar {
namespace {

void gemm_nn_impl(const double* A, const double* B, double* C, int m, int k, int n, bool acc) {
    if (!acc) std::memset(C, 0, sizeof(double) * static_cast<size_t>(m) * n);
    for (int i = 0; i < m; ++i) {
        const double* a = A + static_cast<size_t>(i) * k;
        double* c = C + static_cast<size_t>(i) * n;
        for (int l = 0; l < k; ++l) {
            const double av = a[l];
            if (av == 0.0) continue;
            const double* b = B + static_cast<size_t>(l) * n;
            for (int j = 0; j < n; ++j) c[j] += av * b[j];
        }
    }
}

void gemm_nt_impl(const double* A, const double* B, double* C, int m, int k, int n, bool acc) {
    for (int i = 0; i < m; ++i) {
        const double* a = A + static_cast<size_t>(i) * k;
        double* c = C + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const double* b = B + static_cast<size_t>(j) * k;
            double s = 0.0;
            for (int l = 0; l < k; ++l) s += a[l] * b[l];
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
            double* c = C + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) c[j] += av * b[j];
        }
    }
}

void axpy_impl(double a, const double* x, double* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

double dot_impl(const double* x, const double* y, size_t n) {
    double s = 0.0;
    for (size_t i = 0; i < n; ++i) s += x[i] * y[i];
    return s;
}

double sum_squares_impl(const double* x, size_t n) {
    double s = 0.0;
    for (size_t i = 0; i < n; ++i) s += x[i] * x[i];
    return s;
}

void lbs_blend_impl(const double* verts, int V, const double* weights, int K,
                    const double* affines, double* out) {
    for (int i = 0; i < V; ++i) {
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
    double s = 0.0;
    for (int e = 0; e < E; ++e) {
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

}  // namespace handleforge::kernels::scalar
