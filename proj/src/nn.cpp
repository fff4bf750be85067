#include "handleforge/nn.hpp"

#include <cmath>

#include "handleforge/error.hpp"
#include "handleforge/linalg.hpp"

namespace handleforge::nn {

Param& ParamStore::create(const std::string& name, int rows, int cols) {
    require(!contains(name), "ParamStore: duplicate parameter '" + name + "'");
    auto p = std::make_unique<Param>();
    p->name = name;
    p->value = Mat(rows, cols);
    p->grad = Mat(rows, cols);
    index_[name] = params_.size();
    params_.push_back(std::move(p));
    return *params_.back();
}

Param& ParamStore::at(const std::string& name) {
    auto it = index_.find(name);
    require(it != index_.end(), "ParamStore: unknown parameter '" + name + "'");
    return *params_[it->second];
}

const Param& ParamStore::at(const std::string& name) const {
    auto it = index_.find(name);
    require(it != index_.end(), "ParamStore: unknown parameter '" + name + "'");
    return *params_[it->second];
}

std::vector<Param*> ParamStore::all() {
    std::vector<Param*> out;
    out.reserve(params_.size());
    for (auto& p : params_) out.push_back(p.get());
    return out;
}

std::vector<const Param*> ParamStore::all() const {
    std::vector<const Param*> out;
    out.reserve(params_.size());
    for (auto& p : params_) out.push_back(p.get());
    return out;
}

void ParamStore::zero_grads() {
    for (auto& p : params_) p->grad.set_zero();
}

size_t ParamStore::total_values() const {
    size_t n = 0;
    for (const auto& p : params_) n += p->value.size();
    return n;
}

void init_xavier(Param& p, RandomStream& rng) {
    const double a = std::sqrt(6.0 / (p.value.rows() + p.value.cols()));
    for (size_t i = 0; i < p.value.size(); ++i) p.value[i] = rng.uniform(-a, a);
}

void init_normal(Param& p, RandomStream& rng, double stddev) {
    rng.fill_normal(p.value.data(), p.value.size(), stddev);
}

Mat linear(const Mat& x, const Param& W, const Param& b) {
    require(x.cols() == W.value.rows(), "linear: input width != W rows");
    require(b.value.rows() == 1 && b.value.cols() == W.value.cols(), "linear: bias shape");
    Mat y = matmul(x, W.value);
    for (int r = 0; r < y.rows(); ++r)
        for (int c = 0; c < y.cols(); ++c) y(r, c) += b.value(0, c);
    return y;
}

Mat linear_backward(const Mat& x, Param& W, Param& b, const Mat& dy) {
    require(dy.rows() == x.rows() && dy.cols() == W.value.cols(), "linear_backward: dy shape");
    matmul_tn_acc(x, dy, W.grad);  // dW += x^T dy
    for (int r = 0; r < dy.rows(); ++r)
        for (int c = 0; c < dy.cols(); ++c) b.grad(0, c) += dy(r, c);
    return matmul_nt(dy, W.value);  // dx = dy W^T
}

Mat relu(const Mat& x) {
    Mat y = x;
    for (size_t i = 0; i < y.size(); ++i)
        if (y[i] < 0.0) y[i] = 0.0;
    return y;
}

Mat relu_backward(const Mat& x, const Mat& dy) {
    require(x.same_shape(dy), "relu_backward: shape mismatch");
    Mat dx = dy;
    for (size_t i = 0; i < dx.size(); ++i)
        if (x[i] <= 0.0) dx[i] = 0.0;
    return dx;
}

Mat sigmoid(const Mat& x) {
    Mat y = x;
    for (size_t i = 0; i < y.size(); ++i) y[i] = 1.0 / (1.0 + std::exp(-y[i]));
    return y;
}

Mat sigmoid_backward(const Mat& y, const Mat& dy) {
    require(y.same_shape(dy), "sigmoid_backward: shape mismatch");
    Mat dx = dy;
    for (size_t i = 0; i < dx.size(); ++i) dx[i] *= y[i] * (1.0 - y[i]);
    return dx;
}

Mat softmax_rows(const Mat& x) {
    Mat y = x;
    for (int r = 0; r < y.rows(); ++r) {
        double mx = y(r, 0);
        for (int c = 1; c < y.cols(); ++c) mx = std::max(mx, y(r, c));
        double total = 0.0;
        for (int c = 0; c < y.cols(); ++c) total += y(r, c) = std::exp(y(r, c) - mx);
        for (int c = 0; c < y.cols(); ++c) y(r, c) /= total;
    }
    return y;
}

Mat softmax_rows_backward(const Mat& y, const Mat& dy) {
    require(y.same_shape(dy), "softmax_backward: shape mismatch");
    Mat dx(y.rows(), y.cols());
    for (int r = 0; r < y.rows(); ++r) {
        double dot = 0.0;
        for (int c = 0; c < y.cols(); ++c) dot += y(r, c) * dy(r, c);
        for (int c = 0; c < y.cols(); ++c) dx(r, c) = y(r, c) * (dy(r, c) - dot);
    }
    return dx;
}

Mat layer_norm(const Mat& x, const Param& gain, const Param& bias, LayerNormCache& cache) {
    const int n = x.rows(), d = x.cols();
    require(gain.value.cols() == d && bias.value.cols() == d, "layer_norm: affine width");
    cache.xhat = Mat(n, d);
    cache.inv_std.assign(n, 0.0);
    Mat y(n, d);
    for (int r = 0; r < n; ++r) {
        double mean = 0.0;
        for (int c = 0; c < d; ++c) mean += x(r, c);
        mean /= d;
        double var = 0.0;
        for (int c = 0; c < d; ++c) {
            const double t = x(r, c) - mean;
            var += t * t;
        }
        var /= d;
        const double inv = 1.0 / std::sqrt(var + 1e-5);
        cache.inv_std[r] = inv;
        for (int c = 0; c < d; ++c) {
            cache.xhat(r, c) = (x(r, c) - mean) * inv;
            y(r, c) = cache.xhat(r, c) * gain.value(0, c) + bias.value(0, c);
        }
    }
    return y;
}

Mat layer_norm_backward(const LayerNormCache& cache, const Param& gain, Param& g_gain,
                        Param& g_bias, const Mat& dy) {
    const int n = dy.rows(), d = dy.cols();
    require(cache.xhat.rows() == n && cache.xhat.cols() == d, "layer_norm_backward: cache shape");
    Mat dx(n, d);
    for (int r = 0; r < n; ++r) {
        // dyh = dy * gain; dx = inv_std * (dyh - mean(dyh) - xhat * mean(dyh*xhat))
        double m1 = 0.0, m2 = 0.0;
        for (int c = 0; c < d; ++c) {
            const double dyh = dy(r, c) * gain.value(0, c);
            m1 += dyh;
            m2 += dyh * cache.xhat(r, c);
            g_gain.grad(0, c) += dy(r, c) * cache.xhat(r, c);
            g_bias.grad(0, c) += dy(r, c);
        }
        m1 /= d;
        m2 /= d;
        for (int c = 0; c < d; ++c) {
            const double dyh = dy(r, c) * gain.value(0, c);
            dx(r, c) = cache.inv_std[r] * (dyh - m1 - cache.xhat(r, c) * m2);
        }
    }
    return dx;
}

namespace {

// contiguous head slice: rows x dh columns starting at head*dh
Mat head_slice(const Mat& m, int head, int dh) {
    Mat out(m.rows(), dh);
    for (int r = 0; r < m.rows(); ++r)
        for (int c = 0; c < dh; ++c) out(r, c) = m(r, head * dh + c);
    return out;
}

void head_scatter_add(Mat& dst, const Mat& src, int head, int dh) {
    for (int r = 0; r < src.rows(); ++r)
        for (int c = 0; c < dh; ++c) dst(r, head * dh + c) += src(r, c);
}

}  // namespace

Mat mha(const Mat& q_in, const Mat& kv_in, int heads, const Param& Wq, const Param& Wk,
        const Param& Wv, const Param& Wo, const Mat* score_mask, MHACache& cache) {
    const int d = q_in.cols();
    require(d == kv_in.cols(), "mha: q/kv width mismatch");
    require(d % heads == 0, "mha: width not divisible by head count");
    const int dh = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    cache.q_in = q_in;
    cache.kv_in = kv_in;
    cache.Q = matmul(q_in, Wq.value);
    cache.K = matmul(kv_in, Wk.value);
    cache.V = matmul(kv_in, Wv.value);
    cache.attn.assign(heads, Mat());
    cache.concat = Mat(q_in.rows(), d);

    for (int h = 0; h < heads; ++h) {
        const Mat Qh = head_slice(cache.Q, h, dh);
        const Mat Kh = head_slice(cache.K, h, dh);
        const Mat Vh = head_slice(cache.V, h, dh);
        Mat scores = matmul_nt(Qh, Kh);
        scores *= scale;
        if (score_mask) {
            require(score_mask->same_shape(scores), "mha: score mask shape");
            scores += *score_mask;
        }
        cache.attn[h] = softmax_rows(scores);
        const Mat Oh = matmul(cache.attn[h], Vh);
        head_scatter_add(cache.concat, Oh, h, dh);
    }
    return matmul(cache.concat, Wo.value);
}

void mha_backward(const MHACache& cache, int heads, const Param& Wq, const Param& Wk,
                  const Param& Wv, const Param& Wo, Param& gWq, Param& gWk, Param& gWv,
                  Param& gWo, const Mat& dy, Mat& dq_in, Mat& dkv_in) {
    const int d = cache.q_in.cols();
    const int dh = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    // out = concat Wo
    matmul_tn_acc(cache.concat, dy, gWo.grad);
    const Mat dconcat = matmul_nt(dy, Wo.value);

    Mat dQ(cache.Q.rows(), d), dK(cache.K.rows(), d), dV(cache.V.rows(), d);
    for (int h = 0; h < heads; ++h) {
        const Mat Qh = head_slice(cache.Q, h, dh);
        const Mat Kh = head_slice(cache.K, h, dh);
        const Mat Vh = head_slice(cache.V, h, dh);
        const Mat dOh = head_slice(dconcat, h, dh);
        const Mat& A = cache.attn[h];

        const Mat dA = matmul_nt(dOh, Vh);         // dA = dOh Vh^T
        const Mat dVh = matmul_tn(A, dOh);         // dVh = A^T dOh
        Mat dscores = softmax_rows_backward(A, dA);
        dscores *= scale;
        const Mat dQh = matmul(dscores, Kh);       // dQh = dscores Kh
        const Mat dKh = matmul_tn(dscores, Qh);    // dKh = dscores^T Qh

        head_scatter_add(dQ, dQh, h, dh);
        head_scatter_add(dK, dKh, h, dh);
        head_scatter_add(dV, dVh, h, dh);
    }

    matmul_tn_acc(cache.q_in, dQ, gWq.grad);
    matmul_tn_acc(cache.kv_in, dK, gWk.grad);
    matmul_tn_acc(cache.kv_in, dV, gWv.grad);
    dq_in += matmul_nt(dQ, Wq.value);
    dkv_in += matmul_nt(dK, Wk.value);
    dkv_in += matmul_nt(dV, Wv.value);
}

Mat sinusoidal_embedding(const std::vector<double>& positions, int dim) {
    require(dim % 2 == 0, "sinusoidal_embedding: dim must be even");
    Mat out(static_cast<int>(positions.size()), dim);
    for (size_t r = 0; r < positions.size(); ++r)
        for (int i = 0; i < dim / 2; ++i) {
            const double freq = std::pow(10000.0, -2.0 * i / dim);
            out(static_cast<int>(r), 2 * i) = std::sin(positions[r] * freq);
            out(static_cast<int>(r), 2 * i + 1) = std::cos(positions[r] * freq);
        }
    return out;
}

void GD::step(ParamStore& params) const {
    for (Param* p : params.all())
        for (size_t i = 0; i < p->value.size(); ++i) p->value[i] -= lr * p->grad[i];
}

void Adam::step(ParamStore& params) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (Param* p : params.all()) {
        auto [it, fresh] = state_.try_emplace(p->name, std::pair<Mat, Mat>{});
        auto& [m, v] = it->second;
        if (fresh) {
            m = Mat(p->value.rows(), p->value.cols());
            v = Mat(p->value.rows(), p->value.cols());
        }
        for (size_t i = 0; i < p->value.size(); ++i) {
            const double g = p->grad[i];
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
            p->value[i] -= lr_ * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
        }
    }
}

}  // namespace handleforge::nn
