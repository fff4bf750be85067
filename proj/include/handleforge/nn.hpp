#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "handleforge/mat.hpp"
#include "handleforge/rng.hpp"

// Small reverse-mode layer library for the fixed architectures in this
// project. Layers are free functions with explicit caches: callers keep the
// forward activations they need and drive the backward pass themselves.
// Everything is single-threaded and deterministic under a fixed seed.

namespace handleforge::nn {

struct Param {
    std::string name;
    Mat value;
    Mat grad;
};

// Owns parameters in insertion order (stable for optimizers and IO).
// Copies are deep so snapshots and checkpoints get independent storage.
class ParamStore {
public:
    ParamStore() = default;
    ParamStore(ParamStore&&) = default;
    ParamStore& operator=(ParamStore&&) = default;
    ParamStore(const ParamStore& o) { copy_from(o); }
    ParamStore& operator=(const ParamStore& o) {
        if (this != &o) {
            params_.clear();
            index_.clear();
            copy_from(o);
        }
        return *this;
    }

    Param& create(const std::string& name, int rows, int cols);
    Param& at(const std::string& name);
    const Param& at(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    std::vector<Param*> all();
    std::vector<const Param*> all() const;
    void zero_grads();
    size_t total_values() const;

private:
    void copy_from(const ParamStore& o) {
        params_.reserve(o.params_.size());
        for (const auto& p : o.params_) params_.push_back(std::make_unique<Param>(*p));
        index_ = o.index_;
    }

    std::vector<std::unique_ptr<Param>> params_;
    std::map<std::string, size_t> index_;
};

// Xavier-uniform for weight matrices (fan_in = rows, fan_out = cols).
void init_xavier(Param& p, RandomStream& rng);
void init_normal(Param& p, RandomStream& rng, double stddev);

// y = x W + 1 b   (x: n x in, W: in x out, b: 1 x out)
Mat linear(const Mat& x, const Param& W, const Param& b);
// accumulates dW, db; returns dx
Mat linear_backward(const Mat& x, Param& W, Param& b, const Mat& dy);

Mat relu(const Mat& x);
Mat relu_backward(const Mat& x, const Mat& dy);

Mat sigmoid(const Mat& x);
// takes the forward output y
Mat sigmoid_backward(const Mat& y, const Mat& dy);

Mat softmax_rows(const Mat& x);
// takes the forward output y
Mat softmax_rows_backward(const Mat& y, const Mat& dy);

// LayerNorm over the last dimension with learned gain/bias (each 1 x d).
struct LayerNormCache {
    Mat xhat;                     // normalized input
    std::vector<double> inv_std;  // per row
};
Mat layer_norm(const Mat& x, const Param& gain, const Param& bias, LayerNormCache& cache);
Mat layer_norm_backward(const LayerNormCache& cache, const Param& gain, Param& g_gain,
                        Param& g_bias, const Mat& dy);

// Multi-head attention over one sequence (no batch dimension; batches loop).
// q_in: nq x d, kv_in: nkv x d. `score_mask`, when given, is added to the
// raw scores (use large negatives to mask positions out).
struct MHACache {
    Mat q_in, kv_in;
    Mat Q, K, V;             // nq x d, nkv x d, nkv x d
    std::vector<Mat> attn;   // per head: nq x nkv softmax rows
    Mat concat;              // nq x d pre-output-projection
};
Mat mha(const Mat& q_in, const Mat& kv_in, int heads, const Param& Wq, const Param& Wk,
        const Param& Wv, const Param& Wo, const Mat* score_mask, MHACache& cache);
// accumulates all four weight grads; adds input grads into dq_in/dkv_in
// (shapes must match; self-attention passes the same matrix twice)
void mha_backward(const MHACache& cache, int heads, const Param& Wq, const Param& Wk,
                  const Param& Wv, const Param& Wo, Param& gWq, Param& gWk, Param& gWv,
                  Param& gWo, const Mat& dy, Mat& dq_in, Mat& dkv_in);

// Classic sinusoidal embedding: row r encodes positions[r] in `dim` channels.
Mat sinusoidal_embedding(const std::vector<double>& positions, int dim);

// Plain gradient descent (momentum-free, used where the training contract
// asks for bare descent).
struct GD {
    double lr;
    void step(ParamStore& params) const;
};

// Adam with bias correction; state keyed by parameter name.
class Adam {
public:
    explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}
    void step(ParamStore& params);
    int steps_taken() const { return t_; }

private:
    double lr_, beta1_, beta2_, eps_;
    int t_ = 0;
    std::map<std::string, std::pair<Mat, Mat>> state_;  // m, v
};

}  // namespace handleforge::nn
