#include "smsi/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "smsi/errors.hpp"
#include "smsi/gemm.hpp"
#include "smsi/rng.hpp"

namespace smsi {

// ---------------------------------------------------------------------------
// LayerSpec

LayerSpec LayerSpec::conv(int filters, int kernel, int stride) {
    LayerSpec s;
    s.kind = LayerKind::Conv;
    s.filters = filters;
    s.kernel = kernel;
    s.stride = stride;
    return s;
}

LayerSpec LayerSpec::batch_norm() {
    LayerSpec s;
    s.kind = LayerKind::BatchNorm;
    return s;
}

LayerSpec LayerSpec::tanh() {
    LayerSpec s;
    s.kind = LayerKind::Tanh;
    return s;
}

LayerSpec LayerSpec::max_pool(int window, int stride) {
    LayerSpec s;
    s.kind = LayerKind::MaxPool;
    s.pool = window;
    s.pool_stride = stride;
    return s;
}

LayerSpec LayerSpec::dense(int neurons) {
    LayerSpec s;
    s.kind = LayerKind::Dense;
    s.neurons = neurons;
    return s;
}

LayerSpec LayerSpec::softmax_output() {
    LayerSpec s;
    s.kind = LayerKind::SoftmaxOutput;
    return s;
}

void LayerSpec::validate() const {
    switch (kind) {
        case LayerKind::Conv:
            if (filters < 1) throw NnError("Conv filter count must be >= 1");
            if (kernel < 1) throw NnError("Conv kernel size must be >= 1");
            if (stride < 1) throw NnError("Conv stride must be >= 1");
            break;
        case LayerKind::Dense:
            if (neurons < 1) throw NnError("Dense neuron count must be >= 1");
            break;
        case LayerKind::MaxPool:
            if (pool < 1) throw NnError("MaxPool window must be >= 1");
            if (pool_stride < 1) throw NnError("MaxPool stride must be >= 1");
            break;
        case LayerKind::BatchNorm:
        case LayerKind::Tanh:
        case LayerKind::SoftmaxOutput:
            break;
    }
}

namespace {

// ---------------------------------------------------------------------------
// Helpers

double xavier_limit(std::int64_t fan_in, std::int64_t fan_out) {
    return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

// Draws are taken in double from a shared engine so float and double builds
// of the same seed produce the same parameter values (up to cast).
template <typename T>
void xavier_fill(Tensor<T>& w, std::int64_t fan_in, std::int64_t fan_out, std::mt19937_64& rng) {
    const double limit = xavier_limit(fan_in, fan_out);
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (std::int64_t i = 0; i < w.numel(); ++i) w[i] = static_cast<T>(dist(rng));
}

template <typename T>
void im2col(const T* x, std::int64_t c_count, std::int64_t h, std::int64_t w, std::int64_t k,
            std::int64_t pad, std::int64_t stride, std::int64_t oh_count, std::int64_t ow_count,
            T* col) {
    const std::int64_t plane = oh_count * ow_count;
    for (std::int64_t c = 0; c < c_count; ++c) {
        for (std::int64_t ki = 0; ki < k; ++ki) {
            for (std::int64_t kj = 0; kj < k; ++kj) {
                T* dst = col + ((c * k + ki) * k + kj) * plane;
                for (std::int64_t oh = 0; oh < oh_count; ++oh) {
                    const std::int64_t ih = oh * stride - pad + ki;
                    if (ih < 0 || ih >= h) {
                        std::fill(dst + oh * ow_count, dst + (oh + 1) * ow_count, T(0));
                        continue;
                    }
                    const T* src_row = x + (c * h + ih) * w;
                    for (std::int64_t ow = 0; ow < ow_count; ++ow) {
                        const std::int64_t iw = ow * stride - pad + kj;
                        dst[oh * ow_count + ow] = (iw >= 0 && iw < w) ? src_row[iw] : T(0);
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_add(const T* col, std::int64_t c_count, std::int64_t h, std::int64_t w, std::int64_t k,
                std::int64_t pad, std::int64_t stride, std::int64_t oh_count, std::int64_t ow_count,
                T* x) {
    const std::int64_t plane = oh_count * ow_count;
    for (std::int64_t c = 0; c < c_count; ++c) {
        for (std::int64_t ki = 0; ki < k; ++ki) {
            for (std::int64_t kj = 0; kj < k; ++kj) {
                const T* src = col + ((c * k + ki) * k + kj) * plane;
                for (std::int64_t oh = 0; oh < oh_count; ++oh) {
                    const std::int64_t ih = oh * stride - pad + ki;
                    if (ih < 0 || ih >= h) continue;
                    T* dst_row = x + (c * h + ih) * w;
                    for (std::int64_t ow = 0; ow < ow_count; ++ow) {
                        const std::int64_t iw = ow * stride - pad + kj;
                        if (iw >= 0 && iw < w) dst_row[iw] += src[oh * ow_count + ow];
                    }
                }
            }
        }
    }
}

Shape with_batch(std::int64_t n, const Shape& per_sample) {
    Shape s;
    s.reserve(per_sample.size() + 1);
    s.push_back(n);
    s.insert(s.end(), per_sample.begin(), per_sample.end());
    return s;
}

// ---------------------------------------------------------------------------
// Conv: "same" zero padding, odd kernels, im2col + GEMM.

template <typename T>
class ConvLayer final : public Layer<T> {
public:
    ConvLayer(const LayerSpec& spec, const Shape& in_shape, std::mt19937_64& rng) {
        if (in_shape.size() != 3) {
            throw NnError("Conv expects a {C,H,W} input, got " + shape_to_string(in_shape));
        }
        if (spec.kernel % 2 == 0) {
            throw NnError("Conv kernel must be odd for same padding, got " +
                          std::to_string(spec.kernel));
        }
        c_ = in_shape[0];
        h_ = in_shape[1];
        w_ = in_shape[2];
        f_ = spec.filters;
        k_ = spec.kernel;
        stride_ = spec.stride;
        pad_ = (k_ - 1) / 2;
        oh_ = (h_ + 2 * pad_ - k_) / stride_ + 1;
        ow_ = (w_ + 2 * pad_ - k_) / stride_ + 1;
        if (oh_ < 1 || ow_ < 1) throw NnError("Conv output collapses to zero spatial size");
        this->in_shape_ = in_shape;
        this->out_shape_ = {f_, oh_, ow_};
        weight_ = Tensor<T>({f_, c_, k_, k_});
        bias_ = Tensor<T>({f_});
        xavier_fill(weight_, c_ * k_ * k_, f_ * k_ * k_, rng);
    }

    LayerKind kind() const override { return LayerKind::Conv; }
    std::string describe() const override {
        return "Conv " + std::to_string(f_) + "@" + std::to_string(k_) + "x" + std::to_string(k_);
    }

    Tensor<T> infer(const Tensor<T>& in) const override { return run(in); }

    Tensor<T> train_forward(const Tensor<T>& in, LayerCache<T>& cache) override {
        cache.input = in;
        return run(in);
    }

    Tensor<T> backward(const LayerCache<T>& cache, const Tensor<T>& dout,
                       std::vector<Tensor<T>>& grads) const override {
        const Tensor<T>& in = cache.input;
        const std::int64_t n_count = in.dim(0);
        const std::int64_t ckk = c_ * k_ * k_;
        const std::int64_t plane = oh_ * ow_;
        const std::int64_t in_plane = c_ * h_ * w_;
        Tensor<T> din(in.shape());
        Tensor<T>& dw = grads[0];
        Tensor<T>& db = grads[1];
        std::vector<T> col(static_cast<std::size_t>(ckk * plane));
        std::vector<T> dcol(static_cast<std::size_t>(ckk * plane));
        for (std::int64_t n = 0; n < n_count; ++n) {
            const T* dout_n = dout.data() + n * f_ * plane;
            for (std::int64_t f = 0; f < f_; ++f) {
                double acc = 0;
                const T* row = dout_n + f * plane;
                for (std::int64_t i = 0; i < plane; ++i) acc += row[i];
                db[f] += static_cast<T>(acc);
            }
            im2col(in.data() + n * in_plane, c_, h_, w_, k_, pad_, stride_, oh_, ow_, col.data());
            gemm(false, true, f_, ckk, plane, T(1), dout_n, plane, col.data(), plane, T(1),
                 dw.data(), ckk);
            gemm(true, false, ckk, plane, f_, T(1), weight_.data(), ckk, dout_n, plane, T(0),
                 dcol.data(), plane);
            col2im_add(dcol.data(), c_, h_, w_, k_, pad_, stride_, oh_, ow_,
                       din.data() + n * in_plane);
        }
        return din;
    }

    std::vector<Tensor<T>*> params() override { return {&weight_, &bias_}; }
    std::vector<const Tensor<T>*> params() const override { return {&weight_, &bias_}; }
    std::vector<std::pair<std::string, Tensor<T>*>> state() override {
        return {{"weight", &weight_}, {"bias", &bias_}};
    }

private:
    Tensor<T> run(const Tensor<T>& in) const {
        const std::int64_t n_count = in.dim(0);
        const std::int64_t ckk = c_ * k_ * k_;
        const std::int64_t plane = oh_ * ow_;
        Tensor<T> out(with_batch(n_count, this->out_shape_));
        std::vector<T> col(static_cast<std::size_t>(ckk * plane));
        for (std::int64_t n = 0; n < n_count; ++n) {
            im2col(in.data() + n * c_ * h_ * w_, c_, h_, w_, k_, pad_, stride_, oh_, ow_,
                   col.data());
            T* out_n = out.data() + n * f_ * plane;
            gemm(false, false, f_, plane, ckk, T(1), weight_.data(), ckk, col.data(), plane, T(0),
                 out_n, plane);
            for (std::int64_t f = 0; f < f_; ++f) {
                const T b = bias_[f];
                T* row = out_n + f * plane;
                for (std::int64_t i = 0; i < plane; ++i) row[i] += b;
            }
        }
        return out;
    }

    std::int64_t c_ = 0, h_ = 0, w_ = 0;
    std::int64_t f_ = 0, k_ = 0, stride_ = 1, pad_ = 0, oh_ = 0, ow_ = 0;
    Tensor<T> weight_;
    Tensor<T> bias_;
};

// ---------------------------------------------------------------------------
// BatchNorm over {N,H,W} per channel; eps 1e-5, running-stat momentum 0.9,
// biased variance throughout.

template <typename T>
class BatchNormLayer final : public Layer<T> {
public:
    explicit BatchNormLayer(const Shape& in_shape) {
        if (in_shape.size() != 3) {
            throw NnError("BatchNorm expects a {C,H,W} input, got " + shape_to_string(in_shape));
        }
        c_ = in_shape[0];
        h_ = in_shape[1];
        w_ = in_shape[2];
        this->in_shape_ = in_shape;
        this->out_shape_ = in_shape;
        gamma_ = Tensor<T>::full({c_}, T(1));
        beta_ = Tensor<T>({c_});
        running_mean_ = Tensor<T>({c_});
        running_var_ = Tensor<T>::full({c_}, T(1));
    }

    LayerKind kind() const override { return LayerKind::BatchNorm; }
    std::string describe() const override { return "BatchNorm"; }

    Tensor<T> infer(const Tensor<T>& in) const override {
        const std::int64_t n_count = in.dim(0);
        const std::int64_t plane = h_ * w_;
        Tensor<T> out(in.shape());
        for (std::int64_t c = 0; c < c_; ++c) {
            const double inv = 1.0 / std::sqrt(static_cast<double>(running_var_[c]) + kEps);
            const double g = gamma_[c];
            const double b = beta_[c];
            const double m = running_mean_[c];
            for (std::int64_t n = 0; n < n_count; ++n) {
                const T* src = in.data() + (n * c_ + c) * plane;
                T* dst = out.data() + (n * c_ + c) * plane;
                for (std::int64_t i = 0; i < plane; ++i) {
                    dst[i] = static_cast<T>(g * ((src[i] - m) * inv) + b);
                }
            }
        }
        return out;
    }

    Tensor<T> train_forward(const Tensor<T>& in, LayerCache<T>& cache) override {
        const std::int64_t n_count = in.dim(0);
        const std::int64_t plane = h_ * w_;
        const double m_count = static_cast<double>(n_count * plane);
        cache.input = in;
        cache.aux = Tensor<T>(in.shape());
        cache.aux_vec.assign(static_cast<std::size_t>(c_), T(0));
        Tensor<T> out(in.shape());
        for (std::int64_t c = 0; c < c_; ++c) {
            double sum = 0;
            for (std::int64_t n = 0; n < n_count; ++n) {
                const T* src = in.data() + (n * c_ + c) * plane;
                for (std::int64_t i = 0; i < plane; ++i) sum += src[i];
            }
            const double mean = sum / m_count;
            double sumsq = 0;
            for (std::int64_t n = 0; n < n_count; ++n) {
                const T* src = in.data() + (n * c_ + c) * plane;
                for (std::int64_t i = 0; i < plane; ++i) {
                    const double d = src[i] - mean;
                    sumsq += d * d;
                }
            }
            const double var = sumsq / m_count;
            const double inv = 1.0 / std::sqrt(var + kEps);
            cache.aux_vec[static_cast<std::size_t>(c)] = static_cast<T>(inv);
            const double g = gamma_[c];
            const double b = beta_[c];
            for (std::int64_t n = 0; n < n_count; ++n) {
                const T* src = in.data() + (n * c_ + c) * plane;
                T* xhat = cache.aux.data() + (n * c_ + c) * plane;
                T* dst = out.data() + (n * c_ + c) * plane;
                for (std::int64_t i = 0; i < plane; ++i) {
                    const double xh = (src[i] - mean) * inv;
                    xhat[i] = static_cast<T>(xh);
                    dst[i] = static_cast<T>(g * xh + b);
                }
            }
            running_mean_[c] = static_cast<T>(kMomentum * running_mean_[c] + (1.0 - kMomentum) * mean);
            running_var_[c] = static_cast<T>(kMomentum * running_var_[c] + (1.0 - kMomentum) * var);
        }
        return out;
    }

    Tensor<T> backward(const LayerCache<T>& cache, const Tensor<T>& dout,
                       std::vector<Tensor<T>>& grads) const override {
        const Tensor<T>& xhat = cache.aux;
        const std::int64_t n_count = cache.input.dim(0);
        const std::int64_t plane = h_ * w_;
        const double m_count = static_cast<double>(n_count * plane);
        Tensor<T> din(cache.input.shape());
        Tensor<T>& dgamma = grads[0];
        Tensor<T>& dbeta = grads[1];
        for (std::int64_t c = 0; c < c_; ++c) {
            double sum_dy = 0;
            double sum_dy_xhat = 0;
            for (std::int64_t n = 0; n < n_count; ++n) {
                const T* dy = dout.data() + (n * c_ + c) * plane;
                const T* xh = xhat.data() + (n * c_ + c) * plane;
                for (std::int64_t i = 0; i < plane; ++i) {
                    sum_dy += dy[i];
                    sum_dy_xhat += static_cast<double>(dy[i]) * xh[i];
                }
            }
            dgamma[c] += static_cast<T>(sum_dy_xhat);
            dbeta[c] += static_cast<T>(sum_dy);
            const double coef =
                static_cast<double>(gamma_[c]) * cache.aux_vec[static_cast<std::size_t>(c)] / m_count;
            for (std::int64_t n = 0; n < n_count; ++n) {
                const T* dy = dout.data() + (n * c_ + c) * plane;
                const T* xh = xhat.data() + (n * c_ + c) * plane;
                T* dst = din.data() + (n * c_ + c) * plane;
                for (std::int64_t i = 0; i < plane; ++i) {
                    dst[i] = static_cast<T>(coef * (m_count * dy[i] - sum_dy - xh[i] * sum_dy_xhat));
                }
            }
        }
        return din;
    }

    std::vector<Tensor<T>*> params() override { return {&gamma_, &beta_}; }
    std::vector<const Tensor<T>*> params() const override { return {&gamma_, &beta_}; }
    std::vector<std::pair<std::string, Tensor<T>*>> state() override {
        return {{"gamma", &gamma_},
                {"beta", &beta_},
                {"running_mean", &running_mean_},
                {"running_var", &running_var_}};
    }

private:
    static constexpr double kEps = 1e-5;
    static constexpr double kMomentum = 0.9;

    std::int64_t c_ = 0, h_ = 0, w_ = 0;
    Tensor<T> gamma_, beta_, running_mean_, running_var_;
};

// ---------------------------------------------------------------------------
// Tanh

template <typename T>
class TanhLayer final : public Layer<T> {
public:
    explicit TanhLayer(const Shape& in_shape) {
        this->in_shape_ = in_shape;
        this->out_shape_ = in_shape;
    }

    LayerKind kind() const override { return LayerKind::Tanh; }
    std::string describe() const override { return "Tanh"; }

    Tensor<T> infer(const Tensor<T>& in) const override { return run(in); }

    Tensor<T> train_forward(const Tensor<T>& in, LayerCache<T>& cache) override {
        Tensor<T> out = run(in);
        cache.aux = out;
        return out;
    }

    Tensor<T> backward(const LayerCache<T>& cache, const Tensor<T>& dout,
                       std::vector<Tensor<T>>&) const override {
        const Tensor<T>& y = cache.aux;
        Tensor<T> din(dout.shape());
        for (std::int64_t i = 0; i < dout.numel(); ++i) {
            din[i] = dout[i] * (T(1) - y[i] * y[i]);
        }
        return din;
    }

private:
    Tensor<T> run(const Tensor<T>& in) const {
        Tensor<T> out(in.shape());
        for (std::int64_t i = 0; i < in.numel(); ++i) out[i] = std::tanh(in[i]);
        return out;
    }
};

// ---------------------------------------------------------------------------
// MaxPool, no padding; gradient routes to the first maximal position per
// window (row-major scan), so gradient mass is conserved per window.

template <typename T>
class MaxPoolLayer final : public Layer<T> {
public:
    MaxPoolLayer(const LayerSpec& spec, const Shape& in_shape) {
        if (in_shape.size() != 3) {
            throw NnError("MaxPool expects a {C,H,W} input, got " + shape_to_string(in_shape));
        }
        c_ = in_shape[0];
        h_ = in_shape[1];
        w_ = in_shape[2];
        win_ = spec.pool;
        stride_ = spec.pool_stride;
        if (h_ < win_ || w_ < win_) {
            throw NnError("MaxPool window " + std::to_string(win_) + " exceeds input " +
                          shape_to_string(in_shape));
        }
        oh_ = (h_ - win_) / stride_ + 1;
        ow_ = (w_ - win_) / stride_ + 1;
        this->in_shape_ = in_shape;
        this->out_shape_ = {c_, oh_, ow_};
    }

    LayerKind kind() const override { return LayerKind::MaxPool; }
    std::string describe() const override {
        return "MaxPool " + std::to_string(win_) + "x" + std::to_string(win_) + "/" +
               std::to_string(stride_);
    }

    Tensor<T> infer(const Tensor<T>& in) const override { return run(in, nullptr); }

    Tensor<T> train_forward(const Tensor<T>& in, LayerCache<T>& cache) override {
        return run(in, &cache.indices);
    }

    Tensor<T> backward(const LayerCache<T>& cache, const Tensor<T>& dout,
                       std::vector<Tensor<T>>&) const override {
        const std::int64_t n_count = dout.dim(0);
        Tensor<T> din(with_batch(n_count, this->in_shape_));
        for (std::int64_t o = 0; o < dout.numel(); ++o) {
            din[cache.indices[static_cast<std::size_t>(o)]] += dout[o];
        }
        return din;
    }

private:
    Tensor<T> run(const Tensor<T>& in, std::vector<std::int64_t>* indices) const {
        const std::int64_t n_count = in.dim(0);
        Tensor<T> out(with_batch(n_count, this->out_shape_));
        if (indices) indices->assign(static_cast<std::size_t>(out.numel()), 0);
        std::int64_t o = 0;
        for (std::int64_t n = 0; n < n_count; ++n) {
            for (std::int64_t c = 0; c < c_; ++c) {
                const std::int64_t plane_base = (n * c_ + c) * h_ * w_;
                for (std::int64_t oh = 0; oh < oh_; ++oh) {
                    for (std::int64_t ow = 0; ow < ow_; ++ow, ++o) {
                        T best = -std::numeric_limits<T>::infinity();
                        std::int64_t best_idx = -1;
                        for (std::int64_t ki = 0; ki < win_; ++ki) {
                            const std::int64_t ih = oh * stride_ + ki;
                            for (std::int64_t kj = 0; kj < win_; ++kj) {
                                const std::int64_t iw = ow * stride_ + kj;
                                const std::int64_t idx = plane_base + ih * w_ + iw;
                                const T v = in[idx];
                                if (v > best) {
                                    best = v;
                                    best_idx = idx;
                                }
                            }
                        }
                        out[o] = best;
                        if (indices) (*indices)[static_cast<std::size_t>(o)] = best_idx;
                    }
                }
            }
        }
        return out;
    }

    std::int64_t c_ = 0, h_ = 0, w_ = 0;
    std::int64_t win_ = 2, stride_ = 2, oh_ = 0, ow_ = 0;
};

// ---------------------------------------------------------------------------
// Dense (fully connected); flattens any input rank.

template <typename T>
class DenseLayer final : public Layer<T> {
public:
    DenseLayer(const LayerSpec& spec, const Shape& in_shape, std::mt19937_64& rng) {
        in_features_ = shape_numel(in_shape);
        out_features_ = spec.neurons;
        this->in_shape_ = in_shape;
        this->out_shape_ = {out_features_};
        weight_ = Tensor<T>({out_features_, in_features_});
        bias_ = Tensor<T>({out_features_});
        xavier_fill(weight_, in_features_, out_features_, rng);
    }

    LayerKind kind() const override { return LayerKind::Dense; }
    std::string describe() const override { return "Dense " + std::to_string(out_features_); }

    void check_input(const Tensor<T>& batch, std::size_t layer_index) const override {
        if (batch.rank() < 2 || batch.numel() / batch.dim(0) != in_features_) {
            throw ShapeMismatch("layer " + std::to_string(layer_index) + " (" + describe() +
                                "): expected per-sample size " + std::to_string(in_features_) +
                                ", got " + shape_to_string(batch.shape()));
        }
    }

    Tensor<T> infer(const Tensor<T>& in) const override { return run(in); }

    Tensor<T> train_forward(const Tensor<T>& in, LayerCache<T>& cache) override {
        cache.input = in;
        return run(in);
    }

    Tensor<T> backward(const LayerCache<T>& cache, const Tensor<T>& dout,
                       std::vector<Tensor<T>>& grads) const override {
        const Tensor<T>& in = cache.input;
        const std::int64_t n_count = in.dim(0);
        Tensor<T> din(in.shape());
        gemm(false, false, n_count, in_features_, out_features_, T(1), dout.data(), out_features_,
             weight_.data(), in_features_, T(0), din.data(), in_features_);
        gemm(true, false, out_features_, in_features_, n_count, T(1), dout.data(), out_features_,
             in.data(), in_features_, T(1), grads[0].data(), in_features_);
        Tensor<T>& db = grads[1];
        for (std::int64_t n = 0; n < n_count; ++n) {
            const T* row = dout.data() + n * out_features_;
            for (std::int64_t o = 0; o < out_features_; ++o) db[o] += row[o];
        }
        return din;
    }

    std::vector<Tensor<T>*> params() override { return {&weight_, &bias_}; }
    std::vector<const Tensor<T>*> params() const override { return {&weight_, &bias_}; }
    std::vector<std::pair<std::string, Tensor<T>*>> state() override {
        return {{"weight", &weight_}, {"bias", &bias_}};
    }

private:
    Tensor<T> run(const Tensor<T>& in) const {
        const std::int64_t n_count = in.dim(0);
        Tensor<T> out({n_count, out_features_});
        gemm(false, true, n_count, out_features_, in_features_, T(1), in.data(), in_features_,
             weight_.data(), in_features_, T(0), out.data(), out_features_);
        for (std::int64_t n = 0; n < n_count; ++n) {
            T* row = out.data() + n * out_features_;
            for (std::int64_t o = 0; o < out_features_; ++o) row[o] += bias_[o];
        }
        return out;
    }

    std::int64_t in_features_ = 0, out_features_ = 0;
    Tensor<T> weight_;
    Tensor<T> bias_;
};

// ---------------------------------------------------------------------------
// SoftmaxOutput: row-wise softmax with max subtraction.

template <typename T>
class SoftmaxLayer final : public Layer<T> {
public:
    explicit SoftmaxLayer(const Shape& in_shape) {
        if (in_shape.size() != 1) {
            throw NnError("SoftmaxOutput expects a {K} input, got " + shape_to_string(in_shape));
        }
        this->in_shape_ = in_shape;
        this->out_shape_ = in_shape;
    }

    LayerKind kind() const override { return LayerKind::SoftmaxOutput; }
    std::string describe() const override { return "Softmax"; }

    Tensor<T> infer(const Tensor<T>& in) const override { return run(in); }

    Tensor<T> train_forward(const Tensor<T>& in, LayerCache<T>& cache) override {
        Tensor<T> out = run(in);
        cache.aux = out;
        return out;
    }

    Tensor<T> backward(const LayerCache<T>& cache, const Tensor<T>& dout,
                       std::vector<Tensor<T>>&) const override {
        const Tensor<T>& y = cache.aux;
        const std::int64_t n_count = dout.dim(0);
        const std::int64_t k = this->in_shape_[0];
        Tensor<T> din(dout.shape());
        for (std::int64_t n = 0; n < n_count; ++n) {
            const T* yr = y.data() + n * k;
            const T* dy = dout.data() + n * k;
            T* dst = din.data() + n * k;
            double dot = 0;
            for (std::int64_t i = 0; i < k; ++i) dot += static_cast<double>(dy[i]) * yr[i];
            for (std::int64_t i = 0; i < k; ++i) {
                dst[i] = static_cast<T>(yr[i] * (dy[i] - dot));
            }
        }
        return din;
    }

private:
    Tensor<T> run(const Tensor<T>& in) const {
        const std::int64_t n_count = in.dim(0);
        const std::int64_t k = this->in_shape_[0];
        Tensor<T> out(in.shape());
        for (std::int64_t n = 0; n < n_count; ++n) {
            const T* src = in.data() + n * k;
            std::vector<T> row(src, src + k);
            const std::vector<T> p = softmax(row);
            std::copy(p.begin(), p.end(), out.data() + n * k);
        }
        return out;
    }
};

}  // namespace

// ---------------------------------------------------------------------------
// Layer base: default exact shape check.

template <typename T>
void Layer<T>::check_input(const Tensor<T>& batch, std::size_t layer_index) const {
    bool ok = batch.rank() == in_shape_.size() + 1;
    if (ok) {
        for (std::size_t r = 0; r < in_shape_.size(); ++r) {
            ok = ok && batch.shape()[r + 1] == in_shape_[r];
        }
    }
    if (!ok) {
        throw ShapeMismatch("layer " + std::to_string(layer_index) + " (" + describe() +
                            "): expected [N," + shape_to_string(in_shape_).substr(1) + ", got " +
                            shape_to_string(batch.shape()));
    }
}

// ---------------------------------------------------------------------------
// Net

template <typename T>
Net<T> Net<T>::build(const std::vector<LayerSpec>& specs, Shape input_shape, std::uint64_t seed) {
    if (specs.empty()) throw NnError("cannot build an empty network");
    for (const auto& s : specs) s.validate();
    Net net;
    net.in_shape_ = input_shape;
    auto rng = make_engine(seed);
    Shape cur = std::move(input_shape);
    for (const auto& spec : specs) {
        std::unique_ptr<Layer<T>> layer;
        switch (spec.kind) {
            case LayerKind::Conv:
                layer = std::make_unique<ConvLayer<T>>(spec, cur, rng);
                break;
            case LayerKind::BatchNorm:
                layer = std::make_unique<BatchNormLayer<T>>(cur);
                break;
            case LayerKind::Tanh:
                layer = std::make_unique<TanhLayer<T>>(cur);
                break;
            case LayerKind::MaxPool:
                layer = std::make_unique<MaxPoolLayer<T>>(spec, cur);
                break;
            case LayerKind::Dense:
                layer = std::make_unique<DenseLayer<T>>(spec, cur, rng);
                break;
            case LayerKind::SoftmaxOutput:
                layer = std::make_unique<SoftmaxLayer<T>>(cur);
                break;
        }
        cur = layer->output_shape();
        net.layers_.push_back(std::move(layer));
    }
    return net;
}

template <typename T>
Tensor<T> Net<T>::infer(const Tensor<T>& batch) const {
    Tensor<T> x = batch;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        layers_[i]->check_input(x, i);
        x = layers_[i]->infer(x);
    }
    return x;
}

template <typename T>
Tensor<T> Net<T>::train_forward(const Tensor<T>& batch, ForwardCache<T>& cache) {
    cache.net_tag = this;
    cache.valid = false;
    cache.layers.clear();
    cache.layers.resize(layers_.size());
    Tensor<T> x = batch;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        layers_[i]->check_input(x, i);
        x = layers_[i]->train_forward(x, cache.layers[i]);
    }
    cache.valid = true;
    return x;
}

template <typename T>
Tensor<T> Net<T>::backward(ForwardCache<T>& cache, const Tensor<T>& dout, GradSet<T>& grads) const {
    if (cache.net_tag != this || !cache.valid || cache.layers.size() != layers_.size()) {
        throw StaleCache("backward called without a matching train_forward");
    }
    if (grads.size() != layers_.size()) {
        throw NnError("gradient set has " + std::to_string(grads.size()) + " entries for " +
                      std::to_string(layers_.size()) + " layers");
    }
    const std::int64_t n_count = dout.dim(0);
    {
        const Shape want = with_batch(n_count, layers_.back()->output_shape());
        if (dout.shape() != want) {
            throw ShapeMismatch("loss gradient: expected " + shape_to_string(want) + ", got " +
                                shape_to_string(dout.shape()));
        }
    }
    Tensor<T> dx = dout;
    for (std::size_t i = layers_.size(); i-- > 0;) {
        dx = layers_[i]->backward(cache.layers[i], dx, grads[i]);
        if (i > 0) {
            const Shape want = with_batch(n_count, layers_[i - 1]->output_shape());
            if (dx.shape() != want) dx = dx.reshaped(want);
        }
    }
    cache.valid = false;  // one backward per forward
    return dx;
}

template <typename T>
GradSet<T> Net<T>::zero_grads() const {
    GradSet<T> grads(layers_.size());
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        for (const Tensor<T>* p : layers_[i]->params()) {
            grads[i].push_back(Tensor<T>(p->shape()));
        }
    }
    return grads;
}

template <typename T>
std::int64_t Net<T>::parameter_count() const {
    std::int64_t total = 0;
    for (const auto& layer : layers_) {
        for (const Tensor<T>* p : const_cast<const Layer<T>&>(*layer).params()) total += p->numel();
    }
    return total;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> Net<T>::state() {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        for (auto& [name, tensor] : layers_[i]->state()) {
            out.emplace_back("layer" + std::to_string(i) + "." + name, tensor);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Softmax / cross-entropy

template <typename T>
std::vector<T> softmax(const std::vector<T>& logits) {
    if (logits.empty()) throw NnError("softmax of an empty vector");
    double m = -std::numeric_limits<double>::infinity();
    for (T v : logits) m = std::max(m, static_cast<double>(v));
    std::vector<double> e(logits.size());
    double s = 0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        e[i] = std::exp(static_cast<double>(logits[i]) - m);
        s += e[i];
    }
    std::vector<T> out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) out[i] = static_cast<T>(e[i] / s);
    return out;
}

template <typename T>
std::pair<double, Tensor<T>> softmax_xent(const Tensor<T>& logits, int label) {
    if (logits.rank() != 1) {
        throw NnError("softmax_xent expects a rank-1 logits tensor, got " +
                      shape_to_string(logits.shape()));
    }
    const std::int64_t k = logits.numel();
    if (k < 2) throw NnError("softmax_xent needs at least 2 classes, got " + std::to_string(k));
    if (label < 0 || label >= k) {
        throw LabelOutOfRange("label " + std::to_string(label) + " outside [0," +
                              std::to_string(k) + ")");
    }
    double m = -std::numeric_limits<double>::infinity();
    for (std::int64_t i = 0; i < k; ++i) m = std::max(m, static_cast<double>(logits[i]));
    std::vector<double> e(static_cast<std::size_t>(k));
    double s = 0;
    for (std::int64_t i = 0; i < k; ++i) {
        e[static_cast<std::size_t>(i)] = std::exp(static_cast<double>(logits[i]) - m);
        s += e[static_cast<std::size_t>(i)];
    }
    const double loss = -(static_cast<double>(logits[label]) - m - std::log(s));
    Tensor<T> grad({k});
    for (std::int64_t i = 0; i < k; ++i) {
        const double p = e[static_cast<std::size_t>(i)] / s;
        grad[i] = static_cast<T>(p - (i == label ? 1.0 : 0.0));
    }
    return {loss, std::move(grad)};
}

template class Layer<float>;
template class Layer<double>;
template class Net<float>;
template class Net<double>;
template std::vector<float> softmax<float>(const std::vector<float>&);
template std::vector<double> softmax<double>(const std::vector<double>&);
template std::pair<double, Tensor<float>> softmax_xent<float>(const Tensor<float>&, int);
template std::pair<double, Tensor<double>> softmax_xent<double>(const Tensor<double>&, int);

}  // namespace smsi
