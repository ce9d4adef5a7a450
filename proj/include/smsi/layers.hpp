#pragma once

// Layer set required by the two-stage pipeline: convolution, batch
// normalization, tanh, max pooling, fully connected, softmax.  Reverse-mode
// gradients are implemented per layer; the whole graph instantiates for
// float (training) and double (gradient-check mode).

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "smsi/tensor.hpp"

namespace smsi {

enum class LayerKind { Conv, BatchNorm, Tanh, MaxPool, Dense, SoftmaxOutput };

struct LayerSpec {
    LayerKind kind = LayerKind::Tanh;
    int filters = 0;      // Conv
    int kernel = 0;       // Conv (odd; "same" zero padding)
    int stride = 1;       // Conv
    int neurons = 0;      // Dense
    int pool = 2;         // MaxPool window
    int pool_stride = 2;  // MaxPool stride

    static LayerSpec conv(int filters, int kernel, int stride = 1);
    static LayerSpec batch_norm();
    static LayerSpec tanh();
    static LayerSpec max_pool(int window = 2, int stride = 2);
    static LayerSpec dense(int neurons);
    static LayerSpec softmax_output();

    void validate() const;  // throws NnError on out-of-range fields
};

// Per-layer state captured during a training forward pass.
template <typename T>
struct LayerCache {
    Tensor<T> input;                     // layer input (with batch dim)
    Tensor<T> aux;                       // tanh/softmax output, BN x-hat
    std::vector<T> aux_vec;              // BN per-channel inverse stddev
    std::vector<std::int64_t> indices;   // maxpool argmax routing
};

template <typename T>
struct ForwardCache {
    const void* net_tag = nullptr;
    bool valid = false;
    std::vector<LayerCache<T>> layers;
};

template <typename T>
class Layer {
public:
    virtual ~Layer() = default;

    virtual LayerKind kind() const = 0;
    virtual std::string describe() const = 0;

    const Shape& input_shape() const { return in_shape_; }    // without batch dim
    const Shape& output_shape() const { return out_shape_; }  // without batch dim

    // Inference forward; BatchNorm uses running statistics.  Safe for
    // concurrent callers on an immutable layer.
    virtual Tensor<T> infer(const Tensor<T>& in) const = 0;

    // Training forward; BatchNorm uses batch statistics and updates its
    // running estimates.  Caches whatever backward needs.
    virtual Tensor<T> train_forward(const Tensor<T>& in, LayerCache<T>& cache) = 0;

    // Returns dL/dIn and accumulates (adds into) parameter gradients in
    // `grads`, which must match params() in order and shape.
    virtual Tensor<T> backward(const LayerCache<T>& cache, const Tensor<T>& dout,
                               std::vector<Tensor<T>>& grads) const = 0;

    // Trainable parameters, in a fixed documented order.
    virtual std::vector<Tensor<T>*> params() { return {}; }
    virtual std::vector<const Tensor<T>*> params() const { return {}; }

    // All persistent state (trainable parameters plus buffers such as
    // BatchNorm running statistics) with stable names, for serialization.
    virtual std::vector<std::pair<std::string, Tensor<T>*>> state() { return {}; }

    // Validates a batch against this layer's expected input shape; the index
    // is reported in the ShapeMismatch message.  Dense accepts any batch
    // whose flattened per-sample size matches its input width.
    virtual void check_input(const Tensor<T>& batch, std::size_t layer_index) const;

protected:
    Shape in_shape_;
    Shape out_shape_;
};

template <typename T>
using GradSet = std::vector<std::vector<Tensor<T>>>;

template <typename T>
class Net {
public:
    Net() = default;
    Net(Net&&) noexcept = default;
    Net& operator=(Net&&) noexcept = default;

    // Builds layers per `specs` with shape inference starting from
    // `input_shape` (per-sample, e.g. {C,H,W}).  Conv/Dense weights are
    // Xavier-uniform; draws come from a single seeded engine in layer order,
    // so a given seed yields bit-identical parameters.
    static Net build(const std::vector<LayerSpec>& specs, Shape input_shape, std::uint64_t seed);

    // Forward a batch [N, ...input_shape].  Throws ShapeMismatch with the
    // offending layer index on a shape error.
    Tensor<T> infer(const Tensor<T>& batch) const;
    Tensor<T> train_forward(const Tensor<T>& batch, ForwardCache<T>& cache);

    // Reverse-mode pass.  `grads` must come from zero_grads() (or hold the
    // sums of previous calls: gradients accumulate).  Consumes the cache;
    // calling again without a fresh train_forward throws StaleCache.
    Tensor<T> backward(ForwardCache<T>& cache, const Tensor<T>& dout, GradSet<T>& grads) const;

    GradSet<T> zero_grads() const;

    std::size_t num_layers() const { return layers_.size(); }
    Layer<T>& layer(std::size_t i) { return *layers_[i]; }
    const Layer<T>& layer(std::size_t i) const { return *layers_[i]; }

    const Shape& input_shape() const { return in_shape_; }
    const Shape& output_shape() const { return layers_.back()->output_shape(); }

    std::int64_t parameter_count() const;

    // Persistent tensors as "layer<i>.<name>" entries, serialization order.
    std::vector<std::pair<std::string, Tensor<T>*>> state();

private:
    std::vector<std::unique_ptr<Layer<T>>> layers_;
    Shape in_shape_;
};

// Numerically safe softmax of a logit vector (max subtraction, double
// accumulation).  Output entries lie in (0,1) and sum to 1.
template <typename T>
std::vector<T> softmax(const std::vector<T>& logits);

// loss = -log softmax(logits)[label]; gradient = softmax(logits) - one_hot.
// Throws LabelOutOfRange, or NnError if logits has fewer than 2 entries.
template <typename T>
std::pair<double, Tensor<T>> softmax_xent(const Tensor<T>& logits, int label);

extern template class Layer<float>;
extern template class Layer<double>;
extern template class Net<float>;
extern template class Net<double>;

}  // namespace smsi
