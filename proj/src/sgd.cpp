#include "smsi/sgd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "smsi/errors.hpp"
#include "smsi/rng.hpp"

namespace smsi {

double SgdSchedule::lr_at(int epoch) const {
    return initial_lr * std::pow(decay_factor, epoch / decay_every);
}

void SgdSchedule::validate() const {
    if (initial_lr <= 0) throw NnError("initial_lr must be positive");
    if (decay_factor <= 0 || decay_factor > 1) throw NnError("decay_factor must be in (0,1]");
    if (decay_every < 1) throw NnError("decay_every must be >= 1");
    if (total_epochs < 1) throw NnError("total_epochs must be >= 1");
    if (momentum < 0 || momentum >= 1) throw NnError("momentum must be in [0,1)");
    if (batch_size < 1) throw NnError("batch_size must be >= 1");
}

SgdSchedule SgdSchedule::stage1() {
    SgdSchedule s;
    s.initial_lr = 0.001;
    s.decay_factor = 0.5;
    s.decay_every = 3;
    s.total_epochs = 50;
    return s;
}

SgdSchedule SgdSchedule::stage2() {
    SgdSchedule s;
    s.initial_lr = 0.005;
    s.decay_factor = 0.7;
    s.decay_every = 3;
    s.total_epochs = 60;
    return s;
}

template <typename T>
void SampleSet<T>::validate() const {
    if (labels.empty()) return;  // callers report EmptyDataset with context
    if (inputs.rank() < 2 || inputs.dim(0) != size()) {
        throw NnError("sample set has " + std::to_string(labels.size()) + " labels but inputs " +
                      shape_to_string(inputs.shape()));
    }
}

template <typename T>
EpochStats sgd_epoch(Net<T>& net, const SampleSet<T>& data, SgdState<T>& state,
                     const SgdSchedule& schedule, int epoch, std::uint64_t seed) {
    schedule.validate();
    data.validate();
    const std::int64_t n = data.size();
    if (n == 0) throw EmptyDataset("sgd_epoch called with an empty dataset");
    if (epoch < 0 || epoch >= schedule.total_epochs) {
        throw NnError("epoch " + std::to_string(epoch) + " outside schedule of " +
                      std::to_string(schedule.total_epochs) + " epochs");
    }
    if (state.velocity.empty()) state.velocity = net.zero_grads();

    const double lr = schedule.lr_at(epoch);
    std::vector<std::int64_t> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    auto rng = make_engine(seed);
    std::shuffle(order.begin(), order.end(), rng);

    const std::int64_t sample_numel = data.inputs.numel() / n;
    Shape batch_shape = data.inputs.shape();

    double loss_sum = 0;
    std::int64_t correct = 0;
    for (std::int64_t start = 0; start < n; start += schedule.batch_size) {
        const std::int64_t b = std::min<std::int64_t>(schedule.batch_size, n - start);
        batch_shape[0] = b;
        Tensor<T> batch(batch_shape);
        std::vector<int> batch_labels(static_cast<std::size_t>(b));
        for (std::int64_t i = 0; i < b; ++i) {
            const std::int64_t src = order[static_cast<std::size_t>(start + i)];
            std::copy_n(data.inputs.data() + src * sample_numel, sample_numel,
                        batch.data() + i * sample_numel);
            batch_labels[static_cast<std::size_t>(i)] = data.labels[static_cast<std::size_t>(src)];
        }

        ForwardCache<T> cache;
        Tensor<T> logits = net.train_forward(batch, cache);
        const std::int64_t k = logits.dim(1);
        Tensor<T> dlogits({b, k});
        for (std::int64_t i = 0; i < b; ++i) {
            Tensor<T> row({k});
            std::copy_n(logits.data() + i * k, k, row.data());
            auto [loss, grad] = softmax_xent(row, batch_labels[static_cast<std::size_t>(i)]);
            loss_sum += loss;
            std::int64_t arg = 0;
            for (std::int64_t j = 1; j < k; ++j) {
                if (row[j] > row[arg]) arg = j;
            }
            if (arg == batch_labels[static_cast<std::size_t>(i)]) ++correct;
            for (std::int64_t j = 0; j < k; ++j) {
                dlogits.at2(i, j) = grad[j] / static_cast<T>(b);
            }
        }

        GradSet<T> grads = net.zero_grads();
        net.backward(cache, dlogits, grads);

        for (std::size_t li = 0; li < net.num_layers(); ++li) {
            auto params = net.layer(li).params();
            for (std::size_t pi = 0; pi < params.size(); ++pi) {
                Tensor<T>& v = state.velocity[li][pi];
                const Tensor<T>& g = grads[li][pi];
                Tensor<T>& w = *params[pi];
                for (std::int64_t j = 0; j < w.numel(); ++j) {
                    v[j] = static_cast<T>(schedule.momentum * v[j] - lr * g[j]);
                    w[j] += v[j];
                }
            }
        }
    }

    EpochStats stats;
    stats.mean_loss = loss_sum / static_cast<double>(n);
    stats.accuracy = static_cast<double>(correct) / static_cast<double>(n);
    stats.lr = lr;
    stats.samples = n;
    return stats;
}

template struct SampleSet<float>;
template struct SampleSet<double>;
template EpochStats sgd_epoch<float>(Net<float>&, const SampleSet<float>&, SgdState<float>&,
                                     const SgdSchedule&, int, std::uint64_t);
template EpochStats sgd_epoch<double>(Net<double>&, const SampleSet<double>&, SgdState<double>&,
                                      const SgdSchedule&, int, std::uint64_t);

}  // namespace smsi
