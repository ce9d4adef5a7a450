#pragma once

// Stochastic gradient descent with step-decay learning-rate schedules and
// classic momentum (v <- mu*v - lr*g; w <- w + v).

#include <cstdint>
#include <vector>

#include "smsi/layers.hpp"

namespace smsi {

struct SgdSchedule {
    double initial_lr = 0.001;
    double decay_factor = 0.5;  // in (0, 1]
    int decay_every = 3;        // epochs
    int total_epochs = 50;
    double momentum = 0.9;  // extrapolated default; configurable
    int batch_size = 32;

    // lr at epoch e = initial_lr * decay_factor^floor(e / decay_every)
    double lr_at(int epoch) const;
    void validate() const;

    // Stage-1 schedule: 0.001 halved every 3 epochs, 50 epochs.
    static SgdSchedule stage1();
    // Stage-2 schedule: 0.005 decayed by 0.7 every 3 epochs, 60 epochs.
    static SgdSchedule stage2();
};

template <typename T>
struct SampleSet {
    Tensor<T> inputs;         // [N, ...per-sample shape]
    std::vector<int> labels;  // length N

    std::int64_t size() const { return static_cast<std::int64_t>(labels.size()); }
    void validate() const;
};

struct EpochStats {
    double mean_loss = 0;
    double accuracy = 0;
    double lr = 0;
    std::int64_t samples = 0;
};

template <typename T>
struct SgdState {
    GradSet<T> velocity;  // lazily sized to the net's parameters
};

// Runs one epoch: a seeded permutation fixes the mini-batch order, gradients
// are means over each mini-batch, updates use momentum at lr_at(epoch).
// Deterministic: same net, data, schedule, epoch and seed reproduce the
// parameter trajectory bit-for-bit in a fixed-thread configuration.
template <typename T>
EpochStats sgd_epoch(Net<T>& net, const SampleSet<T>& data, SgdState<T>& state,
                     const SgdSchedule& schedule, int epoch, std::uint64_t seed);

extern template struct SampleSet<float>;
extern template struct SampleSet<double>;
extern template EpochStats sgd_epoch<float>(Net<float>&, const SampleSet<float>&, SgdState<float>&,
                                            const SgdSchedule&, int, std::uint64_t);
extern template EpochStats sgd_epoch<double>(Net<double>&, const SampleSet<double>&,
                                             SgdState<double>&, const SgdSchedule&, int,
                                             std::uint64_t);

}  // namespace smsi
