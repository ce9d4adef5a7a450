// tensor_nn: layer forward/backward correctness against a finite-difference
// oracle, softmax/cross-entropy properties, SGD schedules and determinism.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <random>
#include <vector>

#include <doctest.h>

#include "smsi/errors.hpp"
#include "smsi/layers.hpp"
#include "smsi/rng.hpp"
#include "smsi/sgd.hpp"
#include "smsi/tensor.hpp"
#include "support/gradcheck.hpp"

using namespace smsi;
using smsi_test::max_fd_rel_err;
using smsi_test::rel_err;

namespace {

Shape with_batch(std::int64_t n, const Shape& per_sample) {
    Shape s{n};
    s.insert(s.end(), per_sample.begin(), per_sample.end());
    return s;
}

Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
    Tensor<double> t(std::move(shape));
    std::uniform_real_distribution<double> dist(-scale, scale);
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = dist(rng);
    return t;
}

// Input whose values are pairwise separated by >= 0.01, so a 1e-5
// perturbation cannot flip a max-pool argmax (finite differences stay valid).
Tensor<double> distinct_tensor(Shape shape, std::mt19937_64& rng) {
    Tensor<double> t(std::move(shape));
    std::vector<std::int64_t> vals(static_cast<std::size_t>(t.numel()));
    std::iota(vals.begin(), vals.end(), 0);
    std::shuffle(vals.begin(), vals.end(), rng);
    for (std::int64_t i = 0; i < t.numel(); ++i) {
        t[i] = 0.01 * static_cast<double>(vals[static_cast<std::size_t>(i)]);
    }
    return t;
}

// Scalar loss = dot(train_forward(x), direction).  Checks analytic d/dx and
// d/dparam for every parameter tensor against the finite-difference oracle.
double gradcheck_net(Net<double>& net, Tensor<double>& x, std::mt19937_64& rng) {
    const Shape out_shape = with_batch(x.dim(0), net.output_shape());
    Tensor<double> direction = random_tensor(out_shape, rng);

    const auto loss_fn = [&]() {
        ForwardCache<double> cache;
        const Tensor<double> out = net.train_forward(x, cache);
        double acc = 0;
        for (std::int64_t i = 0; i < out.numel(); ++i) acc += out[i] * direction[i];
        return acc;
    };

    ForwardCache<double> cache;
    net.train_forward(x, cache);
    GradSet<double> grads = net.zero_grads();
    const Tensor<double> din = net.backward(cache, direction, grads);

    double worst = max_fd_rel_err(loss_fn, x, din);
    for (std::size_t li = 0; li < net.num_layers(); ++li) {
        auto params = net.layer(li).params();
        for (std::size_t pi = 0; pi < params.size(); ++pi) {
            worst = std::max(worst, max_fd_rel_err(loss_fn, *params[pi], grads[li][pi]));
        }
    }
    return worst;
}

}  // namespace

TEST_CASE("tanh forward on zeros is zeros") {
    auto net = Net<float>::build({LayerSpec::tanh()}, {2, 3, 3}, 1);
    Tensor<float> x({2, 2, 3, 3});
    const Tensor<float> y = net.infer(x);
    for (std::int64_t i = 0; i < y.numel(); ++i) CHECK(y[i] == 0.0f);
}

TEST_CASE("1x1 conv with unit weight and zero bias is the identity") {
    auto net = Net<float>::build({LayerSpec::conv(1, 1)}, {1, 4, 4}, 7);
    auto params = net.layer(0).params();
    params[0]->fill(1.0f);  // single 1x1 filter
    params[1]->fill(0.0f);
    auto rng = make_engine(3);
    std::uniform_real_distribution<float> dist(-2.0f, 2.0f);
    Tensor<float> x({2, 1, 4, 4});
    for (std::int64_t i = 0; i < x.numel(); ++i) x[i] = dist(rng);
    const Tensor<float> y = net.infer(x);
    REQUIRE(y.shape() == x.shape());
    for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("2x2 max pool stride 2 on [[1,2],[3,4]] is [[4]]") {
    auto net = Net<float>::build({LayerSpec::max_pool()}, {1, 2, 2}, 1);
    Tensor<float> x({1, 1, 2, 2}, {1, 2, 3, 4});
    const Tensor<float> y = net.infer(x);
    REQUIRE(y.shape() == Shape{1, 1, 1, 1});
    CHECK(y[0] == 4.0f);
}

TEST_CASE("same padding preserves spatial size; pooling halves it") {
    auto net = Net<float>::build(
        {LayerSpec::conv(4, 7), LayerSpec::max_pool(), LayerSpec::conv(3, 5), LayerSpec::conv(2, 3),
         LayerSpec::conv(2, 1)},
        {1, 16, 16}, 11);
    CHECK(net.layer(0).output_shape() == Shape{4, 16, 16});
    CHECK(net.layer(1).output_shape() == Shape{4, 8, 8});
    CHECK(net.layer(2).output_shape() == Shape{3, 8, 8});
    CHECK(net.layer(3).output_shape() == Shape{2, 8, 8});
    CHECK(net.layer(4).output_shape() == Shape{2, 8, 8});
}

TEST_CASE("dense layer with scalar output: dL/dW equals the input") {
    // y = Wx + b with a single output neuron and upstream gradient 1: the
    // weight gradient is exactly x.
    auto net = Net<double>::build({LayerSpec::dense(1)}, {3}, 5);
    Tensor<double> x({1, 3}, {0.5, -1.25, 2.0});
    ForwardCache<double> cache;
    net.train_forward(x, cache);
    GradSet<double> grads = net.zero_grads();
    Tensor<double> dout({1, 1}, {1.0});
    net.backward(cache, dout, grads);
    REQUIRE(grads[0][0].numel() == 3);
    CHECK(grads[0][0][0] == 0.5);
    CHECK(grads[0][0][1] == -1.25);
    CHECK(grads[0][0][2] == 2.0);
    CHECK(grads[0][1][0] == 1.0);  // bias gradient
}

TEST_CASE("gradient check: conv layer (10 random draws)") {
    for (int draw = 0; draw < 10; ++draw) {
        auto rng = make_engine(100 + static_cast<std::uint64_t>(draw));
        auto net = Net<double>::build({LayerSpec::conv(3, 3)}, {2, 5, 5}, 200 + draw);
        Tensor<double> x = random_tensor({2, 2, 5, 5}, rng);
        CHECK(gradcheck_net(net, x, rng) < 1e-5);
    }
}

TEST_CASE("gradient check: batch norm layer (10 random draws)") {
    for (int draw = 0; draw < 10; ++draw) {
        auto rng = make_engine(300 + static_cast<std::uint64_t>(draw));
        auto net = Net<double>::build({LayerSpec::batch_norm()}, {3, 4, 4}, 400 + draw);
        // Non-trivial gamma/beta so their gradients are exercised away from 1/0.
        auto params = net.layer(0).params();
        for (Tensor<double>* p : params) {
            for (std::int64_t i = 0; i < p->numel(); ++i) {
                p->operator[](i) += 0.1 * static_cast<double>(i + 1);
            }
        }
        Tensor<double> x = random_tensor({3, 3, 4, 4}, rng);
        CHECK(gradcheck_net(net, x, rng) < 1e-5);
    }
}

TEST_CASE("gradient check: tanh layer (10 random draws)") {
    for (int draw = 0; draw < 10; ++draw) {
        auto rng = make_engine(500 + static_cast<std::uint64_t>(draw));
        auto net = Net<double>::build({LayerSpec::tanh()}, {2, 3, 3}, 600 + draw);
        Tensor<double> x = random_tensor({2, 2, 3, 3}, rng, 2.0);
        CHECK(gradcheck_net(net, x, rng) < 1e-5);
    }
}

TEST_CASE("gradient check: max pool layer (10 random draws, tie-safe inputs)") {
    for (int draw = 0; draw < 10; ++draw) {
        auto rng = make_engine(700 + static_cast<std::uint64_t>(draw));
        auto net = Net<double>::build({LayerSpec::max_pool()}, {2, 4, 4}, 800 + draw);
        Tensor<double> x = distinct_tensor({2, 2, 4, 4}, rng);
        CHECK(gradcheck_net(net, x, rng) < 1e-5);
    }
}

TEST_CASE("gradient check: dense layer (10 random draws)") {
    for (int draw = 0; draw < 10; ++draw) {
        auto rng = make_engine(900 + static_cast<std::uint64_t>(draw));
        auto net = Net<double>::build({LayerSpec::dense(4)}, {6}, 1000 + draw);
        Tensor<double> x = random_tensor({3, 6}, rng);
        CHECK(gradcheck_net(net, x, rng) < 1e-5);
    }
}

TEST_CASE("gradient check: softmax output layer (10 random draws)") {
    for (int draw = 0; draw < 10; ++draw) {
        auto rng = make_engine(1100 + static_cast<std::uint64_t>(draw));
        auto net = Net<double>::build({LayerSpec::softmax_output()}, {5}, 1200 + draw);
        Tensor<double> x = random_tensor({2, 5}, rng, 2.0);
        CHECK(gradcheck_net(net, x, rng) < 1e-5);
    }
}

TEST_CASE("gradient check: composite conv block with flatten into dense") {
    for (int draw = 0; draw < 3; ++draw) {
        auto rng = make_engine(1300 + static_cast<std::uint64_t>(draw));
        auto net = Net<double>::build({LayerSpec::conv(3, 3), LayerSpec::batch_norm(),
                                       LayerSpec::tanh(), LayerSpec::max_pool(),
                                       LayerSpec::dense(4), LayerSpec::tanh(), LayerSpec::dense(3)},
                                      {1, 8, 8}, 1400 + draw);
        Tensor<double> x = distinct_tensor({2, 1, 8, 8}, rng);
        CHECK(gradcheck_net(net, x, rng) < 1e-5);
    }
}

TEST_CASE("batch norm on an all-equal batch: outputs zero, gradients finite") {
    auto net = Net<double>::build({LayerSpec::batch_norm()}, {2, 3, 3}, 17);
    Tensor<double> x = Tensor<double>::full({4, 2, 3, 3}, 0.5);
    ForwardCache<double> cache;
    const Tensor<double> y = net.train_forward(x, cache);
    for (std::int64_t i = 0; i < y.numel(); ++i) CHECK(y[i] == 0.0);  // epsilon guard engaged

    auto rng = make_engine(18);
    Tensor<double> dout = random_tensor(y.shape(), rng);
    GradSet<double> grads = net.zero_grads();
    const Tensor<double> din = net.backward(cache, dout, grads);
    CHECK(din.all_finite());
    for (const auto& layer_grads : grads) {
        for (const auto& g : layer_grads) CHECK(g.all_finite());
    }
}

TEST_CASE("max pool gradient routes ties to the first position and conserves mass") {
    auto net = Net<double>::build({LayerSpec::max_pool()}, {1, 4, 4}, 1);
    Tensor<double> x = Tensor<double>::full({1, 1, 4, 4}, 1.0);  // every window ties
    ForwardCache<double> cache;
    net.train_forward(x, cache);
    Tensor<double> dout = Tensor<double>::full({1, 1, 2, 2}, 1.0);
    GradSet<double> grads = net.zero_grads();
    const Tensor<double> din = net.backward(cache, dout, grads);

    double total = 0;
    for (std::int64_t i = 0; i < din.numel(); ++i) total += din[i];
    CHECK(total == 4.0);  // mass conserved per window
    // First (row-major) element of each 2x2 window gets the gradient.
    for (std::int64_t h = 0; h < 4; ++h) {
        for (std::int64_t w = 0; w < 4; ++w) {
            const double expected = (h % 2 == 0 && w % 2 == 0) ? 1.0 : 0.0;
            CHECK(din.at4(0, 0, h, w) == expected);
        }
    }
}

TEST_CASE("softmax produces a probability vector") {
    auto rng = make_engine(23);
    std::uniform_real_distribution<double> dist(-30.0, 30.0);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> logits(7);
        for (auto& v : logits) v = dist(rng);
        const std::vector<double> p = softmax(logits);
        double sum = 0;
        for (double v : p) {
            CHECK(v > 0.0);
            CHECK(v < 1.0);
            sum += v;
        }
        CHECK(std::abs(sum - 1.0) < 1e-6);
    }
}

TEST_CASE("softmax_xent: equal logits give ln K and symmetric gradient") {
    const int k = 4;
    Tensor<double> logits = Tensor<double>::full({k}, 1.7);
    const auto [loss, grad] = softmax_xent(logits, 2);
    CHECK(loss == doctest::Approx(std::log(4.0)).epsilon(1e-12));
    for (int i = 0; i < k; ++i) {
        const double expected = 0.25 - (i == 2 ? 1.0 : 0.0);
        CHECK(grad[i] == doctest::Approx(expected).epsilon(1e-12));
    }
}

TEST_CASE("softmax_xent: huge logit gap stays finite (max subtraction)") {
    Tensor<double> logits({2}, {1000.0, 0.0});
    const auto [loss, grad] = softmax_xent(logits, 0);
    CHECK(std::isfinite(loss));
    CHECK(loss == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(grad.all_finite());
}

TEST_CASE("softmax_xent gradient matches finite differences") {
    auto rng = make_engine(29);
    std::uniform_real_distribution<double> dist(-3.0, 3.0);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor<double> logits({6});
        for (std::int64_t i = 0; i < 6; ++i) logits[i] = dist(rng);
        const int label = static_cast<int>(trial % 6);
        const auto [loss, grad] = softmax_xent(logits, label);
        (void)loss;
        const auto loss_fn = [&]() { return softmax_xent(logits, label).first; };
        CHECK(max_fd_rel_err(loss_fn, logits, grad) < 1e-6);
    }
}

TEST_CASE("softmax_xent rejects out-of-range labels and tiny vectors") {
    Tensor<double> logits({3}, {0.1, 0.2, 0.3});
    CHECK_THROWS_AS((void)softmax_xent(logits, -1), LabelOutOfRange);
    CHECK_THROWS_AS((void)softmax_xent(logits, 3), LabelOutOfRange);
    Tensor<double> single({1}, {0.5});
    CHECK_THROWS_AS((void)softmax_xent(single, 0), NnError);
}

TEST_CASE("step-decay schedules match the published settings") {
    const SgdSchedule s1 = SgdSchedule::stage1();
    CHECK(s1.lr_at(0) == doctest::Approx(0.001).epsilon(1e-12));
    CHECK(s1.lr_at(2) == doctest::Approx(0.001).epsilon(1e-12));
    CHECK(s1.lr_at(3) == doctest::Approx(0.0005).epsilon(1e-12));
    CHECK(s1.lr_at(6) == doctest::Approx(0.00025).epsilon(1e-12));
    CHECK(s1.total_epochs == 50);

    const SgdSchedule s2 = SgdSchedule::stage2();
    CHECK(s2.lr_at(3) == doctest::Approx(0.005 * 0.7).epsilon(1e-12));
    CHECK(s2.total_epochs == 60);

    SgdSchedule flat;
    flat.decay_factor = 1.0;
    for (int e = 0; e < 50; ++e) CHECK(flat.lr_at(e) == flat.initial_lr);
}

TEST_CASE("schedule validation rejects out-of-range fields") {
    SgdSchedule s;
    s.initial_lr = 0;
    CHECK_THROWS_AS(s.validate(), NnError);
    s = SgdSchedule{};
    s.decay_factor = 1.5;
    CHECK_THROWS_AS(s.validate(), NnError);
    s = SgdSchedule{};
    s.momentum = 1.0;
    CHECK_THROWS_AS(s.validate(), NnError);
}

TEST_CASE("shape mismatch errors carry the offending layer index") {
    auto net = Net<float>::build({LayerSpec::conv(2, 3), LayerSpec::dense(3)}, {1, 4, 4}, 31);
    Tensor<float> bad({2, 3, 4, 4});
    try {
        net.infer(bad);
        FAIL("expected ShapeMismatch");
    } catch (const ShapeMismatch& e) {
        const std::string msg = e.what();
        CHECK(msg.find("layer 0") != std::string::npos);
        CHECK(msg.find("expected") != std::string::npos);
    }
}

TEST_CASE("backward without a matching forward throws StaleCache") {
    auto net = Net<double>::build({LayerSpec::dense(2)}, {3}, 37);
    ForwardCache<double> cache;
    GradSet<double> grads = net.zero_grads();
    Tensor<double> dout({1, 2}, {1.0, -1.0});
    CHECK_THROWS_AS((void)net.backward(cache, dout, grads), StaleCache);

    Tensor<double> x({1, 3}, {0.1, 0.2, 0.3});
    net.train_forward(x, cache);
    CHECK_NOTHROW((void)net.backward(cache, dout, grads));
    // The cache is consumed: a second backward needs a fresh forward.
    CHECK_THROWS_AS((void)net.backward(cache, dout, grads), StaleCache);

    // A cache from one net cannot drive another.
    auto other = Net<double>::build({LayerSpec::dense(2)}, {3}, 38);
    ForwardCache<double> foreign;
    other.train_forward(x, foreign);
    CHECK_THROWS_AS((void)net.backward(foreign, dout, grads), StaleCache);
}

TEST_CASE("parameter gradients accumulate across backward calls") {
    auto net = Net<double>::build({LayerSpec::dense(2)}, {3}, 41);
    Tensor<double> x({2, 3}, {0.1, -0.4, 0.7, 0.3, 0.9, -0.2});
    Tensor<double> dout({2, 2}, {1.0, 0.5, -0.25, 2.0});

    GradSet<double> once = net.zero_grads();
    ForwardCache<double> cache;
    net.train_forward(x, cache);
    net.backward(cache, dout, once);

    GradSet<double> twice = net.zero_grads();
    net.train_forward(x, cache);
    net.backward(cache, dout, twice);
    net.train_forward(x, cache);
    net.backward(cache, dout, twice);

    for (std::size_t pi = 0; pi < once[0].size(); ++pi) {
        for (std::int64_t i = 0; i < once[0][pi].numel(); ++i) {
            CHECK(twice[0][pi][i] == doctest::Approx(2.0 * once[0][pi][i]).epsilon(1e-12));
        }
    }
}

namespace {

SampleSet<float> two_blob_dataset(std::int64_t n, std::uint64_t seed) {
    auto rng = make_engine(seed);
    std::normal_distribution<double> noise(0.0, 0.3);
    SampleSet<float> data;
    data.inputs = Tensor<float>({n, 2});
    data.labels.resize(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        const int label = static_cast<int>(i % 2);
        const double cx = label == 0 ? -1.0 : 1.0;
        data.inputs.at2(i, 0) = static_cast<float>(cx + noise(rng));
        data.inputs.at2(i, 1) = static_cast<float>(-cx + noise(rng));
        data.labels[static_cast<std::size_t>(i)] = label;
    }
    return data;
}

}  // namespace

TEST_CASE("sgd_epoch learns a separable toy problem") {
    auto net = Net<float>::build({LayerSpec::dense(8), LayerSpec::tanh(), LayerSpec::dense(2)},
                                 {2}, 43);
    const SampleSet<float> data = two_blob_dataset(64, 44);
    SgdSchedule sched;
    sched.initial_lr = 0.05;
    sched.decay_factor = 1.0;
    sched.total_epochs = 20;
    sched.batch_size = 16;
    SgdState<float> state;
    EpochStats first{}, last{};
    for (int e = 0; e < 12; ++e) {
        last = sgd_epoch(net, data, state, sched, e, mix_seed(45, static_cast<std::uint64_t>(e)));
        if (e == 0) first = last;
    }
    CHECK(last.mean_loss < first.mean_loss);
    CHECK(last.accuracy >= 0.95);
    CHECK(last.samples == 64);
    CHECK(last.lr == doctest::Approx(0.05));
}

TEST_CASE("sgd_epoch rejects empty datasets and out-of-schedule epochs") {
    auto net = Net<float>::build({LayerSpec::dense(2)}, {2}, 47);
    SgdState<float> state;
    SgdSchedule sched;
    SampleSet<float> empty;
    CHECK_THROWS_AS((void)sgd_epoch(net, empty, state, sched, 0, 1), EmptyDataset);
    const SampleSet<float> data = two_blob_dataset(8, 48);
    CHECK_THROWS_AS((void)sgd_epoch(net, data, state, sched, sched.total_epochs, 1), NnError);
}

TEST_CASE("training is bit-identical for identical seeds") {
    const auto make_data = [] { return two_blob_dataset(32, 53); };
    const auto train = [&](std::uint64_t build_seed) {
        auto net = Net<float>::build({LayerSpec::dense(4), LayerSpec::tanh(), LayerSpec::dense(2)},
                                     {2}, build_seed);
        const SampleSet<float> data = make_data();
        SgdSchedule sched;
        sched.initial_lr = 0.02;
        sched.total_epochs = 6;
        sched.batch_size = 8;
        SgdState<float> state;
        for (int e = 0; e < 6; ++e) {
            sgd_epoch(net, data, state, sched, e, mix_seed(9000, static_cast<std::uint64_t>(e)));
        }
        return net;
    };

    auto a = train(101);
    auto b = train(101);
    auto c = train(102);

    bool identical = true;
    bool differs_from_c = false;
    auto sa = a.state();
    auto sb = b.state();
    auto sc = c.state();
    REQUIRE(sa.size() == sb.size());
    for (std::size_t i = 0; i < sa.size(); ++i) {
        CHECK(sa[i].first == sb[i].first);
        identical = identical && std::memcmp(sa[i].second->data(), sb[i].second->data(),
                                             sizeof(float) * static_cast<std::size_t>(
                                                                 sa[i].second->numel())) == 0;
        differs_from_c =
            differs_from_c || std::memcmp(sa[i].second->data(), sc[i].second->data(),
                                          sizeof(float) * static_cast<std::size_t>(
                                                              sa[i].second->numel())) != 0;
    }
    CHECK(identical);
    CHECK(differs_from_c);
}

TEST_CASE("layer spec validation rejects non-positive sizes") {
    CHECK_THROWS_AS(Net<float>::build({LayerSpec::conv(0, 3)}, {1, 4, 4}, 1), NnError);
    CHECK_THROWS_AS(Net<float>::build({LayerSpec::conv(2, 0)}, {1, 4, 4}, 1), NnError);
    CHECK_THROWS_AS(Net<float>::build({LayerSpec::dense(0)}, {4}, 1), NnError);
    LayerSpec bad_pool = LayerSpec::max_pool(0, 2);
    CHECK_THROWS_AS(Net<float>::build({bad_pool}, {1, 4, 4}, 1), NnError);
}

TEST_CASE("inference does not touch batch-norm running statistics") {
    auto net = Net<float>::build({LayerSpec::batch_norm()}, {1, 2, 2}, 59);
    auto rng = make_engine(60);
    Tensor<float> x({3, 1, 2, 2});
    std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
    for (std::int64_t i = 0; i < x.numel(); ++i) x[i] = dist(rng);

    const Tensor<float> y1 = net.infer(x);
    const Tensor<float> y2 = net.infer(x);
    for (std::int64_t i = 0; i < y1.numel(); ++i) CHECK(y1[i] == y2[i]);

    // Training mode shifts the running stats, changing later inference.
    ForwardCache<float> cache;
    net.train_forward(x, cache);
    const Tensor<float> y3 = net.infer(x);
    bool changed = false;
    for (std::int64_t i = 0; i < y1.numel(); ++i) changed = changed || y1[i] != y3[i];
    CHECK(changed);
}
