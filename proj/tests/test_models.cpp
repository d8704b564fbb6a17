#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "kdbench/datasets.hpp"
#include "kdbench/errors.hpp"
#include "kdbench/models.hpp"
#include "kdbench/tape.hpp"

using namespace kdbench;
namespace fs = std::filesystem;

namespace {

MlpSpec mlp(int in, std::vector<int> hidden, int classes, std::uint64_t seed) {
    MlpSpec spec;
    spec.input_dim = in;
    spec.hidden_widths = std::move(hidden);
    spec.num_classes = classes;
    spec.init_seed = seed;
    return spec;
}

// Single identity layer: logits == inputs. Built by hand because init()
// requires at least one hidden layer.
ModelParams identity_params(int dim) {
    ModelParams params;
    params.spec = mlp(dim, {}, dim, 0);
    Tensor w = Tensor::zeros({dim, dim});
    for (int i = 0; i < dim; ++i) w.at(i, i) = 1.0;
    params.weights.push_back(w);
    params.biases.push_back(Tensor::zeros({1, dim}));
    return params;
}

}  // namespace

TEST_CASE("spec validation") {
    CHECK_NOTHROW(mlp(4, {8}, 3, 0).validate());
    CHECK_THROWS_AS(mlp(0, {8}, 3, 0).validate(), DomainError);
    CHECK_THROWS_AS(mlp(4, {}, 3, 0).validate(), DomainError);
    CHECK_THROWS_AS(mlp(4, {8, 0}, 3, 0).validate(), DomainError);
    CHECK_THROWS_AS(mlp(4, {8}, 1, 0).validate(), DomainError);

    CHECK(mlp(4, {8}, 3, 1).same_architecture(mlp(4, {8}, 3, 2)));
    CHECK_FALSE(mlp(4, {8}, 3, 1).same_architecture(mlp(4, {16}, 3, 1)));
}

TEST_CASE("init is deterministic in the seed") {
    const MlpSpec spec = mlp(6, {12, 12}, 4, 99);
    const ModelParams a = init(spec);
    const ModelParams b = init(spec);
    REQUIRE(a.num_layers() == 3);
    for (int l = 0; l < 3; ++l) {
        CHECK(a.weights[static_cast<std::size_t>(l)].data == b.weights[static_cast<std::size_t>(l)].data);
        CHECK(a.biases[static_cast<std::size_t>(l)].data == b.biases[static_cast<std::size_t>(l)].data);
    }
    MlpSpec other = spec;
    other.init_seed = 100;
    CHECK(init(other).weights[0].data != a.weights[0].data);
}

TEST_CASE("init draws Glorot-uniform weights and zero biases") {
    // For a 256 x 256 layer the bound is sqrt(6/512) and the uniform standard
    // deviation is bound / sqrt(3) = 0.0625.
    const ModelParams params = init(mlp(256, {256}, 256, 7));
    const Tensor& w = params.weights[0];
    REQUIRE(w.shape == std::vector<int>{256, 256});
    const double bound = std::sqrt(6.0 / 512.0);
    double sum = 0.0, sumsq = 0.0;
    for (const double v : w.data) {
        CHECK(std::abs(v) <= bound);
        sum += v;
        sumsq += v * v;
    }
    const double n = static_cast<double>(w.data.size());
    const double mean = sum / n;
    const double std_dev = std::sqrt(sumsq / n - mean * mean);
    CHECK(std::abs(mean) < 0.001);
    CHECK(std::abs(std_dev - 0.0625) < 0.001);
    for (const Tensor& b : params.biases)
        for (const double v : b.data) CHECK(v == 0.0);

    // Layer shapes follow the widths chain.
    const ModelParams chain = init(mlp(5, {8, 3}, 2, 0));
    CHECK(chain.weights[0].shape == std::vector<int>{5, 8});
    CHECK(chain.weights[1].shape == std::vector<int>{8, 3});
    CHECK(chain.weights[2].shape == std::vector<int>{3, 2});
    CHECK(chain.biases[2].shape == std::vector<int>{1, 2});
}

TEST_CASE("forward_eval on identity weights returns the inputs") {
    ModelParams params = identity_params(3);
    Tensor x = Tensor::matrix({{1.0, -2.0, 0.5}, {0.0, 4.0, -1.0}});
    const Tensor out = forward_eval(params, x);
    CHECK(out.data == x.data);
}

TEST_CASE("tape forward matches forward_eval bitwise") {
    ModelParams params = init(mlp(4, {7, 5}, 3, 21));
    GaussianMixtureSpec ds = random_means_spec(3, 4, 2.0, 1.0, 0.0, 5);
    const Dataset data = generate(ds, 12, 6);

    Tape tape;
    const Var x = tape.constant(data.train.features);
    const Var logits = forward(tape, params, x);
    const Tensor eval = forward_eval(params, data.train.features);
    CHECK(tape.value(logits).data == eval.data);
}

TEST_CASE("trainable parameters receive gradients, frozen ones never do") {
    ModelParams params = init(mlp(3, {4}, 2, 8));
    Tensor x = Tensor::matrix({{0.3, -0.1, 0.2}});

    Tape tape;
    const Var out = tape.sum(forward(tape, params, tape.constant(x)));
    tape.backward(out);
    bool any = false;
    for (Tensor* t : params.trainable_tensors()) {
        REQUIRE(t->grad.size() == t->data.size());
        for (const double g : t->grad) any = any || g != 0.0;
    }
    CHECK(any);

    ModelParams frozen = init(mlp(3, {4}, 2, 8));
    frozen.frozen = true;
    Tape tape2;
    const Var out2 = tape2.sum(forward(tape2, frozen, tape2.constant(x)));
    tape2.backward(out2);
    for (const Tensor& w : frozen.weights) CHECK(w.grad.empty());
    for (const Tensor& b : frozen.biases) CHECK(b.grad.empty());
    CHECK_THROWS_AS(frozen.trainable_tensors(), ContractError);
}

TEST_CASE("named tensors walk the layers in order") {
    ModelParams params = init(mlp(3, {4}, 2, 8));
    const auto named = params.named_tensors();
    REQUIRE(named.size() == 4u);
    CHECK(named[0].first == "layer0.weight");
    CHECK(named[1].first == "layer0.bias");
    CHECK(named[2].first == "layer1.weight");
    CHECK(named[3].first == "layer1.bias");
    CHECK(named[0].second == &params.weights[0]);
}

TEST_CASE("accuracy breaks argmax ties toward the lowest class") {
    // Zero weights and biases give all-zero logits, so every row is a tie and
    // every prediction is class 0.
    ModelParams params;
    params.spec = mlp(2, {}, 3, 0);
    params.weights.push_back(Tensor::zeros({2, 3}));
    params.biases.push_back(Tensor::zeros({1, 3}));

    DatasetSplit split;
    split.features = Tensor::matrix({{1.0, 0.0}, {0.0, 1.0}, {1.0, 1.0}, {0.5, 0.5}});
    split.labels = {0, 1, 0, 2};
    split.role = SplitRole::Val;
    CHECK(accuracy(params, split) == 0.5);
}

TEST_CASE("accuracy on a separable problem reaches 1 with oracle weights") {
    // Weights copy each input coordinate into its class logit.
    ModelParams params = identity_params(2);
    DatasetSplit split;
    split.features = Tensor::matrix({{2.0, 1.0}, {1.0, 2.0}, {3.0, 0.0}});
    split.labels = {0, 1, 0};
    CHECK(accuracy(params, split) == 1.0);
}

TEST_CASE("checkpoint round-trips parameters exactly") {
    const fs::path dir = fs::temp_directory_path() / "kdbench_ckpt_test";
    fs::create_directories(dir);
    const std::string path = (dir / "model.ckpt").string();

    ModelParams params = init(mlp(5, {9, 6}, 4, 123));
    params.frozen = true;
    save_checkpoint(path, params);
    CHECK_FALSE(fs::exists(path + ".tmp"));

    const ModelParams back = load_checkpoint(path);
    CHECK(back.spec.input_dim == 5);
    CHECK(back.spec.hidden_widths == std::vector<int>{9, 6});
    CHECK(back.spec.num_classes == 4);
    CHECK(back.spec.init_seed == 123u);
    CHECK(back.frozen);
    REQUIRE(back.num_layers() == params.num_layers());
    for (int l = 0; l < params.num_layers(); ++l) {
        CHECK(back.weights[static_cast<std::size_t>(l)].data == params.weights[static_cast<std::size_t>(l)].data);
        CHECK(back.biases[static_cast<std::size_t>(l)].data == params.biases[static_cast<std::size_t>(l)].data);
    }

    CHECK_THROWS_AS(load_checkpoint((dir / "missing.ckpt").string()), ConfigError);
    {
        std::ofstream os(path, std::ios::binary | std::ios::in | std::ios::out);
        os.seekp(0);
        os.write("NOTMAGIC", 8);
    }
    CHECK_THROWS_AS(load_checkpoint(path), ConfigError);
    fs::remove_all(dir);
}

TEST_CASE("checkpoint survives values that stress the text path") {
    // The binary format must be exact for values that decimal text mangles.
    const fs::path dir = fs::temp_directory_path() / "kdbench_ckpt_exact";
    fs::create_directories(dir);
    const std::string path = (dir / "m.ckpt").string();

    ModelParams params = identity_params(2);
    params.weights[0].at(0, 0) = 0.1 + 0.2;  // 0.30000000000000004
    params.weights[0].at(0, 1) = -1.0 / 3.0;
    params.weights[0].at(1, 0) = 1e-300;
    params.biases[0].at(0, 1) = 6.02214076e23;
    save_checkpoint(path, params);
    const ModelParams back = load_checkpoint(path);
    CHECK(back.weights[0].data == params.weights[0].data);
    CHECK(back.biases[0].data == params.biases[0].data);
    fs::remove_all(dir);
}
