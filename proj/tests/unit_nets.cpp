#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>
#include <filesystem>

#include "unialign/nets.hpp"
#include "unialign/rng.hpp"
#include "unialign/tape.hpp"
#include "unialign/train.hpp"

using namespace unialign;

namespace {

bool bits_equal(const Tensor& a, const Tensor& b) {
    return a.shape == b.shape &&
           std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(double)) == 0;
}

bool params_bits_equal(const ModelParams& a, const ModelParams& b) {
    const auto set_equal = [](const ParamSet& x, const ParamSet& y) {
        if (x.tensors.size() != y.tensors.size()) return false;
        for (std::size_t i = 0; i < x.tensors.size(); ++i) {
            if (x.tensors[i].name != y.tensors[i].name) return false;
            if (!bits_equal(x.tensors[i].value, y.tensors[i].value)) return false;
        }
        return true;
    };
    return set_equal(a.extractor, b.extractor) && set_equal(a.classifier, b.classifier) &&
           set_equal(a.discriminator, b.discriminator);
}

ArchitectureSpec small_spec() {
    ArchitectureSpec spec;
    spec.input_length = 32;
    spec.conv_layers = 2;
    spec.conv_channels = 4;
    spec.feature_dim = 8;
    spec.classifier_hidden = 8;
    spec.discriminator_hidden = {8, 8};
    spec.num_classes = 3;
    return spec;
}

ModelParams zero_params(const ArchitectureSpec& spec) {
    ModelParams params = init_params(spec, 0);
    for (ParamSet* set : {&params.extractor, &params.classifier, &params.discriminator}) {
        for (NamedTensor& t : set->tensors) std::fill(t.value.data.begin(), t.value.data.end(), 0.0);
    }
    return params;
}

Tensor random_batch(std::size_t rows, std::size_t cols, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Tensor t = Tensor::zeros({rows, cols});
    for (double& v : t.data) v = uniform_range(rng, -1.0, 1.0);
    return t;
}

}  // namespace

TEST_CASE("init_params is seed-deterministic with zero biases and Glorot bounds") {
    const ArchitectureSpec spec = small_spec();
    const ModelParams a = init_params(spec, 42);
    const ModelParams b = init_params(spec, 42);
    CHECK(params_bits_equal(a, b));

    const ModelParams c = init_params(spec, 43);
    CHECK_FALSE(params_bits_equal(a, c));

    for (const ParamSet* set : {&a.extractor, &a.classifier, &a.discriminator}) {
        for (const NamedTensor& t : set->tensors) {
            if (t.name.ends_with("/bias")) {
                for (double v : t.value.data) CHECK(v == 0.0);
            }
        }
    }
    // spot-check the Glorot bound on the conv0 kernels: fan_in 3, fan_out 12
    const double limit = std::sqrt(6.0 / (3.0 + 12.0));
    for (double v : a.extractor.tensors[0].value.data) {
        CHECK(std::abs(v) <= limit);
    }
}

TEST_CASE("parameter counts match the allocation") {
    const ArchitectureSpec spec = small_spec();
    const ModelParams params = init_params(spec, 1);
    CHECK(params.extractor.count() + params.classifier.count() + params.discriminator.count() ==
          param_count(spec));

    ArchitectureSpec deflt;  // paper-shaped default: 512 -> 10ch conv x2 -> 256
    const ModelParams big = init_params(deflt, 1);
    CHECK(big.extractor.count() + big.classifier.count() + big.discriminator.count() ==
          param_count(deflt));
    CHECK(deflt.flat_dim() == 5080);
}

TEST_CASE("invalid architectures are rejected") {
    ArchitectureSpec spec = small_spec();
    spec.input_length = 4;  // 4 - 2*2 = 0, no room for valid convolutions
    CHECK_THROWS_AS(spec.validate(), std::invalid_argument);

    ArchitectureSpec bad_rate = small_spec();
    bad_rate.dropout_rate = 1.0;
    CHECK_THROWS_AS(init_params(bad_rate, 0), std::invalid_argument);
}

TEST_CASE("feature_forward") {
    ArchitectureSpec deflt;
    const ModelParams params = init_params(deflt, 7);
    const Tensor x = random_batch(3, 512, 99);

    SUBCASE("default spec produces Bx256 features") {
        const Tensor feats = feature_forward(params, x);
        CHECK(feats.shape == std::vector<std::size_t>{3, 256});
    }
    SUBCASE("eval mode is a pure function of params and input") {
        CHECK(bits_equal(feature_forward(params, x), feature_forward(params, x)));
    }
    SUBCASE("all outputs lie inside (0, 1)") {
        const Tensor feats = feature_forward(params, x);
        for (double v : feats.data) {
            CHECK(v > 0.0);
            CHECK(v < 1.0);
        }
    }
    SUBCASE("width mismatch is rejected") {
        CHECK_THROWS_AS(feature_forward(params, random_batch(2, 100, 1)),
                        std::invalid_argument);
    }
}

TEST_CASE("classify and discriminate heads") {
    const ArchitectureSpec spec = small_spec();
    const Tensor feats = random_batch(5, spec.feature_dim, 3);

    SUBCASE("output shapes") {
        const ModelParams params = init_params(spec, 11);
        CHECK(classify(params, feats).shape == std::vector<std::size_t>{5, 3});
        CHECK(discriminate(params, feats).shape == std::vector<std::size_t>{5, 2});
    }
    SUBCASE("zero weights leave only the biases") {
        ModelParams params = zero_params(spec);
        params.classifier.tensors[3].value = Tensor::from({3}, {0.5, -1.0, 2.0});
        const Tensor logits = classify(params, feats);
        for (std::size_t r = 0; r < 5; ++r) {
            CHECK(logits(r, 0) == 0.5);
            CHECK(logits(r, 1) == -1.0);
            CHECK(logits(r, 2) == 2.0);
        }
    }
    SUBCASE("zero-weight discriminator gives uniform logits and domain CE ln 2") {
        const ModelParams params = zero_params(spec);
        Tape tape;
        int f = tape.leaf(feats);
        int logits = discriminate_graph(tape, spec, register_param_set(tape, params.discriminator), f);
        int ce = tape.softmax_cross_entropy(logits, {0, 0, 1, 1, 0});
        CHECK(tape.value(ce).data[0] == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    }
    SUBCASE("deterministic given params and features") {
        const ModelParams params = init_params(spec, 11);
        CHECK(bits_equal(classify(params, feats), classify(params, feats)));
        CHECK(bits_equal(discriminate(params, feats), discriminate(params, feats)));
    }
    SUBCASE("feature dim mismatch is rejected") {
        const ModelParams params = init_params(spec, 11);
        CHECK_THROWS_AS(classify(params, random_batch(2, 5, 1)), std::invalid_argument);
        CHECK_THROWS_AS(discriminate(params, random_batch(2, 5, 1)), std::invalid_argument);
    }
}

TEST_CASE("freeze contract") {
    const ArchitectureSpec spec = small_spec();
    ModelParams params = init_params(spec, 5);
    const Tensor x = random_batch(2, spec.input_length, 8);
    const Tensor before = feature_forward(params, x);

    ModelParams frozen = freeze(params);
    CHECK(frozen.extractor.frozen);
    CHECK(frozen.classifier.frozen);
    CHECK(frozen.discriminator.frozen);

    SUBCASE("optimizer steps leave frozen sets bitwise unchanged") {
        std::vector<Tensor> grads;
        for (const NamedTensor& t : frozen.extractor.tensors) {
            grads.push_back(Tensor::filled(t.value.shape, 1.0));
        }
        ModelParams stepped = frozen;
        sgd_step(stepped.extractor, grads, 0.5);
        CHECK(params_bits_equal(stepped, frozen));
    }
    SUBCASE("forward through frozen params matches the pre-freeze forward") {
        CHECK(bits_equal(feature_forward(frozen, x), before));
    }
    SUBCASE("freezing twice is idempotent") {
        const ModelParams twice = freeze(frozen);
        CHECK(params_bits_equal(twice, frozen));
        CHECK(twice.extractor.frozen);
    }
}

TEST_CASE("checkpoint round trip is bitwise exact") {
    const ArchitectureSpec spec = small_spec();
    ModelParams params = init_params(spec, 123);
    params.extractor.frozen = true;  // frozen flags must survive the trip

    const auto dir = std::filesystem::temp_directory_path() / "unialign_ckpt_test";
    std::filesystem::create_directories(dir);
    const std::string manifest = (dir / "model.json").string();
    const std::string payload = (dir / "model.bin").string();

    save_checkpoint(params, manifest, payload);
    const ModelParams loaded = load_checkpoint(manifest, payload);

    CHECK(params_bits_equal(loaded, params));
    CHECK(loaded.arch == spec);
    CHECK(loaded.extractor.frozen);
    CHECK_FALSE(loaded.classifier.frozen);

    std::filesystem::remove_all(dir);
}
