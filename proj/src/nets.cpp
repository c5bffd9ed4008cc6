#include "unialign/nets.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "unialign/rng.hpp"
#include "unialign/serialize.hpp"

namespace unialign {

namespace {

using json = nlohmann::ordered_json;

Tensor glorot_uniform(std::vector<std::size_t> shape, std::size_t fan_in, std::size_t fan_out,
                      std::mt19937_64& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.data) v = uniform_range(rng, -limit, limit);
    return t;
}

int affine_sigmoid(Tape& tape, int x, int weights, int bias) {
    return tape.sigmoid(tape.affine(x, weights, bias));
}

json arch_to_json(const ArchitectureSpec& spec) {
    return json{{"input_length", spec.input_length},
                {"conv_layers", spec.conv_layers},
                {"conv_channels", spec.conv_channels},
                {"dropout_rate", spec.dropout_rate},
                {"feature_dim", spec.feature_dim},
                {"classifier_hidden", spec.classifier_hidden},
                {"discriminator_hidden", spec.discriminator_hidden},
                {"num_classes", spec.num_classes}};
}

ArchitectureSpec arch_from_json(const json& j) {
    ArchitectureSpec spec;
    spec.input_length = j.at("input_length").get<std::size_t>();
    spec.conv_layers = j.at("conv_layers").get<std::size_t>();
    spec.conv_channels = j.at("conv_channels").get<std::size_t>();
    spec.dropout_rate = j.at("dropout_rate").get<double>();
    spec.feature_dim = j.at("feature_dim").get<std::size_t>();
    spec.classifier_hidden = j.at("classifier_hidden").get<std::size_t>();
    spec.discriminator_hidden = j.at("discriminator_hidden").get<std::vector<std::size_t>>();
    spec.num_classes = j.at("num_classes").get<std::size_t>();
    return spec;
}

}  // namespace

void ArchitectureSpec::validate() const {
    if (conv_layers < 1) throw std::invalid_argument("architecture: need at least one conv layer");
    if (input_length < 2 * conv_layers + 1) {
        throw std::invalid_argument("architecture: input length " + std::to_string(input_length) +
                                    " leaves no room for " + std::to_string(conv_layers) +
                                    " valid convolutions");
    }
    if (conv_channels < 1 || feature_dim < 1 || classifier_hidden < 1 || num_classes < 1) {
        throw std::invalid_argument("architecture: sizes must be >= 1");
    }
    for (std::size_t h : discriminator_hidden) {
        if (h < 1) throw std::invalid_argument("architecture: sizes must be >= 1");
    }
    if (discriminator_hidden.empty()) {
        throw std::invalid_argument("architecture: discriminator needs hidden layers");
    }
    if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
        throw std::invalid_argument("architecture: dropout rate must lie in [0, 1)");
    }
}

std::size_t ParamSet::count() const {
    std::size_t n = 0;
    for (const NamedTensor& t : tensors) n += t.value.numel();
    return n;
}

ModelParams init_params(const ArchitectureSpec& spec, std::uint64_t seed) {
    spec.validate();
    std::mt19937_64 rng(seed);
    ModelParams params;
    params.arch = spec;

    for (std::size_t l = 0; l < spec.conv_layers; ++l) {
        const std::size_t c_in = (l == 0) ? 1 : spec.conv_channels;
        const std::size_t c_out = spec.conv_channels;
        params.extractor.tensors.push_back(
            {"extractor/conv" + std::to_string(l) + "/kernels",
             glorot_uniform({c_out, c_in, 3}, c_in * 3, c_out * 3, rng)});
        params.extractor.tensors.push_back(
            {"extractor/conv" + std::to_string(l) + "/bias", Tensor::zeros({c_out})});
    }
    params.extractor.tensors.push_back(
        {"extractor/fc/weights",
         glorot_uniform({spec.flat_dim(), spec.feature_dim}, spec.flat_dim(), spec.feature_dim,
                        rng)});
    params.extractor.tensors.push_back({"extractor/fc/bias", Tensor::zeros({spec.feature_dim})});

    params.classifier.tensors.push_back(
        {"classifier/hidden/weights",
         glorot_uniform({spec.feature_dim, spec.classifier_hidden}, spec.feature_dim,
                        spec.classifier_hidden, rng)});
    params.classifier.tensors.push_back(
        {"classifier/hidden/bias", Tensor::zeros({spec.classifier_hidden})});
    params.classifier.tensors.push_back(
        {"classifier/out/weights",
         glorot_uniform({spec.classifier_hidden, spec.num_classes}, spec.classifier_hidden,
                        spec.num_classes, rng)});
    params.classifier.tensors.push_back(
        {"classifier/out/bias", Tensor::zeros({spec.num_classes})});

    std::size_t prev = spec.feature_dim;
    for (std::size_t l = 0; l < spec.discriminator_hidden.size(); ++l) {
        const std::size_t width = spec.discriminator_hidden[l];
        params.discriminator.tensors.push_back(
            {"discriminator/hidden" + std::to_string(l) + "/weights",
             glorot_uniform({prev, width}, prev, width, rng)});
        params.discriminator.tensors.push_back(
            {"discriminator/hidden" + std::to_string(l) + "/bias", Tensor::zeros({width})});
        prev = width;
    }
    params.discriminator.tensors.push_back(
        {"discriminator/out/weights", glorot_uniform({prev, 2}, prev, 2, rng)});
    params.discriminator.tensors.push_back({"discriminator/out/bias", Tensor::zeros({2})});

    return params;
}

ModelParams freeze(const ModelParams& params) {
    ModelParams frozen = params;
    frozen.extractor.frozen = true;
    frozen.classifier.frozen = true;
    frozen.discriminator.frozen = true;
    return frozen;
}

std::size_t param_count(const ArchitectureSpec& spec) {
    spec.validate();
    std::size_t n = 0;
    for (std::size_t l = 0; l < spec.conv_layers; ++l) {
        const std::size_t c_in = (l == 0) ? 1 : spec.conv_channels;
        n += spec.conv_channels * c_in * 3 + spec.conv_channels;
    }
    n += spec.flat_dim() * spec.feature_dim + spec.feature_dim;
    n += spec.feature_dim * spec.classifier_hidden + spec.classifier_hidden;
    n += spec.classifier_hidden * spec.num_classes + spec.num_classes;
    std::size_t prev = spec.feature_dim;
    for (std::size_t width : spec.discriminator_hidden) {
        n += prev * width + width;
        prev = width;
    }
    n += prev * 2 + 2;
    return n;
}

std::vector<int> register_param_set(Tape& tape, const ParamSet& set) {
    std::vector<int> ids;
    ids.reserve(set.tensors.size());
    for (const NamedTensor& t : set.tensors) ids.push_back(tape.leaf(t.value));
    return ids;
}

int feature_forward_graph(Tape& tape, const ArchitectureSpec& spec,
                          const std::vector<int>& theta_e, int x, bool train,
                          std::mt19937_64* rng) {
    if (theta_e.size() != 2 * spec.conv_layers + 2) {
        throw std::invalid_argument("feature_forward: wrong parameter count for spec");
    }
    const Tensor& xv = tape.value(x);
    if (xv.rank() != 2 || xv.dim(1) != spec.input_length) {
        throw std::invalid_argument("feature_forward: input " + xv.shape_str() +
                                    " does not match input length " +
                                    std::to_string(spec.input_length));
    }
    if (train && rng == nullptr) {
        throw std::invalid_argument("feature_forward: train mode needs an rng for dropout");
    }

    int h = tape.reshape(x, {xv.dim(0), 1, spec.input_length});
    for (std::size_t l = 0; l < spec.conv_layers; ++l) {
        h = tape.conv1d(h, theta_e[2 * l], theta_e[2 * l + 1]);
        h = tape.sigmoid(h);
        if (train) {
            h = tape.dropout(h, spec.dropout_rate, true, *rng);
        }
    }
    h = tape.flatten2d(h);
    return affine_sigmoid(tape, h, theta_e[2 * spec.conv_layers],
                          theta_e[2 * spec.conv_layers + 1]);
}

int classify_graph(Tape& tape, const ArchitectureSpec& spec, const std::vector<int>& theta_l,
                   int features) {
    if (theta_l.size() != 4) {
        throw std::invalid_argument("classify: wrong parameter count for spec");
    }
    const Tensor& fv = tape.value(features);
    if (fv.rank() != 2 || fv.dim(1) != spec.feature_dim) {
        throw std::invalid_argument("classify: features " + fv.shape_str() +
                                    " do not match feature dim " +
                                    std::to_string(spec.feature_dim));
    }
    int h = affine_sigmoid(tape, features, theta_l[0], theta_l[1]);
    return tape.affine(h, theta_l[2], theta_l[3]);
}

int discriminate_graph(Tape& tape, const ArchitectureSpec& spec, const std::vector<int>& theta_d,
                       int features) {
    if (theta_d.size() != 2 * spec.discriminator_hidden.size() + 2) {
        throw std::invalid_argument("discriminate: wrong parameter count for spec");
    }
    const Tensor& fv = tape.value(features);
    if (fv.rank() != 2 || fv.dim(1) != spec.feature_dim) {
        throw std::invalid_argument("discriminate: features " + fv.shape_str() +
                                    " do not match feature dim " +
                                    std::to_string(spec.feature_dim));
    }
    int h = features;
    for (std::size_t l = 0; l < spec.discriminator_hidden.size(); ++l) {
        h = affine_sigmoid(tape, h, theta_d[2 * l], theta_d[2 * l + 1]);
    }
    return tape.affine(h, theta_d[2 * spec.discriminator_hidden.size()],
                       theta_d[2 * spec.discriminator_hidden.size() + 1]);
}

Tensor feature_forward(const ModelParams& params, const Tensor& x_batch) {
    Tape tape;
    int x = tape.leaf(x_batch);
    int out = feature_forward_graph(tape, params.arch, register_param_set(tape, params.extractor),
                                    x, /*train=*/false, nullptr);
    return tape.value(out);
}

Tensor classify(const ModelParams& params, const Tensor& features) {
    Tape tape;
    int f = tape.leaf(features);
    int out = classify_graph(tape, params.arch, register_param_set(tape, params.classifier), f);
    return tape.value(out);
}

Tensor discriminate(const ModelParams& params, const Tensor& features) {
    Tape tape;
    int f = tape.leaf(features);
    int out =
        discriminate_graph(tape, params.arch, register_param_set(tape, params.discriminator), f);
    return tape.value(out);
}

void save_checkpoint(const ModelParams& params, const std::string& manifest_path,
                     const std::string& payload_path) {
    json manifest;
    manifest["format"] = "unialign-checkpoint-v1";
    manifest["arch"] = arch_to_json(params.arch);

    std::ofstream payload(payload_path, std::ios::binary);
    if (!payload) throw std::runtime_error("cannot write checkpoint payload " + payload_path);

    std::size_t offset = 0;
    json sets = json::array();
    const std::pair<const char*, const ParamSet*> all[] = {{"extractor", &params.extractor},
                                                           {"classifier", &params.classifier},
                                                           {"discriminator",
                                                            &params.discriminator}};
    for (const auto& [name, set] : all) {
        json tensors = json::array();
        for (const NamedTensor& t : set->tensors) {
            tensors.push_back(
                {{"name", t.name}, {"shape", t.value.shape}, {"offset", offset}});
            write_le_doubles(payload, t.value.data);
            offset += t.value.numel() * sizeof(double);
        }
        sets.push_back({{"name", name}, {"frozen", set->frozen}, {"tensors", tensors}});
    }
    manifest["sets"] = sets;
    payload.close();
    if (!payload) throw std::runtime_error("failed writing checkpoint payload " + payload_path);

    std::ofstream out(manifest_path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint manifest " + manifest_path);
    out << manifest.dump(2) << "\n";
}

ModelParams load_checkpoint(const std::string& manifest_path, const std::string& payload_path) {
    std::ifstream in(manifest_path);
    if (!in) throw std::runtime_error("cannot read checkpoint manifest " + manifest_path);
    json manifest = json::parse(in);
    if (manifest.value("format", "") != std::string("unialign-checkpoint-v1")) {
        throw std::runtime_error("unrecognized checkpoint format in " + manifest_path);
    }

    ModelParams params;
    params.arch = arch_from_json(manifest.at("arch"));
    params.arch.validate();

    std::ifstream payload(payload_path, std::ios::binary);
    if (!payload) throw std::runtime_error("cannot read checkpoint payload " + payload_path);

    for (const json& set_json : manifest.at("sets")) {
        const std::string name = set_json.at("name").get<std::string>();
        ParamSet* set = nullptr;
        if (name == "extractor") set = &params.extractor;
        else if (name == "classifier") set = &params.classifier;
        else if (name == "discriminator") set = &params.discriminator;
        else throw std::runtime_error("unknown parameter set '" + name + "' in manifest");
        set->frozen = set_json.at("frozen").get<bool>();
        for (const json& t : set_json.at("tensors")) {
            NamedTensor nt;
            nt.name = t.at("name").get<std::string>();
            nt.value = Tensor::zeros(t.at("shape").get<std::vector<std::size_t>>());
            payload.seekg(static_cast<std::streamoff>(t.at("offset").get<std::size_t>()));
            read_le_doubles(payload, nt.value.data);
            set->tensors.push_back(std::move(nt));
        }
    }
    return params;
}

}  // namespace unialign
