#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "unialign/tape.hpp"
#include "unialign/tensor.hpp"

namespace unialign {

// Backbone layout shared by both training stages: a small 1-D conv feature
// extractor, a single-hidden-layer classifier, and a two-hidden-layer
// domain discriminator. Sigmoid activations throughout.
struct ArchitectureSpec {
    std::size_t input_length = 512;
    std::size_t conv_layers = 2;
    std::size_t conv_channels = 10;  // output channels per conv layer
    double dropout_rate = 0.5;
    std::size_t feature_dim = 256;  // K
    std::size_t classifier_hidden = 256;
    std::vector<std::size_t> discriminator_hidden{256, 256};
    std::size_t num_classes = 10;  // C

    void validate() const;
    std::size_t conv_output_length() const { return input_length - 2 * conv_layers; }
    std::size_t flat_dim() const { return conv_channels * conv_output_length(); }

    bool operator==(const ArchitectureSpec&) const = default;
};

struct NamedTensor {
    std::string name;
    Tensor value;
};

// One network's parameters. A frozen set is never modified by any
// optimizer step.
struct ParamSet {
    std::vector<NamedTensor> tensors;
    bool frozen = false;

    std::size_t count() const;
};

struct ModelParams {
    ArchitectureSpec arch;
    ParamSet extractor;      // theta_e
    ParamSet classifier;     // theta_l
    ParamSet discriminator;  // theta_d
};

// Glorot-uniform weights (+-sqrt(6/(fan_in+fan_out))), zero biases, fully
// determined by the seed.
ModelParams init_params(const ArchitectureSpec& spec, std::uint64_t seed);

// Copy whose parameter sets reject all subsequent updates. Idempotent.
ModelParams freeze(const ModelParams& params);

std::size_t param_count(const ArchitectureSpec& spec);

// --- tape-building forwards (training path) ---------------------------------
// Parameters are registered explicitly so callers can map gradients back.
std::vector<int> register_param_set(Tape& tape, const ParamSet& set);

// conv -> sigmoid -> dropout per conv layer, flatten, affine to K, sigmoid.
// x: [B, input_length]. rng is only touched in train mode.
int feature_forward_graph(Tape& tape, const ArchitectureSpec& spec,
                          const std::vector<int>& theta_e, int x, bool train,
                          std::mt19937_64* rng);

// affine(K->hidden) -> sigmoid -> affine(hidden->C) logits.
int classify_graph(Tape& tape, const ArchitectureSpec& spec, const std::vector<int>& theta_l,
                   int features);

// affine -> sigmoid per hidden layer, then affine to 2 domain logits
// (source = 0, target = 1).
int discriminate_graph(Tape& tape, const ArchitectureSpec& spec, const std::vector<int>& theta_d,
                       int features);

// --- eval-mode value forwards ------------------------------------------------
Tensor feature_forward(const ModelParams& params, const Tensor& x_batch);
Tensor classify(const ModelParams& params, const Tensor& features);
Tensor discriminate(const ModelParams& params, const Tensor& features);

// --- checkpoint io -----------------------------------------------------------
// Manifest: UTF-8 JSON with layer names, shapes and byte offsets.
// Payload: raw little-endian 64-bit floats in manifest order.
// Round trips are bitwise exact.
void save_checkpoint(const ModelParams& params, const std::string& manifest_path,
                     const std::string& payload_path);
ModelParams load_checkpoint(const std::string& manifest_path, const std::string& payload_path);

}  // namespace unialign
