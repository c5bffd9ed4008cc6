#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "unialign/data.hpp"
#include "unialign/nets.hpp"
#include "unialign/tape.hpp"

namespace unialign {

enum class ConsistencyNorm { kL1, kL2 };

std::string consistency_norm_name(ConsistencyNorm norm);
ConsistencyNorm consistency_norm_from_name(const std::string& name);

struct HyperParams {
    double learning_rate = 0.01;
    std::size_t batch_size = 64;
    std::size_t stage1_epochs = 120;
    std::size_t stage2_epochs = 80;
    double lambda_d = 1.0;       // GRL coefficient
    double lambda_cons = 1.0;    // consistency weight
    ConsistencyNorm consistency_norm = ConsistencyNorm::kL1;
    double momentum = 0.0;       // 0 = plain SGD
    bool grl_ramp = false;       // opt-in 2/(1+e^{-10p})-1 schedule
    std::uint64_t seed = 0;

    void validate() const;
};

// sample-id -> pre-trained feature vector, for every source training
// sample. Built once after stage 1 and never mutated.
struct FeatureCache {
    std::map<std::int64_t, std::vector<double>> features;
    std::size_t dim = 0;

    bool contains(std::int64_t id) const { return features.count(id) != 0; }
    std::size_t size() const { return features.size(); }
};

void save_cache(const FeatureCache& cache, const std::string& manifest_path,
                const std::string& payload_path);
FeatureCache load_cache(const std::string& manifest_path, const std::string& payload_path);

struct EvalMetrics {
    double overall = 0.0;   // sample-weighted accuracy
    double balanced = 0.0;  // mean of per-class accuracies
    std::vector<double> per_class;
    std::vector<std::int64_t> class_counts;
    double present_mean = 0.0;
    std::optional<double> missing_mean;  // absent when Y_sub == Y
};

struct TrainReport {
    std::string stage;
    std::vector<double> loss_clf;
    std::vector<double> loss_domain;
    std::vector<double> loss_cons;
    std::vector<double> loss_total;
    // Full-source mean-L1 distance to the cache before the first update and
    // after the last one (adapt stage only).
    double consistency_initial = 0.0;
    double consistency_final = 0.0;
    double wall_seconds = 0.0;
    std::optional<EvalMetrics> final_metrics;
};

std::string report_to_json(const TrainReport& report);
std::string metrics_to_json(const EvalMetrics& metrics);

// --- mini-batch plumbing -----------------------------------------------------
struct Batch {
    Tensor x;  // [B, input_length]
    std::vector<int> labels;
    std::vector<std::int64_t> ids;
};

Batch make_batch(const Dataset& dataset, const std::vector<std::size_t>& indices,
                 bool with_labels);

// --- losses ------------------------------------------------------------------
struct LossComponents {
    double clf = 0.0;
    double domain = 0.0;
    double cons = 0.0;
    double total = 0.0;
};

// One mini-batch of the stage-2 objective, kept alive so the caller can run
// backward() and map gradients to parameters.
struct StepGraph {
    Tape tape;
    int total_node = -1;
    LossComponents components;
    std::vector<int> extractor_ids;
    std::vector<int> classifier_ids;
    std::vector<int> discriminator_ids;
};

// total = L_clf + L_d + lambda_cons * L_cons. The classifier and domain
// branches see train-mode (dropout) source/target features; the consistency
// branch recomputes source features with dropout disabled, matching how the
// cache was built. lambda_d_scale multiplies hp.lambda_d (ramp schedules).
StepGraph loss_total(const Batch& batch_s, const Batch& batch_t, const ModelParams& params,
                     const ModelParams& frozen, const FeatureCache& cache, const HyperParams& hp,
                     double lambda_d_scale, std::mt19937_64& dropout_rng);

// --- optimization --------------------------------------------------------------
// p <- p - lr * g for every tensor of a trainable set; frozen sets are
// returned untouched.
void sgd_step(ParamSet& params, const std::vector<Tensor>& gradients, double learning_rate);

// Momentum variant used by the training loops (velocity owned by caller;
// empty velocity means plain SGD).
void sgd_step(ParamSet& params, const std::vector<Tensor>& gradients, double learning_rate,
              double momentum, std::vector<Tensor>& velocity);

std::vector<Tensor> collect_gradients(const Gradients& grads, const std::vector<int>& ids);

// --- the two stages ------------------------------------------------------------
struct PretrainResult {
    ModelParams params;  // frozen
    FeatureCache cache;
    TrainReport report;
};

// Source-only supervised pre-training; returns frozen parameters and the
// eval-mode feature cache for every source sample.
PretrainResult stage1_pretrain(const Dataset& source, const ArchitectureSpec& spec,
                               const HyperParams& hp);

struct AdaptResult {
    ModelParams params;
    TrainReport report;
};

// Adversarial adaptation with the unilateral consistency term. Never reads
// target labels. lambda_cons = 0 reduces exactly to plain DANN alignment.
AdaptResult stage2_adapt(const Dataset& source, const Dataset& target, const ModelParams& frozen,
                         const FeatureCache& cache, const ArchitectureSpec& spec,
                         const HyperParams& hp);

// Eval-mode metrics over a labeled test set; `present_classes` is Y_sub.
EvalMetrics evaluate(const ModelParams& params, const Dataset& test,
                     const std::vector<int>& present_classes);

// Metric arithmetic behind evaluate(), exposed for direct use on stored
// predictions. Classes without test samples are excluded from every mean.
EvalMetrics metrics_from_predictions(const std::vector<int>& predicted,
                                     const std::vector<int>& labels, int num_classes,
                                     const std::vector<int>& present_classes);

// Mean over the dataset of the per-sample mean-L1 distance between current
// eval-mode features and the cached ones.
double mean_cache_distance(const ModelParams& params, const Dataset& source,
                           const FeatureCache& cache);

}  // namespace unialign
