#include "unialign/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "unialign/rng.hpp"
#include "unialign/serialize.hpp"

namespace unialign {

namespace {

using json = nlohmann::ordered_json;

// Sub-stream tags so the two stages and their rng uses never overlap.
constexpr std::uint64_t kStage1Init = 0x11;
constexpr std::uint64_t kStage1Shuffle = 0x12;
constexpr std::uint64_t kStage1Dropout = 0x13;
constexpr std::uint64_t kStage2Init = 0x21;
constexpr std::uint64_t kStage2ShuffleSource = 0x22;
constexpr std::uint64_t kStage2ShuffleTarget = 0x23;
constexpr std::uint64_t kStage2Dropout = 0x24;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size,
                                                    std::mt19937_64& rng) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle_indices(order, rng);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t start = 0; start < n; start += batch_size) {
        const std::size_t end = std::min(n, start + batch_size);
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                             order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return batches;
}

Tensor gather_cache_rows(const FeatureCache& cache, const std::vector<std::int64_t>& ids) {
    Tensor rows = Tensor::zeros({ids.size(), cache.dim});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        auto it = cache.features.find(ids[i]);
        if (it == cache.features.end()) {
            throw std::invalid_argument("missing cache entry for sample id " +
                                        std::to_string(ids[i]) +
                                        " (stage-1/stage-2 sample ids do not match)");
        }
        std::copy(it->second.begin(), it->second.end(), rows.data.begin() + i * cache.dim);
    }
    return rows;
}

void check_source_matches_cache(const Dataset& source, const FeatureCache& cache) {
    for (const LabeledSample& s : source.samples) {
        if (!cache.contains(s.id)) {
            throw std::invalid_argument("missing cache entry for sample id " +
                                        std::to_string(s.id) +
                                        " (stage-1/stage-2 sample ids do not match)");
        }
    }
}

void check_source_covers_classes(const Dataset& source, const ArchitectureSpec& spec) {
    if (source.samples.empty()) throw std::invalid_argument("source dataset is empty");
    if (source.num_classes != static_cast<int>(spec.num_classes)) {
        throw std::invalid_argument("source dataset has " + std::to_string(source.num_classes) +
                                    " classes, architecture expects " +
                                    std::to_string(spec.num_classes));
    }
    std::vector<std::size_t> counts(spec.num_classes, 0);
    for (const LabeledSample& s : source.samples) counts[static_cast<std::size_t>(s.label)]++;
    for (std::size_t c = 0; c < counts.size(); ++c) {
        if (counts[c] == 0) {
            throw std::invalid_argument("source labels must cover every class; class " +
                                        std::to_string(c) + " has no samples");
        }
    }
}

json metrics_json(const EvalMetrics& m) {
    json j;
    j["overall"] = m.overall;
    j["balanced"] = m.balanced;
    j["per_class"] = m.per_class;
    j["class_counts"] = m.class_counts;
    j["present_mean"] = m.present_mean;
    if (m.missing_mean) j["missing_mean"] = *m.missing_mean;
    else j["missing_mean"] = nullptr;
    return j;
}

// Eval-mode features for the whole dataset, in chunks.
std::vector<std::vector<double>> all_features(const ModelParams& params, const Dataset& data) {
    constexpr std::size_t kChunk = 256;
    std::vector<std::vector<double>> out;
    out.reserve(data.size());
    const std::size_t dim = params.arch.feature_dim;
    for (std::size_t start = 0; start < data.size(); start += kChunk) {
        const std::size_t end = std::min(data.size(), start + kChunk);
        std::vector<std::size_t> idx(end - start);
        std::iota(idx.begin(), idx.end(), start);
        const Batch batch = make_batch(data, idx, false);
        const Tensor feats = feature_forward(params, batch.x);
        for (std::size_t r = 0; r < feats.dim(0); ++r) {
            out.emplace_back(feats.data.begin() + r * dim, feats.data.begin() + (r + 1) * dim);
        }
    }
    return out;
}

}  // namespace

std::string consistency_norm_name(ConsistencyNorm norm) {
    return norm == ConsistencyNorm::kL1 ? "l1" : "l2";
}

ConsistencyNorm consistency_norm_from_name(const std::string& name) {
    if (name == "l1") return ConsistencyNorm::kL1;
    if (name == "l2") return ConsistencyNorm::kL2;
    throw std::invalid_argument("unknown consistency norm '" + name + "' (use l1 or l2)");
}

void HyperParams::validate() const {
    if (learning_rate <= 0.0) throw std::invalid_argument("learning rate must be > 0");
    if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
    if (lambda_d < 0.0) throw std::invalid_argument("lambda_d must be >= 0");
    if (lambda_cons < 0.0) throw std::invalid_argument("lambda_cons must be >= 0");
    if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("momentum must lie in [0, 1)");
}

void save_cache(const FeatureCache& cache, const std::string& manifest_path,
                const std::string& payload_path) {
    json manifest;
    manifest["format"] = "unialign-cache-v1";
    manifest["dim"] = cache.dim;
    json ids = json::array();
    for (const auto& [id, _] : cache.features) ids.push_back(id);
    manifest["ids"] = ids;

    std::ofstream payload(payload_path, std::ios::binary);
    if (!payload) throw std::runtime_error("cannot write cache payload " + payload_path);
    for (const auto& [_, vec] : cache.features) write_le_doubles(payload, vec);
    payload.close();
    if (!payload) throw std::runtime_error("failed writing cache payload " + payload_path);

    std::ofstream out(manifest_path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write cache manifest " + manifest_path);
    out << manifest.dump(2) << "\n";
}

FeatureCache load_cache(const std::string& manifest_path, const std::string& payload_path) {
    std::ifstream in(manifest_path);
    if (!in) throw std::runtime_error("cannot read cache manifest " + manifest_path);
    json manifest = json::parse(in);
    if (manifest.value("format", "") != std::string("unialign-cache-v1")) {
        throw std::runtime_error("unrecognized cache format in " + manifest_path);
    }
    FeatureCache cache;
    cache.dim = manifest.at("dim").get<std::size_t>();
    std::ifstream payload(payload_path, std::ios::binary);
    if (!payload) throw std::runtime_error("cannot read cache payload " + payload_path);
    for (const json& id_json : manifest.at("ids")) {
        std::vector<double> vec(cache.dim);
        read_le_doubles(payload, vec);
        cache.features.emplace(id_json.get<std::int64_t>(), std::move(vec));
    }
    return cache;
}

std::string metrics_to_json(const EvalMetrics& metrics) {
    return metrics_json(metrics).dump(2);
}

std::string report_to_json(const TrainReport& report) {
    json j;
    j["stage"] = report.stage;
    j["epochs"] = report.loss_total.size();
    j["loss_clf"] = report.loss_clf;
    j["loss_domain"] = report.loss_domain;
    j["loss_cons"] = report.loss_cons;
    j["loss_total"] = report.loss_total;
    j["consistency_initial"] = report.consistency_initial;
    j["consistency_final"] = report.consistency_final;
    j["wall_seconds"] = report.wall_seconds;
    if (report.final_metrics) j["final_metrics"] = metrics_json(*report.final_metrics);
    else j["final_metrics"] = nullptr;
    return j.dump(2);
}

Batch make_batch(const Dataset& dataset, const std::vector<std::size_t>& indices,
                 bool with_labels) {
    if (indices.empty()) throw std::invalid_argument("empty batch");
    const std::size_t dim = dataset.feature_dim();
    Batch batch;
    batch.x = Tensor::zeros({indices.size(), dim});
    batch.ids.reserve(indices.size());
    if (with_labels) batch.labels.reserve(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const LabeledSample& s = dataset.samples.at(indices[i]);
        std::copy(s.features.begin(), s.features.end(), batch.x.data.begin() + i * dim);
        batch.ids.push_back(s.id);
        if (with_labels) batch.labels.push_back(s.label);
    }
    return batch;
}

StepGraph loss_total(const Batch& batch_s, const Batch& batch_t, const ModelParams& params,
                     const ModelParams& frozen, const FeatureCache& cache, const HyperParams& hp,
                     double lambda_d_scale, std::mt19937_64& dropout_rng) {
    hp.validate();
    if (!(params.arch == frozen.arch)) {
        throw std::invalid_argument(
            "stage-1 and stage-2 backbones must share one architecture");
    }
    if (batch_s.labels.size() != batch_s.x.dim(0)) {
        throw std::invalid_argument("source batch must carry labels");
    }
    if (cache.dim != params.arch.feature_dim) {
        throw std::invalid_argument("cache feature dim does not match architecture");
    }

    StepGraph g;
    g.extractor_ids = register_param_set(g.tape, params.extractor);
    g.classifier_ids = register_param_set(g.tape, params.classifier);
    g.discriminator_ids = register_param_set(g.tape, params.discriminator);

    // (b) classification loss on source
    const int x_s = g.tape.leaf(batch_s.x);
    const int feats_s =
        feature_forward_graph(g.tape, params.arch, g.extractor_ids, x_s, true, &dropout_rng);
    const int logits_s = classify_graph(g.tape, params.arch, g.classifier_ids, feats_s);
    const int l_clf = g.tape.softmax_cross_entropy(logits_s, batch_s.labels);

    // (c) consistency loss against the pre-trained cache, dropout-free
    const int feats_s_clean =
        feature_forward_graph(g.tape, params.arch, g.extractor_ids, x_s, false, nullptr);
    const int cache_rows = g.tape.leaf(gather_cache_rows(cache, batch_s.ids));
    const int l_cons = hp.consistency_norm == ConsistencyNorm::kL1
                           ? g.tape.mean_abs_distance(feats_s_clean, cache_rows)
                           : g.tape.mean_sq_distance(feats_s_clean, cache_rows);

    // (d) reversed-gradient domain loss over source + target features
    const int x_t = g.tape.leaf(batch_t.x);
    const int feats_t =
        feature_forward_graph(g.tape, params.arch, g.extractor_ids, x_t, true, &dropout_rng);
    const int feats_all = g.tape.concat_rows(feats_s, feats_t);
    const int reversed = g.tape.grad_reverse(feats_all, hp.lambda_d * lambda_d_scale);
    const int logits_d = discriminate_graph(g.tape, params.arch, g.discriminator_ids, reversed);
    std::vector<int> domain_labels(batch_s.x.dim(0), 0);
    domain_labels.insert(domain_labels.end(), batch_t.x.dim(0), 1);
    const int l_d = g.tape.softmax_cross_entropy(logits_d, std::move(domain_labels));

    // (e) overall loss
    g.total_node = g.tape.add(g.tape.add(l_clf, l_d), g.tape.scale(l_cons, hp.lambda_cons));
    g.components.clf = g.tape.value(l_clf).data[0];
    g.components.domain = g.tape.value(l_d).data[0];
    g.components.cons = g.tape.value(l_cons).data[0];
    g.components.total = g.tape.value(g.total_node).data[0];
    return g;
}

void sgd_step(ParamSet& params, const std::vector<Tensor>& gradients, double learning_rate) {
    std::vector<Tensor> no_velocity;
    sgd_step(params, gradients, learning_rate, 0.0, no_velocity);
}

void sgd_step(ParamSet& params, const std::vector<Tensor>& gradients, double learning_rate,
              double momentum, std::vector<Tensor>& velocity) {
    if (params.frozen) return;
    if (gradients.size() != params.tensors.size()) {
        throw std::invalid_argument("sgd_step: got " + std::to_string(gradients.size()) +
                                    " gradients for " + std::to_string(params.tensors.size()) +
                                    " tensors");
    }
    for (std::size_t i = 0; i < gradients.size(); ++i) {
        if (!gradients[i].same_shape(params.tensors[i].value)) {
            throw std::invalid_argument("sgd_step: gradient shape " + gradients[i].shape_str() +
                                        " does not match parameter " +
                                        params.tensors[i].name + " " +
                                        params.tensors[i].value.shape_str());
        }
    }

    if (momentum > 0.0) {
        if (velocity.empty()) {
            velocity.reserve(params.tensors.size());
            for (const NamedTensor& t : params.tensors)
                velocity.push_back(Tensor::zeros(t.value.shape));
        }
        for (std::size_t i = 0; i < params.tensors.size(); ++i) {
            Tensor& v = velocity[i];
            std::vector<double>& p = params.tensors[i].value.data;
            const std::vector<double>& gr = gradients[i].data;
            for (std::size_t k = 0; k < p.size(); ++k) {
                v.data[k] = momentum * v.data[k] + gr[k];
                p[k] -= learning_rate * v.data[k];
            }
        }
    } else {
        for (std::size_t i = 0; i < params.tensors.size(); ++i) {
            std::vector<double>& p = params.tensors[i].value.data;
            const std::vector<double>& gr = gradients[i].data;
            for (std::size_t k = 0; k < p.size(); ++k) p[k] -= learning_rate * gr[k];
        }
    }
}

std::vector<Tensor> collect_gradients(const Gradients& grads, const std::vector<int>& ids) {
    std::vector<Tensor> out;
    out.reserve(ids.size());
    for (int id : ids) out.push_back(grads.at(id));
    return out;
}

PretrainResult stage1_pretrain(const Dataset& source, const ArchitectureSpec& spec,
                               const HyperParams& hp) {
    const auto start = Clock::now();
    spec.validate();
    hp.validate();
    source.validate();
    check_source_covers_classes(source, spec);
    if (source.feature_dim() != spec.input_length) {
        throw std::invalid_argument("source feature dim " +
                                    std::to_string(source.feature_dim()) +
                                    " does not match input length " +
                                    std::to_string(spec.input_length));
    }

    ModelParams params = init_params(spec, mix_seed(hp.seed, kStage1Init));
    std::mt19937_64 shuffle_rng(mix_seed(hp.seed, kStage1Shuffle));
    std::mt19937_64 dropout_rng(mix_seed(hp.seed, kStage1Dropout));

    TrainReport report;
    report.stage = "pretrain";
    std::vector<Tensor> vel_e, vel_l;
    for (std::size_t epoch = 0; epoch < hp.stage1_epochs; ++epoch) {
        double loss_sum = 0.0;
        std::size_t sample_count = 0;
        for (const auto& idx : epoch_batches(source.size(), hp.batch_size, shuffle_rng)) {
            const Batch batch = make_batch(source, idx, true);
            Tape tape;
            const auto theta_e = register_param_set(tape, params.extractor);
            const auto theta_l = register_param_set(tape, params.classifier);
            const int x = tape.leaf(batch.x);
            const int feats = feature_forward_graph(tape, spec, theta_e, x, true, &dropout_rng);
            const int logits = classify_graph(tape, spec, theta_l, feats);
            const int loss = tape.softmax_cross_entropy(logits, batch.labels);

            const Gradients grads = tape.backward(loss);
            sgd_step(params.extractor, collect_gradients(grads, theta_e), hp.learning_rate,
                     hp.momentum, vel_e);
            sgd_step(params.classifier, collect_gradients(grads, theta_l), hp.learning_rate,
                     hp.momentum, vel_l);

            loss_sum += tape.value(loss).data[0] * static_cast<double>(idx.size());
            sample_count += idx.size();
        }
        const double mean_loss = loss_sum / static_cast<double>(sample_count);
        report.loss_clf.push_back(mean_loss);
        report.loss_domain.push_back(0.0);
        report.loss_cons.push_back(0.0);
        report.loss_total.push_back(mean_loss);
    }

    PretrainResult result;
    result.params = freeze(params);
    result.cache.dim = spec.feature_dim;
    const auto feats = all_features(result.params, source);
    for (std::size_t i = 0; i < source.size(); ++i) {
        result.cache.features.emplace(source.samples[i].id, feats[i]);
    }
    report.wall_seconds = seconds_since(start);
    result.report = std::move(report);
    return result;
}

AdaptResult stage2_adapt(const Dataset& source, const Dataset& target, const ModelParams& frozen,
                         const FeatureCache& cache, const ArchitectureSpec& spec,
                         const HyperParams& hp) {
    const auto start = Clock::now();
    spec.validate();
    hp.validate();
    source.validate();
    target.validate();
    check_source_covers_classes(source, spec);
    if (target.samples.empty()) throw std::invalid_argument("target dataset is empty");
    if (!(frozen.arch == spec)) {
        throw std::invalid_argument(
            "stage-1 and stage-2 backbones must share one architecture");
    }
    if (!frozen.extractor.frozen || !frozen.classifier.frozen) {
        throw std::invalid_argument("stage-1 parameters must be frozen before adaptation");
    }
    if (cache.dim != spec.feature_dim) {
        throw std::invalid_argument("cache feature dim does not match architecture");
    }
    check_source_matches_cache(source, cache);
    if (source.feature_dim() != spec.input_length ||
        target.feature_dim() != spec.input_length) {
        throw std::invalid_argument("dataset feature dims do not match input length");
    }

    // (a) fresh extractor, classifier and discriminator
    ModelParams params = init_params(spec, mix_seed(hp.seed, kStage2Init));
    std::mt19937_64 source_rng(mix_seed(hp.seed, kStage2ShuffleSource));
    std::mt19937_64 target_rng(mix_seed(hp.seed, kStage2ShuffleTarget));
    std::mt19937_64 dropout_rng(mix_seed(hp.seed, kStage2Dropout));

    TrainReport report;
    report.stage = "adapt";
    report.consistency_initial = mean_cache_distance(params, source, cache);

    // Equal-size target batch per iteration, cycling a shuffled order.
    std::vector<std::size_t> target_order(target.size());
    std::iota(target_order.begin(), target_order.end(), std::size_t{0});
    std::size_t target_pos = target_order.size();
    const auto draw_target = [&](std::size_t n) {
        std::vector<std::size_t> out;
        out.reserve(n);
        for (std::size_t i = 0; i < n; ++i) {
            if (target_pos == target_order.size()) {
                shuffle_indices(target_order, target_rng);
                target_pos = 0;
            }
            out.push_back(target_order[target_pos++]);
        }
        return out;
    };

    const std::size_t batches_per_epoch =
        (source.size() + hp.batch_size - 1) / hp.batch_size;
    const std::size_t total_iters = std::max<std::size_t>(1, hp.stage2_epochs * batches_per_epoch);
    std::size_t iter = 0;
    std::vector<Tensor> vel_e, vel_l, vel_d;

    for (std::size_t epoch = 0; epoch < hp.stage2_epochs; ++epoch) {
        LossComponents epoch_sum;
        std::size_t sample_count = 0;
        for (const auto& idx : epoch_batches(source.size(), hp.batch_size, source_rng)) {
            const Batch batch_s = make_batch(source, idx, true);
            const Batch batch_t = make_batch(target, draw_target(idx.size()), false);

            double lambda_scale = 1.0;
            if (hp.grl_ramp) {
                const double progress = static_cast<double>(iter) /
                                        static_cast<double>(std::max<std::size_t>(1, total_iters - 1));
                lambda_scale = 2.0 / (1.0 + std::exp(-10.0 * progress)) - 1.0;
            }

            StepGraph g =
                loss_total(batch_s, batch_t, params, frozen, cache, hp, lambda_scale, dropout_rng);
            const Gradients grads = g.tape.backward(g.total_node);
            sgd_step(params.extractor, collect_gradients(grads, g.extractor_ids),
                     hp.learning_rate, hp.momentum, vel_e);
            sgd_step(params.classifier, collect_gradients(grads, g.classifier_ids),
                     hp.learning_rate, hp.momentum, vel_l);
            sgd_step(params.discriminator, collect_gradients(grads, g.discriminator_ids),
                     hp.learning_rate, hp.momentum, vel_d);

            const double w = static_cast<double>(idx.size());
            epoch_sum.clf += g.components.clf * w;
            epoch_sum.domain += g.components.domain * w;
            epoch_sum.cons += g.components.cons * w;
            epoch_sum.total += g.components.total * w;
            sample_count += idx.size();
            ++iter;
        }
        const double denom = static_cast<double>(sample_count);
        report.loss_clf.push_back(epoch_sum.clf / denom);
        report.loss_domain.push_back(epoch_sum.domain / denom);
        report.loss_cons.push_back(epoch_sum.cons / denom);
        report.loss_total.push_back(epoch_sum.total / denom);
    }

    report.consistency_final = mean_cache_distance(params, source, cache);
    report.wall_seconds = seconds_since(start);
    return AdaptResult{std::move(params), std::move(report)};
}

EvalMetrics evaluate(const ModelParams& params, const Dataset& test,
                     const std::vector<int>& present_classes) {
    if (test.samples.empty()) throw std::invalid_argument("test dataset is empty");
    test.validate();
    const int num_classes = static_cast<int>(params.arch.num_classes);
    if (test.num_classes > num_classes) {
        throw std::invalid_argument("test set has more classes than the model");
    }

    std::vector<int> predicted, labels;
    predicted.reserve(test.size());
    labels.reserve(test.size());
    constexpr std::size_t kChunk = 256;
    for (std::size_t begin = 0; begin < test.size(); begin += kChunk) {
        const std::size_t end = std::min(test.size(), begin + kChunk);
        std::vector<std::size_t> idx(end - begin);
        std::iota(idx.begin(), idx.end(), begin);
        const Batch batch = make_batch(test, idx, true);
        const Tensor logits = classify(params, feature_forward(params, batch.x));
        for (std::size_t r = 0; r < logits.dim(0); ++r) {
            std::size_t best = 0;
            for (std::size_t c = 1; c < logits.dim(1); ++c) {
                if (logits(r, c) > logits(r, best)) best = c;
            }
            predicted.push_back(static_cast<int>(best));
            labels.push_back(batch.labels[r]);
        }
    }
    return metrics_from_predictions(predicted, labels, num_classes, present_classes);
}

EvalMetrics metrics_from_predictions(const std::vector<int>& predicted,
                                     const std::vector<int>& labels, int num_classes,
                                     const std::vector<int>& present_classes) {
    if (predicted.size() != labels.size() || labels.empty()) {
        throw std::invalid_argument("metrics: predictions and labels must align and be non-empty");
    }
    if (present_classes.empty()) {
        throw std::invalid_argument("present-class set must not be empty");
    }
    for (int c : present_classes) {
        if (c < 0 || c >= num_classes) {
            throw std::invalid_argument("present class " + std::to_string(c) + " outside [0, " +
                                        std::to_string(num_classes) + ")");
        }
    }

    std::vector<std::int64_t> counts(static_cast<std::size_t>(num_classes), 0);
    std::vector<std::int64_t> correct(static_cast<std::size_t>(num_classes), 0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= num_classes) {
            throw std::invalid_argument("metrics: label " + std::to_string(labels[i]) +
                                        " outside [0, " + std::to_string(num_classes) + ")");
        }
        const auto label = static_cast<std::size_t>(labels[i]);
        counts[label]++;
        if (predicted[i] == labels[i]) correct[label]++;
    }

    EvalMetrics m;
    std::int64_t total = 0, total_correct = 0;
    m.per_class.resize(static_cast<std::size_t>(num_classes), 0.0);
    m.class_counts = counts;
    double balanced_sum = 0.0;
    int covered = 0;
    for (int c = 0; c < num_classes; ++c) {
        const auto ci = static_cast<std::size_t>(c);
        total += counts[ci];
        total_correct += correct[ci];
        if (counts[ci] > 0) {
            m.per_class[ci] =
                static_cast<double>(correct[ci]) / static_cast<double>(counts[ci]);
            balanced_sum += m.per_class[ci];
            ++covered;
        }
    }
    m.overall = static_cast<double>(total_correct) / static_cast<double>(total);
    m.balanced = covered > 0 ? balanced_sum / covered : 0.0;

    std::vector<bool> is_present(static_cast<std::size_t>(num_classes), false);
    for (int c : present_classes) is_present[static_cast<std::size_t>(c)] = true;
    double present_sum = 0.0, missing_sum = 0.0;
    int present_n = 0, missing_n = 0;
    bool any_missing_class = false;
    for (int c = 0; c < num_classes; ++c) {
        const auto ci = static_cast<std::size_t>(c);
        if (is_present[ci]) {
            if (counts[ci] > 0) {
                present_sum += m.per_class[ci];
                ++present_n;
            }
        } else {
            any_missing_class = true;
            if (counts[ci] > 0) {
                missing_sum += m.per_class[ci];
                ++missing_n;
            }
        }
    }
    m.present_mean = present_n > 0 ? present_sum / present_n : 0.0;
    if (any_missing_class && missing_n > 0) m.missing_mean = missing_sum / missing_n;
    return m;
}

double mean_cache_distance(const ModelParams& params, const Dataset& source,
                           const FeatureCache& cache) {
    if (source.samples.empty()) throw std::invalid_argument("source dataset is empty");
    if (cache.dim != params.arch.feature_dim) {
        throw std::invalid_argument("cache feature dim does not match architecture");
    }
    const auto feats = all_features(params, source);
    double sum = 0.0;
    for (std::size_t i = 0; i < source.size(); ++i) {
        auto it = cache.features.find(source.samples[i].id);
        if (it == cache.features.end()) {
            throw std::invalid_argument("missing cache entry for sample id " +
                                        std::to_string(source.samples[i].id));
        }
        double per_sample = 0.0;
        for (std::size_t k = 0; k < cache.dim; ++k) {
            per_sample += std::abs(feats[i][k] - it->second[k]);
        }
        sum += per_sample / static_cast<double>(cache.dim);
    }
    return sum / static_cast<double>(source.size());
}

}  // namespace unialign
