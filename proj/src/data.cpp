#include "unialign/data.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <random>
#include <set>
#include <stdexcept>
#include <unordered_set>

#include "unialign/rng.hpp"

namespace unialign {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

bool is_power_of_two(std::size_t n) {
    return n != 0 && (n & (n - 1)) == 0;
}

// Iterative radix-2 FFT, in place. Falls back to a naive DFT for lengths
// that are not powers of two (only reachable through custom configs).
std::vector<std::complex<double>> dft(const std::vector<double>& x) {
    const std::size_t n = x.size();
    std::vector<std::complex<double>> a(n);
    if (!is_power_of_two(n)) {
        for (std::size_t k = 0; k < n; ++k) {
            std::complex<double> acc(0.0, 0.0);
            for (std::size_t t = 0; t < n; ++t) {
                const double angle = -kTwoPi * static_cast<double>(k * t % n) /
                                     static_cast<double>(n);
                acc += x[t] * std::complex<double>(std::cos(angle), std::sin(angle));
            }
            a[k] = acc;
        }
        return a;
    }

    for (std::size_t i = 0; i < n; ++i) a[i] = x[i];
    for (std::size_t i = 1, j = 0; i < n; ++i) {  // bit reversal
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double angle = -kTwoPi / static_cast<double>(len);
        const std::complex<double> wlen(std::cos(angle), std::sin(angle));
        for (std::size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (std::size_t k = 0; k < len / 2; ++k) {
                const std::complex<double> u = a[i + k];
                const std::complex<double> v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wlen;
            }
        }
    }
    return a;
}

std::vector<double> spectrum_magnitudes(const std::vector<double>& segment,
                                        std::size_t output_dim) {
    const auto bins = dft(segment);
    std::vector<double> out(output_dim);
    const double scale = 1.0 / static_cast<double>(segment.size());
    for (std::size_t k = 0; k < output_dim; ++k) out[k] = std::abs(bins[k]) * scale;
    return out;
}

[[noreturn]] void csv_error(const std::string& path, std::size_t line, const std::string& what) {
    throw std::runtime_error(path + ":" + std::to_string(line) + ": " + what);
}

double parse_double_field(const std::string& field, const std::string& path, std::size_t line) {
    const char* begin = field.c_str();
    char* end = nullptr;
    double v = std::strtod(begin, &end);
    if (end == begin || *end != '\0') csv_error(path, line, "malformed number '" + field + "'");
    return v;
}

long long parse_int_field(const std::string& field, const std::string& path, std::size_t line) {
    const char* begin = field.c_str();
    char* end = nullptr;
    long long v = std::strtoll(begin, &end, 10);
    if (end == begin || *end != '\0') csv_error(path, line, "malformed integer '" + field + "'");
    return v;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        if (comma == std::string::npos) {
            fields.push_back(line.substr(start));
            break;
        }
        fields.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
    return fields;
}

}  // namespace

std::size_t Dataset::feature_dim() const {
    return samples.empty() ? 0 : samples.front().features.size();
}

void Dataset::validate() const {
    if (num_classes < 1) throw std::invalid_argument("dataset: num_classes must be >= 1");
    std::unordered_set<std::int64_t> ids;
    const std::size_t dim = feature_dim();
    for (const LabeledSample& s : samples) {
        if (!ids.insert(s.id).second) {
            throw std::invalid_argument("dataset: duplicate sample id " + std::to_string(s.id));
        }
        if (s.label < 0 || s.label >= num_classes) {
            throw std::invalid_argument("dataset: label " + std::to_string(s.label) +
                                        " outside [0, " + std::to_string(num_classes) + ")");
        }
        if (s.features.size() != dim) {
            throw std::invalid_argument("dataset: non-uniform feature length at id " +
                                        std::to_string(s.id));
        }
    }
}

std::vector<int> Dataset::full_class_list() const {
    std::vector<int> classes(static_cast<std::size_t>(num_classes));
    for (int c = 0; c < num_classes; ++c) classes[static_cast<size_t>(c)] = c;
    return classes;
}

void PreprocessConfig::validate() const {
    if (segment_length != 2 * output_dim) {
        throw std::invalid_argument("preprocess: segment length must equal 2 x output dim");
    }
    if (segment_length == 0 || segments_per_recording == 0) {
        throw std::invalid_argument("preprocess: sizes must be positive");
    }
    if (native_rate_hz <= 0.0 || target_rate_hz <= 0.0) {
        throw std::invalid_argument("preprocess: sampling rates must be positive");
    }
}

void SyntheticConfig::validate() const {
    if (num_classes < 1) throw std::invalid_argument("synthetic: num_classes must be >= 1");
    if (noise_sigma < 0.0) throw std::invalid_argument("synthetic: noise sigma must be >= 0");
    if (segment_length != 2 * output_dim) {
        throw std::invalid_argument("synthetic: segment length must equal 2 x output dim");
    }
    if (source_train_per_class == 0 || target_train_per_class == 0 ||
        target_test_per_class == 0) {
        throw std::invalid_argument("synthetic: per-class sample counts must be positive");
    }
    const auto protos = prototypes.empty() ? default_prototypes(num_classes) : prototypes;
    if (protos.size() != static_cast<std::size_t>(num_classes)) {
        throw std::invalid_argument("synthetic: one prototype per class required");
    }
    for (const ClassPrototype& p : protos) {
        if (p.bins.empty() || p.bins.size() != p.amplitudes.size()) {
            throw std::invalid_argument("synthetic: prototype bins/amplitudes mismatch");
        }
        for (std::size_t bin : p.bins) {
            const long long shifted = static_cast<long long>(bin) + target_bin_offset;
            if (shifted < 0 || static_cast<std::size_t>(shifted) >= output_dim ||
                bin >= output_dim) {
                throw std::invalid_argument(
                    "synthetic: prototype bin out of range after domain shift");
            }
        }
    }
}

std::vector<double> downsample(const std::vector<double>& signal, double native_rate,
                               double target_rate) {
    if (native_rate < target_rate) {
        throw std::invalid_argument("downsample: native rate below target rate");
    }
    const double ratio_real = native_rate / target_rate;
    const auto ratio = static_cast<std::size_t>(std::llround(ratio_real));
    if (std::abs(ratio_real - static_cast<double>(ratio)) > 1e-9) {
        throw std::invalid_argument(
            "downsample: non-integer rate ratio; resample externally before import");
    }
    if (ratio == 1) return signal;

    std::vector<double> out(signal.size() / ratio);
    for (std::size_t i = 0; i < out.size(); ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < ratio; ++j) acc += signal[i * ratio + j];
        out[i] = acc / static_cast<double>(ratio);
    }
    return out;
}

SegmentedSpectra segment_and_fft(const std::vector<double>& recording,
                                 const PreprocessConfig& cfg) {
    cfg.validate();
    if (recording.size() < cfg.segment_length) {
        throw std::invalid_argument("segment_and_fft: recording of " +
                                    std::to_string(recording.size()) +
                                    " points is shorter than one segment (" +
                                    std::to_string(cfg.segment_length) + ")");
    }

    const std::size_t full_segments =
        std::min(recording.size() / cfg.segment_length, cfg.segments_per_recording);
    SegmentedSpectra out;
    out.features.reserve(full_segments);
    std::vector<double> segment(cfg.segment_length);
    for (std::size_t s = 0; s < full_segments; ++s) {
        const std::size_t base = s * cfg.segment_length;
        std::copy(recording.begin() + static_cast<std::ptrdiff_t>(base),
                  recording.begin() + static_cast<std::ptrdiff_t>(base + cfg.segment_length),
                  segment.begin());
        out.features.push_back(spectrum_magnitudes(segment, cfg.output_dim));
    }
    out.dropped_points = recording.size() - full_segments * cfg.segment_length;
    return out;
}

std::vector<ClassPrototype> default_prototypes(int num_classes) {
    // Two tones per class, spread across the low spectrum with enough
    // spacing that a small bin offset never crosses class identities.
    std::vector<ClassPrototype> protos;
    protos.reserve(static_cast<std::size_t>(num_classes));
    for (int c = 0; c < num_classes; ++c) {
        const std::size_t primary =
            24 + static_cast<std::size_t>((static_cast<long long>(c) * 392) / num_classes);
        const std::size_t secondary = primary + 11 + static_cast<std::size_t>(c % 3) * 4;
        ClassPrototype p;
        p.bins = {primary, secondary};
        p.amplitudes = {8.0 + 0.25 * c, 5.0};
        protos.push_back(std::move(p));
    }
    return protos;
}

namespace {

LabeledSample synth_sample(const SyntheticConfig& cfg, const std::vector<ClassPrototype>& protos,
                           std::int64_t id, int label, Domain domain, std::mt19937_64& rng) {
    const std::size_t n = cfg.segment_length;
    std::vector<double> signal(n, 0.0);
    const ClassPrototype& proto = protos[static_cast<std::size_t>(label)];
    const bool shifted = domain == Domain::kTarget;
    for (std::size_t tone = 0; tone < proto.bins.size(); ++tone) {
        const auto bin = static_cast<double>(
            static_cast<long long>(proto.bins[tone]) + (shifted ? cfg.target_bin_offset : 0));
        const double amp =
            proto.amplitudes[tone] * (shifted ? cfg.target_amplitude_scale : 1.0);
        const double phase = uniform_range(rng, 0.0, kTwoPi);
        const double omega = kTwoPi * bin / static_cast<double>(n);
        for (std::size_t t = 0; t < n; ++t) {
            signal[t] += amp * std::cos(omega * static_cast<double>(t) + phase);
        }
    }
    if (cfg.noise_sigma > 0.0) {
        for (double& v : signal) v += cfg.noise_sigma * normal_sample(rng);
    }

    PreprocessConfig pc;
    pc.segment_length = cfg.segment_length;
    pc.output_dim = cfg.output_dim;
    pc.segments_per_recording = 1;
    LabeledSample sample;
    sample.id = id;
    sample.label = label;
    sample.domain = domain;
    sample.features = segment_and_fft(signal, pc).features.front();
    return sample;
}

Dataset synth_split(const SyntheticConfig& cfg, const std::vector<ClassPrototype>& protos,
                    std::size_t per_class, Domain domain, std::int64_t& next_id,
                    std::mt19937_64& rng) {
    Dataset d;
    d.num_classes = cfg.num_classes;
    d.present_classes = d.full_class_list();
    d.samples.reserve(per_class * static_cast<std::size_t>(cfg.num_classes));
    for (int c = 0; c < cfg.num_classes; ++c) {
        for (std::size_t s = 0; s < per_class; ++s) {
            d.samples.push_back(synth_sample(cfg, protos, next_id++, c, domain, rng));
        }
    }
    return d;
}

}  // namespace

SyntheticBenchmark synth_generate(const SyntheticConfig& cfg) {
    cfg.validate();
    const auto protos = cfg.prototypes.empty() ? default_prototypes(cfg.num_classes)
                                               : cfg.prototypes;
    std::mt19937_64 rng(mix_seed(cfg.seed, 0x5f3759df));
    std::int64_t next_id = 0;
    SyntheticBenchmark bench;
    bench.source_train =
        synth_split(cfg, protos, cfg.source_train_per_class, Domain::kSource, next_id, rng);
    bench.source_test =
        synth_split(cfg, protos, cfg.source_test_per_class, Domain::kSource, next_id, rng);
    bench.target_train_full =
        synth_split(cfg, protos, cfg.target_train_per_class, Domain::kTarget, next_id, rng);
    bench.target_test =
        synth_split(cfg, protos, cfg.target_test_per_class, Domain::kTarget, next_id, rng);
    return bench;
}

Dataset filter_target_classes(const Dataset& target_full, int k) {
    if (k < 1 || k > target_full.num_classes) {
        throw std::invalid_argument("filter_target_classes: k=" + std::to_string(k) +
                                    " outside [1, " + std::to_string(target_full.num_classes) +
                                    "]");
    }
    std::vector<int> subset(static_cast<std::size_t>(k));
    for (int c = 0; c < k; ++c) subset[static_cast<std::size_t>(c)] = c;
    return filter_target_subset(target_full, subset);
}

Dataset filter_target_subset(const Dataset& target_full, const std::vector<int>& subset) {
    std::set<int> keep(subset.begin(), subset.end());
    if (keep.empty()) throw std::invalid_argument("filter: present-class subset is empty");
    for (int c : keep) {
        if (c < 0 || c >= target_full.num_classes) {
            throw std::invalid_argument("filter: class " + std::to_string(c) +
                                        " outside [0, " +
                                        std::to_string(target_full.num_classes) + ")");
        }
    }
    Dataset filtered;
    filtered.num_classes = target_full.num_classes;
    filtered.present_classes.assign(keep.begin(), keep.end());
    for (const LabeledSample& s : target_full.samples) {
        if (keep.count(s.label)) filtered.samples.push_back(s);
    }
    return filtered;
}

Dataset read_dataset_csv(const std::string& path, Domain domain) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open dataset file " + path);

    std::string line;
    std::size_t line_no = 0;
    if (!std::getline(in, line)) csv_error(path, 1, "missing header");
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = split_csv_line(line);
    if (header.size() < 3 || header[0] != "id" || header[1] != "label") {
        csv_error(path, line_no, "header must be id,label,f0,...");
    }
    const std::size_t dim = header.size() - 2;
    for (std::size_t i = 0; i < dim; ++i) {
        if (header[i + 2] != "f" + std::to_string(i)) {
            csv_error(path, line_no, "unexpected feature column '" + header[i + 2] + "'");
        }
    }

    Dataset d;
    int max_label = 0;
    std::set<int> labels_seen;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != dim + 2) {
            csv_error(path, line_no,
                      "expected " + std::to_string(dim + 2) + " fields, got " +
                          std::to_string(fields.size()));
        }
        LabeledSample s;
        s.id = parse_int_field(fields[0], path, line_no);
        const long long label = parse_int_field(fields[1], path, line_no);
        if (label < 0) csv_error(path, line_no, "negative label");
        s.label = static_cast<int>(label);
        s.domain = domain;
        s.features.resize(dim);
        for (std::size_t i = 0; i < dim; ++i) {
            s.features[i] = parse_double_field(fields[i + 2], path, line_no);
        }
        max_label = std::max(max_label, s.label);
        labels_seen.insert(s.label);
        d.samples.push_back(std::move(s));
    }
    d.num_classes = max_label + 1;
    d.present_classes.assign(labels_seen.begin(), labels_seen.end());
    d.validate();
    return d;
}

void write_dataset_csv(const Dataset& dataset, const std::string& path) {
    dataset.validate();
    std::ofstream out(path, std::ios::binary);  // binary: LF endings everywhere
    if (!out) throw std::runtime_error("cannot write dataset file " + path);

    const std::size_t dim = dataset.feature_dim();
    out << "id,label";
    for (std::size_t i = 0; i < dim; ++i) out << ",f" << i;
    out << "\n";

    char buf[64];
    for (const LabeledSample& s : dataset.samples) {
        out << s.id << "," << s.label;
        for (double v : s.features) {
            std::snprintf(buf, sizeof(buf), "%.17g", v);
            out << "," << buf;
        }
        out << "\n";
    }
    if (!out) throw std::runtime_error("failed writing dataset file " + path);
}

std::vector<double> read_recording(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open recording file " + path);
    std::vector<double> signal;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        signal.push_back(parse_double_field(line, path, line_no));
    }
    return signal;
}

}  // namespace unialign
