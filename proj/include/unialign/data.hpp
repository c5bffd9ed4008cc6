#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace unialign {

enum class Domain { kSource, kTarget };

struct LabeledSample {
    std::int64_t id = 0;
    std::vector<double> features;
    int label = 0;
    Domain domain = Domain::kSource;
};

struct Dataset {
    std::vector<LabeledSample> samples;
    int num_classes = 0;
    // Classes present in this split (Y_sub after filtering). Covers all of
    // Y for unfiltered data.
    std::vector<int> present_classes;

    std::size_t size() const { return samples.size(); }
    std::size_t feature_dim() const;
    void validate() const;  // unique ids, labels in [0, C), uniform dim
    std::vector<int> full_class_list() const;
};

struct PreprocessConfig {
    double native_rate_hz = 12000.0;
    double target_rate_hz = 12000.0;
    std::size_t segment_length = 1024;
    std::size_t segments_per_recording = 200;
    std::size_t output_dim = 512;

    void validate() const;
};

struct ClassPrototype {
    std::vector<std::size_t> bins;
    std::vector<double> amplitudes;
};

// Desk-scale two-domain benchmark: each class is a set of spectral tones;
// target-domain samples get an amplitude scale and a frequency-bin offset
// before synthesis, standing in for an operating-condition shift.
struct SyntheticConfig {
    int num_classes = 10;
    std::size_t source_train_per_class = 12;
    std::size_t source_test_per_class = 12;
    std::size_t target_train_per_class = 12;
    std::size_t target_test_per_class = 12;
    std::vector<ClassPrototype> prototypes;  // empty -> default_prototypes(num_classes)
    double target_amplitude_scale = 1.5;
    int target_bin_offset = 2;
    double noise_sigma = 0.05;
    std::size_t segment_length = 1024;
    std::size_t output_dim = 512;
    std::uint64_t seed = 1;

    void validate() const;
};

struct SyntheticBenchmark {
    Dataset source_train;
    Dataset source_test;
    Dataset target_train_full;
    Dataset target_test;  // target domain, all classes
};

// Anti-aliased integer-ratio decimation: ratio-sized block means.
std::vector<double> downsample(const std::vector<double>& signal, double native_rate,
                               double target_rate = 12000.0);

struct SegmentedSpectra {
    std::vector<std::vector<double>> features;
    std::size_t dropped_points = 0;  // tail that did not fill a segment
};

// Consecutive non-overlapping segments; per segment, DFT magnitudes at bins
// 0..output_dim-1, each divided by the segment length.
SegmentedSpectra segment_and_fft(const std::vector<double>& recording,
                                 const PreprocessConfig& cfg);

std::vector<ClassPrototype> default_prototypes(int num_classes);

SyntheticBenchmark synth_generate(const SyntheticConfig& cfg);

// Keeps exactly the samples with label < k, unchanged; Y_sub = {0..k-1}.
Dataset filter_target_classes(const Dataset& target_full, int k);

// Keeps exactly the samples whose label is in `subset` (for robustness
// probes with an arbitrary present-class set).
Dataset filter_target_subset(const Dataset& target_full, const std::vector<int>& subset);

// CSV with header id,label,f0,...,f{d-1}; round-trips values through 17
// significant digits.
Dataset read_dataset_csv(const std::string& path, Domain domain = Domain::kSource);
void write_dataset_csv(const Dataset& dataset, const std::string& path);

// Raw recording: one real number per line.
std::vector<double> read_recording(const std::string& path);

}  // namespace unialign
