#pragma once
// Layer-wise probing classifiers over concatenated residual-stream pairs.
//
// The question block states relations like "[a] is [b]" / "[a] is not [b]".
// For a pair of token positions (A, B) we read their residual streams at one
// depth and ask a small classifier whether the pair is related (+1), negated
// (-1) or drawn from disjoint components (0). Entities are nonce words, so
// nothing about the pair can be stored in the embeddings or MLP weights: any
// signal above chance had to be moved between the two streams by attention.
//
// Probes are trained per (layer, shot-count) cell with plain SGD on softmax
// cross-entropy. Train and test corpora must use disjoint entity pools; the
// evaluator refuses pairs whose entities were seen in training.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cotlab/nanoformer.hpp"
#include "cotlab/ontogen.hpp"
#include "cotlab/vocab.hpp"

namespace cotlab::probes {

// Accuracy band a balanced 3-way classifier stays inside when the labels
// carry no signal (binomial spread around 1/3 at the pair counts used here).
inline constexpr double kChanceLo = 0.28;
inline constexpr double kChanceHi = 0.39;

int label_to_class(int label);  // -1 / 0 / +1  ->  0 / 1 / 2
int class_to_label(int cls);

// ---------------------------------------------------------------- datasets

// Rows are [x_A : x_B] features of length 2 * d_model; layer 0 reads the
// embeddings, layer j >= 1 the residual stream after block j.
struct ProbeDataset {
    int layer = 0;
    int shot_count = 0;
    int d_model = 0;
    std::string partition;  // entity-pool id, e.g. "train" / "eval"
    std::vector<float> features;                  // n x 2d, row-major
    std::vector<int> labels;                      // -1, 0, +1
    std::vector<std::array<int, 2>> pair_tokens;  // entity token ids per row

    int n() const { return static_cast<int>(labels.size()); }
    int d_in() const { return 2 * d_model; }
    std::span<const float> feature_row(int i) const;
    std::array<int, 3> class_counts() const;
    // shapes and label alphabet; balance is required of training data only
    void validate(bool require_balanced) const;
};

// sorted unique entity token ids appearing in the rows
std::vector<int> entity_tokens(const ProbeDataset& ds);

// Harvest one row per stated relation (subject/object positions, label +1 or
// -1) plus cross-component rows (label 0), then balance the three classes by
// seeded subsampling. The same seed selects the same pairs at every layer.
ProbeDataset collect_pair_features(const nanoformer::Params& p,
                                   std::span<const ontogen::ReasoningExample> corpus, int layer,
                                   int shot_count, const std::string& partition,
                                   std::uint64_t seed);

// label-permutation control; rows and class balance stay intact
ProbeDataset shuffle_labels(const ProbeDataset& ds, std::uint64_t seed);

void save_dataset(const std::filesystem::path& path, const ProbeDataset& ds);
ProbeDataset load_dataset(const std::filesystem::path& path);

// ------------------------------------------------------------------ models

enum class ProbeArch { linear, mlp };
const char* to_string(ProbeArch a);
ProbeArch parse_arch(const std::string& s);

struct ProbeHyper {
    double lr = 0.00005;
    int epochs = 120;
    int batch_size = 64;
    std::uint64_t seed = 0;
};

// linear: 2d -> 3. mlp: 2d -> 128 -> 64 -> 32 -> 3 with rectifiers between.
// Hidden widths stay fixed regardless of the subject model's d_model.
struct ProbeModel {
    ProbeArch arch = ProbeArch::mlp;
    int d_in = 0;
    std::vector<int> widths;               // output width per layer, last is 3
    std::vector<std::vector<float>> w, b;  // w[k] is in x out, row-major
    // per-dimension standardization fitted on the training features
    std::vector<float> feat_mu, feat_sigma;
    std::string train_partition;
    std::vector<int> train_entities;  // sorted unique token ids

    std::array<double, 3> class_scores(std::span<const float> feature) const;
    int predict(std::span<const float> feature) const;  // argmax, ties -> lowest
};

// plain SGD on softmax cross-entropy; throws when the loss stops being finite
ProbeModel train_probe(const ProbeDataset& train, ProbeArch arch, const ProbeHyper& hyper);

struct ProbeEval {
    double accuracy = 0;
    std::array<std::array<int, 3>, 3> confusion{};  // [true class][predicted]
    int n = 0;
};

// Refuses to evaluate when test entities overlap the probe's training
// entities; the offending token ids are listed in the error. Passing
// enforce_disjoint = false permits optimism checks on the training set.
ProbeEval eval_probe(const ProbeModel& probe, const ProbeDataset& test,
                     bool enforce_disjoint = true);

// ------------------------------------------------------------------ sweeps

struct ShotCorpora {
    std::vector<ontogen::ReasoningExample> train, test;
    std::string train_partition = "train";
    std::string test_partition = "eval";
};
using CorpusFactory = std::function<ShotCorpora(int n_shots)>;

struct ProbeCell {
    int layer = 0, shot = 0;
    int n_train = 0, n_test = 0;
    double accuracy = 0;
    std::array<std::array<int, 3>, 3> confusion{};
};

struct ProbeReport {
    std::string arch;
    // which residual variant the features were read from
    std::string read_point = "post-block residual, layer 0 = embeddings";
    std::vector<ProbeCell> cells;  // sorted by (layer, shot)

    const ProbeCell* cell(int layer, int shot) const;
};

struct SweepConfig {
    ProbeHyper hyper;
    std::uint64_t collect_seed = 1;
    int threads = 0;  // 0 = hardware concurrency
};

// One probe per (layer, shot): the factory supplies entity-disjoint corpora
// per shot count, features for all layers come from one forward per example,
// and cells train independently on a small thread pool. Results do not
// depend on the thread schedule.
ProbeReport sweep_layers_shots(const nanoformer::Params& p, const CorpusFactory& factory,
                               std::span<const int> layers, std::span<const int> shots,
                               ProbeArch arch, const SweepConfig& cfg);

void save_report(const std::filesystem::path& path, const ProbeReport& report);
ProbeReport load_report(const std::filesystem::path& path);

// Entity pools with nothing shared between train and eval: categories,
// attributes and individuals are all split disjointly.
std::pair<ontogen::EntityPools, ontogen::EntityPools> disjoint_probe_pools(
    const WordLists& lists, int eval_categories, int eval_attributes, int eval_individuals);

} // namespace cotlab::probes
