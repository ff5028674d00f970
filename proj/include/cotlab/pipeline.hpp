#pragma once

// Experiment orchestration. One INI file describes a whole run: which stages
// execute (generate, train, score, probe, trace, report — always in that
// dependency order), every stage's parameters, and every seed. Loading a
// config materializes each default, and the run directory receives the
// materialized copy plus a manifest of produced files with SHA-256 digests,
// so a run is reproducible from its own artifacts alone: identical config
// and seeds give bit-identical artifact digests for every deterministic
// stage (the wall-clock timings file is kept out of the manifest for exactly
// that reason).
//
// Stages read their inputs from the run directory, not from memory, so any
// suffix of the stage list can be re-run later — a report-only run on
// existing artifacts re-digests them without recomputation. A stage failure
// halts the run and still writes the manifest of whatever exists.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "cotlab/nanoformer.hpp"
#include "cotlab/tracecircuit.hpp"

namespace cotlab::pipeline {

enum class Stage { generate, train, score, probe, trace, report };
inline constexpr int kStageCount = 6;

const char* to_string(Stage s);
Stage parse_stage(const std::string& s);  // throws std::runtime_error on unknown names

// ------------------------------------------------------------ configuration

struct DataParams {
    int train_count = 2048;
    int eval_count = 256;
    int eval_categories = 40;  // fictional categories held out for evaluation
    int n_shots = 2;
    int chain_len = 2;
    int n_distractors = 2;
    double polarity_mix = 0.25;
    double extra_attr_prob = 0.35;
    // "mixed" alternates halves of substitution- and explicit-not-style
    // negatives so the "not" token is in-distribution for probing corpora
    std::string neg_style = "mixed";
    int induction_count = 256;  // bare chains mixed into training batches
    std::uint64_t seed = 11;
};

struct TrainParams {
    int steps = 1200;
    int batch_size = 12;
    double lr = 4e-4;
    double lr_min = 4e-5;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double weight_decay = 0.1;
    double clip = 1.0;
    int warmup_steps = 50;
    double induction_mix = 0.08;
    int eval_every = 64;
    int eval_size = 128;
    double target_acc = 0.90;
    // wall-clock abort guard (0 disables). A run that trips it is not
    // digest-reproducible, so leave it off when comparing manifests.
    double max_minutes = 0.0;
    std::uint64_t seed = 7;
};

struct ScoreParams {
    int limit = 12;            // examples per subtask per score table
    int bank_streams = 64;     // corpus streams aggregated into the ablation bank
    int induction_count = 48;  // induction probes scored
    int bins = 16;             // sweep histogram bins
    int sweep_subtask = 9;
    int sweep_examples = 24;
    double top_fraction = 0.25;  // task-set selection rule
    std::uint64_t seed = 3;
};

struct ProbeParams {
    std::string arch = "mlp";
    std::vector<int> layers;  // residual depths; empty = every depth 0..n_layers
    std::vector<int> shots = {1, 2};
    int train_examples = 150;
    int test_examples = 50;
    // disjoint entity-pool slices reserved for the probe test partition
    int eval_categories = 20;
    int eval_attributes = 12;
    int eval_individuals = 4;
    double lr = 5e-5;
    int epochs = 120;
    int batch_size = 64;
    int threads = 1;
    bool controls = true;  // shuffled-label and linear probes at the best cell
    std::uint64_t seed = 5;
    std::uint64_t collect_seed = 1;
};

struct TraceParams {
    int examples = 8;       // eval examples aggregated into the depth report
    int example_index = 0;  // eval example exported in full and given a flow tree
    int flow_subtask = 9;
    int depth_cap = 8;
    int fanout_cap = 8;
};

struct ExperimentConfig {
    std::string name = "experiment";
    std::string out_dir;  // run directory under the artifact root; empty = name
    std::vector<Stage> stages = {Stage::generate, Stage::train, Stage::score,
                                 Stage::probe,    Stage::trace, Stage::report};
    nanoformer::ModelConfig model;  // vocab_size is always the builtin vocabulary
    std::uint64_t init_seed = 3;
    DataParams data;
    TrainParams train;
    ScoreParams score;
    ProbeParams probe;
    TraceParams trace;
    std::string report_title = "synthetic chain-of-thought lab";

    ExperimentConfig();  // fills the model defaults (8x8, d=256) and vocab size

    static ExperimentConfig from_ini(const std::string& text);
    static ExperimentConfig load(const std::filesystem::path& path);
    std::string to_ini() const;  // every field materialized, fixed section order

    // stage order/duplicates, parameter ranges, model shape; throws on errors
    void validate() const;
};

// -------------------------------------------------------------- artifacts

// file names inside a run directory
inline constexpr const char* kConfigFile = "config.ini";
inline constexpr const char* kVocabFile = "vocab.txt";
inline constexpr const char* kTrainCorpusFile = "corpus_train.jsonl";
inline constexpr const char* kEvalCorpusFile = "corpus_eval.jsonl";
inline constexpr const char* kInductionFile = "induction.txt";
inline constexpr const char* kModelFile = "model.bin";
inline constexpr const char* kMetricsFile = "train_metrics.jsonl";
inline constexpr const char* kEvalFile = "eval.json";
inline constexpr const char* kBankFile = "ablation_bank.bin";
inline constexpr const char* kScoresFile = "scores.tsv";
inline constexpr const char* kSweepFile = "sweep.jsonl";
inline constexpr const char* kTaskSetsFile = "tasksets.json";
inline constexpr const char* kProbeFile = "probes.tsv";
inline constexpr const char* kProbeControlsFile = "probe_controls.json";
inline constexpr const char* kTraceFile = "trace.bin";
inline constexpr const char* kFlowTreeFile = "flowtree.json";
inline constexpr const char* kDepthFile = "depth_report.json";
inline constexpr const char* kAttentionFile = "attention.json";
inline constexpr const char* kReportFile = "report.html";
inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kTimingsFile = "timings.json";

struct StageTiming {
    std::string stage;
    double seconds = 0;
};

struct RunArtifacts {
    std::filesystem::path dir;
    std::string config_digest;                 // sha256 of the materialized config
    std::map<std::string, std::string> files;  // relative path -> sha256
    std::vector<StageTiming> timings;          // stages actually executed

    // re-hashes every listed file; throws std::runtime_error on a mismatch
    void verify() const;
};

// manifest.json round-trip (digest map only; timings live in timings.json)
RunArtifacts load_manifest(const std::filesystem::path& dir);

using Logger = std::function<void(const std::string&)>;

// Executes the configured stages in order inside `dir` (created if needed).
// Every produced file is written atomically; the manifest is written last —
// and also on the way out of a failing stage, covering whatever exists.
RunArtifacts run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& dir,
                            const Logger& log = {});

// stable JSON form of a flow tree; node labels round-trip verbatim
std::string flow_tree_to_json(const tracecircuit::FlowTree& tree);

} // namespace cotlab::pipeline
