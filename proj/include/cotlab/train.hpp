#pragma once

// Training loop for the reasoning task: AdamW with warmup+cosine schedule,
// global-norm gradient clipping, per-sequence gradient accumulation (no
// padding), deterministic batch order from a seed, and early stopping on the
// minimum per-slot exact-match accuracy of a held-out set. Also hosts the
// finite-difference gradient checker used by the numeric test gates.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cotlab/nanoformer.hpp"
#include "cotlab/ontogen.hpp"

namespace cotlab::train {

struct AdamWConfig {
    double lr = 4e-4;
    double lr_min = 4e-5;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    double weight_decay = 0.1;  // decoupled; skipped for the 1-D gain vectors
    double clip = 1.0;          // global gradient norm
    int warmup_steps = 50;
};

struct TrainConfig {
    AdamWConfig opt;
    int steps = 1000;
    int batch_size = 12;
    std::uint64_t seed = 0;
    double induction_mix = 0.08;  // fraction of batch rows drawn from bare chains
    int eval_every = 64;
    int eval_size = 128;          // examples used per held-out evaluation
    double target_acc = 0.90;     // early stop once min per-slot EM reaches this
    double max_minutes = 0.0;     // wall-clock abort guard, 0 disables
    int log_every = 16;
    std::filesystem::path metrics_path;  // JSONL, empty disables
    std::function<void(const std::string&)> logger;  // optional progress sink
};

// Teacher-forced accuracy at the ten answer slots plus the verdict token.
struct EvalResult {
    std::array<double, 10> slot_em{};
    double verdict_acc = 0.0;
    int n_examples = 0;

    double min_em() const;
};

EvalResult eval_subtask_em(const nanoformer::Params& p,
                           std::span<const ontogen::ReasoningExample> corpus,
                           int limit = 0);

struct TrainReport {
    int steps_run = 0;
    double final_loss = 0.0;
    EvalResult final_eval;
    bool reached_target = false;
    bool aborted_on_time = false;
};

// Optimizes `p` in place. `induction_seqs` are short bare token chains mixed
// into batches (full-sequence loss) so induction patterns get direct signal;
// pass an empty span to disable regardless of cfg.induction_mix.
TrainReport train_model(nanoformer::Params& p,
                        std::span<const ontogen::ReasoningExample> train_set,
                        std::span<const ontogen::ReasoningExample> eval_set,
                        std::span<const std::vector<int>> induction_seqs,
                        const TrainConfig& cfg);

// Central finite differences over every parameter of a double-precision model
// against the analytic gradients, on a random masked sequence. Relative error
// uses max(|fd|, |analytic|, 1e-5) as the denominator.
struct GradCheckResult {
    double max_rel_err = 0.0;
    std::string worst_param;
    std::size_t checked = 0;
};

GradCheckResult grad_check(const nanoformer::ModelConfig& cfg, std::uint64_t seed,
                           double fd_eps = 1e-5, int seq_len = 12);

} // namespace cotlab::train
