#pragma once

// Causal interventions on the transformer: mean-ablation banks built from
// reference streams, head knockouts, activation patching between runs, and
// occurrence-indexed token corruption. Knockouts and patches compile down to
// head_output hooks, so a knockout of nothing and a self-patch are both
// byte-identical to the clean run.

#include <filesystem>
#include <span>
#include <vector>

#include "cotlab/nanoformer.hpp"

namespace cotlab::intervene {

struct HeadRef {
    int layer = 0;
    int head = 0;
    bool operator==(const HeadRef&) const = default;
};

// Per-(layer, head) mean head writes and per-layer mean post-block residuals,
// averaged over every position of every reference stream.
struct AblationBank {
    int n_layers = 0;
    int n_heads = 0;
    int d_model = 0;
    std::int64_t n_rows = 0;        // aggregated position count
    std::vector<float> head_mean;   // L x H x d
    std::vector<float> resid_mean;  // L x d

    std::span<const float> head_row(int layer, int head) const;
    std::span<const float> resid_row(int layer) const;

    void save(const std::filesystem::path& path) const;
    static AblationBank load(const std::filesystem::path& path);
};

AblationBank build_ablation_bank(const nanoformer::Params& p,
                                 std::span<const std::vector<int>> streams);

// Hooks that overwrite each listed head's write with its bank mean at the
// given positions (empty = every position).
std::vector<nanoformer::Hook> knockout_hooks(const AblationBank& bank,
                                             std::span<const HeadRef> heads,
                                             std::span<const int> positions);

// Hooks that transplant the donor run's per-head writes (donor recorded at
// RecordLevel::full) into the listed heads at the given positions (empty =
// every donor position).
std::vector<nanoformer::Hook> patch_hooks(const nanoformer::Cache& donor,
                                          std::span<const HeadRef> heads,
                                          std::span<const int> positions);

nanoformer::Cache run_with_hooks(const nanoformer::Params& p, std::span<const int> tokens,
                                 std::span<const nanoformer::Hook> hooks,
                                 nanoformer::RecordLevel level = nanoformer::RecordLevel::full);

// One token replacement addressed by occurrence index within the original
// stream (0-based; -1 replaces every occurrence). Replacements see the
// original stream, never each other; overlaps and missing occurrences throw.
struct TokenSub {
    int token = 0;
    int occurrence = 0;
    int replacement = 0;
};

std::vector<int> corrupt_input(std::span<const int> tokens, std::span<const TokenSub> subs);

} // namespace cotlab::intervene
