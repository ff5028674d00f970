#pragma once
// Circuit-level analyses over one recorded forward pass: logit lens,
// context-abidance scores, answer-writing head detection, recursive
// information-flow trees, answer-source attribution and attention profiles.
//
// Everything operates on a TraceView — a self-contained snapshot of residual
// streams, per-head writes, attention rows and the unembedding matrix. A view
// is built from a live cache or imported from a trace file, so the analyses
// also run on activation dumps produced outside this codebase. All analyses
// are read-only; traces for different examples can be processed in parallel.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cotlab/nanoformer.hpp"
#include "cotlab/ontogen.hpp"
#include "cotlab/vocab.hpp"

namespace cotlab::tracecircuit {

using nanoformer::Cache;
using nanoformer::ModelConfig;
using nanoformer::Params;

// ---------------------------------------------------------------- trace

// Snapshot of one forward pass. x_pre holds n_layers + 1 stream images: the
// residual entering each block, then the final residual after the last block.
// y and att use the same packing as the activation cache.
struct TraceView {
    static constexpr std::int32_t kVersion = 1;

    ModelConfig cfg;
    std::vector<int> tokens;
    ontogen::Segments segments;
    int n = 0;

    std::vector<float> x_pre;    // (L+1) x n x d
    std::vector<float> y;        // L x n x H x d
    std::vector<float> att;      // L x causal rows packed as in the cache
    std::vector<float> unembed;  // d x V

    std::span<const float> x_row(int layer, int pos) const;       // layer in [0, L]
    std::span<const float> y_row(int layer, int head, int pos) const;
    std::span<const float> att_row(int layer, int head, int pos) const;

    void validate() const;  // throws std::invalid_argument on shape mismatch
};

// Copies the relevant activations out of a full-level cache.
TraceView make_trace(const Params& p, const Cache& cache, const ontogen::Segments& segments);

// Forward at full record level, then snapshot.
TraceView run_trace(const Params& p, std::span<const int> tokens,
                    const ontogen::Segments& segments);

void export_trace(const std::filesystem::path& path, const TraceView& trace);
TraceView import_trace(const std::filesystem::path& path);

// ------------------------------------------------------------ logit lens

struct LensResult {
    int token = 0;             // argmax of the unembedded vector, ties -> lowest id
    double prob = 0.0;         // softmax probability of that token
    std::vector<double> dist;  // full softmax distribution over the vocabulary
};

LensResult logit_lens(const TraceView& trace, std::span<const float> vec);

// ------------------------------------------------------- context abidance

// c_{j,k}: the fraction of evaluable positions i where (s_i, head (j,k)'s
// projected token at i) is an ordered adjacent bigram occurring anywhere in
// the token sequence. A position is evaluable when its token starts at least
// one such bigram; heads with no evaluable positions are masked rather than
// scored.
struct ContextAbidanceMatrix {
    int n_layers = 0, n_heads = 0;
    std::vector<double> c;             // L x H, entries in [0, 1]
    std::vector<std::uint8_t> masked;  // L x H, 1 = no evaluable positions

    double at(int layer, int head) const;
    bool is_masked(int layer, int head) const;
};

ContextAbidanceMatrix context_abidance(const TraceView& trace);

// --------------------------------------------------------- answer writers

struct AnswerWriter {
    int layer = 0, head = 0;
    double prob = 0.0;  // softmax probability of the answer in the head output
};

// Heads whose unembedded write at `pos` argmaxes to the answer token, sorted
// by probability (descending, ties by layer then head).
struct AnswerWriterReport {
    int subtask = -1;  // -1 when the query is not tied to a subtask
    int pos = 0;
    int answer = 0;
    std::vector<AnswerWriter> writers;
};

AnswerWriterReport find_answer_writers(const TraceView& trace, int pos, int answer,
                                       int subtask = -1);

// Convenience: the trace must be of exactly the instance prompt.
AnswerWriterReport find_answer_writers(const TraceView& trace,
                                       const ontogen::SubtaskInstance& inst);

// -------------------------------------------------------------- flow tree

// One head in the flow tree, represented by its triplet: source stream s_l
// (argmax attention key, ties -> lowest position), target stream s_i, and the
// written token (argmax of the unembedded head output at the target).
struct FlowNode {
    int layer = 0, head = 0;
    int target = 0;          // s_i, stream the head writes into
    int source = 0;          // s_l, stream the head reads from
    int info = 0;            // token the head writes
    double info_prob = 0.0;  // softmax probability of that token in the write
    int source_content = 0;  // token held by the source stream entering this layer
    std::string label;       // "<j>-<k><source word><source pos><info word>"
    std::vector<int> children;       // indices into FlowTree::nodes
    bool children_truncated = false; // fan-out cap dropped candidates
    bool depth_truncated = false;    // depth cap stopped expansion
};

// Rooted at the answer writers; children of a node at layer j are heads in
// layers < j that write the node's source content into the node's source
// stream. Expansion stops at the first decoder block, at the first token
// position, or at the caps (always recorded). Equal (layer, head, target)
// nodes are shared, so the result is a DAG; layers strictly decrease along
// every root-to-leaf path.
struct FlowTree {
    int depth_cap = 8, fanout_cap = 8;
    int answer = -1;              // copied from the report that rooted the tree
    std::vector<int> roots;       // node indices, one per answer writer
    std::vector<FlowNode> nodes;
};

FlowTree build_flow_tree(const TraceView& trace, const AnswerWriterReport& writers,
                         const Vocab& vocab, int depth_cap = 8, int fanout_cap = 8);

// ------------------------------------------------------ source attribution

enum class SegmentLabel : int { fewshot = 0, question = 1, generated = 2 };

std::string to_string(SegmentLabel s);

// Tree heads whose source stream holds the answer token, labeled by the
// segment the source position falls in. One entry per distinct
// (layer, head, source).
struct SourceAttribution {
    struct Entry {
        int layer = 0, head = 0, source = 0;
        SegmentLabel segment = SegmentLabel::question;
    };
    int answer = 0;
    std::vector<Entry> entries;

    int count(SegmentLabel s) const;
};

SourceAttribution attribute_answer_sources(const FlowTree& tree, const TraceView& trace);

// ------------------------------------------------------ attention profile

// Mean over every head of the attention probability at `query` for each key
// in [key_begin, key_end); keys after the query contribute zero. Over the
// full key range the profile sums to 1 (mean of causal rows).
std::vector<double> attention_profile(const TraceView& trace, int query, int key_begin,
                                      int key_end);

} // namespace cotlab::tracecircuit
