#pragma once

// A small decoder-only transformer with rotary position embeddings, pre-norm
// RMSNorm blocks, per-head attention projections and a gated MLP. The whole
// stack is templated on the scalar type: float for production (routed through
// the runtime kernel dispatch) and double for finite-difference gradient
// checking.
//
// There is exactly one forward implementation. A full forward pass is the
// suffix pass starting from an empty cache, and because every kernel
// accumulates along K in ascending order per output element, extending a
// cached prefix reproduces the full pass bit for bit. Interventions are
// expressed as hooks that replace activation rows at named sites before the
// surrounding computation consumes them; a run with no hooks is byte-identical
// to a plain forward.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cotlab/kernels.hpp"

namespace cotlab::nanoformer {

struct ModelConfig {
    int n_layers = 2;
    int n_heads = 2;
    int d_model = 32;
    int d_ff = 64;
    int vocab_size = 64;
    int max_seq = 512;
    float rope_base = 10000.0f;
    float norm_eps = 1e-5f;

    int d_head() const { return d_model / n_heads; }
    void validate() const;  // throws std::invalid_argument on bad shapes
    bool operator==(const ModelConfig&) const = default;
};

template <class T>
struct LayerParams {
    std::vector<T> attn_gain;  // d
    std::vector<T> wq, wk, wv; // d x d, head k owns output columns [k*dh, (k+1)*dh)
    std::vector<T> wo;         // d x d, head k owns input rows [k*dh, (k+1)*dh)
    std::vector<T> mlp_gain;   // d
    std::vector<T> wg, wu;     // d x d_ff
    std::vector<T> wd;         // d_ff x d
};

// One named, flattened view per parameter tensor; the order is fixed and shared
// by the optimizer, the gradient checker and the checkpoint format.
template <class T>
struct NamedView {
    std::string name;
    T* data;
    std::size_t size;
};

template <class T>
struct ParamBlocks {
    ModelConfig cfg;
    std::vector<T> embed;       // V x d
    std::vector<LayerParams<T>> layers;
    std::vector<T> final_gain;  // d
    std::vector<T> unembed;     // d x V

    static ParamBlocks zeros(const ModelConfig& cfg);
    std::vector<NamedView<T>> views();
    std::vector<NamedView<const T>> views() const;
    std::size_t param_count() const;
};

using Params = ParamBlocks<float>;

// Random initialization: embeddings N(0, 1/sqrt(d)), projections N(0, 1/sqrt(fan_in))
// with the residual-writing mats (wo, wd) scaled down by 1/sqrt(2L), gains 1,
// and the unembedding initialized as the transpose of the embedding table so
// every token id starts out argmax-aligned with its own embedding.
Params init_params(const ModelConfig& cfg, std::uint64_t seed);

// ------------------------------------------------------------------ hooks

enum class HookSite : int {
    head_output = 0,        // per-head write y_{j,k} (length d), after w_o
    residual_pre_attn = 1,  // x entering block j
    residual_post_attn = 2, // x after adding all head writes
    residual_post_block = 3 // x after adding the MLP write
};

// Replaces the activation row at (site, layer[, head]) and position `pos`
// (-1 = every position) with `value` before downstream computation reads it.
struct Hook {
    HookSite site;
    int layer = 0;
    int head = -1;  // required for head_output, must stay -1 elsewhere
    int pos = -1;
    std::vector<float> value;  // length d_model
};

// ------------------------------------------------------------------ cache

enum class RecordLevel : int {
    logits_only = 0,  // tokens, k/v per layer, residuals, logits (generation)
    train = 1,        // + everything backward needs
    full = 2          // + per-head writes and attention for analysis
};

template <class T>
struct LayerCache {
    std::vector<T> x_pre;     // N x d, residual entering the block
    std::vector<T> h_attn;    // N x d, normed attention input       (train)
    std::vector<T> q_rot;     // N x H x dh, rotated queries         (train|full)
    std::vector<T> k_rot;     // N x H x dh, rotated keys
    std::vector<T> v;         // N x H x dh
    std::vector<T> att;       // causal rows packed (i, k), length i+1 (train|full)
    std::vector<T> attn_out;  // N x d, per-head mixes before w_o    (train)
    std::vector<T> y;         // N x H x d, per-head writes          (full)
    std::vector<T> x_mid;     // N x d, residual after attention
    std::vector<T> h_mlp;     // N x d, normed MLP input             (train)
    std::vector<T> gate_pre;  // N x d_ff                            (train)
    std::vector<T> up;        // N x d_ff                            (train)
};

template <class T>
struct ActivationCache {
    ModelConfig cfg;
    RecordLevel level = RecordLevel::full;
    int n = 0;  // positions computed so far
    std::vector<int> tokens;
    std::vector<LayerCache<T>> layers;
    std::vector<T> x_final;   // N x d, residual after the last block
    std::vector<T> xn_final;  // N x d, final-normed residual        (train)
    std::vector<T> logits;    // N x V

    // offset of attention row (i, head k) inside att: rows are packed in
    // position order, H rows per position, row i has length i+1
    std::size_t att_offset(int i, int k) const {
        const std::size_t ii = static_cast<std::size_t>(i);
        return (ii * (ii + 1) / 2) * static_cast<std::size_t>(cfg.n_heads) +
               static_cast<std::size_t>(k) * (ii + 1);
    }
    std::span<const T> att_row(int layer, int head, int i) const {
        return {layers[layer].att.data() + att_offset(i, head),
                static_cast<std::size_t>(i) + 1};
    }
    std::span<const T> row(const std::vector<T>& t, int i, int stride) const {
        return {t.data() + static_cast<std::size_t>(i) * stride,
                static_cast<std::size_t>(stride)};
    }
    std::span<const T> x_pre_row(int layer, int i) const { return row(layers[layer].x_pre, i, cfg.d_model); }
    std::span<const T> x_mid_row(int layer, int i) const { return row(layers[layer].x_mid, i, cfg.d_model); }
    // residual after block j == residual entering block j+1
    std::span<const T> x_post_row(int layer, int i) const {
        return layer + 1 < cfg.n_layers ? x_pre_row(layer + 1, i) : row(x_final, i, cfg.d_model);
    }
    std::span<const T> y_row(int layer, int head, int i) const {
        const auto& y = layers[layer].y;
        return {y.data() + (static_cast<std::size_t>(i) * cfg.n_heads + head) * cfg.d_model,
                static_cast<std::size_t>(cfg.d_model)};
    }
    std::span<const T> logits_row(int i) const { return row(logits, i, cfg.vocab_size); }

    // Drops every row at position >= n_keep so the stored prefix can be
    // extended again along a different branch; scoring loops reuse one
    // prefix cache across many hooked continuations this way.
    void truncate(int n_keep) {
        if (n_keep < 0 || n_keep > n) throw std::invalid_argument("truncate: bad row count");
        if (n_keep == n) return;
        const auto nk = static_cast<std::size_t>(n_keep);
        const auto d = static_cast<std::size_t>(cfg.d_model);
        const auto dff = static_cast<std::size_t>(cfg.d_ff);
        const auto H = static_cast<std::size_t>(cfg.n_heads);
        auto cut = [nk](std::vector<T>& t, std::size_t stride) {
            t.resize(std::min(t.size(), nk * stride));
        };
        for (auto& lc : layers) {
            cut(lc.x_pre, d);
            cut(lc.h_attn, d);
            cut(lc.q_rot, d);
            cut(lc.k_rot, d);
            cut(lc.v, d);
            lc.att.resize(std::min(lc.att.size(), nk * (nk + 1) / 2 * H));
            cut(lc.attn_out, d);
            cut(lc.y, H * d);
            cut(lc.x_mid, d);
            cut(lc.h_mlp, d);
            cut(lc.gate_pre, dff);
            cut(lc.up, dff);
        }
        cut(x_final, d);
        cut(xn_final, d);
        cut(logits, static_cast<std::size_t>(cfg.vocab_size));
        tokens.resize(nk);
        n = n_keep;
    }
};

using Cache = ActivationCache<float>;

// Rotate one head vector in place: adjacent pairs (2t, 2t+1) by angle
// pos * base^(-2t/dh). Exposed for the shift-invariance property test.
template <class T>
void rope_apply(T* x, int dh, int pos, T base) {
    for (int t = 0; 2 * t + 1 < dh; ++t) {
        const T theta = T(pos) * std::pow(base, T(-2.0) * T(t) / T(dh));
        const T c = std::cos(theta), s = std::sin(theta);
        const T a = x[2 * t], b = x[2 * t + 1];
        x[2 * t] = a * c - b * s;
        x[2 * t + 1] = a * s + b * c;
    }
}

// Resets the cache and runs the whole sequence.
template <class T>
void forward(const ParamBlocks<T>& p, std::span<const int> tokens,
             ActivationCache<T>& cache, RecordLevel level,
             std::span<const Hook> hooks = {});

// Extends a cached run by `new_tokens`, reusing the stored keys/values of the
// prefix. Appended rows are bitwise identical to a full forward of the
// concatenated sequence under the same hooks.
template <class T>
void forward_suffix(const ParamBlocks<T>& p, std::span<const int> new_tokens,
                    ActivationCache<T>& cache, std::span<const Hook> hooks = {});

// ---------------------------------------------------------------- training

// Mean cross-entropy of next-token predictions at positions i whose target
// i+1 carries loss_mask == 1. Returns the loss and the target count.
template <class T>
struct LossResult {
    T loss = T(0);
    int n_targets = 0;
};

template <class T>
LossResult<T> masked_ce_loss(const ActivationCache<T>& cache, std::span<const int> tokens,
                             std::span<const std::uint8_t> loss_mask);

// Full backward pass; accumulates parameter gradients into `grads` (same
// shapes as `p`, caller-zeroed or carrying a previous batch member's sums).
// The cache must have been recorded at RecordLevel::train or above.
template <class T>
LossResult<T> loss_and_grad(const ParamBlocks<T>& p, const ActivationCache<T>& cache,
                            std::span<const int> tokens, std::span<const std::uint8_t> loss_mask,
                            ParamBlocks<T>& grads);

// ---------------------------------------------------------------- sampling

// Greedy decoding (argmax, ties to the lowest token id). Generation stops
// after `max_new` tokens, when max_seq is reached, or right after emitting a
// token from `stop_tokens` (which is included in the returned suffix).
std::vector<int> generate(const Params& p, std::span<const int> prompt, int max_new,
                          std::span<const int> stop_tokens);

// -------------------------------------------------------------- checkpoints

void save_checkpoint(const std::filesystem::path& path, const Params& p,
                     const std::string& extra_meta_json = "{}");
Params load_checkpoint(const std::filesystem::path& path, std::string* extra_meta_json = nullptr);

} // namespace cotlab::nanoformer
