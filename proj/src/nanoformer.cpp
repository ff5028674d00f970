#include "cotlab/nanoformer.hpp"

#include <algorithm>
#include <cstring>
#include <stdexcept>

#include <json.hpp>

#include "cotlab/rng.hpp"
#include "cotlab/tensorio.hpp"

namespace cotlab::nanoformer {

namespace {

using kernels::axpy;
using kernels::dot;
using kernels::gemm_nn;
using kernels::gemm_nt;
using kernels::gemm_tn;
using kernels::rmsnorm;
using kernels::silu_gate;
using kernels::softmax;

void require(bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument(what);
}

// inverse rotation (by -theta); rotations are orthogonal so this is also the
// gradient mapping from rotated coordinates back to the projection outputs
template <class T>
void rope_unapply(T* x, int dh, int pos, T base) {
    for (int t = 0; 2 * t + 1 < dh; ++t) {
        const T theta = T(pos) * std::pow(base, T(-2.0) * T(t) / T(dh));
        const T c = std::cos(theta), s = std::sin(theta);
        const T a = x[2 * t], b = x[2 * t + 1];
        x[2 * t] = a * c + b * s;
        x[2 * t + 1] = -a * s + b * c;
    }
}

// d(out)/d(x) of out = x * gain / rms(x); overwrites dx, accumulates dgain
template <class T>
void rmsnorm_bwd(const T* x, const T* gain, const T* dout, T* dx, T* dgain,
                 std::size_t n, T eps) {
    T ss = T(0);
    for (std::size_t i = 0; i < n; ++i) ss += x[i] * x[i];
    const T r2 = ss / T(n) + eps;
    const T inv = T(1) / std::sqrt(r2);
    T proj = T(0);  // sum_i dout_i * gain_i * x_i
    for (std::size_t i = 0; i < n; ++i) proj += dout[i] * gain[i] * x[i];
    const T coef = proj * inv / (T(n) * r2);
    for (std::size_t i = 0; i < n; ++i) {
        dgain[i] += dout[i] * x[i] * inv;
        dx[i] = dout[i] * gain[i] * inv - x[i] * coef;
    }
}

template <class T>
T silu(T x) {
    return x / (T(1) + std::exp(-x));
}

template <class T>
T silu_grad(T x) {
    const T s = T(1) / (T(1) + std::exp(-x));
    return s * (T(1) + x * (T(1) - s));
}

void validate_hooks(std::span<const Hook> hooks, const ModelConfig& cfg) {
    for (const auto& h : hooks) {
        require(h.layer >= 0 && h.layer < cfg.n_layers, "hook layer out of range");
        if (h.site == HookSite::head_output)
            require(h.head >= 0 && h.head < cfg.n_heads, "head_output hook needs a head index");
        else
            require(h.head == -1, "residual hooks must not name a head");
        require(h.pos >= -1 && h.pos < cfg.max_seq, "hook position out of range");
        require(static_cast<int>(h.value.size()) == cfg.d_model,
                "hook value must have d_model entries");
    }
}

// replace rows of `buf` (M x d, rows P..P+M-1 of the stream) per matching hooks
template <class T>
void apply_row_hooks(std::span<const Hook> hooks, HookSite site, int layer, int head,
                     int P, int M, T* buf, int d) {
    for (const auto& h : hooks) {
        if (h.site != site || h.layer != layer || h.head != head) continue;
        const auto put = [&](int m) {
            T* row = buf + static_cast<std::size_t>(m) * d;
            for (int c = 0; c < d; ++c) row[c] = static_cast<T>(h.value[static_cast<std::size_t>(c)]);
        };
        if (h.pos == -1)
            for (int m = 0; m < M; ++m) put(m);
        else if (h.pos >= P && h.pos < P + M)
            put(h.pos - P);
    }
}

template <class T>
void append_rows(std::vector<T>& dst, const T* src, std::size_t count) {
    dst.insert(dst.end(), src, src + count);
}

} // namespace

void ModelConfig::validate() const {
    require(n_layers >= 1, "n_layers must be >= 1");
    require(n_heads >= 1, "n_heads must be >= 1");
    require(d_model >= 2 && d_model % n_heads == 0, "d_model must be a multiple of n_heads");
    require(d_head() >= 2 && d_head() % 2 == 0, "d_head must be even for rotary pairs");
    require(d_ff >= 1, "d_ff must be >= 1");
    require(vocab_size >= 1, "vocab_size must be >= 1");
    require(max_seq >= 1, "max_seq must be >= 1");
    require(rope_base > 0.0f, "rope_base must be positive");
    require(norm_eps > 0.0f, "norm_eps must be positive");
}

template <class T>
ParamBlocks<T> ParamBlocks<T>::zeros(const ModelConfig& cfg) {
    cfg.validate();
    ParamBlocks<T> p;
    p.cfg = cfg;
    const std::size_t d = cfg.d_model, dff = cfg.d_ff, V = cfg.vocab_size;
    p.embed.assign(V * d, T(0));
    p.layers.resize(cfg.n_layers);
    for (auto& l : p.layers) {
        l.attn_gain.assign(d, T(0));
        l.wq.assign(d * d, T(0));
        l.wk.assign(d * d, T(0));
        l.wv.assign(d * d, T(0));
        l.wo.assign(d * d, T(0));
        l.mlp_gain.assign(d, T(0));
        l.wg.assign(d * dff, T(0));
        l.wu.assign(d * dff, T(0));
        l.wd.assign(dff * d, T(0));
    }
    p.final_gain.assign(d, T(0));
    p.unembed.assign(d * V, T(0));
    return p;
}

template <class T>
std::vector<NamedView<T>> ParamBlocks<T>::views() {
    std::vector<NamedView<T>> v;
    v.push_back({"embed", embed.data(), embed.size()});
    for (std::size_t j = 0; j < layers.size(); ++j) {
        auto& l = layers[j];
        const std::string pre = "layers." + std::to_string(j) + ".";
        v.push_back({pre + "attn_gain", l.attn_gain.data(), l.attn_gain.size()});
        v.push_back({pre + "wq", l.wq.data(), l.wq.size()});
        v.push_back({pre + "wk", l.wk.data(), l.wk.size()});
        v.push_back({pre + "wv", l.wv.data(), l.wv.size()});
        v.push_back({pre + "wo", l.wo.data(), l.wo.size()});
        v.push_back({pre + "mlp_gain", l.mlp_gain.data(), l.mlp_gain.size()});
        v.push_back({pre + "wg", l.wg.data(), l.wg.size()});
        v.push_back({pre + "wu", l.wu.data(), l.wu.size()});
        v.push_back({pre + "wd", l.wd.data(), l.wd.size()});
    }
    v.push_back({"final_gain", final_gain.data(), final_gain.size()});
    v.push_back({"unembed", unembed.data(), unembed.size()});
    return v;
}

template <class T>
std::vector<NamedView<const T>> ParamBlocks<T>::views() const {
    auto mut = const_cast<ParamBlocks<T>*>(this)->views();
    std::vector<NamedView<const T>> v;
    v.reserve(mut.size());
    for (auto& m : mut) v.push_back({m.name, m.data, m.size});
    return v;
}

template <class T>
std::size_t ParamBlocks<T>::param_count() const {
    std::size_t n = 0;
    for (const auto& v : views()) n += v.size;
    return n;
}

Params init_params(const ModelConfig& cfg, std::uint64_t seed) {
    Params p = Params::zeros(cfg);
    Rng rng(seed);
    const float d = static_cast<float>(cfg.d_model);
    const float resid_scale = 1.0f / std::sqrt(2.0f * static_cast<float>(cfg.n_layers));
    const auto fill = [&](std::vector<float>& w, float sigma) {
        for (auto& x : w) x = sigma * static_cast<float>(rng.normal());
    };
    fill(p.embed, 1.0f / std::sqrt(d));
    for (auto& l : p.layers) {
        l.attn_gain.assign(l.attn_gain.size(), 1.0f);
        fill(l.wq, 1.0f / std::sqrt(d));
        fill(l.wk, 1.0f / std::sqrt(d));
        fill(l.wv, 1.0f / std::sqrt(d));
        fill(l.wo, resid_scale / std::sqrt(d));
        l.mlp_gain.assign(l.mlp_gain.size(), 1.0f);
        fill(l.wg, 1.0f / std::sqrt(d));
        fill(l.wu, 1.0f / std::sqrt(d));
        fill(l.wd, resid_scale / std::sqrt(static_cast<float>(cfg.d_ff)));
    }
    p.final_gain.assign(p.final_gain.size(), 1.0f);
    // unembedding starts as embed^T so unseen tokens keep argmax self-alignment
    for (int t = 0; t < cfg.vocab_size; ++t)
        for (int c = 0; c < cfg.d_model; ++c)
            p.unembed[static_cast<std::size_t>(c) * cfg.vocab_size + t] =
                p.embed[static_cast<std::size_t>(t) * cfg.d_model + c];
    return p;
}

// ---------------------------------------------------------------- forward

template <class T>
void forward_suffix(const ParamBlocks<T>& p, std::span<const int> new_tokens,
                    ActivationCache<T>& cache, std::span<const Hook> hooks) {
    const ModelConfig& cfg = p.cfg;
    const int L = cfg.n_layers, H = cfg.n_heads, d = cfg.d_model, dh = cfg.d_head();
    const int dff = cfg.d_ff, V = cfg.vocab_size;
    require(static_cast<int>(cache.layers.size()) == L && cache.cfg == cfg,
            "cache was not initialized by forward() for this model");
    const int P = cache.n;
    const int M = static_cast<int>(new_tokens.size());
    const int N = P + M;
    if (M == 0) return;
    require(N <= cfg.max_seq, "sequence length exceeds max_seq");
    for (int t : new_tokens)
        require(t >= 0 && t < V, "token id out of range");
    validate_hooks(hooks, cfg);

    const bool rec_train = cache.level == RecordLevel::train;
    const bool rec_att = cache.level != RecordLevel::logits_only;
    const bool rec_full = cache.level == RecordLevel::full;
    const T inv_sqrt_dh = T(1) / std::sqrt(T(dh));

    cache.tokens.insert(cache.tokens.end(), new_tokens.begin(), new_tokens.end());

    const std::size_t Md = static_cast<std::size_t>(M) * d;
    std::vector<T> x(Md), h(Md), q(Md), k(Md), v(Md), o(Md), yk(Md), xm(Md);
    std::vector<T> h2(Md), z(Md);
    std::vector<T> gpre(static_cast<std::size_t>(M) * dff), up(static_cast<std::size_t>(M) * dff),
        act(static_cast<std::size_t>(M) * dff);
    std::vector<T> srow(static_cast<std::size_t>(N));

    for (int m = 0; m < M; ++m)
        std::memcpy(x.data() + static_cast<std::size_t>(m) * d,
                    p.embed.data() + static_cast<std::size_t>(new_tokens[m]) * d, sizeof(T) * d);

    for (int j = 0; j < L; ++j) {
        auto& lc = cache.layers[j];
        const auto& lp = p.layers[j];
        apply_row_hooks(hooks, HookSite::residual_pre_attn, j, -1, P, M, x.data(), d);
        append_rows(lc.x_pre, x.data(), Md);

        for (int m = 0; m < M; ++m)
            rmsnorm(x.data() + static_cast<std::size_t>(m) * d, lp.attn_gain.data(),
                    h.data() + static_cast<std::size_t>(m) * d, d, T(cfg.norm_eps));
        if (rec_train) append_rows(lc.h_attn, h.data(), Md);

        // projections: output column blocks per head, so whole-matrix products
        // match per-head products element for element
        gemm_nn<T>(M, d, d, h.data(), d, lp.wq.data(), d, q.data(), d, false);
        gemm_nn<T>(M, d, d, h.data(), d, lp.wk.data(), d, k.data(), d, false);
        gemm_nn<T>(M, d, d, h.data(), d, lp.wv.data(), d, v.data(), d, false);
        for (int m = 0; m < M; ++m)
            for (int kh = 0; kh < H; ++kh) {
                rope_apply(q.data() + static_cast<std::size_t>(m) * d + kh * dh, dh, P + m, T(cfg.rope_base));
                rope_apply(k.data() + static_cast<std::size_t>(m) * d + kh * dh, dh, P + m, T(cfg.rope_base));
            }
        append_rows(lc.k_rot, k.data(), Md);
        append_rows(lc.v, v.data(), Md);
        if (rec_att) append_rows(lc.q_rot, q.data(), Md);
        if (rec_att)
            lc.att.resize(cache.att_offset(N - 1, H - 1) + static_cast<std::size_t>(N));

        for (int m = 0; m < M; ++m) {
            const int i = P + m;
            for (int kh = 0; kh < H; ++kh) {
                const T* qi = q.data() + static_cast<std::size_t>(m) * d + kh * dh;
                for (int l = 0; l <= i; ++l)
                    srow[static_cast<std::size_t>(l)] =
                        dot(qi, lc.k_rot.data() + static_cast<std::size_t>(l) * d + kh * dh, dh) *
                        inv_sqrt_dh;
                softmax(srow.data(), static_cast<std::size_t>(i) + 1);
                if (rec_att)
                    std::memcpy(lc.att.data() + cache.att_offset(i, kh), srow.data(),
                                sizeof(T) * (static_cast<std::size_t>(i) + 1));
                T* oi = o.data() + static_cast<std::size_t>(m) * d + kh * dh;
                std::fill(oi, oi + dh, T(0));
                for (int l = 0; l <= i; ++l)
                    axpy(srow[static_cast<std::size_t>(l)],
                         lc.v.data() + static_cast<std::size_t>(l) * d + kh * dh, oi, dh);
            }
        }
        if (rec_train) append_rows(lc.attn_out, o.data(), Md);

        // per-head output projections accumulated in fixed head order
        xm = x;
        if (rec_full)
            lc.y.resize(static_cast<std::size_t>(N) * H * d);
        for (int kh = 0; kh < H; ++kh) {
            gemm_nn<T>(M, d, dh, o.data() + static_cast<std::size_t>(kh) * dh, d,
                       lp.wo.data() + static_cast<std::size_t>(kh) * dh * d, d, yk.data(), d, false);
            apply_row_hooks(hooks, HookSite::head_output, j, kh, P, M, yk.data(), d);
            if (rec_full)
                for (int m = 0; m < M; ++m)
                    std::memcpy(lc.y.data() +
                                    (static_cast<std::size_t>(P + m) * H + kh) * d,
                                yk.data() + static_cast<std::size_t>(m) * d, sizeof(T) * d);
            for (int m = 0; m < M; ++m)
                axpy(T(1), yk.data() + static_cast<std::size_t>(m) * d,
                     xm.data() + static_cast<std::size_t>(m) * d, d);
        }
        apply_row_hooks(hooks, HookSite::residual_post_attn, j, -1, P, M, xm.data(), d);
        append_rows(lc.x_mid, xm.data(), Md);

        for (int m = 0; m < M; ++m)
            rmsnorm(xm.data() + static_cast<std::size_t>(m) * d, lp.mlp_gain.data(),
                    h2.data() + static_cast<std::size_t>(m) * d, d, T(cfg.norm_eps));
        if (rec_train) append_rows(lc.h_mlp, h2.data(), Md);
        gemm_nn<T>(M, dff, d, h2.data(), d, lp.wg.data(), dff, gpre.data(), dff, false);
        gemm_nn<T>(M, dff, d, h2.data(), d, lp.wu.data(), dff, up.data(), dff, false);
        if (rec_train) {
            append_rows(lc.gate_pre, gpre.data(), gpre.size());
            append_rows(lc.up, up.data(), up.size());
        }
        for (int m = 0; m < M; ++m)
            silu_gate(gpre.data() + static_cast<std::size_t>(m) * dff,
                      up.data() + static_cast<std::size_t>(m) * dff,
                      act.data() + static_cast<std::size_t>(m) * dff, dff);
        gemm_nn<T>(M, d, dff, act.data(), dff, lp.wd.data(), d, z.data(), d, false);
        for (std::size_t idx = 0; idx < Md; ++idx) x[idx] = xm[idx] + z[idx];
        apply_row_hooks(hooks, HookSite::residual_post_block, j, -1, P, M, x.data(), d);
    }

    append_rows(cache.x_final, x.data(), Md);
    for (int m = 0; m < M; ++m)
        rmsnorm(x.data() + static_cast<std::size_t>(m) * d, p.final_gain.data(),
                h.data() + static_cast<std::size_t>(m) * d, d, T(cfg.norm_eps));
    if (rec_train) append_rows(cache.xn_final, h.data(), Md);
    std::vector<T> lgt(static_cast<std::size_t>(M) * V);
    gemm_nn<T>(M, V, d, h.data(), d, p.unembed.data(), V, lgt.data(), V, false);
    append_rows(cache.logits, lgt.data(), lgt.size());
    cache.n = N;
}

template <class T>
void forward(const ParamBlocks<T>& p, std::span<const int> tokens,
             ActivationCache<T>& cache, RecordLevel level, std::span<const Hook> hooks) {
    p.cfg.validate();
    cache = ActivationCache<T>{};
    cache.cfg = p.cfg;
    cache.level = level;
    cache.layers.resize(p.cfg.n_layers);
    forward_suffix(p, tokens, cache, hooks);
}

// ------------------------------------------------------------------- loss

namespace {

// softmax of one logits row computed with double accumulation
template <class T>
void stable_softmax_row(const T* row, int V, std::vector<double>& out) {
    out.resize(static_cast<std::size_t>(V));
    double m = static_cast<double>(row[0]);
    for (int c = 1; c < V; ++c) m = std::max(m, static_cast<double>(row[c]));
    double s = 0.0;
    for (int c = 0; c < V; ++c) {
        out[static_cast<std::size_t>(c)] = std::exp(static_cast<double>(row[c]) - m);
        s += out[static_cast<std::size_t>(c)];
    }
    for (int c = 0; c < V; ++c) out[static_cast<std::size_t>(c)] /= s;
}

} // namespace

template <class T>
LossResult<T> masked_ce_loss(const ActivationCache<T>& cache, std::span<const int> tokens,
                             std::span<const std::uint8_t> loss_mask) {
    const int N = cache.n, V = cache.cfg.vocab_size;
    require(static_cast<int>(tokens.size()) == N && tokens.size() == loss_mask.size(),
            "tokens/mask length must match the cached sequence");
    double loss = 0.0;
    int count = 0;
    std::vector<double> prob;
    for (int i = 0; i + 1 < N; ++i) {
        if (!loss_mask[static_cast<std::size_t>(i) + 1]) continue;
        stable_softmax_row(cache.logits.data() + static_cast<std::size_t>(i) * V, V, prob);
        loss -= std::log(std::max(prob[static_cast<std::size_t>(tokens[static_cast<std::size_t>(i) + 1])],
                                  1e-300));
        ++count;
    }
    return {static_cast<T>(count ? loss / count : 0.0), count};
}

template <class T>
LossResult<T> loss_and_grad(const ParamBlocks<T>& p, const ActivationCache<T>& cache,
                            std::span<const int> tokens, std::span<const std::uint8_t> loss_mask,
                            ParamBlocks<T>& grads) {
    const ModelConfig& cfg = p.cfg;
    require(cache.level == RecordLevel::train, "loss_and_grad needs a train-level cache");
    const int N = cache.n, L = cfg.n_layers, H = cfg.n_heads, d = cfg.d_model;
    const int dh = cfg.d_head(), dff = cfg.d_ff, V = cfg.vocab_size;
    require(static_cast<int>(tokens.size()) == N && tokens.size() == loss_mask.size(),
            "tokens/mask length must match the cached sequence");
    const std::size_t Nd = static_cast<std::size_t>(N) * d;
    const T inv_sqrt_dh = T(1) / std::sqrt(T(dh));

    // loss and dlogits
    std::vector<T> dl(static_cast<std::size_t>(N) * V, T(0));
    double loss = 0.0;
    int count = 0;
    std::vector<double> prob;
    for (int i = 0; i + 1 < N; ++i) {
        if (!loss_mask[static_cast<std::size_t>(i) + 1]) continue;
        stable_softmax_row(cache.logits.data() + static_cast<std::size_t>(i) * V, V, prob);
        const int tgt = tokens[static_cast<std::size_t>(i) + 1];
        loss -= std::log(std::max(prob[static_cast<std::size_t>(tgt)], 1e-300));
        for (int c = 0; c < V; ++c)
            dl[static_cast<std::size_t>(i) * V + c] = static_cast<T>(prob[static_cast<std::size_t>(c)]);
        dl[static_cast<std::size_t>(i) * V + tgt] -= T(1);
        ++count;
    }
    if (count == 0) return {T(0), 0};
    kernels::scale(T(1) / T(count), dl.data(), dl.size());

    // unembedding and final norm
    std::vector<T> dxn(Nd);
    gemm_nt<T>(N, d, V, dl.data(), V, p.unembed.data(), V, dxn.data(), d, false);
    gemm_tn<T>(d, V, N, cache.xn_final.data(), d, dl.data(), V, grads.unembed.data(), V, true);
    std::vector<T> dx(Nd), tmp(Nd);
    for (int i = 0; i < N; ++i)
        rmsnorm_bwd(cache.x_final.data() + static_cast<std::size_t>(i) * d, p.final_gain.data(),
                    dxn.data() + static_cast<std::size_t>(i) * d,
                    dx.data() + static_cast<std::size_t>(i) * d, grads.final_gain.data(),
                    static_cast<std::size_t>(d), T(cfg.norm_eps));

    std::vector<T> da(static_cast<std::size_t>(N) * dff), du(static_cast<std::size_t>(N) * dff);
    std::vector<T> dg(static_cast<std::size_t>(N) * dff), actb(static_cast<std::size_t>(N) * dff);
    std::vector<T> dh2(Nd), dob(Nd), dq(Nd), dk(Nd), dv(Nd), dhb(Nd);
    std::vector<T> darow(static_cast<std::size_t>(N)), dsrow(static_cast<std::size_t>(N));

    for (int j = L - 1; j >= 0; --j) {
        const auto& lc = cache.layers[j];
        const auto& lp = p.layers[j];
        auto& lg = grads.layers[j];

        // MLP backward; dx holds dL/dx_post entering here
        for (std::size_t idx = 0; idx < static_cast<std::size_t>(N) * dff; ++idx)
            actb[idx] = silu(lc.gate_pre[idx]) * lc.up[idx];
        gemm_nt<T>(N, dff, d, dx.data(), d, lp.wd.data(), d, da.data(), dff, false);
        gemm_tn<T>(dff, d, N, actb.data(), dff, dx.data(), d, lg.wd.data(), d, true);
        for (std::size_t idx = 0; idx < static_cast<std::size_t>(N) * dff; ++idx) {
            du[idx] = da[idx] * silu(lc.gate_pre[idx]);
            dg[idx] = da[idx] * lc.up[idx] * silu_grad(lc.gate_pre[idx]);
        }
        gemm_nt<T>(N, d, dff, du.data(), dff, lp.wu.data(), dff, dh2.data(), d, false);
        gemm_nt<T>(N, d, dff, dg.data(), dff, lp.wg.data(), dff, dh2.data(), d, true);
        gemm_tn<T>(d, dff, N, lc.h_mlp.data(), d, du.data(), dff, lg.wu.data(), dff, true);
        gemm_tn<T>(d, dff, N, lc.h_mlp.data(), d, dg.data(), dff, lg.wg.data(), dff, true);
        for (int i = 0; i < N; ++i)
            rmsnorm_bwd(lc.x_mid.data() + static_cast<std::size_t>(i) * d, lp.mlp_gain.data(),
                        dh2.data() + static_cast<std::size_t>(i) * d,
                        tmp.data() + static_cast<std::size_t>(i) * d, lg.mlp_gain.data(),
                        static_cast<std::size_t>(d), T(cfg.norm_eps));
        axpy(T(1), tmp.data(), dx.data(), Nd);  // dx now dL/dx_mid

        // attention output projection backward (every head sees the same dx)
        for (int kh = 0; kh < H; ++kh) {
            gemm_nt<T>(N, dh, d, dx.data(), d, lp.wo.data() + static_cast<std::size_t>(kh) * dh * d,
                       d, dob.data() + static_cast<std::size_t>(kh) * dh, d, false);
            gemm_tn<T>(dh, d, N, lc.attn_out.data() + static_cast<std::size_t>(kh) * dh, d,
                       dx.data(), d, lg.wo.data() + static_cast<std::size_t>(kh) * dh * d, d, true);
        }

        // attention core backward
        std::fill(dq.begin(), dq.end(), T(0));
        std::fill(dk.begin(), dk.end(), T(0));
        std::fill(dv.begin(), dv.end(), T(0));
        for (int i = 0; i < N; ++i) {
            for (int kh = 0; kh < H; ++kh) {
                const T* arow = lc.att.data() + cache.att_offset(i, kh);
                const T* doi = dob.data() + static_cast<std::size_t>(i) * d + kh * dh;
                T dot_ad = T(0);
                for (int l = 0; l <= i; ++l) {
                    darow[static_cast<std::size_t>(l)] =
                        dot(doi, lc.v.data() + static_cast<std::size_t>(l) * d + kh * dh, dh);
                    dot_ad += arow[l] * darow[static_cast<std::size_t>(l)];
                }
                T* dqi = dq.data() + static_cast<std::size_t>(i) * d + kh * dh;
                const T* qi = lc.q_rot.data() + static_cast<std::size_t>(i) * d + kh * dh;
                for (int l = 0; l <= i; ++l) {
                    const T ds = arow[l] * (darow[static_cast<std::size_t>(l)] - dot_ad) * inv_sqrt_dh;
                    axpy(ds, lc.k_rot.data() + static_cast<std::size_t>(l) * d + kh * dh, dqi, dh);
                    axpy(ds, qi, dk.data() + static_cast<std::size_t>(l) * d + kh * dh, dh);
                    axpy(arow[l], doi, dv.data() + static_cast<std::size_t>(l) * d + kh * dh, dh);
                }
            }
        }
        for (int i = 0; i < N; ++i)
            for (int kh = 0; kh < H; ++kh) {
                rope_unapply(dq.data() + static_cast<std::size_t>(i) * d + kh * dh, dh, i, T(cfg.rope_base));
                rope_unapply(dk.data() + static_cast<std::size_t>(i) * d + kh * dh, dh, i, T(cfg.rope_base));
            }
        gemm_nt<T>(N, d, d, dq.data(), d, lp.wq.data(), d, dhb.data(), d, false);
        gemm_nt<T>(N, d, d, dk.data(), d, lp.wk.data(), d, dhb.data(), d, true);
        gemm_nt<T>(N, d, d, dv.data(), d, lp.wv.data(), d, dhb.data(), d, true);
        gemm_tn<T>(d, d, N, lc.h_attn.data(), d, dq.data(), d, lg.wq.data(), d, true);
        gemm_tn<T>(d, d, N, lc.h_attn.data(), d, dk.data(), d, lg.wk.data(), d, true);
        gemm_tn<T>(d, d, N, lc.h_attn.data(), d, dv.data(), d, lg.wv.data(), d, true);
        for (int i = 0; i < N; ++i)
            rmsnorm_bwd(lc.x_pre.data() + static_cast<std::size_t>(i) * d, lp.attn_gain.data(),
                        dhb.data() + static_cast<std::size_t>(i) * d,
                        tmp.data() + static_cast<std::size_t>(i) * d, lg.attn_gain.data(),
                        static_cast<std::size_t>(d), T(cfg.norm_eps));
        axpy(T(1), tmp.data(), dx.data(), Nd);  // dx now dL/dx_pre of block j
    }

    for (int i = 0; i < N; ++i)
        axpy(T(1), dx.data() + static_cast<std::size_t>(i) * d,
             grads.embed.data() + static_cast<std::size_t>(tokens[static_cast<std::size_t>(i)]) * d, d);
    return {static_cast<T>(loss / count), count};
}

// ---------------------------------------------------------------- sampling

std::vector<int> generate(const Params& p, std::span<const int> prompt, int max_new,
                          std::span<const int> stop_tokens) {
    require(!prompt.empty(), "generate needs a non-empty prompt");
    Cache cache;
    forward(p, prompt, cache, RecordLevel::logits_only);
    std::vector<int> out;
    for (int s = 0; s < max_new; ++s) {
        const auto row = cache.logits_row(cache.n - 1);
        const int next = static_cast<int>(kernels::argmax(row.data(), row.size()));
        out.push_back(next);
        if (std::find(stop_tokens.begin(), stop_tokens.end(), next) != stop_tokens.end()) break;
        if (cache.n >= p.cfg.max_seq) break;
        forward_suffix(p, std::span<const int>(&next, 1), cache);
    }
    return out;
}

// -------------------------------------------------------------- checkpoints

void save_checkpoint(const std::filesystem::path& path, const Params& p,
                     const std::string& extra_meta_json) {
    nlohmann::json meta;
    meta["arch"] = {{"n_layers", p.cfg.n_layers}, {"n_heads", p.cfg.n_heads},
                    {"d_model", p.cfg.d_model},   {"d_ff", p.cfg.d_ff},
                    {"vocab_size", p.cfg.vocab_size}, {"max_seq", p.cfg.max_seq},
                    {"rope_base", p.cfg.rope_base},   {"norm_eps", p.cfg.norm_eps}};
    meta["extra"] = nlohmann::json::parse(extra_meta_json);
    TensorFile tf;
    tf.meta = meta;
    for (const auto& v : p.views())
        tf.add_f32(v.name, {static_cast<std::uint64_t>(v.size)},
                   std::span<const float>(v.data, v.size));
    tf.save(path);
}

Params load_checkpoint(const std::filesystem::path& path, std::string* extra_meta_json) {
    TensorFile tf = TensorFile::load(path);
    const auto& meta = tf.meta;
    const auto& a = meta.at("arch");
    ModelConfig cfg;
    cfg.n_layers = a.at("n_layers").get<int>();
    cfg.n_heads = a.at("n_heads").get<int>();
    cfg.d_model = a.at("d_model").get<int>();
    cfg.d_ff = a.at("d_ff").get<int>();
    cfg.vocab_size = a.at("vocab_size").get<int>();
    cfg.max_seq = a.at("max_seq").get<int>();
    cfg.rope_base = a.at("rope_base").get<float>();
    cfg.norm_eps = a.at("norm_eps").get<float>();
    Params p = Params::zeros(cfg);
    for (auto& v : p.views()) {
        const auto f32 = tf.section(v.name).f32();
        if (f32.size() != v.size)
            throw std::runtime_error("checkpoint tensor '" + v.name + "' has wrong size");
        std::memcpy(v.data, f32.data(), sizeof(float) * v.size);
    }
    if (extra_meta_json) *extra_meta_json = meta.value("extra", nlohmann::json::object()).dump();
    return p;
}

// ---------------------------------------------------- explicit instantiation

template struct ParamBlocks<float>;
template struct ParamBlocks<double>;
template void forward<float>(const ParamBlocks<float>&, std::span<const int>,
                             ActivationCache<float>&, RecordLevel, std::span<const Hook>);
template void forward<double>(const ParamBlocks<double>&, std::span<const int>,
                              ActivationCache<double>&, RecordLevel, std::span<const Hook>);
template void forward_suffix<float>(const ParamBlocks<float>&, std::span<const int>,
                                    ActivationCache<float>&, std::span<const Hook>);
template void forward_suffix<double>(const ParamBlocks<double>&, std::span<const int>,
                                     ActivationCache<double>&, std::span<const Hook>);
template LossResult<float> masked_ce_loss<float>(const ActivationCache<float>&, std::span<const int>,
                                                 std::span<const std::uint8_t>);
template LossResult<double> masked_ce_loss<double>(const ActivationCache<double>&, std::span<const int>,
                                                   std::span<const std::uint8_t>);
template LossResult<float> loss_and_grad<float>(const ParamBlocks<float>&, const ActivationCache<float>&,
                                                std::span<const int>, std::span<const std::uint8_t>,
                                                ParamBlocks<float>&);
template LossResult<double> loss_and_grad<double>(const ParamBlocks<double>&,
                                                  const ActivationCache<double>&, std::span<const int>,
                                                  std::span<const std::uint8_t>, ParamBlocks<double>&);

} // namespace cotlab::nanoformer
