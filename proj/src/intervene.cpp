#include "cotlab/intervene.hpp"

#include <algorithm>
#include <stdexcept>
#include <unordered_map>

#include "cotlab/tensorio.hpp"

namespace cotlab::intervene {

using nanoformer::Cache;
using nanoformer::Hook;
using nanoformer::HookSite;
using nanoformer::Params;
using nanoformer::RecordLevel;

std::span<const float> AblationBank::head_row(int layer, int head) const {
    if (layer < 0 || layer >= n_layers || head < 0 || head >= n_heads)
        throw std::out_of_range("ablation bank head index out of range");
    return {head_mean.data() + (static_cast<std::size_t>(layer) * n_heads + head) * d_model,
            static_cast<std::size_t>(d_model)};
}

std::span<const float> AblationBank::resid_row(int layer) const {
    if (layer < 0 || layer >= n_layers)
        throw std::out_of_range("ablation bank layer index out of range");
    return {resid_mean.data() + static_cast<std::size_t>(layer) * d_model,
            static_cast<std::size_t>(d_model)};
}

void AblationBank::save(const std::filesystem::path& path) const {
    TensorFile tf;
    tf.meta = {{"n_layers", n_layers}, {"n_heads", n_heads}, {"d_model", d_model}, {"n_rows", n_rows}};
    tf.add_f32("head_mean",
               {static_cast<std::uint64_t>(n_layers), static_cast<std::uint64_t>(n_heads),
                static_cast<std::uint64_t>(d_model)},
               head_mean);
    tf.add_f32("resid_mean",
               {static_cast<std::uint64_t>(n_layers), static_cast<std::uint64_t>(d_model)},
               resid_mean);
    tf.save(path);
}

AblationBank AblationBank::load(const std::filesystem::path& path) {
    const TensorFile tf = TensorFile::load(path);
    AblationBank b;
    b.n_layers = tf.meta.at("n_layers").get<int>();
    b.n_heads = tf.meta.at("n_heads").get<int>();
    b.d_model = tf.meta.at("d_model").get<int>();
    b.n_rows = tf.meta.at("n_rows").get<std::int64_t>();
    const auto hm = tf.section("head_mean").f32();
    const auto rm = tf.section("resid_mean").f32();
    const std::size_t want_h = static_cast<std::size_t>(b.n_layers) * b.n_heads * b.d_model;
    const std::size_t want_r = static_cast<std::size_t>(b.n_layers) * b.d_model;
    if (hm.size() != want_h || rm.size() != want_r)
        throw std::runtime_error("ablation bank tensors do not match their metadata");
    b.head_mean.assign(hm.begin(), hm.end());
    b.resid_mean.assign(rm.begin(), rm.end());
    return b;
}

AblationBank build_ablation_bank(const Params& p, std::span<const std::vector<int>> streams) {
    if (streams.empty()) throw std::invalid_argument("ablation bank needs at least one stream");
    const auto& cfg = p.cfg;
    AblationBank b;
    b.n_layers = cfg.n_layers;
    b.n_heads = cfg.n_heads;
    b.d_model = cfg.d_model;

    std::vector<double> head_sum(static_cast<std::size_t>(cfg.n_layers) * cfg.n_heads * cfg.d_model, 0.0);
    std::vector<double> resid_sum(static_cast<std::size_t>(cfg.n_layers) * cfg.d_model, 0.0);
    Cache cache;
    for (const auto& toks : streams) {
        nanoformer::forward(p, toks, cache, RecordLevel::full);
        for (int j = 0; j < cfg.n_layers; ++j) {
            for (int i = 0; i < cache.n; ++i) {
                for (int k = 0; k < cfg.n_heads; ++k) {
                    const auto y = cache.y_row(j, k, i);
                    double* dst = head_sum.data() +
                                  (static_cast<std::size_t>(j) * cfg.n_heads + k) * cfg.d_model;
                    for (int c = 0; c < cfg.d_model; ++c) dst[c] += y[static_cast<std::size_t>(c)];
                }
                const auto xp = cache.x_post_row(j, i);
                double* dst = resid_sum.data() + static_cast<std::size_t>(j) * cfg.d_model;
                for (int c = 0; c < cfg.d_model; ++c) dst[c] += xp[static_cast<std::size_t>(c)];
            }
        }
        b.n_rows += cache.n;
    }
    const double inv = 1.0 / static_cast<double>(b.n_rows);
    b.head_mean.resize(head_sum.size());
    for (std::size_t i = 0; i < head_sum.size(); ++i)
        b.head_mean[i] = static_cast<float>(head_sum[i] * inv);
    b.resid_mean.resize(resid_sum.size());
    for (std::size_t i = 0; i < resid_sum.size(); ++i)
        b.resid_mean[i] = static_cast<float>(resid_sum[i] * inv);
    return b;
}

std::vector<Hook> knockout_hooks(const AblationBank& bank, std::span<const HeadRef> heads,
                                 std::span<const int> positions) {
    std::vector<Hook> hooks;
    for (const auto& h : heads) {
        const auto mean = bank.head_row(h.layer, h.head);
        const std::vector<float> value(mean.begin(), mean.end());
        if (positions.empty()) {
            hooks.push_back({HookSite::head_output, h.layer, h.head, -1, value});
        } else {
            for (int pos : positions)
                hooks.push_back({HookSite::head_output, h.layer, h.head, pos, value});
        }
    }
    return hooks;
}

std::vector<Hook> patch_hooks(const Cache& donor, std::span<const HeadRef> heads,
                              std::span<const int> positions) {
    if (donor.level != RecordLevel::full)
        throw std::invalid_argument("patch donor must be recorded at full level");
    std::vector<Hook> hooks;
    const auto add = [&](const HeadRef& h, int pos) {
        if (pos < 0 || pos >= donor.n)
            throw std::out_of_range("patch position outside the donor run");
        const auto y = donor.y_row(h.layer, h.head, pos);
        hooks.push_back({HookSite::head_output, h.layer, h.head, pos,
                         std::vector<float>(y.begin(), y.end())});
    };
    for (const auto& h : heads) {
        if (positions.empty())
            for (int pos = 0; pos < donor.n; ++pos) add(h, pos);
        else
            for (int pos : positions) add(h, pos);
    }
    return hooks;
}

Cache run_with_hooks(const Params& p, std::span<const int> tokens,
                     std::span<const Hook> hooks, RecordLevel level) {
    Cache cache;
    nanoformer::forward(p, tokens, cache, level, hooks);
    return cache;
}

std::vector<int> corrupt_input(std::span<const int> tokens, std::span<const TokenSub> subs) {
    std::vector<int> out(tokens.begin(), tokens.end());
    std::vector<std::uint8_t> touched(tokens.size(), 0);
    for (const auto& s : subs) {
        if (s.occurrence < -1) throw std::invalid_argument("occurrence must be >= -1");
        int seen = 0;
        bool hit = false;
        for (std::size_t i = 0; i < tokens.size(); ++i) {
            if (tokens[i] != s.token) continue;
            if (s.occurrence == -1 || seen == s.occurrence) {
                if (touched[i])
                    throw std::invalid_argument("overlapping substitutions at stream position " +
                                                std::to_string(i));
                touched[i] = 1;
                out[i] = s.replacement;
                hit = true;
                if (s.occurrence != -1) break;
            }
            ++seen;
        }
        if (!hit)
            throw std::invalid_argument("substitution target not found: token " +
                                        std::to_string(s.token) + " occurrence " +
                                        std::to_string(s.occurrence));
    }
    return out;
}

} // namespace cotlab::intervene
