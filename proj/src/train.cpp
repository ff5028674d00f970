#include "cotlab/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>

#include <json.hpp>

#include "cotlab/ioutil.hpp"
#include "cotlab/rng.hpp"

namespace cotlab::train {

using nanoformer::ActivationCache;
using nanoformer::ModelConfig;
using nanoformer::ParamBlocks;
using nanoformer::Params;
using nanoformer::RecordLevel;

double EvalResult::min_em() const {
    double m = 1.0;
    for (double v : slot_em) m = std::min(m, v);
    return m;
}

EvalResult eval_subtask_em(const Params& p, std::span<const ontogen::ReasoningExample> corpus,
                           int limit) {
    EvalResult r;
    const int n = limit > 0 ? std::min<int>(limit, static_cast<int>(corpus.size()))
                            : static_cast<int>(corpus.size());
    if (n == 0) return r;
    std::array<int, 10> hits{};
    int verdict_hits = 0;
    nanoformer::Cache cache;
    for (int e = 0; e < n; ++e) {
        const auto& ex = corpus[static_cast<std::size_t>(e)];
        if (ex.subtasks.size() != 10)
            throw std::invalid_argument("eval corpus must be in ten-subtask form");
        nanoformer::forward(p, ex.tokens, cache, RecordLevel::logits_only);
        for (int s = 0; s < 10; ++s) {
            const auto& st = ex.subtasks[static_cast<std::size_t>(s)];
            const auto row = cache.logits_row(st.answer_pos - 1);
            if (static_cast<int>(kernels::argmax(row.data(), row.size())) == st.answer_token)
                hits[static_cast<std::size_t>(s)]++;
        }
        const auto vrow = cache.logits_row(ex.segments.generated_end - 2);
        const int verdict = ex.tokens[static_cast<std::size_t>(ex.segments.generated_end) - 1];
        if (static_cast<int>(kernels::argmax(vrow.data(), vrow.size())) == verdict) verdict_hits++;
    }
    for (int s = 0; s < 10; ++s)
        r.slot_em[static_cast<std::size_t>(s)] = static_cast<double>(hits[static_cast<std::size_t>(s)]) / n;
    r.verdict_acc = static_cast<double>(verdict_hits) / n;
    r.n_examples = n;
    return r;
}

namespace {

double lr_at(const AdamWConfig& opt, int step, int total) {
    // 1-based step; linear warmup then cosine decay to lr_min
    if (step <= opt.warmup_steps)
        return opt.lr * static_cast<double>(step) / std::max(1, opt.warmup_steps);
    const int span = std::max(1, total - opt.warmup_steps);
    const double t = std::min(1.0, static_cast<double>(step - opt.warmup_steps) / span);
    return opt.lr_min + 0.5 * (opt.lr - opt.lr_min) * (1.0 + std::cos(t * 3.14159265358979323846));
}

struct AdamWState {
    std::vector<float> m, v;
};

} // namespace

TrainReport train_model(Params& p, std::span<const ontogen::ReasoningExample> train_set,
                        std::span<const ontogen::ReasoningExample> eval_set,
                        std::span<const std::vector<int>> induction_seqs,
                        const TrainConfig& cfg) {
    if (train_set.empty()) throw std::invalid_argument("empty training set");
    if (cfg.batch_size < 1 || cfg.steps < 1)
        throw std::invalid_argument("batch_size and steps must be positive");
    const auto t0 = std::chrono::steady_clock::now();
    const auto minutes_elapsed = [&] {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;
    };

    auto views = p.views();
    AdamWState st;
    st.m.assign(p.param_count(), 0.0f);
    st.v.assign(p.param_count(), 0.0f);
    Params grads = Params::zeros(p.cfg);
    auto gviews = grads.views();

    Rng rng(cfg.seed);
    std::vector<std::size_t> order(train_set.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    std::size_t cursor = 0;
    std::size_t ind_cursor = 0;
    const bool mix = !induction_seqs.empty() && cfg.induction_mix > 0.0;

    std::string metrics;
    const auto flush_metrics = [&] {
        if (!cfg.metrics_path.empty()) write_file_atomic(cfg.metrics_path, metrics);
    };
    const auto log = [&](const std::string& s) {
        if (cfg.logger) cfg.logger(s);
    };

    TrainReport report;
    nanoformer::ActivationCache<float> cache;
    std::vector<std::uint8_t> ind_mask;
    double loss_accum = 0.0;
    int loss_count = 0;

    for (int step = 1; step <= cfg.steps; ++step) {
        for (auto& gv : gviews) std::fill(gv.data, gv.data + gv.size, 0.0f);
        double batch_loss = 0.0;
        for (int b = 0; b < cfg.batch_size; ++b) {
            if (mix && rng.bernoulli(cfg.induction_mix)) {
                const auto& seq = induction_seqs[ind_cursor++ % induction_seqs.size()];
                ind_mask.assign(seq.size(), 1);
                ind_mask[0] = 0;
                nanoformer::forward(p, seq, cache, RecordLevel::train);
                batch_loss += nanoformer::loss_and_grad(p, cache, seq, ind_mask, grads).loss;
            } else {
                if (cursor >= order.size()) {
                    rng.shuffle(order);
                    cursor = 0;
                }
                const auto& ex = train_set[order[cursor++]];
                nanoformer::forward(p, ex.tokens, cache, RecordLevel::train);
                batch_loss += nanoformer::loss_and_grad(p, cache, ex.tokens, ex.loss_mask, grads).loss;
            }
        }
        const float inv_b = 1.0f / static_cast<float>(cfg.batch_size);
        for (auto& gv : gviews) kernels::scale(inv_b, gv.data, gv.size);
        batch_loss /= cfg.batch_size;
        loss_accum += batch_loss;
        loss_count++;

        // global-norm clip
        double sq = 0.0;
        for (auto& gv : gviews)
            for (std::size_t i = 0; i < gv.size; ++i)
                sq += static_cast<double>(gv.data[i]) * gv.data[i];
        const double gnorm = std::sqrt(sq);
        if (cfg.opt.clip > 0.0 && gnorm > cfg.opt.clip) {
            const float s = static_cast<float>(cfg.opt.clip / gnorm);
            for (auto& gv : gviews) kernels::scale(s, gv.data, gv.size);
        }

        const double lr = lr_at(cfg.opt, step, cfg.steps);
        const double bc1 = 1.0 - std::pow(cfg.opt.beta1, step);
        const double bc2 = 1.0 - std::pow(cfg.opt.beta2, step);
        std::size_t off = 0;
        for (std::size_t vi = 0; vi < views.size(); ++vi) {
            auto& w = views[vi];
            auto& g = gviews[vi];
            const bool decay = w.name.find("gain") == std::string::npos;
            for (std::size_t i = 0; i < w.size; ++i) {
                const double gi = g.data[i];
                float& m = st.m[off + i];
                float& v = st.v[off + i];
                m = static_cast<float>(cfg.opt.beta1 * m + (1.0 - cfg.opt.beta1) * gi);
                v = static_cast<float>(cfg.opt.beta2 * v + (1.0 - cfg.opt.beta2) * gi * gi);
                const double mhat = m / bc1;
                const double vhat = v / bc2;
                double upd = mhat / (std::sqrt(vhat) + cfg.opt.eps);
                if (decay) upd += cfg.opt.weight_decay * w.data[i];
                w.data[i] -= static_cast<float>(lr * upd);
            }
            off += w.size;
        }

        if (cfg.log_every > 0 && step % cfg.log_every == 0) {
            nlohmann::json line = {{"step", step}, {"loss", batch_loss}, {"lr", lr}, {"gnorm", gnorm}};
            metrics += line.dump() + "\n";
        }
        report.steps_run = step;
        report.final_loss = batch_loss;

        const bool eval_now =
            !eval_set.empty() && cfg.eval_every > 0 &&
            (step % cfg.eval_every == 0 || step == cfg.steps);
        if (eval_now) {
            const EvalResult ev = eval_subtask_em(p, eval_set, cfg.eval_size);
            report.final_eval = ev;
            nlohmann::json line = {{"step", step},
                                   {"loss_avg", loss_accum / std::max(1, loss_count)},
                                   {"slot_em", ev.slot_em},
                                   {"verdict_acc", ev.verdict_acc},
                                   {"min_em", ev.min_em()}};
            metrics += line.dump() + "\n";
            flush_metrics();
            log("step " + std::to_string(step) + " loss " +
                std::to_string(loss_accum / std::max(1, loss_count)) + " min_em " +
                std::to_string(ev.min_em()) + " verdict " + std::to_string(ev.verdict_acc));
            loss_accum = 0.0;
            loss_count = 0;
            if (ev.min_em() >= cfg.target_acc) {
                report.reached_target = true;
                break;
            }
        }
        if (cfg.max_minutes > 0.0 && minutes_elapsed() > cfg.max_minutes) {
            report.aborted_on_time = true;
            log("stopping on wall-clock guard after " + std::to_string(step) + " steps");
            break;
        }
    }
    flush_metrics();
    return report;
}

GradCheckResult grad_check(const ModelConfig& cfg, std::uint64_t seed, double fd_eps, int seq_len) {
    cfg.validate();
    if (seq_len < 2 || seq_len > cfg.max_seq)
        throw std::invalid_argument("grad_check sequence length out of range");

    // double-precision copy of a float initialization
    const Params pf = init_params(cfg, seed);
    ParamBlocks<double> p = ParamBlocks<double>::zeros(cfg);
    {
        auto src = pf.views();
        auto dst = p.views();
        for (std::size_t i = 0; i < src.size(); ++i)
            for (std::size_t j = 0; j < src[i].size; ++j)
                dst[i].data[j] = static_cast<double>(src[i].data[j]);
    }

    Rng rng(seed ^ 0x9e3779b97f4a7c15ull);
    std::vector<int> tokens(static_cast<std::size_t>(seq_len));
    for (auto& t : tokens) t = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.vocab_size)));
    std::vector<std::uint8_t> mask(tokens.size(), 0);
    for (std::size_t i = 1; i < mask.size(); ++i) mask[i] = rng.bernoulli(0.5) ? 1 : 0;
    mask[mask.size() - 1] = 1;  // at least one target

    ActivationCache<double> cache;
    nanoformer::forward(p, tokens, cache, RecordLevel::train);
    ParamBlocks<double> grads = ParamBlocks<double>::zeros(cfg);
    nanoformer::loss_and_grad(p, cache, tokens, mask, grads);

    const auto loss_at = [&] {
        ActivationCache<double> c;
        nanoformer::forward(p, tokens, c, RecordLevel::logits_only);
        return static_cast<double>(nanoformer::masked_ce_loss(c, tokens, mask).loss);
    };

    GradCheckResult res;
    auto pviews = p.views();
    auto gviews = grads.views();
    for (std::size_t vi = 0; vi < pviews.size(); ++vi) {
        for (std::size_t i = 0; i < pviews[vi].size; ++i) {
            double& w = pviews[vi].data[i];
            const double keep = w;
            w = keep + fd_eps;
            const double lp = loss_at();
            w = keep - fd_eps;
            const double lm = loss_at();
            w = keep;
            const double fd = (lp - lm) / (2.0 * fd_eps);
            const double g = gviews[vi].data[i];
            const double rel = std::abs(fd - g) / std::max({std::abs(fd), std::abs(g), 1e-5});
            if (rel > res.max_rel_err) {
                res.max_rel_err = rel;
                res.worst_param = pviews[vi].name + "[" + std::to_string(i) + "]";
            }
            res.checked++;
        }
    }
    return res;
}

} // namespace cotlab::train
