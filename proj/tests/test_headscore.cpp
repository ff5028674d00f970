#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <random>
#include <set>
#include <sstream>

#include "circuit_fixtures.hpp"
#include "cotlab/headscore.hpp"
#include "cotlab/ioutil.hpp"
#include "cotlab/train.hpp"

using namespace cotlab;
using namespace cotlab::nanoformer;
using namespace cotlab::ontogen;
namespace hs = cotlab::headscore;
using intervene::AblationBank;
using intervene::HeadRef;

namespace {

const Vocab& vocab() {
    static const Vocab v = Vocab::build(WordLists::builtin());
    return v;
}

std::vector<ReasoningExample> tiny_corpus(int count, std::uint64_t seed) {
    auto pools = EntityPools::fictional(WordLists::builtin());
    CorpusParams cp;
    cp.count = count;
    cp.n_shots = 0;
    cp.gen.chain_len = 2;
    cp.gen.n_distractors = 1;
    return generate_corpus(seed, cp, pools, vocab(), "t");
}

// linear-scan softmax probability, no max subtraction
double naive_prob(std::span<const float> logits, int token) {
    double sum = 0.0;
    for (float v : logits) sum += std::exp(static_cast<double>(v));
    return std::exp(static_cast<double>(logits[static_cast<std::size_t>(token)])) / sum;
}

// linear-scan KL between the softmaxes of two logits rows
double naive_kl(std::span<const float> lp, std::span<const float> lq) {
    double zp = 0.0, zq = 0.0;
    for (float v : lp) zp += std::exp(static_cast<double>(v));
    for (float v : lq) zq += std::exp(static_cast<double>(v));
    double kl = 0.0;
    for (std::size_t i = 0; i < lp.size(); ++i) {
        const double p = std::exp(static_cast<double>(lp[i])) / zp;
        const double q = std::exp(static_cast<double>(lq[i])) / zq;
        kl += p * std::log(p / q);
    }
    return kl;
}

AblationBank fixture_bank(const Params& p) {
    const std::vector<std::vector<int>> streams{
        {0, 1, 2, 3, 0, 1, 2}, {3, 2, 1, 0, 3, 2}, {1, 3, 0, 2, 1}};
    return intervene::build_ablation_bank(p, streams);
}

} // namespace

TEST_CASE("probability and KL readouts match linear-scan oracles") {
    std::mt19937 rng(7);
    std::uniform_real_distribution<float> U(-6.0f, 6.0f);
    std::vector<float> a(33), b(33);
    for (auto& v : a) v = U(rng);
    for (auto& v : b) v = U(rng);

    for (int t = 0; t < 33; t += 5)
        CHECK(std::abs(hs::answer_probability(a, t) - naive_prob(a, t)) <= 1e-10);

    const auto la = hs::log_softmax_row(a), lb = hs::log_softmax_row(b);
    double mass = 0.0;
    for (double lp : la) mass += std::exp(lp);
    CHECK(std::abs(mass - 1.0) <= 1e-12);

    CHECK(std::abs(hs::kl_divergence(la, lb) - naive_kl(a, b)) <= 1e-10);
    CHECK(hs::kl_divergence(la, la) == 0.0);
    CHECK(hs::kl_divergence(la, lb) > 0.0);
}

TEST_CASE("decision score: no-effect restoration is exactly 1, the carrier head dominates") {
    const Params p = fixtures::one_layer_copy();
    const AblationBank bank = fixture_bank(p);
    const std::vector<int> prompt{1, 2, 3, 2, 1};
    const int answer = 3;  // the planted head copies the token two back

    const auto ds = hs::score_decision(p, prompt, answer, bank);
    const std::size_t carrier = 0, idle = 1;

    // head (0,1) writes nothing, so its bank mean is zero and the patched run
    // is bitwise the corrupt run: numerator equals denominator
    CHECK(ds.num[idle] == ds.den[idle]);
    CHECK(ds.mu[idle] == 1.0);
    CHECK(std::abs(ds.den[idle]) >= hs::kDecisionDenomFloor);

    // restoring the carrier recovers the clean run bitwise: the raw
    // denominator collapses to zero and the floor takes over
    CHECK(ds.den[carrier] == 0.0);
    CHECK(ds.mu[carrier] == ds.num[carrier] / hs::kDecisionDenomFloor);
    CHECK(ds.mu[carrier] > ds.mu[idle]);
    CHECK(ds.num[carrier] > 0.3);  // knocking every head out destroys the answer

    // determinism: a second scoring pass reproduces the same bits
    const auto again = hs::score_decision(p, prompt, answer, bank);
    CHECK(std::memcmp(again.mu.data(), ds.mu.data(), ds.mu.size() * sizeof(double)) == 0);

    CHECK_THROWS_AS((void)hs::score_decision(p, prompt, p.cfg.vocab_size, bank),
                    std::out_of_range);
}

TEST_CASE("decision scores match an exhaustive single-restoration enumeration") {
    const Params p = fixtures::one_layer_copy();
    const AblationBank bank = fixture_bank(p);
    const std::vector<int> prompt{1, 2, 3, 2, 1};
    const int answer = 3;
    const int last = static_cast<int>(prompt.size()) - 1;

    const auto ds = hs::score_decision(p, prompt, answer, bank);

    // oracle: hooks assembled by hand, full forwards, linear-scan readout
    Cache clean;
    forward(p, prompt, clean, RecordLevel::full);
    const double p_org = naive_prob(clean.logits_row(last), answer);

    auto mean_hook = [&](int l, int h) {
        const auto row = bank.head_row(l, h);
        return Hook{HookSite::head_output, l, h, last,
                    std::vector<float>(row.begin(), row.end())};
    };
    std::vector<Hook> all_ko;
    for (int l = 0; l < p.cfg.n_layers; ++l)
        for (int h = 0; h < p.cfg.n_heads; ++h) all_ko.push_back(mean_hook(l, h));
    Cache cor;
    forward(p, prompt, cor, RecordLevel::logits_only, all_ko);
    const double num = p_org - naive_prob(cor.logits_row(last), answer);

    std::size_t i = 0;
    for (int l = 0; l < p.cfg.n_layers; ++l)
        for (int h = 0; h < p.cfg.n_heads; ++h, ++i) {
            std::vector<Hook> hooks;
            for (int l2 = 0; l2 < p.cfg.n_layers; ++l2)
                for (int h2 = 0; h2 < p.cfg.n_heads; ++h2)
                    if (l2 != l || h2 != h) hooks.push_back(mean_hook(l2, h2));
            const auto y = clean.y_row(l, h, last);
            hooks.push_back(Hook{HookSite::head_output, l, h, last,
                                 std::vector<float>(y.begin(), y.end())});
            Cache pat;
            forward(p, prompt, pat, RecordLevel::logits_only, hooks);
            const double den_raw = p_org - naive_prob(pat.logits_row(last), answer);
            const double den =
                std::abs(den_raw) < hs::kDecisionDenomFloor ? hs::kDecisionDenomFloor : den_raw;
            const double mu_hand = num / den;
            CHECK(std::abs(ds.mu[i] - mu_hand) <= 1e-9 * std::max(1.0, std::abs(mu_hand)));
        }
}

TEST_CASE("copy score is the attention row entry, with exact edge cases") {
    // one visible key: the softmax collapses to 1
    {
        const Params p = fixtures::uniform_attention();
        const auto mu = hs::score_copy(p, std::vector<int>{2}, 0);
        for (double m : mu) CHECK(m == 1.0);
    }
    // uniform head: every key gets 1/N
    {
        const Params p = fixtures::uniform_attention();
        const std::vector<int> prompt{0, 1, 2, 3, 1, 0};
        const auto mu = hs::score_copy(p, prompt, 2);
        for (double m : mu) CHECK(std::abs(m - 1.0 / 6.0) <= 1e-7);

        // the full attention row sums to one
        std::vector<double> sums(mu.size(), 0.0);
        for (int pos = 0; pos < 6; ++pos) {
            const auto col = hs::score_copy(p, prompt, pos);
            for (std::size_t i = 0; i < col.size(); ++i) sums[i] += col[i];
        }
        for (double s : sums) CHECK(std::abs(s - 1.0) <= 1e-6);
    }
    // the planted copy head focuses its offset
    {
        const Params p = fixtures::one_layer_copy();
        const auto mu = hs::score_copy(p, std::vector<int>{1, 2, 3, 2, 1}, 2);
        CHECK(mu[0] > 0.99);
    }
    CHECK_THROWS_AS((void)hs::score_copy(fixtures::uniform_attention(), std::vector<int>{1, 2}, 5),
                    std::out_of_range);
}

TEST_CASE("copy score agrees with a raw q/k recomputation through the rotation") {
    ModelConfig cfg;
    cfg.n_layers = 2;
    cfg.n_heads = 2;
    cfg.d_model = 16;
    cfg.d_ff = 16;
    cfg.vocab_size = 12;
    cfg.max_seq = 32;
    const Params p = init_params(cfg, 21);
    const std::vector<int> toks{3, 7, 1, 0, 9, 4, 11, 2, 5};
    const int last = static_cast<int>(toks.size()) - 1;
    const int d = cfg.d_model, dh = cfg.d_head(), H = cfg.n_heads;

    Cache c;
    forward(p, toks, c, RecordLevel::full);

    // double-precision re-derivation of the last attention row per head
    auto normed = [&](int layer, int pos) {
        const auto x = c.x_pre_row(layer, pos);
        double ss = 0.0;
        for (float v : x) ss += static_cast<double>(v) * v;
        const double r = std::sqrt(ss / d + static_cast<double>(cfg.norm_eps));
        std::vector<double> h(static_cast<std::size_t>(d));
        for (int j = 0; j < d; ++j)
            h[static_cast<std::size_t>(j)] =
                static_cast<double>(x[static_cast<std::size_t>(j)]) / r *
                static_cast<double>(p.layers[static_cast<std::size_t>(layer)]
                                        .attn_gain[static_cast<std::size_t>(j)]);
        return h;
    };
    auto rotate = [&](std::vector<double>& v, int pos) {
        for (int t = 0; 2 * t + 1 < dh; ++t) {
            const double th =
                pos * std::pow(static_cast<double>(cfg.rope_base), -2.0 * t / dh);
            const double cs = std::cos(th), sn = std::sin(th);
            const double a = v[static_cast<std::size_t>(2 * t)],
                         b = v[static_cast<std::size_t>(2 * t + 1)];
            v[static_cast<std::size_t>(2 * t)] = a * cs - b * sn;
            v[static_cast<std::size_t>(2 * t + 1)] = a * sn + b * cs;
        }
    };
    for (int l = 0; l < cfg.n_layers; ++l) {
        const auto& lay = p.layers[static_cast<std::size_t>(l)];
        for (int h = 0; h < H; ++h) {
            auto proj = [&](const std::vector<float>& w, const std::vector<double>& in) {
                std::vector<double> out(static_cast<std::size_t>(dh), 0.0);
                for (int t = 0; t < dh; ++t)
                    for (int r = 0; r < d; ++r)
                        out[static_cast<std::size_t>(t)] +=
                            in[static_cast<std::size_t>(r)] *
                            static_cast<double>(w[static_cast<std::size_t>(r) * d + h * dh + t]);
                return out;
            };
            auto q = proj(lay.wq, normed(l, last));
            rotate(q, last);
            std::vector<double> scores(static_cast<std::size_t>(last) + 1);
            for (int j = 0; j <= last; ++j) {
                auto k = proj(lay.wk, normed(l, j));
                rotate(k, j);
                double s = 0.0;
                for (int t = 0; t < dh; ++t)
                    s += q[static_cast<std::size_t>(t)] * k[static_cast<std::size_t>(t)];
                scores[static_cast<std::size_t>(j)] = s / std::sqrt(static_cast<double>(dh));
            }
            double mx = scores[0];
            for (double s : scores) mx = std::max(mx, s);
            double z = 0.0;
            for (double s : scores) z += std::exp(s - mx);
            for (int j = 0; j <= last; ++j) {
                const double want = std::exp(scores[static_cast<std::size_t>(j)] - mx) / z;
                const auto got = hs::score_copy(p, toks, j);
                CHECK(std::abs(got[static_cast<std::size_t>(l) * H + h] - want) <= 1e-6);
            }
        }
    }
}

TEST_CASE("answer-source resolution walks the stated facts") {
    const int subj = 5, is = 1, nott = 8, ans = 6;
    const std::vector<int> toks{9, 5, 1, 7, 4, 5, 1, 6, 3, 5, 1, 8, 6, 2};

    CHECK(hs::find_answer_source(toks, 0, static_cast<int>(toks.size()), subj, ans, is, nott) == 7);
    // outside the positive statement, the negated rendering also resolves
    CHECK(hs::find_answer_source(toks, 8, static_cast<int>(toks.size()), subj, ans, is, nott) == 12);
    // a window that excludes every match reports the failure
    CHECK_THROWS_WITH_AS(
        (void)hs::find_answer_source(toks, 0, 6, subj, ans, is, nott),
        "answer position not found in context", std::runtime_error);

    // corpus property: every copy slot's answer resolves inside the question
    const auto corpus = tiny_corpus(12, 41);
    for (const auto& ex : corpus) {
        for (const auto& inst : decompose_subtasks(ex)) {
            if (inst.kind != SubtaskKind::copy) continue;
            const int subject = inst.prompt[inst.prompt.size() - 2];
            const int src = hs::find_answer_source(
                inst.prompt, ex.segments.question_begin, ex.segments.question_end, subject,
                inst.answer, vocab().sp().is, vocab().sp().nott);
            CHECK(inst.prompt[static_cast<std::size_t>(src)] == inst.answer);
            CHECK(src < static_cast<int>(inst.prompt.size()) - 1);
        }
    }
}

TEST_CASE("induction score: full restoration is exactly 1, a silent head exactly 0") {
    const Params p = fixtures::shifted_write_readout();
    const std::vector<int> probe{0, 1, 2, 3, 1, 0};
    // the first two sites get no-op noise (zero reference divergence), the
    // last-site corruption is undone bitwise by restoring head (0,0)
    const hs::InductionSites sites{1, 2, 5};
    const auto sc = hs::score_induction(p, probe, sites, {1, 2, 3});

    CHECK(sc.sites_scored == 1);
    REQUIRE(sc.skipped_sites.size() == 2);
    CHECK(sc.skipped_sites[0] == 1);
    CHECK(sc.skipped_sites[1] == 2);
    CHECK(sc.mu[0] == 1.0);
    CHECK(sc.mu[1] == 0.0);

    // every corruption a no-op: nothing is scored
    const auto none = hs::score_induction(p, probe, sites, {1, 2, 0});
    CHECK(none.sites_scored == 0);
    CHECK(none.skipped_sites.size() == 3);
    for (double m : none.mu) CHECK(m == 0.0);

    // a head that never writes stays at exactly 0 under live corruption too
    const Params copy = fixtures::one_layer_copy();
    const auto live = hs::score_induction(copy, probe, sites, {3, 3, 3});
    CHECK(live.sites_scored >= 1);
    CHECK(live.mu[1] == 0.0);

    CHECK_THROWS_AS(
        (void)hs::score_induction(p, probe, hs::InductionSites{1, 2, 9}, {1, 2, 3}),
        std::out_of_range);
}

TEST_CASE("delta scores: hand arithmetic, zero at the mean, permutation invariance") {
    auto t = hs::ScoreTable::make("copy", 1, 3);
    t.sample_count = 1;
    t.mu = {0.2, 0.3, 0.4};
    hs::delta_scores(t);
    CHECK(std::abs(t.delta[0] - 0.01) <= 1e-12);
    CHECK(std::abs(t.delta[1]) <= 1e-12);
    CHECK(std::abs(t.delta[2] - 0.01) <= 1e-12);

    // a flat table: the mean can land one ulp off 0.7, so delta is bounded by
    // rounding noise and identical across heads rather than exactly zero
    auto flat = hs::ScoreTable::make("copy", 1, 3);
    flat.sample_count = 1;
    flat.mu = {0.7, 0.7, 0.7};
    hs::delta_scores(flat);
    for (double d : flat.delta) {
        CHECK(d <= 1e-30);
        CHECK(d == flat.delta[0]);
    }

    // shuffling head order cannot change any head's delta
    std::mt19937 rng(3);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    auto a = hs::ScoreTable::make("decision", 2, 4);
    a.sample_count = 1;
    for (auto& m : a.mu) m = U(rng);
    std::vector<std::size_t> perm{5, 2, 7, 0, 3, 6, 1, 4};
    auto b = hs::ScoreTable::make("decision", 2, 4);
    b.sample_count = 1;
    for (std::size_t i = 0; i < perm.size(); ++i) b.mu[perm[i]] = a.mu[i];
    hs::delta_scores(a);
    hs::delta_scores(b);
    for (std::size_t i = 0; i < perm.size(); ++i) CHECK(b.delta[perm[i]] == a.delta[i]);
}

TEST_CASE("score tables round-trip through the tabular text form") {
    const auto dir = std::filesystem::temp_directory_path() / "cotlab_headscore_test";
    std::filesystem::create_directories(dir);
    const auto path = dir / "scores.tsv";

    std::mt19937 rng(17);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    auto dec = hs::ScoreTable::make("decision", 2, 3);
    dec.subtask = 0;
    dec.dataset_id = "unit";
    dec.sample_count = 4;
    for (auto& m : dec.mu) m = U(rng) * 40.0 - 10.0;
    hs::delta_scores(dec);
    auto cp = hs::ScoreTable::make("copy", 2, 3);
    cp.subtask = 1;
    cp.dataset_id = "unit";
    cp.sample_count = 2;
    for (auto& m : cp.mu) m = U(rng);
    hs::delta_scores(cp);

    const std::vector<hs::ScoreTable> tables{dec, cp};
    hs::save_tables(path, tables);

    const auto text = read_file(path);
    CHECK(text.rfind("layer\thead\tkind\tsubtask\tmu\tdelta\n", 0) == 0);

    const auto back = hs::load_tables(path);
    REQUIRE(back.size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(back[i].kind == tables[i].kind);
        CHECK(back[i].subtask == tables[i].subtask);
        CHECK(back[i].dataset_id == tables[i].dataset_id);
        CHECK(back[i].sample_count == tables[i].sample_count);
        CHECK(back[i].n_layers == tables[i].n_layers);
        CHECK(back[i].n_heads == tables[i].n_heads);
        CHECK(back[i].mu == tables[i].mu);
        CHECK(back[i].delta == tables[i].delta);
    }

    // a truncated file refuses to load
    auto clipped = text;
    clipped.resize(clipped.rfind('\n', clipped.size() - 2) + 1);
    write_file_atomic(path, clipped);
    CHECK_THROWS_AS((void)hs::load_tables(path), std::runtime_error);

    write_file_atomic(path, "layer\thead\tkind\tsubtask\tmu\tdelta\n0\t0\tcopy\t0\t1\t0\n");
    CHECK_THROWS_AS((void)hs::load_tables(path), std::runtime_error);
}

TEST_CASE("evaluation reports round-trip as single JSON lines") {
    hs::EvalReport r;
    r.subtask = 7;
    r.n_examples = 64;
    r.accuracy = 0.875;
    r.relative_accuracy = 0.9337;
    r.heads_removed = 21;
    r.fraction_active = 1.0 - 21.0 / 64.0;
    const auto line = hs::report_line(r);
    CHECK(line.find('\n') == std::string::npos);
    const auto back = hs::parse_report_line(line);
    CHECK(back.subtask == r.subtask);
    CHECK(back.n_examples == r.n_examples);
    CHECK(back.accuracy == r.accuracy);
    CHECK(back.relative_accuracy == r.relative_accuracy);
    CHECK(back.heads_removed == r.heads_removed);
    CHECK(back.fraction_active == r.fraction_active);
}

TEST_CASE("pruning a memorizing model: all-inclusive range keeps it exact") {
    const auto corpus = tiny_corpus(2, 77);
    ModelConfig cfg;
    cfg.n_layers = 2;
    cfg.n_heads = 2;
    cfg.d_model = 32;
    cfg.d_ff = 64;
    cfg.vocab_size = vocab().size();
    cfg.max_seq = 128;
    Params p = init_params(cfg, 5);

    train::TrainConfig tc;
    tc.steps = 500;
    tc.batch_size = 2;
    tc.opt.lr = 2e-3;
    tc.opt.lr_min = 2e-4;
    tc.opt.warmup_steps = 20;
    tc.opt.weight_decay = 0.01;
    tc.seed = 9;
    tc.eval_every = 0;
    tc.log_every = 0;
    tc.induction_mix = 0.0;
    const auto rep = train::train_model(p, corpus, {}, {}, tc);
    REQUIRE(rep.final_loss < 0.2);

    std::vector<std::vector<int>> streams;
    for (const auto& ex : corpus) streams.push_back(ex.tokens);
    const auto bank = intervene::build_ablation_bank(p, streams);

    // memorized examples answer their slots; use a slot the model gets right
    int subtask = -1;
    std::vector<ReasoningExample> kept;
    for (int s = 0; s < 10 && subtask < 0; ++s) {
        auto f = hs::filter_full_correct(p, corpus, s);
        if (f.size() == corpus.size()) {
            subtask = s;
            kept = std::move(f);
        }
    }
    REQUIRE(subtask >= 0);

    auto table = hs::ScoreTable::make("induction", cfg.n_layers, cfg.n_heads);
    table.sample_count = 1;
    table.mu = {0.1, 0.2, 0.3, 0.4};

    const auto all = hs::prune_and_eval(p, table, {0.0, 1.0}, kept, subtask, bank);
    CHECK(all.heads_removed == 0);
    CHECK(all.fraction_active == 1.0);
    CHECK(all.accuracy == 1.0);
    CHECK(all.relative_accuracy == 1.0);
    CHECK(all.n_examples == static_cast<int>(kept.size()));

    const auto some = hs::prune_and_eval(p, table, {0.1, 0.2}, kept, subtask, bank);
    CHECK(some.heads_removed == 2);
    CHECK(some.fraction_active == 0.5);
    CHECK(some.accuracy >= 0.0);
    CHECK(some.relative_accuracy <= 1.0 + 1e-12);

    // center-out sweep over more bins than heads: empty bins repeat the last
    // report, removal grows monotonically, and a rerun reproduces every line
    const auto steps = hs::sweep_center_out(p, table, kept, subtask, bank, 8);
    REQUIRE(steps.size() == 8);
    int prev = 0;
    for (const auto& st : steps) {
        CHECK(st.heads_removed >= prev);
        prev = st.heads_removed;
        CHECK(st.report.n_examples == static_cast<int>(kept.size()));
    }
    CHECK(steps.back().heads_removed == 4);
    const auto steps2 = hs::sweep_center_out(p, table, kept, subtask, bank, 8);
    for (std::size_t i = 0; i < steps.size(); ++i)
        CHECK(hs::report_line(steps2[i].report) == hs::report_line(steps[i].report));

    // kept-set evaluation: keeping everything is the clean model
    std::vector<HeadRef> all_heads{{0, 0}, {0, 1}, {1, 0}, {1, 1}};
    const auto kept_all = hs::eval_kept_heads(p, all_heads, kept, subtask, bank);
    CHECK(kept_all.accuracy == 1.0);
    CHECK(kept_all.heads_removed == 0);

    CHECK_THROWS_AS(
        (void)hs::eval_with_removed(p, {}, {}, subtask, bank), std::invalid_argument);
}

TEST_CASE("task head sets follow brute-force set algebra") {
    auto mk = [](const char* kind, std::vector<double> mu) {
        auto t = hs::ScoreTable::make(kind, 2, 2);
        t.sample_count = 1;
        t.mu = std::move(mu);
        return t;
    };
    const auto dec = mk("decision", {10.0, 1.0, 2.0, 8.0});
    const auto cp = mk("copy", {0.9, 0.8, 0.1, 0.2});
    const auto ind = mk("induction", {0.9, 0.0, 0.1, 1.0});

    hs::ThresholdPolicy pol;
    pol.fraction = 0.5;
    const auto sets = hs::task_head_sets(dec, cp, ind, pol);

    using S = std::set<std::pair<int, int>>;
    auto as_set = [](const std::vector<HeadRef>& v) {
        S s;
        for (const auto& h : v) s.insert({h.layer, h.head});
        return s;
    };
    const S d = as_set(sets.decision), c = as_set(sets.copy), i = as_set(sets.induction);
    CHECK(d == S{{0, 0}, {1, 1}});
    CHECK(c == S{{0, 0}, {0, 1}});
    CHECK(i == S{{0, 0}, {1, 1}});

    // brute-force algebra over the selections
    auto inter = [](const S& a, const S& b) {
        S out;
        for (const auto& x : a)
            if (b.count(x)) out.insert(x);
        return out;
    };
    auto minus = [](const S& a, const S& b) {
        S out;
        for (const auto& x : a)
            if (!b.count(x)) out.insert(x);
        return out;
    };
    CHECK(as_set(sets.decision_copy) == inter(d, c));
    CHECK(as_set(sets.decision_induction) == inter(d, i));
    CHECK(as_set(sets.copy_induction) == inter(c, i));
    CHECK(as_set(sets.decision_only) == minus(minus(d, c), i));
    CHECK(as_set(sets.copy_only) == minus(minus(c, d), i));
    CHECK(as_set(sets.induction_only) == minus(minus(i, d), c));

    // identical tables leave nothing task-only
    const auto same = hs::task_head_sets(
        mk("decision", {4, 3, 2, 1}), mk("copy", {0.4, 0.3, 0.2, 0.1}),
        mk("induction", {0.4, 0.3, 0.2, 0.1}), pol);
    CHECK(same.decision_only.empty());
    CHECK(same.copy_only.empty());
    CHECK(same.induction_only.empty());
    CHECK(same.decision_copy.size() == 2);

    // range policy and the description strings
    hs::ThresholdPolicy rp;
    rp.kind = hs::ThresholdPolicy::Kind::mu_range;
    rp.range = {0.0, 0.5};
    const auto picked = hs::select_heads(cp, rp);
    CHECK(as_set(picked) == S{{1, 0}, {1, 1}});
    CHECK_FALSE(rp.describe().empty());
    CHECK_FALSE(pol.describe().empty());
}

TEST_CASE("set-level scoring wrappers: shapes, determinism, kind checks") {
    const auto corpus = tiny_corpus(2, 55);
    ModelConfig cfg;
    cfg.n_layers = 2;
    cfg.n_heads = 2;
    cfg.d_model = 16;
    cfg.d_ff = 16;
    cfg.vocab_size = vocab().size();
    cfg.max_seq = 128;
    const Params p = init_params(cfg, 13);

    std::vector<std::vector<int>> streams;
    for (const auto& ex : corpus) streams.push_back(ex.tokens);
    const auto bank = intervene::build_ablation_bank(p, streams);

    const auto dec = hs::score_decision_set(p, corpus, 0, bank, "unit");
    CHECK(dec.kind == "decision");
    CHECK(dec.subtask == 0);
    CHECK(dec.sample_count == 2);
    CHECK(dec.mu.size() == 4);
    CHECK(dec.raw_num.size() == 4);
    const auto dec2 = hs::score_decision_set(p, corpus, 0, bank, "unit");
    CHECK(dec2.mu == dec.mu);

    const auto cp = hs::score_copy_set(p, corpus, 1, vocab(), "unit");
    CHECK(cp.kind == "copy");
    CHECK(cp.sample_count == 2);
    for (double m : cp.mu) {
        CHECK(m > 0.0);
        CHECK(m <= 1.0);
    }

    CHECK_THROWS_AS((void)hs::score_decision_set(p, corpus, 1, bank, "unit"),
                    std::invalid_argument);
    CHECK_THROWS_AS((void)hs::score_copy_set(p, corpus, 0, vocab(), "unit"),
                    std::invalid_argument);

    // induction probes with noise drawn from the category pool
    auto pools = EntityPools::fictional(WordLists::builtin());
    const auto probes = generate_induction_probes(19, 3, pools, vocab());
    std::vector<int> noise_pool;
    for (std::size_t i = 0; i < 8; ++i) noise_pool.push_back(vocab().id(pools.categories[i]));
    std::ostringstream log;
    const auto ind = hs::score_induction_set(p, probes, noise_pool, "probes", 0, &log);
    CHECK(ind.kind == "induction");
    CHECK(ind.subtask == -1);
    CHECK(ind.sample_count >= 1);
    for (double m : ind.mu) CHECK(m <= 1.0 + 1e-9);
    const auto ind2 = hs::score_induction_set(p, probes, noise_pool, "probes");
    CHECK(ind2.mu == ind.mu);

    // weighted merge is the overall per-example mean
    auto a = hs::ScoreTable::make("copy", 1, 1);
    a.sample_count = 1;
    a.dataset_id = "a";
    a.mu = {0.25};
    auto b = hs::ScoreTable::make("copy", 1, 1);
    b.sample_count = 3;
    b.dataset_id = "b";
    b.mu = {0.5};
    const auto merged = hs::merge_tables(std::vector<hs::ScoreTable>{a, b});
    CHECK(merged.mu[0] == (0.25 + 3 * 0.5) / 4.0);
    CHECK(merged.sample_count == 4);
    CHECK(merged.dataset_id == "a+b");
}
