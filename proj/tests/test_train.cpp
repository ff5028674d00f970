#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <set>
#include <sstream>

#include <json.hpp>

#include "cotlab/ioutil.hpp"
#include "cotlab/nanoformer.hpp"
#include "cotlab/ontogen.hpp"
#include "cotlab/train.hpp"
#include "cotlab/vocab.hpp"

using namespace cotlab;
using namespace cotlab::nanoformer;
using namespace cotlab::ontogen;

namespace {

const Vocab& vocab() {
    static const Vocab v = Vocab::build(WordLists::builtin());
    return v;
}

std::vector<ReasoningExample> tiny_corpus(int count, int chain_len, std::uint64_t seed) {
    auto pools = EntityPools::fictional(WordLists::builtin());
    CorpusParams cp;
    cp.count = count;
    cp.n_shots = 0;
    cp.gen.chain_len = chain_len;
    cp.gen.n_distractors = 1;
    return generate_corpus(seed, cp, pools, vocab(), "t");
}

ModelConfig small_cfg() {
    ModelConfig c;
    c.n_layers = 2;
    c.n_heads = 2;
    c.d_model = 32;
    c.d_ff = 64;
    c.vocab_size = vocab().size();
    c.max_seq = 128;
    return c;
}

} // namespace

TEST_CASE("analytic gradients agree with central finite differences") {
    ModelConfig cfg;
    cfg.n_layers = 2;
    cfg.n_heads = 2;
    cfg.d_model = 8;
    cfg.d_ff = 16;
    cfg.vocab_size = 12;
    cfg.max_seq = 32;
    const auto res = train::grad_check(cfg, 101, 1e-5, 8);
    CHECK(res.checked > 1000);
    CHECK_MESSAGE(res.max_rel_err < 1e-4, "worst: ", res.worst_param, " err ", res.max_rel_err);
}

TEST_CASE("a sequence with no masked targets contributes nothing") {
    const ModelConfig cfg = small_cfg();
    const Params p = init_params(cfg, 1);
    const std::vector<int> toks{1, 2, 3, 4, 5};
    const std::vector<std::uint8_t> mask(toks.size(), 0);
    ActivationCache<float> cache;
    forward(p, toks, cache, RecordLevel::train);
    Params grads = Params::zeros(cfg);
    const auto r = loss_and_grad(p, cache, toks, mask, grads);
    CHECK(r.n_targets == 0);
    CHECK(r.loss == 0.0f);
    for (const auto& v : grads.views())
        for (std::size_t i = 0; i < v.size; ++i) REQUIRE(v.data[i] == 0.0f);
}

TEST_CASE("training memorizes a small corpus and reproduces its chains") {
    const auto corpus = tiny_corpus(4, 1, 900);
    Params p = init_params(small_cfg(), 2);

    train::TrainConfig tc;
    tc.steps = 400;
    tc.batch_size = 4;
    tc.opt.lr = 2e-3;
    tc.opt.lr_min = 2e-4;
    tc.opt.warmup_steps = 20;
    tc.opt.weight_decay = 0.01;
    tc.seed = 3;
    tc.eval_every = 0;
    tc.log_every = 0;
    tc.induction_mix = 0.0;
    const auto rep = train::train_model(p, corpus, {}, {}, tc);
    CHECK(rep.steps_run == 400);
    CHECK(rep.final_loss < 0.15);

    const std::vector<int> stop{vocab().sp().vtrue, vocab().sp().vfalse};
    for (const auto& ex : corpus) {
        const std::span<const int> prompt(ex.tokens.data(),
                                          static_cast<std::size_t>(ex.segments.generated_begin));
        const auto out = generate(p, prompt, static_cast<int>(ex.gold_cot.size()) + 4, stop);
        CHECK(out == ex.gold_cot);
    }
}

TEST_CASE("training runs are deterministic end to end") {
    const auto corpus = tiny_corpus(6, 1, 901);
    const auto dir = std::filesystem::temp_directory_path();
    const Params init = init_params(small_cfg(), 4);

    const auto run = [&](const std::filesystem::path& metrics) {
        Params p = init;
        train::TrainConfig tc;
        tc.steps = 6;
        tc.batch_size = 2;
        tc.seed = 5;
        tc.eval_every = 0;
        tc.log_every = 2;
        tc.induction_mix = 0.0;
        tc.metrics_path = metrics;
        train::train_model(p, corpus, {}, {}, tc);
        return p;
    };
    const Params a = run(dir / "cotlab_metrics_a.jsonl");
    const Params b = run(dir / "cotlab_metrics_b.jsonl");
    auto av = a.views();
    auto bv = b.views();
    for (std::size_t i = 0; i < av.size(); ++i)
        CHECK(std::memcmp(av[i].data, bv[i].data, av[i].size * sizeof(float)) == 0);
    CHECK(read_file(dir / "cotlab_metrics_a.jsonl") == read_file(dir / "cotlab_metrics_b.jsonl"));
    std::filesystem::remove(dir / "cotlab_metrics_a.jsonl");
    std::filesystem::remove(dir / "cotlab_metrics_b.jsonl");
}

TEST_CASE("metrics lines carry no wall-clock fields") {
    const auto corpus = tiny_corpus(4, 2, 902);
    Params p = init_params(small_cfg(), 6);
    const auto path = std::filesystem::temp_directory_path() / "cotlab_metrics_keys.jsonl";

    train::TrainConfig tc;
    tc.steps = 4;
    tc.batch_size = 2;
    tc.seed = 7;
    tc.eval_every = 2;
    tc.eval_size = 2;
    tc.log_every = 1;
    tc.induction_mix = 0.0;
    tc.metrics_path = path;
    train::train_model(p, corpus, corpus, {}, tc);

    const std::set<std::string> allowed{"step", "loss",       "lr",     "gnorm",
                                        "loss_avg", "slot_em", "verdict_acc", "min_em"};
    std::istringstream in(read_file(path));
    std::string line;
    int lines = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        for (const auto& [key, _] : j.items()) CHECK(allowed.count(key) == 1);
        ++lines;
    }
    CHECK(lines >= 4);
    std::filesystem::remove(path);
}

TEST_CASE("induction mixing draws bare chains without disturbing the loop") {
    const auto corpus = tiny_corpus(4, 1, 903);
    auto pools = EntityPools::fictional(WordLists::builtin());
    const auto probes = generate_induction_probes(11, 4, pools, vocab());
    std::vector<std::vector<int>> seqs;
    for (const auto& pr : probes) {
        auto toks = pr.tokens;
        toks.push_back(pr.answer);
        toks.push_back(vocab().sp().dot);
        seqs.push_back(std::move(toks));
    }
    Params p = init_params(small_cfg(), 8);
    train::TrainConfig tc;
    tc.steps = 5;
    tc.batch_size = 4;
    tc.seed = 9;
    tc.eval_every = 0;
    tc.log_every = 0;
    tc.induction_mix = 0.5;
    const auto rep = train::train_model(p, corpus, {}, seqs, tc);
    CHECK(rep.steps_run == 5);
}

TEST_CASE("held-out slot evaluation reports sane values and validates inputs") {
    const auto corpus = tiny_corpus(3, 2, 904);
    const Params p = init_params(small_cfg(), 10);
    const auto ev = train::eval_subtask_em(p, corpus);
    CHECK(ev.n_examples == 3);
    for (double em : ev.slot_em) {
        CHECK(em >= 0.0);
        CHECK(em <= 1.0);
    }
    const auto one_hop = tiny_corpus(2, 1, 905);
    CHECK_THROWS_AS((void)train::eval_subtask_em(p, one_hop), std::invalid_argument);
    Params q = init_params(small_cfg(), 11);
    CHECK_THROWS_AS((void)train::train_model(q, {}, {}, {}, train::TrainConfig{}),
                    std::invalid_argument);
}
